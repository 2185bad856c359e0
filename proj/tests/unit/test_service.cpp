#include <doctest.h>

#include <unistd.h>

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <map>
#include <thread>

#include "opiaid/errors.hpp"
#include "opiaid/io.hpp"
#include "opiaid/recommendation.hpp"
#include "opiaid/service.hpp"
#include "support.hpp"

// Eigen before httplib: <resolv.h> defines _res, an Eigen parameter name.
#include <httplib.h>

using namespace opiaid;
namespace fs = std::filesystem;

namespace {

struct Fixture {
    fs::path dir;
    fs::path artifact;
    fs::path other_artifact;
    fs::path diagnostics;

    Fixture() : dir(fs::temp_directory_path() / ("opiaid_service_" + std::to_string(::getpid()))) {
        fs::create_directories(dir);
        artifact = dir / "cadr_gbt.json";
        other_artifact = dir / "cadr_tree.json";
        diagnostics = dir / "overlap.json";
        const auto& fs_gbt = support::noiseless_fit(LearnerKind::gradient_boosted_trees, 2000);
        write_file_atomic(artifact, serialize_cadr(fs_gbt.model));
        write_file_atomic(other_artifact, serialize_cadr(support::noiseless_fit(LearnerKind::decision_tree, 2000).model));
        write_file_atomic(diagnostics, to_json(overlap_diagnostic(fs_gbt.train, DoseGrid::standard())).dump());
    }
    ~Fixture() { fs::remove_all(dir); }
};

const Fixture& fixture() {
    static Fixture f;
    return f;
}

void load(Service& s) { s.set_snapshot(load_snapshot(fixture().artifact, fixture().diagnostics)); }

std::string request(const CaseFeatures& x, std::optional<UtilityWeights> w = std::nullopt) {
    Json j = {{"features", to_json(x)}};
    if (w) j["weights"] = to_json(*w);
    return j.dump();
}

Json body_of(const Response& r) { return Json::parse(r.body); }

std::string sha256sum(const fs::path& p) {
    const std::string cmd = "sha256sum '" + p.string() + "'";
    FILE* pipe = ::popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    char buf[65] = {};
    const auto n = std::fread(buf, 1, 64, pipe);
    ::pclose(pipe);
    return std::string(buf, n);
}

}  // namespace

TEST_CASE("requests before a model is loaded get 409") {
    Service s;
    CHECK(s.handle("POST", "/v1/recommend", request(CaseFeatures{})).status == 409);
    CHECK(s.handle("POST", "/v1/curve", request(CaseFeatures{})).status == 409);
    CHECK(s.handle("GET", "/v1/model", "").status == 409);
    CHECK(s.handle("GET", "/v1/diagnostics", "").status == 409);
    const auto h = s.handle("GET", "/v1/health", "");
    CHECK(h.status == 200);
    CHECK(body_of(h).at("model_loaded") == false);
}

TEST_CASE("recommend equals the library call") {
    Service s;
    load(s);
    const auto snap = s.snapshot();
    Rng rng(1);
    for (int i = 0; i < 30; ++i) {
        const auto x = support::random_case(rng);
        const UtilityWeights w{rng.uniform(0.05, 1), rng.uniform(0.05, 1)};
        const auto r = s.handle("POST", "/v1/recommend", request(x, w));
        REQUIRE(r.status == 200);
        auto expected = to_json(recommend_dose(snap->model, x, Treatment{}, w, &*snap->diagnostics));
        expected["treatment"] = "morphine";
        expected["version_hash"] = snap->version_hash;
        CHECK(r.body == expected.dump());
    }
}

TEST_CASE("boundary weights through the wire") {
    Service s;
    load(s);
    const auto r = s.handle("POST", "/v1/recommend", request(CaseFeatures{}, UtilityWeights{0, 1}));
    REQUIRE(r.status == 200);
    CHECK(body_of(r).at("dose_meq") == 0.0);
}

TEST_CASE("malformed bodies get 400 with a field path") {
    Service s;
    load(s);
    const auto field = [&](const std::string& path, const std::string& body) {
        const auto r = s.handle("POST", path, body);
        CHECK(r.status == 400);
        return body_of(r).at("field").get<std::string>();
    };
    Json bad = {{"features", to_json(CaseFeatures{})}};
    bad["features"]["age"] = 16;
    CHECK(field("/v1/recommend", bad.dump()) == "features.age");
    CHECK(field("/v1/curve", bad.dump()) == "features.age");

    Json nrs = {{"features", to_json(CaseFeatures{})}, {"observed", {{"administered_dose_meq", 10}, {"pain_0_1h", 11}}}};
    CHECK(field("/v1/recommend", nrs.dump()) == "observed.pain_0_1h");
    CHECK(field("/v1/recommend", "{") == "body");
    CHECK(field("/v1/recommend", "{}") == "features");
    CHECK(field("/v1/recommend", R"({"features":{},"extra":1})") == "extra");
    Json w = {{"features", to_json(CaseFeatures{})}, {"weights", {{"w_pain", -1}}}};
    CHECK(field("/v1/curve", w.dump()) == "weights.w_pain");
    Json t = {{"features", to_json(CaseFeatures{})}, {"treatment", "fentanyl"}};
    CHECK(field("/v1/recommend", t.dump()) == "treatment");
}

TEST_CASE("observed response adds the rule-based dose") {
    Service s;
    load(s);
    Json j = {{"features", to_json(CaseFeatures{})}, {"observed", {{"administered_dose_meq", 10}, {"pain_0_1h", 5}}}};
    const auto r = s.handle("POST", "/v1/recommend", j.dump());
    REQUIRE(r.status == 200);
    CHECK(body_of(r).at("rule_based_dose_meq") == 12.0);
}

TEST_CASE("identical requests give byte-identical responses") {
    Service s;
    load(s);
    const auto body = request(CaseFeatures{}, UtilityWeights{0.3, 0.7});
    CHECK(s.handle("POST", "/v1/recommend", body).body == s.handle("POST", "/v1/recommend", body).body);
    CHECK(s.handle("POST", "/v1/curve", body).body == s.handle("POST", "/v1/curve", body).body);
}

TEST_CASE("curve arrays span the grid and agree with recommend") {
    Service s;
    load(s);
    Rng rng(2);
    for (int i = 0; i < 10; ++i) {
        const auto body = request(support::random_case(rng), UtilityWeights{rng.uniform(0.1, 1), rng.uniform(0.1, 1)});
        const auto c = body_of(s.handle("POST", "/v1/curve", body));
        const auto r = body_of(s.handle("POST", "/v1/recommend", body));
        for (const char* key : {"doses", "pain_hat", "orade_hat", "utility"}) CHECK(c.at(key).size() == 41);
        const auto idx = r.at("grid_index").get<std::size_t>();
        CHECK(c.at("utility")[idx] == r.at("expected_utility"));
        CHECK(c.at("doses")[idx] == r.at("dose_meq"));
        CHECK(c.at("version_hash") == r.at("version_hash"));
    }
}

TEST_CASE("missing weights fall back to the configured defaults") {
    Service s;
    load(s);
    const auto c = body_of(s.handle("POST", "/v1/curve", request(CaseFeatures{})));
    CHECK(c.at("weights") == to_json(UtilityWeights{0.5, 0.5}));
    const auto r = body_of(s.handle("POST", "/v1/recommend", request(CaseFeatures{})));
    CHECK(r.at("weights") == to_json(UtilityWeights{0.5, 0.5}));

    ServiceConfig cfg;
    cfg.default_weights = UtilityWeights{0.9, 0.1};
    Service custom(cfg);
    load(custom);
    CHECK(body_of(custom.handle("POST", "/v1/curve", request(CaseFeatures{}))).at("weights") == to_json(cfg.default_weights));
    CHECK(body_of(custom.handle("GET", "/v1/model", "")).at("default_weights") == to_json(cfg.default_weights));
}

TEST_CASE("model metadata carries the artifact file hash") {
    Service s;
    load(s);
    const auto m = body_of(s.handle("GET", "/v1/model", ""));
    CHECK(m.at("version_hash") == sha256sum(fixture().artifact));
    CHECK(m.at("grid") == to_json(DoseGrid::standard()));
    CHECK(m.at("learners").at("pain").at("kind") == "gradient_boosted_trees");
    CHECK(m.at("diagnostics_loaded") == true);
    const auto h = body_of(s.handle("GET", "/v1/health", ""));
    CHECK(h.at("status") == "ok");
    CHECK(h.at("uptime_s").get<double>() >= 0.0);
    CHECK(h.at("version_hash") == m.at("version_hash"));
}

TEST_CASE("diagnostics view") {
    Service s;
    load(s);
    const auto d = s.handle("GET", "/v1/diagnostics", "");
    REQUIRE(d.status == 200);
    auto expected = to_json(overlap_diagnostic_from_json(Json::parse(read_file(fixture().diagnostics))));
    expected["version_hash"] = sha256sum(fixture().artifact);
    CHECK(d.body == expected.dump());

    Service bare;
    bare.set_snapshot(load_snapshot(fixture().artifact));
    CHECK(bare.handle("GET", "/v1/diagnostics", "").status == 404);
    CHECK(bare.handle("GET", "/v1/model", "").status == 200);
}

TEST_CASE("unknown routes and methods get 404") {
    Service s;
    load(s);
    CHECK(s.handle("GET", "/v1/nothing", "").status == 404);
    CHECK(s.handle("GET", "/v1/recommend", "").status == 404);
    CHECK(s.handle("DELETE", "/v1/model", "").status == 404);
}

TEST_CASE("admin load swaps the whole snapshot") {
    Service s;
    const auto load = [&](const Json& j) { return s.handle("POST", "/v1/admin/load", j.dump()); };
    auto r = load({{"model_artifact", fixture().artifact.string()}});
    REQUIRE(r.status == 200);
    CHECK(body_of(r).at("version_hash") == sha256sum(fixture().artifact));
    const auto before = s.handle("POST", "/v1/curve", request(CaseFeatures{})).body;

    r = load({{"model_artifact", fixture().other_artifact.string()}});
    REQUIRE(r.status == 200);
    CHECK(body_of(s.handle("GET", "/v1/model", "")).at("version_hash") == sha256sum(fixture().other_artifact));
    CHECK(s.handle("POST", "/v1/curve", request(CaseFeatures{})).body != before);

    CHECK(load({{"model_artifact", (fixture().dir / "absent.json").string()}}).status == 400);
    CHECK(body_of(load({{"model_artifact", 3}})).at("field") == "model_artifact");
    // A failed load keeps the previous snapshot.
    CHECK(body_of(s.handle("GET", "/v1/model", "")).at("version_hash") == sha256sum(fixture().other_artifact));
}

TEST_CASE("snapshot construction errors") {
    CHECK_THROWS_AS(make_snapshot("{"), CorruptArtifact);
    CHECK_THROWS_AS(load_snapshot(fixture().dir / "absent.json"), IoError);
    const auto bytes = read_file(fixture().artifact);
    CHECK_THROWS_AS(make_snapshot(bytes, std::string_view("[]")), ValidationError);
    CHECK_THROWS_AS(make_snapshot(bytes, std::nullopt, DoseGrid(0, 25, 0.5)), ValidationError);
    const auto narrow = make_snapshot(bytes, std::nullopt, DoseGrid(0, 10, 1));
    CHECK(narrow->model.grid.size() == 11);
    CHECK(narrow->version_hash == sha256sum(fixture().artifact));
}

TEST_CASE("concurrent reads during swaps match a serial order") {
    Service s;
    const auto a = load_snapshot(fixture().artifact);
    const auto b = load_snapshot(fixture().other_artifact);
    s.set_snapshot(a);
    std::vector<std::string> bodies;
    Rng rng(3);
    for (int i = 0; i < 8; ++i) bodies.push_back(request(support::random_case(rng)));
    std::map<std::pair<std::string, std::size_t>, std::string> serial;
    for (const auto& snap : {a, b}) {
        s.set_snapshot(snap);
        for (std::size_t i = 0; i < bodies.size(); ++i)
            serial[{snap->version_hash, i}] = s.handle("POST", "/v1/recommend", bodies[i]).body;
    }
    s.set_snapshot(a);

    std::atomic<int> mismatches{0};
    std::vector<std::thread> workers;
    for (int t = 0; t < 4; ++t)
        workers.emplace_back([&, t] {
            for (int k = 0; k < 40; ++k) {
                const auto i = static_cast<std::size_t>((t + k) % 8);
                const auto r = s.handle("POST", "/v1/recommend", bodies[i]);
                const auto hash = Json::parse(r.body).at("version_hash").get<std::string>();
                if (serial.at({hash, i}) != r.body) ++mismatches;
            }
        });
    for (int k = 0; k < 40; ++k) s.set_snapshot(k % 2 ? a : b);
    for (auto& w : workers) w.join();
    CHECK(mismatches == 0);
}

TEST_CASE("http round trip") {
    Service s;
    load(s);
    HttpServer server(s);
    const int port = server.bind("127.0.0.1", 0);
    REQUIRE(port > 0);
    std::thread loop([&] { server.listen(); });
    httplib::Client client("127.0.0.1", port);
    const auto body = request(CaseFeatures{}, UtilityWeights{0.4, 0.6});

    auto res = client.Post("/v1/recommend", body, "application/json");
    REQUIRE(res);
    CHECK(res->status == 200);
    CHECK(res->body == s.recommend(body).body);
    CHECK(res->get_header_value("Content-Type").find("application/json") != std::string::npos);

    res = client.Post("/v1/curve", body, "application/json");
    REQUIRE(res);
    CHECK(res->body == s.curve(body).body);

    res = client.Get("/v1/model");
    REQUIRE(res);
    CHECK(res->body == s.model_info().body);

    res = client.Get("/v1/health");
    REQUIRE(res);
    CHECK(res->status == 200);

    res = client.Post("/v1/recommend", "{", "application/json");
    REQUIRE(res);
    CHECK(res->status == 400);

    res = client.Get("/v1/unknown");
    REQUIRE(res);
    CHECK(res->status == 404);

    server.stop();
    loop.join();
}
