#include <doctest.h>

#include <unistd.h>

#include <algorithm>
#include <filesystem>
#include <numeric>
#include <set>
#include <sstream>

#include "cli.hpp"
#include "opiaid/io.hpp"

using namespace opiaid;
namespace fs = std::filesystem;

namespace {

struct Result {
    int code;
    std::string out;
    std::string err;
};

Result run(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

// One scratch directory per process; the pipeline outputs are shared by the
// cases below in declaration order.
const fs::path& scratch() {
    static const fs::path dir = [] {
        auto d = fs::temp_directory_path() / ("opiaid_cli_" + std::to_string(::getpid()));
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

std::string p(const std::string& rel) { return (scratch() / rel).string(); }

const std::string kCase = to_json(CaseFeatures{}).dump();

// generate -> train -> evaluate at n=2000, run once.
const Result& pipeline() {
    static const Result r = [] {
        Result g = run({"generate", "--preset", "default", "--n", "2000", "--seed", "11", "--out", p("cohort")});
        if (g.code != 0) return g;
        Result t = run({"train", "--cohort", p("cohort"), "--out", p("models")});
        if (t.code != 0) return t;
        return run({"evaluate", "--cohort", p("cohort"), "--models", p("models"), "--out", p("report")});
    }();
    return r;
}

}  // namespace

TEST_CASE("generate is deterministic") {
    const auto a = run({"generate", "--preset", "noiseless", "--n", "100", "--seed", "3", "--out", p("gen_a")});
    const auto b = run({"generate", "--preset", "noiseless", "--n", "100", "--seed", "3", "--out", p("gen_b")});
    REQUIRE(a.code == 0);
    REQUIRE(b.code == 0);
    for (const char* f : {"cohort.csv", "ground_truth.json", "cohort_schema.json"})
        CHECK(read_file(p("gen_a/") + f) == read_file(p("gen_b/") + f));
    CHECK(Json::parse(read_file(p("gen_a/manifest.json"))).at("outputs") ==
          Json::parse(read_file(p("gen_b/manifest.json"))).at("outputs"));
    CHECK(read_file(p("gen_a/cohort.csv")).size() > 1000);
    const auto gt = scm_from_json(Json::parse(read_file(p("gen_a/ground_truth.json"))));
    CHECK(gt.seed == 3);
    CHECK(gt.pain_noise_sd == 0.0);
    CHECK(read_cohort_csv(read_file(p("gen_a/cohort.csv")), TreatmentRegistry::morphine_only()).size() == 100);
    CHECK(fs::exists(p("gen_a/run.log")));
}

TEST_CASE("usage and io failures map to exit codes") {
    auto r = run({"generate", "--n", "0", "--out", p("bad")});
    CHECK(r.code == 2);
    r = run({"generate", "--n", "abc", "--out", p("bad")});
    CHECK(r.code == 2);
    r = run({"generate", "--out", p("bad")});
    CHECK(r.code == 2);
    r = run({"frobnicate"});
    CHECK(r.code == 2);
    r = run({"generate", "--scm", p("nowhere/scm.json"), "--n", "10", "--out", p("bad")});
    CHECK(r.code == 1);
    CHECK(r.err.find(p("nowhere/scm.json")) != std::string::npos);
    r = run({"recommend", "--model", p("nowhere/model.json"), "--case", kCase});
    CHECK(r.code == 1);
    CHECK(run({"--version"}).code == 0);
    CHECK(run({"--help"}).code == 0);
}

TEST_CASE("invalid configuration maps to exit 3") {
    write_file_atomic(p("bad_scm.json"), R"({"pain_noise_sd": -1})");
    auto r = run({"generate", "--scm", p("bad_scm.json"), "--n", "10", "--out", p("bad")});
    CHECK(r.code == 3);
    CHECK(r.err.find("scm.noise") != std::string::npos);
    write_file_atomic(p("unknown_scm.json"), R"({"bogus": 1})");
    CHECK(run({"generate", "--scm", p("unknown_scm.json"), "--n", "10", "--out", p("bad")}).code == 3);
}

TEST_CASE("scm file and defaults") {
    const auto r = run({"scm-defaults", "--preset", "noiseless"});
    REQUIRE(r.code == 0);
    CHECK(scm_from_json(Json::parse(r.out)) == ScmGroundTruth::noiseless());
    write_file_atomic(p("scm.json"), r.out);
    REQUIRE(run({"generate", "--scm", p("scm.json"), "--n", "50", "--out", p("from_file")}).code == 0);
    REQUIRE(run({"generate", "--preset", "noiseless", "--n", "50", "--out", p("from_preset")}).code == 0);
    CHECK(read_file(p("from_file/cohort.csv")) == read_file(p("from_preset/cohort.csv")));
}

TEST_CASE("full pipeline emits two carried-forward methods") {
    const auto& r = pipeline();
    INFO(r.err);
    REQUIRE(r.code == 0);
    const auto cmp = Json::parse(read_file(p("report/method_comparison.json")));
    REQUIRE(cmp.at("carried_forward").size() == 2);
    std::set<std::string> methods;
    for (const auto& m : cmp.at("ranked")) methods.insert(m.at("method").get<std::string>());
    CHECK(methods.size() == 10);
    CHECK(methods.count("rule_based") == 1);
    CHECK(methods.count("proxy_marker") == 1);
    CHECK(methods.count("causal_ml(mlp)") == 1);
    CHECK(cmp.at("ranked")[0].at("method") == cmp.at("carried_forward")[0]);
    CHECK(cmp.at("ranked")[1].at("method") == cmp.at("carried_forward")[1]);
    for (const auto& m : cmp.at("ranked")) CHECK(m.at("regret").get<double>() >= 0.0);
    for (const char* f : {"method_comparison.csv", "proxy_report.json", "proxy_deviations.csv", "manifest.json"})
        CHECK(fs::exists(p("report/") + f));
    for (const char* f : {"cadr_mlp.json", "loss/mlp_pain.csv", "proxy_los.json", "overlap.json", "split.json",
                          "train_report.json"})
        CHECK(fs::exists(p("models/") + f));
    const auto manifest = Json::parse(read_file(p("report/manifest.json")));
    CHECK(manifest.at("retention_used") == true);
}

TEST_CASE("the retention split is read once per configuration") {
    REQUIRE(pipeline().code == 0);
    auto r = run({"evaluate", "--cohort", p("cohort"), "--models", p("models"), "--out", p("report_again")});
    CHECK(r.code == 3);
    CHECK(r.err.find("retention") != std::string::npos);
    r = run({"evaluate", "--cohort", p("cohort"), "--models", p("models"), "--out", p("report_again"),
             "--allow-retention-reuse"});
    CHECK(r.code == 0);
    CHECK(read_file(p("report_again/method_comparison.json")) == read_file(p("report/method_comparison.json")));
}

TEST_CASE("recommend prints the service response") {
    REQUIRE(pipeline().code == 0);
    auto r = run({"recommend", "--model", p("models/cadr_gradient_boosted_trees.json"), "--case", kCase, "--weights",
                  "0,1"});
    INFO(r.err);
    REQUIRE(r.code == 0);
    const auto j = Json::parse(r.out);
    CHECK(j.at("dose_meq") == 0.0);
    CHECK(j.at("version_hash").get<std::string>().size() == 64);

    write_file_atomic(p("case.json"), kCase);
    r = run({"recommend", "--model", p("models/cadr_gradient_boosted_trees.json"), "--case", p("case.json"),
             "--diagnostics", p("models/overlap.json")});
    REQUIRE(r.code == 0);
    CHECK(Json::parse(r.out).at("weights") == to_json(UtilityWeights{}));

    Json child = Json::parse(kCase);
    child["age"] = 10;
    r = run({"recommend", "--model", p("models/cadr_gradient_boosted_trees.json"), "--case", child.dump()});
    CHECK(r.code == 3);
    CHECK(r.err.find("features.age") != std::string::npos);
}

TEST_CASE("curves and diagnose") {
    REQUIRE(pipeline().code == 0);
    auto r = run({"curves", "--model", p("models/cadr_random_forest.json"), "--case", kCase, "--out", p("curve.csv")});
    REQUIRE(r.code == 0);
    const auto csv = read_file(p("curve.csv"));
    CHECK(csv.rfind("dose,pain_hat,orade_hat,utility,spread\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 42);
    r = run({"curves", "--model", p("models/cadr_random_forest.json"), "--case", kCase});
    CHECK(r.out == csv);

    r = run({"diagnose", "--cohort", p("cohort")});
    REQUIRE(r.code == 0);
    const auto d = overlap_diagnostic_from_json(Json::parse(r.out));
    CHECK(d.n_strata == 5);
    CHECK(std::accumulate(d.counts.begin(), d.counts.end(), std::size_t{0}) == 2000);
    r = run({"diagnose", "--cohort", p("cohort"), "--format", "table"});
    CHECK(r.code == 0);
    CHECK(r.out.find("stratum") != std::string::npos);
    CHECK(run({"diagnose", "--cohort", p("cohort"), "--format", "xml"}).code == 2);
}

TEST_CASE("rerun reproduces primary outputs byte for byte") {
    REQUIRE(pipeline().code == 0);
    auto r = run({"rerun", "--manifest", p("cohort/manifest.json"), "--out", p("cohort_rerun")});
    REQUIRE(r.code == 0);
    for (const char* f : {"cohort.csv", "ground_truth.json", "cohort_schema.json"})
        CHECK(read_file(p("cohort/") + f) == read_file(p("cohort_rerun/") + f));

    // Training from the rerun cohort reproduces the artifacts too.
    r = run({"train", "--cohort", p("cohort_rerun"), "--learners", "decision_tree,mlp", "--out", p("models_small_a")});
    REQUIRE(r.code == 0);
    r = run({"rerun", "--manifest", p("models_small_a/manifest.json"), "--out", p("models_small_b")});
    REQUIRE(r.code == 0);
    for (const char* f : {"cadr_decision_tree.json", "cadr_mlp.json", "proxy_los.json", "train_report.json"})
        CHECK(read_file(p("models_small_a/") + f) == read_file(p("models_small_b/") + f));
    CHECK(read_file(p("models/cadr_mlp.json")) == read_file(p("models_small_a/cadr_mlp.json")));

    const auto m = Json::parse(read_file(p("models_small_a/manifest.json")));
    CHECK(m.at("tool") == "opiaid");
    CHECK(m.at("command") == "train");
    CHECK(m.at("outputs").contains("cadr_mlp.json"));
    CHECK(read_file(p("models_small_a/manifest.json")).find("time") == std::string::npos);
}

TEST_CASE("config file supplies options") {
    write_file_atomic(p("gen.toml"), "[generate]\nn = 40\npreset = \"noiseless\"\nseed = 3\n");
    REQUIRE(run({"--config", p("gen.toml"), "generate", "--out", p("gen_cfg")}).code == 0);
    REQUIRE(run({"generate", "--preset", "noiseless", "--n", "40", "--seed", "3", "--out", p("gen_flags")}).code == 0);
    CHECK(read_file(p("gen_cfg/cohort.csv")) == read_file(p("gen_flags/cohort.csv")));
}
