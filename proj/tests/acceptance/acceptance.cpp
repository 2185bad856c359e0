// Acceptance gate: one PASS/FAIL line per criterion, exit status 1 when any
// criterion fails.

#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "opiaid/baselines.hpp"
#include "opiaid/cadr.hpp"
#include "opiaid/io.hpp"
#include "opiaid/learners.hpp"
#include "opiaid/recommendation.hpp"
#include "opiaid/rng.hpp"
#include "opiaid/synthgen.hpp"
#include "opiaid/validation.hpp"

using namespace opiaid;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, double a, double b = 0, double c = 0) {
    char buf[256];
    std::snprintf(buf, sizeof buf, f, a, b, c);
    return buf;
}

const fs::path& scratch() {
    static const fs::path dir = [] {
        auto d = fs::temp_directory_path() / ("opiaid_acceptance_" + std::to_string(::getpid()));
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

std::string p(const std::string& rel) { return (scratch() / rel).string(); }

int cli_run(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    if (code != 0) std::fprintf(stderr, "opiaid %s failed (%d): %s\n", args[0].c_str(), code, err.str().c_str());
    return code;
}

CaseFeatures random_case(Rng& rng) {
    CaseFeatures x;
    x.age = 18 + static_cast<int>(rng.below(73));
    x.weight = rng.uniform(45, 140);
    x.sex = rng.bernoulli(0.5) ? Sex::male : Sex::female;
    x.asa_class = 1 + static_cast<int>(rng.below(5));
    x.surgery_duration = rng.uniform(20, 400);
    x.surgery_type = static_cast<int>(rng.below(kSurgeryTypeCount));
    x.chronic_opioid_use = rng.bernoulli(0.2);
    x.comorbidity_score = rng.uniform(0, 6);
    return x;
}

CadrModel fit_noiseless(LearnerKind kind, std::size_t n) {
    const auto c = generate_cohort(ScmGroundTruth::noiseless(), n);
    const auto idx = split(n, SplitSpec{});
    CadrFitOptions o;
    o.pain_kind = o.orade_kind = kind;
    return fit_cadr(select(c.records, idx.train), DoseGrid::standard(), TreatmentRegistry::morphine_only(), o);
}

Outcome oracle_regret() {
    const auto start = std::chrono::steady_clock::now();
    if (cli_run({"generate", "--preset", "noiseless", "--n", "5000", "--seed", "7", "--out", p("regret/cohort")}) ||
        cli_run({"train", "--cohort", p("regret/cohort"), "--learners", "gradient_boosted_trees,mlp,random_forest",
                 "--tune", "--out", p("regret/models")}) ||
        cli_run({"evaluate", "--cohort", p("regret/cohort"), "--models", p("regret/models"), "--out",
                 p("regret/report")}))
        return {false, "pipeline failed"};
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const auto cmp = Json::parse(read_file(p("regret/report/method_comparison.json")));
    for (const auto& m : cmp.at("ranked")) {
        const auto id = m.at("method").get<std::string>();
        if (id.rfind("causal_ml(", 0) != 0) continue;
        const double regret = m.at("regret").get<double>();
        const double mae = m.at("dose_mae").get<double>();
        return {regret < 0.15 && mae < 1.0 && seconds < 300.0,
                id + fmt(" regret %.4f (< 0.15), dose MAE %.3f (< 1.0), %.0f s (< 300)", regret, mae, seconds)};
    }
    return {false, "no causal_ml method ranked"};
}

Outcome known_optimum() {
    const auto gt = ScmGroundTruth::noiseless();
    const CaseFeatures x{};
    const auto params = response_params(gt, x);
    const bool documented = std::abs(params.p0 - 8.0) < 1e-12 && std::abs(params.ed50 - 5.0) < 1e-12 &&
                            std::abs(params.s_max - 6.0) < 1e-12 && std::abs(params.od50 - 10.0) < 1e-12;
    const double oracle = true_optimal_dose(gt, x, Treatment{}, DoseGrid::standard(), UtilityWeights{}).value;
    const auto model = fit_noiseless(LearnerKind::random_forest, 5000);
    const double fitted = recommend_dose(model, x, Treatment{}, UtilityWeights{}).dose.value;
    return {documented && oracle == 5.0 && std::abs(fitted - 5.0) <= 1.0,
            fmt("oracle %.1f MEQ (expected 5.0), random forest %.1f MEQ", oracle, fitted)};
}

Outcome utility_algebra(const CadrModel& model) {
    Rng rng(11);
    double worst = 0.0;
    int argmax_mismatch = 0;
    for (int i = 0; i < 1000; ++i) {
        const auto x = random_case(rng);
        const UtilityWeights w{rng.uniform(0.05, 1), rng.uniform(0.05, 1)};
        const double c = rng.uniform(0.1, 10);
        const UtilityWeights cw{c * w.w_pain, c * w.w_orades};
        const auto a = cadr_curve(model, x, Treatment{}, w);
        const auto b = cadr_curve(model, x, Treatment{}, cw);
        for (std::size_t j = 0; j < a.utility.size(); ++j)
            worst = std::max(worst, std::abs(b.utility[j] - c * a.utility[j]));
        if (recommend_dose(model, x, Treatment{}, w).dose != recommend_dose(model, x, Treatment{}, cw).dose)
            ++argmax_mismatch;
    }
    return {worst <= 1e-9 && argmax_mismatch == 0,
            fmt("max |U(cw) - cU(w)| %.2e, argmax mismatches %.0f of 1000", worst, argmax_mismatch)};
}

template <class Cmp>
bool strictly(const std::vector<double>& v, Cmp cmp) {
    for (std::size_t i = 1; i < v.size(); ++i)
        if (!cmp(v[i - 1], v[i])) return false;
    return true;
}

Outcome boundary_policies() {
    int checked = 0, wrong = 0, models = 0;
    for (auto kind : {LearnerKind::gradient_boosted_trees, LearnerKind::linear_svm, LearnerKind::mlp}) {
        const auto model = fit_noiseless(kind, 5000);
        ++models;
        Rng rng(12);
        for (int i = 0; i < 300; ++i) {
            const auto x = random_case(rng);
            const auto c = cadr_curve(model, x, Treatment{}, UtilityWeights{});
            if (strictly(c.pain_hat, std::greater<>())) {
                ++checked;
                if (recommend_dose(model, x, Treatment{}, UtilityWeights{1, 0}).dose.value != 20.0) ++wrong;
            }
            if (strictly(c.orade_hat, std::less<>())) {
                ++checked;
                if (recommend_dose(model, x, Treatment{}, UtilityWeights{0, 1}).dose.value != 0.0) ++wrong;
            }
        }
    }
    return {checked > 0 && wrong == 0,
            fmt("%.0f monotone curves over %.0f models, %.0f wrong", checked, models, wrong)};
}

Outcome split_contract() {
    const auto s = split(1000, SplitSpec{0.80, 0.15, 0.05, 7});
    std::vector<std::size_t> all;
    for (const auto* part : {&s.train, &s.test, &s.retention}) all.insert(all.end(), part->begin(), part->end());
    std::sort(all.begin(), all.end());
    std::vector<std::size_t> expected(1000);
    std::iota(expected.begin(), expected.end(), std::size_t{0});
    const bool sizes = s.train.size() == 800 && s.test.size() == 150 && s.retention.size() == 50;
    return {sizes && all == expected,
            fmt("sizes (%.0f, %.0f, %.0f), disjoint and exhaustive", static_cast<double>(s.train.size()),
                static_cast<double>(s.test.size()), static_cast<double>(s.retention.size())) +
                (all == expected ? "" : " VIOLATED")};
}

Outcome metric_oracles() {
    Rng rng(13);
    double worst = 0.0;
    long labelings = 0;
    for (std::size_t n = 2; n <= 12; ++n) {
        std::vector<double> scores(n);
        // Coarse scores so ties occur.
        for (auto& s : scores) s = static_cast<double>(rng.below(5));
        for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
            std::vector<int> labels(n);
            for (std::size_t i = 0; i < n; ++i) labels[i] = (mask >> i) & 1u;
            const auto pos = std::count(labels.begin(), labels.end(), 1);
            if (pos == 0 || pos == static_cast<long>(n)) continue;
            double wins = 0;
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < n; ++j)
                    if (labels[i] == 1 && labels[j] == 0)
                        wins += scores[i] > scores[j] ? 1.0 : scores[i] == scores[j] ? 0.5 : 0.0;
            const double brute = wins / static_cast<double>(pos * (static_cast<long>(n) - pos));
            worst = std::max(worst, std::abs(metric_auc(scores, labels) - brute));
            ++labelings;
        }
    }
    const std::vector<double> a = {1, 2, 3, 4};
    const std::vector<double> b = {1, 2, 3, 6};
    const std::vector<int> ia = {0, 1, 2, 3};
    const std::vector<int> ib = {0, 1, 5, 3};
    const bool identities = metric_rmse(a, a) == 0.0 && metric_rmse(a, b) == 1.0 && metric_accuracy(ia, ia) == 1.0 &&
                            metric_accuracy(ia, ib) == 0.75;
    return {worst <= 1e-12 && identities,
            fmt("%.0f labelings, max AUC error %.1e; identities ", static_cast<double>(labelings), worst) +
                (identities ? "exact" : "WRONG")};
}

Outcome gradient_check() {
    double worst = 0.0;
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        Rng rng(seed);
        Eigen::MatrixXd x(12, 4);
        for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = rng.normal(0, 1);
        Eigen::VectorXd y(12);
        for (Eigen::Index i = 0; i < y.size(); ++i) y(i) = rng.normal(0, 1);
        auto s = mlp_init({4, 6, 5, 1}, false, seed);
        // Away from the zero-bias initialization, where a rectifier can sit on its kink.
        Eigen::VectorXd theta = mlp_flatten(s);
        for (Eigen::Index i = 0; i < theta.size(); ++i) theta(i) += rng.normal(0, 0.1);
        mlp_unflatten(s, theta);
        s.l2 = 1e-3;
        worst = std::max(worst, check_gradient(s, x, y, 1e-5));
    }
    return {worst < 1e-4, fmt("max relative error %.2e over 10 seeds (< 1e-4)", worst)};
}

Outcome rule_anchor() {
    const double d =
        rule_based_optimal_dose(DoseMeq{10}, validate_pain(5), OradeRecord{}, RuleTable::defaults(), 20).value;
    return {d == 12.0, fmt("10 MEQ with moderate pain -> %.1f MEQ", d)};
}

ScmGroundTruth uniform_policy() {
    auto gt = ScmGroundTruth::defaults();
    gt.dose_policy.coef = {};
    gt.dose_policy.type_offset = {};
    gt.dose_policy.intercept = 10.0;
    gt.dose_policy.noise = NoiseKind::uniform;
    gt.dose_policy.noise_scale = 10.0;
    return gt;
}

Outcome overlap() {
    const auto clean = overlap_diagnostic(generate_cohort(uniform_policy(), 10000).records, DoseGrid::standard(), 5,
                                          10, 5);
    auto gt = uniform_policy();
    gt.positivity = {true, 5, 2, 0.0, 5.0};
    const auto cut = overlap_diagnostic(generate_cohort(gt, 10000).records, DoseGrid::standard(), 5, 10, 5);
    // Stratum 2 is held to doses 0..5: 2-MEQ bins 3..9 are empty.
    std::vector<OverlapCell> expected;
    for (int bin = 3; bin < 10; ++bin) expected.push_back({2, bin, 0});
    return {clean.violations.empty() && cut.violations == expected,
            fmt("uniform policy: %.0f flags; truncated stratum: %.0f flags, ", static_cast<double>(clean.violations.size()),
                static_cast<double>(cut.violations.size())) +
                (cut.violations == expected ? "exactly the constructed cells" : "MISMATCH")};
}

Outcome proxy_ordering() {
    int wins = 0;
    const auto grid = DoseGrid::standard();
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        auto gt = ScmGroundTruth::defaults();
        gt.seed = seed;
        const auto c = generate_cohort(gt, 2000);
        const auto oracle = [&](const EncounterRecord& r) {
            return true_optimal_dose(gt, r.features, r.treatment, grid, UtilityWeights{});
        };
        Rng rng(seed + 100);
        std::vector<double> draws;
        for (std::size_t i = 0; i < c.records.size(); ++i) draws.push_back(0.5 * static_cast<double>(rng.below(41)));
        const auto random = [&](const EncounterRecord& r) {
            return DoseMeq{draws[static_cast<std::size_t>(&r - c.records.data())]};
        };
        const auto good = proxy_marker_score(c.records, oracle).los.pearson;
        const auto bad = proxy_marker_score(c.records, random).los.pearson;
        if (good && bad && *good > *bad) ++wins;
    }
    return {wins == 10, fmt("oracle beats random on %.0f/10 seeds", wins)};
}

Outcome carry_forward(const CadrModel& model) {
    const auto c = generate_cohort(ScmGroundTruth::noiseless(), 1000);
    const auto& gt = c.ground_truth;
    const auto grid = DoseGrid::standard();
    std::vector<DoseMethod> methods;
    methods.push_back({"rule_based",
                       [](const EncounterRecord& r) {
                           return rule_based_optimal_dose(r.administered_dose, r.pain_arrival, r.orades,
                                                          RuleTable::defaults(), 20);
                       },
                       std::nullopt, false});
    methods.push_back({"causal_ml",
                       [&](const EncounterRecord& r) {
                           return recommend_dose(model, r.features, r.treatment, UtilityWeights{}).dose;
                       },
                       std::nullopt, false});
    methods.push_back({"oracle",
                       [&](const EncounterRecord& r) {
                           return true_optimal_dose(gt, r.features, r.treatment, grid, UtilityWeights{});
                       },
                       std::nullopt, false});
    methods.push_back({"fixed_10", [](const EncounterRecord&) { return DoseMeq{10}; }, std::nullopt, false});
    const auto cmp = evaluate_methods(c.records, methods, gt, grid, UtilityWeights{});
    const auto& top = cmp.ranked.front();
    const bool two = cmp.carried_forward.size() == 2 && cmp.carried_forward[0] == cmp.ranked[0].method &&
                     cmp.carried_forward[1] == cmp.ranked[1].method;
    return {two && top.method == "oracle" && top.regret == 0.0,
            "carried forward " + cmp.carried_forward[0] + ", " + cmp.carried_forward[1] + "; first " + top.method +
                fmt(" with regret %.3g", top.regret)};
}

Outcome reproducibility() {
    // The second run replays the first run's manifest.
    if (cli_run({"generate", "--preset", "default", "--n", "2000", "--seed", "5", "--out", p("repro_a/cohort")}) ||
        cli_run({"train", "--cohort", p("repro_a/cohort"), "--out", p("repro_a/models")}) ||
        cli_run({"evaluate", "--cohort", p("repro_a/cohort"), "--models", p("repro_a/models"), "--out",
                 p("repro_a/report")}))
        return {false, "first run failed"};
    if (cli_run({"rerun", "--manifest", p("repro_a/cohort/manifest.json"), "--out", p("repro_b/cohort")}) ||
        cli_run({"train", "--cohort", p("repro_b/cohort"), "--out", p("repro_b/models")}) ||
        cli_run({"evaluate", "--cohort", p("repro_b/cohort"), "--models", p("repro_b/models"), "--out",
                 p("repro_b/report")}))
        return {false, "second run failed"};

    int files = 0, differing = 0;
    for (const char* dir : {"cohort", "models", "report"}) {
        for (const auto& e : fs::recursive_directory_iterator(p(std::string("repro_a/") + dir))) {
            const auto name = e.path().filename().string();
            // Manifests and logs name their own output paths and times.
            if (!e.is_regular_file() || name == "manifest.json" || name == "run.log" ||
                name == "retention_ledger.json")
                continue;
            const auto rel = fs::relative(e.path(), p("repro_a"));
            ++files;
            if (!fs::exists(p("repro_b") / rel) || read_file(e.path()) != read_file(p("repro_b") / rel)) {
                ++differing;
                std::fprintf(stderr, "differs: %s\n", rel.string().c_str());
            }
        }
    }
    return {files > 0 && differing == 0,
            fmt("%.0f cohort, model and report files compared, %.0f differ", files, differing)};
}

}  // namespace

int main() {
    // Shared by the algebra and carry-forward checks.
    const CadrModel gbt = fit_noiseless(LearnerKind::gradient_boosted_trees, 2000);

    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
        {"oracle_regret", oracle_regret},
        {"known_optimum_recovery", known_optimum},
        {"utility_algebra", [&] { return utility_algebra(gbt); }},
        {"boundary_policies", boundary_policies},
        {"split_contract", split_contract},
        {"metric_oracles", metric_oracles},
        {"mlp_gradient_check", gradient_check},
        {"rule_based_anchor", rule_anchor},
        {"overlap_diagnostic", overlap},
        {"proxy_marker_ordering", proxy_ordering},
        {"method_carry_forward", [&] { return carry_forward(gbt); }},
        {"reproducibility", reproducibility},
    };

    int failed = 0;
    for (const auto& [name, check] : criteria) {
        Outcome o;
        try {
            o = check();
        } catch (const std::exception& e) {
            o = {false, std::string("threw: ") + e.what()};
        }
        if (!o.pass) ++failed;
        std::printf("%s %s: %s\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str());
        std::fflush(stdout);
    }
    std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
    fs::remove_all(scratch());
    return failed == 0 ? 0 : 1;
}
