#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "opiaid/baselines.hpp"
#include "opiaid/errors.hpp"
#include "opiaid/recommendation.hpp"
#include "opiaid/validation.hpp"
#include "support.hpp"

using namespace opiaid;

namespace {

double brute_auc(const std::vector<double>& s, const std::vector<int>& y) {
    double wins = 0;
    int pairs = 0;
    for (std::size_t i = 0; i < s.size(); ++i)
        for (std::size_t j = 0; j < s.size(); ++j)
            if (y[i] == 1 && y[j] == 0) {
                wins += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
                ++pairs;
            }
    return wins / pairs;
}

// Dose independent of the case: uniform on [0, 20].
ScmGroundTruth uniform_policy() {
    auto gt = ScmGroundTruth::defaults();
    gt.dose_policy.coef = {};
    gt.dose_policy.type_offset = {};
    gt.dose_policy.intercept = 10.0;
    gt.dose_policy.noise = NoiseKind::uniform;
    gt.dose_policy.noise_scale = 10.0;
    return gt;
}

LossPoint lp(int round, double validation) { return {round, validation, validation}; }

}  // namespace

TEST_CASE("split sizes follow the rounded fractions") {
    auto s = split(1000, SplitSpec{});
    CHECK(s.train.size() == 800);
    CHECK(s.test.size() == 150);
    CHECK(s.retention.size() == 50);
    s = split(20, SplitSpec{});
    CHECK(s.train.size() == 16);
    CHECK(s.test.size() == 3);
    CHECK(s.retention.size() == 1);
    CHECK_THROWS_AS(split(19, SplitSpec{}), TooSmall);
}

TEST_CASE("split is a seeded partition") {
    for (std::size_t n : {20u, 21u, 57u, 100u, 333u, 1000u}) {
        for (std::uint64_t seed : {1u, 2u, 99u}) {
            SplitSpec spec;
            spec.seed = seed;
            const auto s = split(n, spec);
            std::vector<std::size_t> all;
            for (const auto* part : {&s.train, &s.test, &s.retention}) {
                CHECK(std::is_sorted(part->begin(), part->end()));
                all.insert(all.end(), part->begin(), part->end());
            }
            std::sort(all.begin(), all.end());
            std::vector<std::size_t> expected(n);
            std::iota(expected.begin(), expected.end(), 0);
            CHECK(all == expected);
            const auto again = split(n, spec);
            CHECK(again.train == s.train);
            CHECK(again.test == s.test);
            CHECK(again.retention == s.retention);
        }
    }
    SplitSpec a, b;
    b.seed = a.seed + 1;
    CHECK(split(1000, a).test != split(1000, b).test);
}

TEST_CASE("split spec validation") {
    CHECK_NOTHROW(validate(SplitSpec{}));
    CHECK_THROWS_AS(validate(SplitSpec{0.8, 0.15, 0.1, 1}), ValidationError);
    CHECK_THROWS_AS(validate(SplitSpec{1.0, 0.0, 0.0, 1}), ValidationError);
    CHECK_THROWS_AS(split(100, SplitSpec{0.5, 0.5, 0.5, 1}), ValidationError);
}

TEST_CASE("select keeps the index order") {
    const auto& c = support::cohort(ScmGroundTruth::defaults(), 500);
    const std::vector<std::size_t> idx = {4, 1, 7};
    const auto out = select(c.records, idx);
    REQUIRE(out.size() == 3);
    CHECK(out[0] == c.records[4]);
    CHECK(out[2] == c.records[7]);
}

TEST_CASE("auc equals the pairwise brute force on every small labeling") {
    Rng rng(1);
    for (std::size_t n = 2; n <= 12; ++n) {
        std::vector<double> scores(n);
        // Few distinct values so ties occur.
        for (auto& v : scores) v = static_cast<double>(rng.below(4)) * 0.25;
        for (std::uint32_t mask = 1; mask + 1 < (1u << n); ++mask) {
            std::vector<int> labels(n);
            for (std::size_t i = 0; i < n; ++i) labels[i] = (mask >> i) & 1u;
            CHECK(std::abs(metric_auc(scores, labels) - brute_auc(scores, labels)) <= 1e-12);
        }
    }
}

TEST_CASE("metric identities") {
    const std::vector<double> s = {0.9, 0.8, 0.1, 0.2};
    CHECK(metric_auc(s, std::vector<int>{1, 1, 0, 0}) == 1.0);
    CHECK(metric_auc(s, std::vector<int>{0, 0, 1, 1}) == 0.0);
    CHECK(metric_auc(std::vector<double>{0.3, 0.3, 0.3, 0.3}, std::vector<int>{1, 0, 1, 0}) == 0.5);
    CHECK_THROWS_AS(metric_auc(s, std::vector<int>{1, 1, 1, 1}), SingleClass);

    const std::vector<int> classes = {0, 3, 3, 10, 2};
    CHECK(metric_accuracy(classes, classes) == 1.0);
    CHECK(metric_accuracy(classes, std::vector<int>{0, 3, 4, 10, 1}) == 0.6);
    const std::vector<double> v = {1.5, -2, 3, 0};
    CHECK(metric_rmse(v, v) == 0.0);
    CHECK(metric_rmse(std::vector<double>{0, 0, 0, 0}, std::vector<double>{1, -1, 1, -1}) == 1.0);
    CHECK(metric_rmse(std::vector<double>{3}, std::vector<double>{0}) == 3.0);
    CHECK_THROWS_AS(metric_rmse(v, std::vector<double>{1}), DimensionMismatch);
}

TEST_CASE("overfit detection") {
    std::vector<LossPoint> falling;
    for (int e = 1; e <= 20; ++e) falling.push_back(lp(e, 2.0 / e));
    auto r = detect_overfit(falling);
    CHECK_FALSE(r.overfit);
    CHECK(r.best_round == 20);

    std::vector<LossPoint> u;
    for (int e = 1; e <= 20; ++e) u.push_back(lp(e, e <= 10 ? 2.0 - 0.1 * e : 1.0 + 0.05 * (e - 10)));
    r = detect_overfit(u);
    CHECK(r.overfit);
    CHECK(r.best_round == 10);
    CHECK(u.back().validation == doctest::Approx(1.5));

    CHECK_FALSE(detect_overfit(std::vector<LossPoint>{lp(1, 1.0), lp(2, 1.0)}).overfit);
    CHECK_FALSE(detect_overfit(std::vector<LossPoint>{lp(1, 1.0)}).overfit);
    CHECK_FALSE(detect_overfit(std::vector<LossPoint>{lp(1, 1.0), lp(2, 1.1)}).overfit);
    CHECK(detect_overfit(std::vector<LossPoint>{lp(1, 1.0), lp(2, 1.11)}).overfit);
}

TEST_CASE("uniform policy leaves no overlap violations") {
    const auto c = generate_cohort(uniform_policy(), 10000);
    const auto d = overlap_diagnostic(c.records, DoseGrid::standard(), 5, 10, 5);
    CHECK(d.violations.empty());
    CHECK(std::accumulate(d.counts.begin(), d.counts.end(), std::size_t{0}) == 10000);
    CHECK(d.counts.size() == 50);
    for (auto count : d.counts) CHECK(count >= 5);
}

TEST_CASE("positivity mode flags exactly the truncated cells") {
    auto gt = uniform_policy();
    gt.positivity = {true, 5, 2, 0.0, 5.0};
    const auto c = generate_cohort(gt, 10000);
    const auto d = overlap_diagnostic(c.records, DoseGrid::standard(), 5, 10, 5);
    // Bins are 2 MEQ wide; doses up to 5 reach bins 0..2.
    std::vector<OverlapCell> expected;
    for (int bin = 3; bin < 10; ++bin) expected.push_back({2, bin, 0});
    CHECK(d.violations == expected);
    for (int bin = 0; bin < 10; ++bin) CHECK(d.violated(2, bin) == (bin >= 3));
    CHECK(std::accumulate(d.counts.begin(), d.counts.end(), std::size_t{0}) == 10000);
}

TEST_CASE("a single dose bin never flags nonempty strata") {
    const auto& c = support::cohort(ScmGroundTruth::defaults(), 500);
    for (std::size_t min_count : {1u, 5u, 100u}) {
        const auto d = overlap_diagnostic(c.records, DoseGrid::standard(), 5, 1, min_count);
        CHECK(d.violations.empty());
        CHECK(std::accumulate(d.counts.begin(), d.counts.end(), std::size_t{0}) == 500);
    }
    const std::span<const EncounterRecord> few(c.records.data(), 49);
    CHECK_THROWS_AS(overlap_diagnostic(few, DoseGrid::standard(), 5, 10, 5), TooSmall);
}

TEST_CASE("overlap cell lookup") {
    const auto& c = support::cohort(ScmGroundTruth::defaults(), 500);
    const auto d = overlap_diagnostic(c.records, DoseGrid::standard());
    CHECK(d.dose_bin_of(0.0) == 0);
    CHECK(d.dose_bin_of(1.99) == 0);
    CHECK(d.dose_bin_of(2.0) == 1);
    CHECK(d.dose_bin_of(20.0) == 9);
    std::vector<std::size_t> manual(50, 0);
    for (const auto& r : c.records)
        ++manual[static_cast<std::size_t>(d.stratum_of(r.features) * 10 + d.dose_bin_of(r.administered_dose.value))];
    CHECK(manual == d.counts);
}

TEST_CASE("outcome metrics match a direct computation") {
    const auto& fs = support::noiseless_fit(LearnerKind::gradient_boosted_trees, 5000);
    const auto m = outcome_metrics(fs.model, fs.retention);
    double sq = 0;
    int hits = 0;
    for (const auto& r : fs.retention) {
        const double p = predict_outcomes(fs.model, r.treatment, r.administered_dose, r.features).pain;
        sq += (p - r.pain_arrival.nrs()) * (p - r.pain_arrival.nrs());
        hits += std::lround(p) == r.pain_arrival.nrs();
    }
    CHECK(m.pain_rmse == doctest::Approx(std::sqrt(sq / fs.retention.size())).epsilon(1e-12));
    CHECK(m.pain_accuracy == doctest::Approx(static_cast<double>(hits) / fs.retention.size()).epsilon(1e-12));
    REQUIRE(m.pain_auc.has_value());
    CHECK(*m.pain_auc > 0.9);
}

TEST_CASE("the oracle ranks first with zero regret") {
    const auto& c = support::cohort(ScmGroundTruth::defaults(), 500);
    const auto& gt = c.ground_truth;
    const auto grid = DoseGrid::standard();
    const UtilityWeights w{0.4, 0.6};
    Rng rng(2);
    std::vector<DoseMethod> methods;
    methods.push_back({"random", [&rng](const EncounterRecord&) { return DoseMeq{rng.uniform(0, 20)}; }, {}, false});
    methods.push_back({"oracle", [&](const EncounterRecord& r) { return true_optimal_dose(gt, r.features, r.treatment, grid, w); },
                       {}, false});
    methods.push_back({"administered", [](const EncounterRecord& r) { return r.administered_dose; }, {}, false});
    const auto cmp = evaluate_methods(c.records, methods, gt, grid, w);
    REQUIRE(cmp.ranked.size() == 3);
    CHECK(cmp.ranked[0].method == "oracle");
    CHECK(cmp.ranked[0].regret == 0.0);
    CHECK(cmp.ranked[0].dose_mae == 0.0);
    CHECK(cmp.ranked[0].rank == 1);
    CHECK(cmp.carried_forward[0] == "oracle");
    CHECK(cmp.carried_forward[1] == cmp.ranked[1].method);
    for (const auto& r : cmp.ranked) {
        CHECK(r.regret >= 0.0);
        CHECK(r.n_cases == 500);
    }
    CHECK(cmp.ranked[1].regret <= cmp.ranked[2].regret);

    const std::vector<DoseMethod> one(methods.begin(), methods.begin() + 1);
    CHECK_THROWS_AS(evaluate_methods(c.records, one, gt, grid, w), ValidationError);
}

TEST_CASE("regret matches an independent computation") {
    const auto& c = support::cohort(ScmGroundTruth::defaults(), 500);
    const auto& gt = c.ground_truth;
    const auto grid = DoseGrid::standard();
    const UtilityWeights w{};
    std::vector<DoseMethod> methods;
    methods.push_back({"fixed_7", [](const EncounterRecord&) { return DoseMeq{7.0}; }, {}, false});
    methods.push_back({"fixed_2", [](const EncounterRecord&) { return DoseMeq{2.0}; }, {}, false});
    const auto cmp = evaluate_methods(c.records, methods, gt, grid, w);
    for (const auto& report : cmp.ranked) {
        const double d = report.method == "fixed_7" ? 7.0 : 2.0;
        double regret = 0, mae = 0;
        for (const auto& r : c.records) {
            const auto p = response_params(gt, r.features);
            // Independent oracle: scan the grid for the lowest cost.
            double best = 1e300, best_d = 0;
            for (int i = 0; i <= 40; ++i) {
                const double g = 0.5 * i;
                const double cost = w.w_pain * pain_response(p, g) + w.w_orades * orade_response(p, g);
                if (cost < best) {
                    best = cost;
                    best_d = g;
                }
            }
            regret += w.w_pain * pain_response(p, d) + w.w_orades * orade_response(p, d) - best;
            mae += std::abs(d - best_d);
        }
        CHECK(report.regret == doctest::Approx(regret / 500).epsilon(1e-9));
        CHECK(report.dose_mae == doctest::Approx(mae / 500).epsilon(1e-9));
    }
}

TEST_CASE("causal method beats the rule table on a noiseless cohort") {
    const auto& fs = support::noiseless_fit(LearnerKind::gradient_boosted_trees, 5000);
    const auto& gt = support::noiseless_cohort(5000).ground_truth;
    const auto grid = DoseGrid::standard();
    const UtilityWeights w{};
    const auto table = RuleTable::defaults();
    std::vector<DoseMethod> methods;
    methods.push_back({"causal_ml", [&](const EncounterRecord& r) { return recommend_dose(fs.model, r.features, r.treatment, w).dose; },
                       outcome_metrics(fs.model, fs.retention), false});
    methods.push_back({"rule_based", [&](const EncounterRecord& r) {
                           return rule_based_optimal_dose(r.administered_dose, r.pain_arrival, r.orades, table, 20.0);
                       }, std::nullopt, false});
    const auto cmp = evaluate_methods(fs.retention, methods, gt, grid, w);
    CHECK(cmp.ranked[0].method == "causal_ml");
    CHECK(cmp.ranked[0].regret < cmp.ranked[1].regret);
    CHECK(cmp.ranked[0].metrics.has_value());
}

TEST_CASE("retention ledger is single use") {
    RetentionLedger ledger{"abc", false};
    CHECK_NOTHROW(claim_retention(ledger));
    CHECK(ledger.used);
    CHECK_THROWS_AS(claim_retention(ledger), RetentionReused);
}
