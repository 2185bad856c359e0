#include "opiaid/validation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "opiaid/errors.hpp"
#include "opiaid/rng.hpp"

namespace opiaid {

void validate(const SplitSpec& s) {
    for (auto [name, v] : {std::pair{"split.train_frac", s.train_frac}, std::pair{"split.test_frac", s.test_frac},
                           std::pair{"split.retention_frac", s.retention_frac}})
        if (!(v > 0.0) || !std::isfinite(v)) throw ValidationError(name, "must be positive");
    if (std::abs(s.train_frac + s.test_frac + s.retention_frac - 1.0) > 1e-9)
        throw ValidationError("split", "fractions must sum to 1");
}

SplitIndices split(std::size_t n, const SplitSpec& spec) {
    validate(spec);
    if (n < 20) throw TooSmall("split needs at least 20 records, got " + std::to_string(n));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(spec.seed);
    for (std::size_t i = n; i-- > 1;) std::swap(order[i], order[static_cast<std::size_t>(rng.below(i + 1))]);

    const auto n_test = static_cast<std::size_t>(std::llround(spec.test_frac * static_cast<double>(n)));
    const auto n_retention = static_cast<std::size_t>(std::llround(spec.retention_frac * static_cast<double>(n)));
    if (n_test + n_retention >= n) throw TooSmall("split leaves no training records");

    SplitIndices out;
    out.test.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_test));
    out.retention.assign(order.begin() + static_cast<std::ptrdiff_t>(n_test),
                         order.begin() + static_cast<std::ptrdiff_t>(n_test + n_retention));
    out.train.assign(order.begin() + static_cast<std::ptrdiff_t>(n_test + n_retention), order.end());
    for (auto* part : {&out.train, &out.test, &out.retention}) std::sort(part->begin(), part->end());
    return out;
}

std::vector<EncounterRecord> select(std::span<const EncounterRecord> records, std::span<const std::size_t> idx) {
    std::vector<EncounterRecord> out;
    out.reserve(idx.size());
    for (auto i : idx) {
        if (i >= records.size()) throw DimensionMismatch("split index beyond the cohort");
        out.push_back(records[i]);
    }
    return out;
}

namespace {

template <class A, class B>
void check_lengths(std::span<A> a, std::span<B> b) {
    if (a.size() != b.size()) throw DimensionMismatch("metric inputs differ in length");
    if (a.empty()) throw ValidationError("metric", "empty input");
}

}  // namespace

double metric_accuracy(std::span<const int> predicted, std::span<const int> truth) {
    check_lengths(predicted, truth);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) hits += predicted[i] == truth[i];
    return static_cast<double>(hits) / static_cast<double>(truth.size());
}

double metric_auc(std::span<const double> scores, std::span<const int> labels) {
    check_lengths(scores, labels);
    const std::size_t n = scores.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    // Average ranks over tied groups.
    double positive_rank_sum = 0;
    double n_pos = 0;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j < n && scores[order[j]] == scores[order[i]]) ++j;
        const double rank = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
        for (std::size_t k = i; k < j; ++k) {
            const int l = labels[order[k]];
            if (l != 0 && l != 1) throw ValidationError("labels", "must be 0 or 1");
            if (l == 1) {
                positive_rank_sum += rank;
                n_pos += 1;
            }
        }
        i = j;
    }
    const double n_neg = static_cast<double>(n) - n_pos;
    if (n_pos == 0 || n_neg == 0) throw SingleClass();
    return (positive_rank_sum - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg);
}

double metric_rmse(std::span<const double> predicted, std::span<const double> truth) {
    check_lengths(predicted, truth);
    double sq = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) sq += (predicted[i] - truth[i]) * (predicted[i] - truth[i]);
    return std::sqrt(sq / static_cast<double>(truth.size()));
}

OverfitReport detect_overfit(std::span<const LossPoint> curve, double ratio) {
    OverfitReport r;
    if (curve.empty()) return r;
    std::size_t best = 0;
    for (std::size_t i = 1; i < curve.size(); ++i)
        if (curve[i].validation < curve[best].validation) best = i;
    r.best_round = curve[best].round;
    if (curve.size() < 2) return r;
    r.overfit = curve.back().validation > ratio * curve[best].validation;
    return r;
}

int OverlapDiagnostic::stratum_of(const CaseFeatures& x) const {
    return opiaid::stratum_of(case_severity_score(x), cutpoints);
}

int OverlapDiagnostic::dose_bin_of(double dose) const {
    const double width = (dose_max - dose_min) / n_dose_bins;
    const auto bin = static_cast<int>(std::floor((dose - dose_min) / width));
    return std::clamp(bin, 0, n_dose_bins - 1);
}

std::size_t OverlapDiagnostic::count(int stratum, int dose_bin) const {
    return counts.at(static_cast<std::size_t>(stratum * n_dose_bins + dose_bin));
}

bool OverlapDiagnostic::violated(int stratum, int dose_bin) const { return count(stratum, dose_bin) < min_count; }

OverlapDiagnostic overlap_diagnostic(std::span<const EncounterRecord> cohort, const DoseGrid& grid, int n_strata,
                                     int n_dose_bins, std::size_t min_count) {
    if (n_strata < 1) throw ValidationError("n_strata", "must be >= 1");
    if (n_dose_bins < 1) throw ValidationError("n_dose_bins", "must be >= 1");
    if (cohort.size() < static_cast<std::size_t>(n_strata) * static_cast<std::size_t>(n_dose_bins))
        throw TooSmall("overlap diagnostic needs at least n_strata * n_dose_bins records");

    OverlapDiagnostic d;
    d.n_strata = n_strata;
    d.n_dose_bins = n_dose_bins;
    d.min_count = min_count;
    d.dose_min = grid.min_meq();
    d.dose_max = grid.max_meq();
    std::vector<double> scores;
    scores.reserve(cohort.size());
    for (const auto& r : cohort) scores.push_back(case_severity_score(r.features));
    d.cutpoints = quantile_cutpoints(std::move(scores), n_strata);
    d.counts.assign(static_cast<std::size_t>(n_strata * n_dose_bins), 0);
    for (const auto& r : cohort)
        ++d.counts[static_cast<std::size_t>(d.stratum_of(r.features) * n_dose_bins +
                                            d.dose_bin_of(r.administered_dose.value))];
    for (int s = 0; s < n_strata; ++s)
        for (int b = 0; b < n_dose_bins; ++b)
            if (d.violated(s, b)) d.violations.push_back({s, b, d.count(s, b)});
    return d;
}

OutcomeMetrics outcome_metrics(const CadrModel& model, std::span<const EncounterRecord> records) {
    if (records.empty()) throw ValidationError("records", "empty");
    std::vector<double> pain_hat, pain_obs, orade_hat, orade_obs;
    std::vector<int> pain_class, pain_true, moderate;
    for (const auto& r : records) {
        const auto o = predict_outcomes(model, r.treatment, r.administered_dose, r.features);
        const int observed = pain_at(r, model.pain_timepoint);
        pain_hat.push_back(o.pain);
        pain_obs.push_back(observed);
        orade_hat.push_back(o.orade);
        orade_obs.push_back(orade_severity(r.orades, model.orade_weights));
        pain_class.push_back(static_cast<int>(std::lround(o.pain)));
        pain_true.push_back(observed);
        moderate.push_back(observed >= 4 ? 1 : 0);
    }
    OutcomeMetrics m;
    m.pain_rmse = metric_rmse(pain_hat, pain_obs);
    m.orade_rmse = metric_rmse(orade_hat, orade_obs);
    m.pain_accuracy = metric_accuracy(pain_class, pain_true);
    try {
        m.pain_auc = metric_auc(pain_hat, moderate);
    } catch (const SingleClass&) {
        m.pain_auc.reset();
    }
    return m;
}

MethodComparison evaluate_methods(std::span<const EncounterRecord> cases, std::span<const DoseMethod> methods,
                                  const ScmGroundTruth& oracle, const DoseGrid& grid, const UtilityWeights& w) {
    if (methods.size() < 2) throw ValidationError("methods", "need at least two methods to compare");
    if (cases.empty()) throw ValidationError("cases", "no cases to evaluate");
    validate(w);

    std::vector<ResponseParams> params;
    std::vector<double> best_dose, best_cost;
    for (const auto& r : cases) {
        params.push_back(response_params(oracle, r.features));
        const double d = optimal_dose_for(oracle, params.back(), grid, w).value;
        best_dose.push_back(d);
        best_cost.push_back(true_cost(oracle, params.back(), d, w));
    }

    MethodComparison out;
    for (const auto& m : methods) {
        MethodReport rep;
        rep.method = m.id;
        rep.n_cases = cases.size();
        rep.metrics = m.metrics;
        rep.overfit = m.overfit;
        double abs_err = 0, regret = 0;
        for (std::size_t i = 0; i < cases.size(); ++i) {
            const double raw = m.recommend(cases[i]).value;
            const double d = grid.at(grid.nearest_index(raw));
            abs_err += std::abs(d - best_dose[i]);
            regret += true_cost(oracle, params[i], d, w) - best_cost[i];
        }
        rep.dose_mae = abs_err / static_cast<double>(cases.size());
        rep.regret = regret / static_cast<double>(cases.size());
        out.ranked.push_back(std::move(rep));
    }
    std::sort(out.ranked.begin(), out.ranked.end(), [](const MethodReport& a, const MethodReport& b) {
        if (a.regret != b.regret) return a.regret < b.regret;
        if (a.dose_mae != b.dose_mae) return a.dose_mae < b.dose_mae;
        return a.method < b.method;
    });
    for (std::size_t i = 0; i < out.ranked.size(); ++i) out.ranked[i].rank = static_cast<int>(i + 1);
    out.carried_forward = {out.ranked[0].method, out.ranked[1].method};
    return out;
}

void claim_retention(RetentionLedger& ledger) {
    if (ledger.used) throw RetentionReused();
    ledger.used = true;
}

}  // namespace opiaid
