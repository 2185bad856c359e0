#pragma once

// Internal validation: train/test/retention splits, outcome metrics, loss
// curve overfit detection, the overlap (positivity) diagnostic and the
// oracle-regret comparison of dose-recommendation methods.

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "opiaid/cadr.hpp"
#include "opiaid/domain.hpp"
#include "opiaid/learners.hpp"
#include "opiaid/synthgen.hpp"

namespace opiaid {

struct SplitSpec {
    double train_frac = 0.80;
    double test_frac = 0.15;
    double retention_frac = 0.05;
    std::uint64_t seed = 7;
    bool operator==(const SplitSpec&) const = default;
};

// Fractions positive and summing to 1 within 1e-9.
void validate(const SplitSpec& spec);

struct SplitIndices {
    std::vector<std::size_t> train;
    std::vector<std::size_t> test;
    std::vector<std::size_t> retention;
};

// Seeded permutation of 0..n-1 cut into the three parts. Test and retention
// sizes are the rounded fractions; train takes the remainder. Each part is
// returned in ascending order. Throws TooSmall below 20 rows.
SplitIndices split(std::size_t n, const SplitSpec& spec);

std::vector<EncounterRecord> select(std::span<const EncounterRecord> records, std::span<const std::size_t> idx);

double metric_accuracy(std::span<const int> predicted, std::span<const int> truth);
// Mann-Whitney statistic; score ties between a positive and a negative count
// one half. Labels are 0/1. Throws SingleClass when either class is absent.
double metric_auc(std::span<const double> scores, std::span<const int> labels);
double metric_rmse(std::span<const double> predicted, std::span<const double> truth);

struct OverfitReport {
    bool overfit = false;
    int best_round = 0;  // round of the (first) minimum validation loss
};

// Flags a curve whose final validation loss exceeds its minimum by more than
// `ratio`. Curves shorter than two points are never flagged.
OverfitReport detect_overfit(std::span<const LossPoint> curve, double ratio = 1.10);

struct OverlapCell {
    int stratum = 0;
    int dose_bin = 0;
    std::size_t count = 0;
    bool operator==(const OverlapCell&) const = default;
};

// Counts of training cases per (severity stratum, dose bin). Strata are
// quantile groups of case_severity_score over the cohort; dose bins split the
// grid range into equal widths, the last bin closed on the right.
struct OverlapDiagnostic {
    int n_strata = 5;
    int n_dose_bins = 10;
    std::size_t min_count = 5;
    double dose_min = 0.0;
    double dose_max = 20.0;
    std::vector<double> cutpoints;
    std::vector<std::size_t> counts;  // stratum-major
    std::vector<OverlapCell> violations;

    int stratum_of(const CaseFeatures& x) const;
    int dose_bin_of(double dose) const;
    std::size_t count(int stratum, int dose_bin) const;
    bool violated(int stratum, int dose_bin) const;
};

// Throws TooSmall when the cohort has fewer than n_strata * n_dose_bins rows.
OverlapDiagnostic overlap_diagnostic(std::span<const EncounterRecord> cohort, const DoseGrid& grid, int n_strata = 5,
                                     int n_dose_bins = 10, std::size_t min_count = 5);

// Outcome-model metrics on held-out records at their administered doses.
// Pain accuracy compares the rounded prediction with the observed NRS; pain
// AUC scores the prediction against observed moderate-or-worse pain (NRS >= 4)
// and is absent when only one class occurs.
struct OutcomeMetrics {
    double pain_rmse = 0.0;
    double orade_rmse = 0.0;
    double pain_accuracy = 0.0;
    std::optional<double> pain_auc;
};

OutcomeMetrics outcome_metrics(const CadrModel& model, std::span<const EncounterRecord> records);

// A dose-recommendation method under comparison. The recommender sees the
// whole record; causal methods only read its features.
struct DoseMethod {
    std::string id;
    std::function<DoseMeq(const EncounterRecord&)> recommend;
    std::optional<OutcomeMetrics> metrics;
    bool overfit = false;
};

struct MethodReport {
    std::string method;
    std::size_t n_cases = 0;
    double dose_mae = 0.0;  // mg MEQ against the oracle dose
    double regret = 0.0;    // mean true-utility shortfall, >= 0
    std::optional<OutcomeMetrics> metrics;
    bool overfit = false;
    int rank = 0;  // 1 = best
};

struct MethodComparison {
    std::vector<MethodReport> ranked;
    std::array<std::string, 2> carried_forward;
};

// Scores every method on the given (retention) cases against the SCM oracle.
// A method's dose is snapped to the nearest grid point before scoring, so
// regret is never negative. Ranking: regret, then dose MAE, then method id.
// Throws ValidationError for fewer than two methods or no cases.
MethodComparison evaluate_methods(std::span<const EncounterRecord> cases, std::span<const DoseMethod> methods,
                                  const ScmGroundTruth& oracle, const DoseGrid& grid, const UtilityWeights& w);

// The retention split may be scored once per experiment configuration.
struct RetentionLedger {
    std::string config_hash;
    bool used = false;
};

// Marks the ledger used; throws RetentionReused when it already was.
void claim_retention(RetentionLedger& ledger);

}  // namespace opiaid
