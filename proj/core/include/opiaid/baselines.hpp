#pragma once

// The two non-causal comparison methods: a clinician rule table that adjusts
// the administered dose by the observed early response, and the proxy-marker
// analysis that relates dose deviations to PACU length of stay and the
// cumulated ambulation score.

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "opiaid/domain.hpp"
#include "opiaid/learners.hpp"

namespace opiaid {

// A rule matches when pain_min <= pain <= pain_max, severity_above < severity
// <= severity_at_most, and the respiratory-depression flag equals
// `respiratory_depression` when that is set.
struct Rule {
    std::string name;
    int pain_min = 0;
    int pain_max = 10;
    double severity_above = -1.0;
    double severity_at_most = 10.0;
    std::optional<bool> respiratory_depression;
    double adjustment_meq = 0.0;
    bool operator==(const Rule&) const = default;
};

struct RuleTable {
    std::vector<Rule> rules;  // first match wins

    // respiratory depression -4 (overrides all), pain 7-10 +4, pain 4-6 +2,
    // pain 1-3 0, pain 0 with severity above the lower third -2, pain 0 0.
    static RuleTable defaults();
    // Index of the first matching rule, if any.
    std::optional<std::size_t> match(int pain, double severity, bool respiratory_depression) const;
    bool operator==(const RuleTable&) const = default;
};

// Throws ValidationError for non-finite adjustments or empty ranges.
void validate(const RuleTable& table);

// True when every (pain 0..10, severity 0..10, flag) combination matches a
// rule. Interval conditions make it enough to probe every rule boundary and
// the midpoints between consecutive boundaries.
bool is_exhaustive(const RuleTable& table);

// {"rules": [{"name", "pain_min", "pain_max", "severity_above",
//   "severity_at_most", "respiratory_depression" (bool or null),
//   "adjustment_meq"}, ...]}
RuleTable rule_table_from_json(std::string_view text);
std::string rule_table_to_json(const RuleTable& table);

// administered + adjustment of the first matching rule, clamped to
// [0, dose_max]. Severity is orade_severity of the record. Throws
// NoMatchingRule, or ValidationError for a negative administered dose.
DoseMeq rule_based_optimal_dose(DoseMeq administered, PainScore pain_0_1h, const OradeRecord& orades,
                                const RuleTable& table, double dose_max,
                                const OradeWeights& weights = {});

// Fentanyl-aware variant: titrated administrations are first aggregated to
// one MEQ dose.
DoseMeq rule_based_optimal_dose(std::span<const Administration> administrations, PainScore pain_0_1h,
                                const OradeRecord& orades, const RuleTable& table, double dose_max,
                                const OradeWeights& weights = {},
                                const ConversionTable& conversion = ConversionTable::defaults(),
                                const AttributionWindow& window = {});

// Association of |administered - recommended| with one outcome. All
// statistics are absent and `degenerate` is set when either side has zero
// variance.
struct Association {
    std::optional<double> pearson;
    std::optional<double> spearman;
    std::optional<double> slope;  // least-squares slope of outcome on deviation
    bool degenerate = false;
};

struct ProxyReport {
    std::size_t n = 0;
    Association los;
    Association cas;
    std::vector<double> deviations;
};

double pearson(std::span<const double> a, std::span<const double> b);
// Pearson correlation of average ranks.
double spearman(std::span<const double> a, std::span<const double> b);

// Throws InsufficientData below 10 records.
ProxyReport proxy_marker_score(std::span<const EncounterRecord> records,
                               const std::function<DoseMeq(const EncounterRecord&)>& recommender);

// Header: index,administered,recommended,deviation,pacu_los,ambulation_cas
std::string proxy_deviations_csv(std::span<const EncounterRecord> records, const ProxyReport& report,
                                 const std::function<DoseMeq(const EncounterRecord&)>& recommender);

// Proxy-marker dose recommender: a model of PACU length of stay on the same
// (treatment, dose, case) inputs as the outcome models; the recommended dose
// minimizes predicted length of stay over the grid (ties to the lowest dose).
struct ProxyModel {
    FittedModel los_model;
    DoseGrid grid = DoseGrid::standard();
    TreatmentRegistry registry = TreatmentRegistry::morphine_only();
};

ProxyModel fit_proxy_model(std::span<const EncounterRecord> training, const DoseGrid& grid,
                           const TreatmentRegistry& registry, LearnerKind kind, const Hyper& hyper,
                           std::uint64_t seed);
DoseMeq proxy_recommend(const ProxyModel& model, const CaseFeatures& x, const Treatment& t);

}  // namespace opiaid
