#pragma once

// Clinical variables of an anesthesia encounter: case characteristics, the
// end-of-surgery opioid dose in morphine equivalents, pain on the NRS and
// the opioid-related adverse drug events (ORADEs) observed in the PACU.

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace opiaid {

enum class Sex : std::uint8_t { female, male };

inline constexpr int kSurgeryTypeCount = 4;

struct CaseFeatures {
    int age = 55;                  // years
    double weight = 78.0;          // kg
    Sex sex = Sex::female;
    int asa_class = 2;             // 1..5
    double surgery_duration = 120; // minutes
    int surgery_type = 0;          // 0..kSurgeryTypeCount-1
    bool chronic_opioid_use = false;
    double comorbidity_score = 1.5;

    bool operator==(const CaseFeatures&) const = default;
};

// Throws ValidationError naming the offending field.
void validate(const CaseFeatures& x, int surgery_types = kSurgeryTypeCount);

// Scalar used to stratify cases for the overlap check and for the
// positivity-violation mode of the generator:
//   0.5*(asa-2) + (comorbidity-1.5)/1.5 + (age-55)/30 + chronic
double case_severity_score(const CaseFeatures& x);

// Cut points splitting `scores` into n_strata quantile groups: the k-th cut is
// the sorted score at index floor(k*n/n_strata). stratum_of counts the cuts
// that are <= score, so ties move up a stratum.
std::vector<double> quantile_cutpoints(std::vector<double> scores, int n_strata);
int stratum_of(double score, std::span<const double> cutpoints);

class TreatmentRegistry {
public:
    explicit TreatmentRegistry(std::vector<std::string> names);
    static TreatmentRegistry morphine_only();

    std::size_t size() const { return names_.size(); }
    const std::string& name(std::size_t id) const;
    std::optional<std::size_t> find(std::string_view name) const;
    const std::vector<std::string>& names() const { return names_; }

    bool operator==(const TreatmentRegistry&) const = default;

private:
    std::vector<std::string> names_;
};

struct Treatment {
    std::size_t opiate_id = 0;
    bool operator==(const Treatment&) const = default;
};

void validate(const Treatment& t, const TreatmentRegistry& registry);

struct DoseMeq {
    double value = 0.0;  // mg morphine equivalents
    auto operator<=>(const DoseMeq&) const = default;
};

class DoseGrid {
public:
    DoseGrid(double min_meq, double max_meq, double step_meq);
    static DoseGrid standard() { return {0.0, 20.0, 0.5}; }

    double min_meq() const { return min_; }
    double max_meq() const { return max_; }
    double step_meq() const { return step_; }

    std::size_t size() const { return count_; }
    // Computed as min + i*step, never by accumulation.
    double at(std::size_t i) const;
    std::vector<double> points() const;
    bool contains(double dose) const { return dose >= min_ && dose <= max_; }
    std::size_t nearest_index(double dose) const;

    bool operator==(const DoseGrid&) const = default;

private:
    double min_;
    double max_;
    double step_;
    std::size_t count_;
};

class PainScore {
public:
    int nrs() const { return nrs_; }
    bool operator==(const PainScore&) const = default;

private:
    friend PainScore validate_pain(int raw);
    explicit PainScore(int nrs) : nrs_(nrs) {}
    int nrs_;
};

// Accepts exactly {0, ..., 10}; throws OutOfRange otherwise.
PainScore validate_pain(int raw);

enum class Nausea : std::uint8_t { none, mild, moderate, severe };
// AVPU scale.
enum class Sedation : std::uint8_t { alert, verbal, pain, unresponsive };

struct OradeRecord {
    Nausea nausea = Nausea::none;
    bool vomiting = false;
    Sedation sedation = Sedation::alert;
    bool dizziness = false;
    bool itching = false;
    bool urinary_retention = false;
    bool confusion = false;
    bool hallucinations = false;
    bool respiratory_depression = false;
    bool rescue_naloxone = false;
    bool rescue_antiemetic = false;
    std::optional<int> impact_score;  // day-1 negative impact, 0..10

    bool operator==(const OradeRecord&) const = default;
};

void validate(const OradeRecord& rec);

struct OradeWeights {
    double nausea = 1.0;
    double vomiting = 1.0;
    double sedation = 1.0;
    double dizziness = 1.0;
    double itching = 1.0;
    double urinary_retention = 1.0;
    double confusion = 1.0;
    double hallucinations = 1.0;
    double respiratory_depression = 3.0;
    double rescue_naloxone = 1.0;
    double rescue_antiemetic = 1.0;

    double total() const;
    bool operator==(const OradeWeights&) const = default;
};

// 10 * weighted mean of per-component severities in [0,1]. Four-level
// components map to 0, 1/3, 2/3, 1; booleans to 0/1. Throws AllZeroWeights
// or ValidationError for a negative weight.
double orade_severity(const OradeRecord& rec, const OradeWeights& weights = {});

struct VitalSample {
    double minute;
    double value;
};

struct RespiratoryCriteria {
    double rr_threshold = 10.0;    // breaths/min, strictly below
    double spo2_threshold = 90.0;  // percent, strictly below
    double min_duration = 10.0;    // minutes
};

// A series is read as a step function: each sample's value holds until the
// next sample, and the last sample closes the series. A below-threshold run
// spans from its first sample to the first following sample that is not
// below the threshold (or to the last timestamp).
bool derive_respiratory_depression(bool naloxone_used, std::span<const VitalSample> rr_series,
                                   std::span<const VitalSample> spo2_series,
                                   bool perceived_opioid_induced,
                                   const RespiratoryCriteria& criteria = {});

enum class Route : std::uint8_t { iv };

// Default factors are morphine = 1 and iv fentanyl = 100. They are
// configurable defaults, not clinical guidance.
struct ConversionTable {
    std::string version = "meq-table-1";
    std::map<std::string, double, std::less<>> iv_factor = {{"morphine", 1.0}, {"fentanyl", 100.0}};

    static ConversionTable defaults() { return {}; }
    bool operator==(const ConversionTable&) const = default;
};

DoseMeq to_meq(std::string_view opiate, double dose_mg, Route route = Route::iv,
               const ConversionTable& table = ConversionTable::defaults());
DoseMeq to_meq(const Treatment& t, const TreatmentRegistry& registry, double dose_mg,
               Route route = Route::iv, const ConversionTable& table = ConversionTable::defaults());

struct Administration {
    std::string opiate;
    double dose_mg = 0.0;
    double minute = 0.0;  // relative to end of surgery (negative = before)
};

// Closed interval of minutes relative to surgery end.
struct AttributionWindow {
    double start = -30.0;
    double end = 0.0;
};

DoseMeq aggregate_titrated_administrations(std::span<const Administration> admins,
                                           const ConversionTable& table = ConversionTable::defaults(),
                                           const AttributionWindow& window = {});

struct EncounterRecord {
    CaseFeatures features;
    Treatment treatment;
    DoseMeq administered_dose;
    PainScore pain_arrival = validate_pain(0);
    std::vector<PainScore> pain_pre_dosing;
    PainScore pain_discharge = validate_pain(0);
    OradeRecord orades;
    double rescue_analgesia_meq = 0.0;
    double pacu_los = 0.0;  // minutes to discharge readiness
    int ambulation_cas = 6; // 0..6

    bool operator==(const EncounterRecord&) const = default;
};

void validate(const EncounterRecord& r, int surgery_types = kSurgeryTypeCount);

enum class PainTimepoint : std::uint8_t { arrival, pre_dosing_max, discharge };

// pre_dosing_max reduces the pre-dosing list by its maximum and falls back to
// the arrival score when the list is empty.
int pain_at(const EncounterRecord& r, PainTimepoint tp);

struct UtilityWeights {
    double w_pain = 0.5;
    double w_orades = 0.5;
    // Optional rescue-analgesia term; 0 reproduces the two-term utility.
    double w_rescue = 0.0;

    bool operator==(const UtilityWeights&) const = default;
};

void validate(const UtilityWeights& w);

std::string_view to_string(Sex s);
std::string_view to_string(Nausea n);
std::string_view to_string(Sedation s);
std::string_view to_string(PainTimepoint tp);
Sex parse_sex(std::string_view s);
Nausea parse_nausea(std::string_view s);
Sedation parse_sedation(std::string_view s);
PainTimepoint parse_pain_timepoint(std::string_view s);

}  // namespace opiaid
