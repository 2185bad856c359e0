#include "opiaid/domain.hpp"

#include <algorithm>
#include <cmath>

#include "opiaid/errors.hpp"

namespace opiaid {

namespace {

void require(bool ok, const char* field, const std::string& what) {
    if (!ok) throw ValidationError(field, what);
}

bool finite(double v) { return std::isfinite(v); }

}  // namespace

void validate(const CaseFeatures& x, int surgery_types) {
    require(x.age >= 18, "age", "must be an adult (>= 18), got " + std::to_string(x.age));
    require(x.age <= 120, "age", "implausible age " + std::to_string(x.age));
    require(finite(x.weight) && x.weight > 0, "weight", "must be positive and finite");
    require(x.sex == Sex::female || x.sex == Sex::male, "sex", "unknown value");
    require(x.asa_class >= 1 && x.asa_class <= 5, "asa_class", "must be in 1..5");
    require(finite(x.surgery_duration) && x.surgery_duration > 0, "surgery_duration",
            "must be positive and finite");
    require(x.surgery_type >= 0 && x.surgery_type < surgery_types, "surgery_type",
            "must be in 0.." + std::to_string(surgery_types - 1));
    require(finite(x.comorbidity_score) && x.comorbidity_score >= 0, "comorbidity_score",
            "must be finite and >= 0");
}

double case_severity_score(const CaseFeatures& x) {
    return 0.5 * (x.asa_class - 2) + (x.comorbidity_score - 1.5) / 1.5 + (x.age - 55) / 30.0 +
           (x.chronic_opioid_use ? 1.0 : 0.0);
}

std::vector<double> quantile_cutpoints(std::vector<double> scores, int n_strata) {
    if (n_strata < 1) throw ValidationError("n_strata", "must be >= 1");
    if (scores.empty()) throw TooSmall("no scores to stratify");
    std::sort(scores.begin(), scores.end());
    std::vector<double> cuts;
    const std::size_t n = scores.size();
    for (int k = 1; k < n_strata; ++k)
        cuts.push_back(scores[std::min(n - 1, static_cast<std::size_t>(k) * n / n_strata)]);
    return cuts;
}

int stratum_of(double score, std::span<const double> cutpoints) {
    return static_cast<int>(std::upper_bound(cutpoints.begin(), cutpoints.end(), score) -
                            cutpoints.begin());
}

TreatmentRegistry::TreatmentRegistry(std::vector<std::string> names) : names_(std::move(names)) {
    if (names_.empty()) throw ValidationError("registry", "must hold at least one opiate");
}

TreatmentRegistry TreatmentRegistry::morphine_only() { return TreatmentRegistry({"morphine"}); }

const std::string& TreatmentRegistry::name(std::size_t id) const {
    if (id >= names_.size()) throw ValidationError("treatment.opiate_id", "outside registry");
    return names_[id];
}

std::optional<std::size_t> TreatmentRegistry::find(std::string_view name) const {
    const auto it = std::find(names_.begin(), names_.end(), name);
    if (it == names_.end()) return std::nullopt;
    return static_cast<std::size_t>(it - names_.begin());
}

void validate(const Treatment& t, const TreatmentRegistry& registry) {
    require(t.opiate_id < registry.size(), "treatment.opiate_id", "outside registry");
}

DoseGrid::DoseGrid(double min_meq, double max_meq, double step_meq)
    : min_(min_meq), max_(max_meq), step_(step_meq), count_(0) {
    require(finite(min_meq) && min_meq >= 0, "grid.min_meq", "must be >= 0");
    require(finite(max_meq) && max_meq > min_meq, "grid.max_meq", "must exceed min_meq");
    require(finite(step_meq) && step_meq > 0, "grid.step_meq", "must be > 0");
    // Tolerate representation error so 0..20 step 0.5 gives 41 points.
    count_ = static_cast<std::size_t>(std::floor((max_ - min_) / step_ + 1e-9)) + 1;
    require(count_ >= 2, "grid.step_meq", "grid needs at least two points");
}

double DoseGrid::at(std::size_t i) const { return min_ + static_cast<double>(i) * step_; }

std::vector<double> DoseGrid::points() const {
    std::vector<double> out(count_);
    for (std::size_t i = 0; i < count_; ++i) out[i] = at(i);
    return out;
}

std::size_t DoseGrid::nearest_index(double dose) const {
    const double pos = std::round((dose - min_) / step_);
    if (pos <= 0) return 0;
    return std::min(static_cast<std::size_t>(pos), count_ - 1);
}

PainScore validate_pain(int raw) {
    if (raw < 0 || raw > 10)
        throw OutOfRange("nrs", "pain score " + std::to_string(raw) + " outside 0..10");
    return PainScore(raw);
}

void validate(const OradeRecord& rec) {
    if (rec.impact_score)
        require(*rec.impact_score >= 0 && *rec.impact_score <= 10, "orades.impact_score",
                "must be in 0..10");
    require(!rec.rescue_naloxone || rec.respiratory_depression, "orades.rescue_naloxone",
            "naloxone use implies respiratory depression");
}

double OradeWeights::total() const {
    return nausea + vomiting + sedation + dizziness + itching + urinary_retention + confusion +
           hallucinations + respiratory_depression + rescue_naloxone + rescue_antiemetic;
}

double orade_severity(const OradeRecord& rec, const OradeWeights& w) {
    const std::array<double, 11> weights = {w.nausea,         w.vomiting,         w.sedation,
                                            w.dizziness,      w.itching,          w.urinary_retention,
                                            w.confusion,      w.hallucinations,   w.respiratory_depression,
                                            w.rescue_naloxone, w.rescue_antiemetic};
    for (double v : weights)
        if (!(v >= 0) || !finite(v)) throw ValidationError("orade_weights", "must be finite and >= 0");
    const double total = w.total();
    if (total <= 0) throw AllZeroWeights();

    const auto b = [](bool v) { return v ? 1.0 : 0.0; };
    const std::array<double, 11> sev = {static_cast<int>(rec.nausea) / 3.0,
                                        b(rec.vomiting),
                                        static_cast<int>(rec.sedation) / 3.0,
                                        b(rec.dizziness),
                                        b(rec.itching),
                                        b(rec.urinary_retention),
                                        b(rec.confusion),
                                        b(rec.hallucinations),
                                        b(rec.respiratory_depression),
                                        b(rec.rescue_naloxone),
                                        b(rec.rescue_antiemetic)};
    double acc = 0;
    for (std::size_t i = 0; i < sev.size(); ++i) acc += weights[i] * sev[i];
    return std::clamp(10.0 * acc / total, 0.0, 10.0);
}

namespace {

void check_monotone(std::span<const VitalSample> s, const char* name) {
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (!finite(s[i].minute) || !finite(s[i].value))
            throw MalformedSeries(std::string(name) + ": non-finite sample");
        if (i > 0 && !(s[i].minute > s[i - 1].minute))
            throw MalformedSeries(std::string(name) + ": timestamps must be strictly increasing");
    }
}

double longest_run_below(std::span<const VitalSample> s, double threshold) {
    double best = 0;
    std::size_t i = 0;
    while (i < s.size()) {
        if (!(s[i].value < threshold)) {
            ++i;
            continue;
        }
        const double start = s[i].minute;
        std::size_t j = i;
        while (j < s.size() && s[j].value < threshold) ++j;
        const double stop = j < s.size() ? s[j].minute : s.back().minute;
        best = std::max(best, stop - start);
        i = j;
    }
    return best;
}

}  // namespace

bool derive_respiratory_depression(bool naloxone_used, std::span<const VitalSample> rr_series,
                                   std::span<const VitalSample> spo2_series,
                                   bool perceived_opioid_induced, const RespiratoryCriteria& c) {
    check_monotone(rr_series, "rr_series");
    check_monotone(spo2_series, "spo2_series");
    if (naloxone_used) return true;
    if (!perceived_opioid_induced) return false;
    return longest_run_below(rr_series, c.rr_threshold) >= c.min_duration ||
           longest_run_below(spo2_series, c.spo2_threshold) >= c.min_duration;
}

DoseMeq to_meq(std::string_view opiate, double dose_mg, Route route, const ConversionTable& table) {
    if (!(dose_mg >= 0) || !finite(dose_mg)) throw ValidationError("dose", "must be finite and >= 0");
    if (route != Route::iv) throw ValidationError("route", "only iv is supported");
    const auto it = table.iv_factor.find(opiate);
    if (it == table.iv_factor.end()) throw UnknownOpiate(std::string(opiate));
    return DoseMeq{dose_mg * it->second};
}

DoseMeq to_meq(const Treatment& t, const TreatmentRegistry& registry, double dose_mg, Route route,
               const ConversionTable& table) {
    return to_meq(registry.name(t.opiate_id), dose_mg, route, table);
}

DoseMeq aggregate_titrated_administrations(std::span<const Administration> admins,
                                           const ConversionTable& table,
                                           const AttributionWindow& window) {
    // Summing in sorted order keeps the result independent of input order
    // down to the last bit.
    std::vector<double> parts;
    parts.reserve(admins.size());
    for (const auto& a : admins) {
        const double meq = to_meq(a.opiate, a.dose_mg, Route::iv, table).value;
        if (a.minute >= window.start && a.minute <= window.end) parts.push_back(meq);
    }
    std::sort(parts.begin(), parts.end());
    double total = 0;
    for (double p : parts) total += p;
    return DoseMeq{total};
}

void validate(const EncounterRecord& r, int surgery_types) {
    validate(r.features, surgery_types);
    require(finite(r.administered_dose.value) && r.administered_dose.value >= 0,
            "administered_dose", "must be finite and >= 0");
    validate(r.orades);
    require(finite(r.rescue_analgesia_meq) && r.rescue_analgesia_meq >= 0, "rescue_analgesia_meq",
            "must be finite and >= 0");
    require(finite(r.pacu_los) && r.pacu_los >= 0, "pacu_los", "must be finite and >= 0");
    require(r.ambulation_cas >= 0 && r.ambulation_cas <= 6, "ambulation_cas", "must be in 0..6");
}

int pain_at(const EncounterRecord& r, PainTimepoint tp) {
    switch (tp) {
        case PainTimepoint::arrival:
            return r.pain_arrival.nrs();
        case PainTimepoint::discharge:
            return r.pain_discharge.nrs();
        case PainTimepoint::pre_dosing_max: {
            int best = -1;
            for (const auto& p : r.pain_pre_dosing) best = std::max(best, p.nrs());
            return best < 0 ? r.pain_arrival.nrs() : best;
        }
    }
    return r.pain_arrival.nrs();
}

void validate(const UtilityWeights& w) {
    require(finite(w.w_pain) && w.w_pain >= 0, "weights.w_pain", "must be finite and >= 0");
    require(finite(w.w_orades) && w.w_orades >= 0, "weights.w_orades", "must be finite and >= 0");
    require(finite(w.w_rescue) && w.w_rescue >= 0, "weights.w_rescue", "must be finite and >= 0");
    require(w.w_pain + w.w_orades > 0, "weights", "w_pain + w_orades must be > 0");
}

std::string_view to_string(Sex s) { return s == Sex::male ? "male" : "female"; }

std::string_view to_string(Nausea n) {
    switch (n) {
        case Nausea::none: return "none";
        case Nausea::mild: return "mild";
        case Nausea::moderate: return "moderate";
        case Nausea::severe: return "severe";
    }
    return "none";
}

std::string_view to_string(Sedation s) {
    switch (s) {
        case Sedation::alert: return "alert";
        case Sedation::verbal: return "verbal";
        case Sedation::pain: return "pain";
        case Sedation::unresponsive: return "unresponsive";
    }
    return "alert";
}

std::string_view to_string(PainTimepoint tp) {
    switch (tp) {
        case PainTimepoint::arrival: return "arrival";
        case PainTimepoint::pre_dosing_max: return "pre_dosing_max";
        case PainTimepoint::discharge: return "discharge";
    }
    return "arrival";
}

Sex parse_sex(std::string_view s) {
    if (s == "female") return Sex::female;
    if (s == "male") return Sex::male;
    throw ValidationError("sex", "expected female|male, got '" + std::string(s) + "'");
}

Nausea parse_nausea(std::string_view s) {
    if (s == "none") return Nausea::none;
    if (s == "mild") return Nausea::mild;
    if (s == "moderate") return Nausea::moderate;
    if (s == "severe") return Nausea::severe;
    throw ValidationError("orades.nausea", "unknown level '" + std::string(s) + "'");
}

Sedation parse_sedation(std::string_view s) {
    if (s == "alert") return Sedation::alert;
    if (s == "verbal") return Sedation::verbal;
    if (s == "pain") return Sedation::pain;
    if (s == "unresponsive") return Sedation::unresponsive;
    throw ValidationError("orades.sedation", "unknown level '" + std::string(s) + "'");
}

PainTimepoint parse_pain_timepoint(std::string_view s) {
    if (s == "arrival") return PainTimepoint::arrival;
    if (s == "pre_dosing_max") return PainTimepoint::pre_dosing_max;
    if (s == "discharge") return PainTimepoint::discharge;
    throw ValidationError("pain_timepoint", "unknown timepoint '" + std::string(s) + "'");
}

}  // namespace opiaid
