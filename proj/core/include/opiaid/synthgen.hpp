#pragma once

// Synthetic cohort generator with known potential outcomes.
//
// Causal structure: case features X drive the administered dose D (the
// clinician policy, i.e. confounding) and the per-case dose-response
// parameters. Pain follows an Emax decay p0*ed50/(d+ed50); ORADE severity a
// Hill curve s_max*d^2/(d^2+od50^2). PACU length of stay and ambulation are
// downstream of the realized pain and ORADEs.
//
// Per-case parameters are affine in the standardized feature map phi(x):
//   phi = [(age-55)/15, (weight-78)/15, male, asa-2, (duration-120)/60,
//          chronic_opioid_use, (comorbidity-1.5)/1.5]
// plus a per-surgery-type offset, clamped to the parameter's range.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "opiaid/domain.hpp"
#include "opiaid/rng.hpp"

namespace opiaid {

inline constexpr std::size_t kPhiDim = 7;
using PhiVector = std::array<double, kPhiDim>;
using TypeOffsets = std::array<double, kSurgeryTypeCount>;

PhiVector feature_map(const CaseFeatures& x);

struct AffineParam {
    double intercept = 0.0;
    PhiVector coef{};
    TypeOffsets type_offset{};
    double lo = 0.0;
    double hi = 0.0;

    double eval(const CaseFeatures& x) const;
    bool operator==(const AffineParam&) const = default;
};

struct FeatureDistribution {
    double age_mean = 55.0, age_sd = 15.0;
    int age_max = 95;
    double weight_mean = 78.0, weight_sd = 15.0, weight_min = 40.0, weight_max = 180.0;
    double p_male = 0.5;
    std::array<double, 5> asa_probs = {0.15, 0.45, 0.30, 0.09, 0.01};
    double duration_log_mean = 4.787491742782046;  // log(120)
    double duration_log_sd = 0.45;
    double duration_min = 15.0, duration_max = 600.0;
    double p_chronic = 0.10;
    double comorbidity_mean = 1.5;  // exponential
    TypeOffsets surgery_type_probs = {0.25, 0.25, 0.25, 0.25};

    bool operator==(const FeatureDistribution&) const = default;
};

enum class NoiseKind : std::uint8_t { normal, uniform };

struct DosePolicy {
    double intercept = 8.0;
    PhiVector coef = {-0.8, 1.5, 0.5, -0.3, 1.0, 2.0, 0.0};
    TypeOffsets type_offset = {0.0, 1.0, -1.0, 0.5};
    NoiseKind noise = NoiseKind::normal;
    // sd for normal noise, half-width for uniform noise.
    double noise_scale = 3.5;

    bool operator==(const DosePolicy&) const = default;
};

// Restricts the observational policy for one severity stratum to
// [dose_lo, dose_hi] so the overlap diagnostic has a known violation.
struct PositivityViolation {
    bool enabled = false;
    int n_strata = 5;
    int stratum = 0;
    double dose_lo = 0.0;
    double dose_hi = 5.0;

    bool operator==(const PositivityViolation&) const = default;
};

struct LosModel {
    double intercept = 30.0;     // minutes
    double pain_coef = 5.0;      // per NRS point
    double severity_coef = 5.0;  // per ORADE severity point
    double noise_sd = 10.0;

    bool operator==(const LosModel&) const = default;
};

struct ScmGroundTruth {
    std::string version = "opiaid-scm-1";
    std::uint64_t seed = 20240901;
    double dose_max = 20.0;

    FeatureDistribution features;
    DosePolicy dose_policy;

    AffineParam pain_baseline{8.0, {-0.3, 0.0, -0.3, 0.2, 0.5, 1.0, 0.2}, {0.0, 0.8, -0.6, 0.4}, 4.0, 10.0};
    AffineParam pain_ed50{5.0, {-0.6, 0.8, 0.3, -0.3, 0.3, 3.0, -0.2}, {0.0, 0.5, -0.5, 0.0}, 3.0, 12.0};
    AffineParam orade_ceiling{6.0, {0.6, -0.3, -0.5, 0.5, 0.0, -0.5, 0.6}, {0.0, -0.5, 0.5, 0.0}, 2.0, 10.0};
    AffineParam orade_od50{10.0, {-0.8, 0.8, 0.4, -0.4, 0.0, 2.5, -0.4}, {0.0, 0.0, 0.0, 0.0}, 6.0, 14.0};
    double pain_noise_sd = 0.8;
    double orade_noise_sd = 0.8;

    LosModel los;
    double rescue_kappa = 1.5;  // MEQ per NRS point above 4
    double rescue_noise_sd = 1.0;
    double cas_noise_sd = 0.5;

    OradeWeights orade_weights;
    PositivityViolation positivity;

    static ScmGroundTruth defaults() { return {}; }
    // Outcome noise (pain, ORADE, LOS, rescue, CAS) switched off; the dose
    // policy keeps its noise so every case still sees a spread of doses.
    static ScmGroundTruth noiseless();

    bool operator==(const ScmGroundTruth&) const = default;
};

// Throws ValidationError when a noise sd is negative or a range is empty.
void validate(const ScmGroundTruth& gt);

struct ResponseParams {
    double p0;
    double ed50;
    double s_max;
    double od50;
};

ResponseParams response_params(const ScmGroundTruth& gt, const CaseFeatures& x);

// Closed forms on explicit parameters; the gt overloads evaluate the case's
// parameters first. All are clamped to [0, 10].
double pain_response(const ResponseParams& p, double dose);
double orade_response(const ResponseParams& p, double dose);
double rescue_response(const ScmGroundTruth& gt, const ResponseParams& p, double dose);

double true_pain_response(const ScmGroundTruth& gt, const Treatment& t, DoseMeq d, const CaseFeatures& x);
double true_orade_response(const ScmGroundTruth& gt, const Treatment& t, DoseMeq d, const CaseFeatures& x);

// Exhaustive grid scan of the weighted true outcomes; ties go to the lowest dose.
DoseMeq true_optimal_dose(const ScmGroundTruth& gt, const CaseFeatures& x, const Treatment& t,
                          const DoseGrid& grid, const UtilityWeights& w);
DoseMeq optimal_dose_for(const ScmGroundTruth& gt, const ResponseParams& p, const DoseGrid& grid,
                         const UtilityWeights& w);
// w_pain*pain + w_orades*orade (+ w_rescue*rescue) at the true response.
double true_cost(const ScmGroundTruth& gt, const ResponseParams& p, double dose, const UtilityWeights& w);

// n i.i.d. cases; case i is drawn from its own counter-derived stream, so the
// output does not depend on how many cases are drawn alongside it.
std::vector<CaseFeatures> sample_features(const ScmGroundTruth& gt, std::size_t n, std::uint64_t seed);

// clamp(intercept + coef.phi(x) + type_offset + noise, 0, dose_max)
DoseMeq assign_observational_dose(const ScmGroundTruth& gt, const CaseFeatures& x, double noise_draw);
double draw_dose_noise(const ScmGroundTruth& gt, Rng& rng);

// ORADE components from a latent severity in [0,10]. Components are filled
// in a fixed clinical order (respiratory depression and naloxone last) with
// error diffusion, so orade_severity of the result tracks the latent to
// within half a quantization step of one component.
OradeRecord orade_components_from_latent(double latent, const OradeWeights& weights);

// Noise-free PACU length of stay in minutes, floored at 0.
double expected_pacu_los(const LosModel& m, int pain, double severity);

// Outcomes for one case at one administered dose.
EncounterRecord simulate_encounter(const ScmGroundTruth& gt, const CaseFeatures& x, DoseMeq dose, Rng& rng);

struct Cohort {
    std::vector<EncounterRecord> records;
    ScmGroundTruth ground_truth;
    std::string generator_version = "opiaid-synthgen-1";
};

// Pure function of (gt, n); gt.seed drives every draw.
Cohort generate_cohort(const ScmGroundTruth& gt, std::size_t n);

}  // namespace opiaid
