#include "opiaid/synthgen.hpp"

#include <algorithm>
#include <cmath>

#include "opiaid/errors.hpp"

namespace opiaid {

PhiVector feature_map(const CaseFeatures& x) {
    return {(x.age - 55.0) / 15.0,
            (x.weight - 78.0) / 15.0,
            x.sex == Sex::male ? 1.0 : 0.0,
            static_cast<double>(x.asa_class - 2),
            (x.surgery_duration - 120.0) / 60.0,
            x.chronic_opioid_use ? 1.0 : 0.0,
            (x.comorbidity_score - 1.5) / 1.5};
}

namespace {

double dot(const PhiVector& a, const PhiVector& b) {
    double s = 0;
    for (std::size_t i = 0; i < kPhiDim; ++i) s += a[i] * b[i];
    return s;
}

std::size_t categorical(Rng& rng, std::span<const double> probs) {
    double total = 0;
    for (double p : probs) total += p;
    double u = rng.uniform() * total;
    for (std::size_t k = 0; k < probs.size(); ++k) {
        if (u < probs[k]) return k;
        u -= probs[k];
    }
    return probs.size() - 1;
}

void require(bool ok, const char* field, const char* what) {
    if (!ok) throw ValidationError(field, what);
}

void validate_param(const AffineParam& p, const char* field) {
    require(std::isfinite(p.lo) && std::isfinite(p.hi) && p.lo <= p.hi, field, "empty range");
}

}  // namespace

double AffineParam::eval(const CaseFeatures& x) const {
    const auto type = static_cast<std::size_t>(std::clamp(x.surgery_type, 0, kSurgeryTypeCount - 1));
    return std::clamp(intercept + dot(coef, feature_map(x)) + type_offset[type], lo, hi);
}

ScmGroundTruth ScmGroundTruth::noiseless() {
    ScmGroundTruth gt;
    gt.pain_noise_sd = 0;
    gt.orade_noise_sd = 0;
    gt.los.noise_sd = 0;
    gt.rescue_noise_sd = 0;
    gt.cas_noise_sd = 0;
    return gt;
}

void validate(const ScmGroundTruth& gt) {
    require(gt.pain_noise_sd >= 0 && gt.orade_noise_sd >= 0 && gt.los.noise_sd >= 0 &&
                gt.rescue_noise_sd >= 0 && gt.cas_noise_sd >= 0 && gt.dose_policy.noise_scale >= 0,
            "scm.noise", "noise scales must be >= 0");
    require(std::isfinite(gt.dose_max) && gt.dose_max > 0, "scm.dose_max", "must be > 0");
    validate_param(gt.pain_baseline, "scm.pain_baseline");
    validate_param(gt.pain_ed50, "scm.pain_ed50");
    validate_param(gt.orade_ceiling, "scm.orade_ceiling");
    validate_param(gt.orade_od50, "scm.orade_od50");
    require(gt.pain_baseline.lo >= 0 && gt.pain_baseline.hi <= 10, "scm.pain_baseline", "must lie in [0,10]");
    require(gt.orade_ceiling.lo >= 0 && gt.orade_ceiling.hi <= 10, "scm.orade_ceiling", "must lie in [0,10]");
    require(gt.pain_ed50.lo > 0, "scm.pain_ed50", "must be > 0");
    require(gt.orade_od50.lo > 0, "scm.orade_od50", "must be > 0");
    require(gt.features.age_max >= 18, "scm.features.age_max", "must be >= 18");
    require(gt.orade_weights.total() > 0, "scm.orade_weights", "need a positive weight");
    if (gt.positivity.enabled) {
        require(gt.positivity.n_strata >= 1, "scm.positivity.n_strata", "must be >= 1");
        require(gt.positivity.stratum >= 0 && gt.positivity.stratum < gt.positivity.n_strata,
                "scm.positivity.stratum", "outside 0..n_strata-1");
        require(gt.positivity.dose_lo <= gt.positivity.dose_hi, "scm.positivity", "dose_lo > dose_hi");
    }
}

ResponseParams response_params(const ScmGroundTruth& gt, const CaseFeatures& x) {
    return {gt.pain_baseline.eval(x), gt.pain_ed50.eval(x), gt.orade_ceiling.eval(x), gt.orade_od50.eval(x)};
}

double pain_response(const ResponseParams& p, double dose) {
    return std::clamp(p.p0 * p.ed50 / (dose + p.ed50), 0.0, 10.0);
}

double orade_response(const ResponseParams& p, double dose) {
    const double d2 = dose * dose;
    return std::clamp(p.s_max * d2 / (d2 + p.od50 * p.od50), 0.0, 10.0);
}

double rescue_response(const ScmGroundTruth& gt, const ResponseParams& p, double dose) {
    return gt.rescue_kappa * std::max(0.0, pain_response(p, dose) - 4.0);
}

double true_pain_response(const ScmGroundTruth& gt, const Treatment&, DoseMeq d, const CaseFeatures& x) {
    return pain_response(response_params(gt, x), d.value);
}

double true_orade_response(const ScmGroundTruth& gt, const Treatment&, DoseMeq d, const CaseFeatures& x) {
    return orade_response(response_params(gt, x), d.value);
}

double true_cost(const ScmGroundTruth& gt, const ResponseParams& p, double dose, const UtilityWeights& w) {
    double c = w.w_pain * pain_response(p, dose) + w.w_orades * orade_response(p, dose);
    if (w.w_rescue != 0) c += w.w_rescue * rescue_response(gt, p, dose);
    return c;
}

DoseMeq optimal_dose_for(const ScmGroundTruth& gt, const ResponseParams& p, const DoseGrid& grid,
                         const UtilityWeights& w) {
    std::size_t best = 0;
    double best_cost = true_cost(gt, p, grid.at(0), w);
    for (std::size_t i = 1; i < grid.size(); ++i) {
        const double c = true_cost(gt, p, grid.at(i), w);
        if (c < best_cost) {
            best_cost = c;
            best = i;
        }
    }
    return DoseMeq{grid.at(best)};
}

DoseMeq true_optimal_dose(const ScmGroundTruth& gt, const CaseFeatures& x, const Treatment&,
                          const DoseGrid& grid, const UtilityWeights& w) {
    validate(w);
    return optimal_dose_for(gt, response_params(gt, x), grid, w);
}

namespace {

CaseFeatures draw_case(const FeatureDistribution& fd, Rng& rng) {
    CaseFeatures x;
    x.age = static_cast<int>(std::clamp(std::round(rng.normal(fd.age_mean, fd.age_sd)), 18.0,
                                        static_cast<double>(fd.age_max)));
    x.weight = std::clamp(rng.normal(fd.weight_mean, fd.weight_sd), fd.weight_min, fd.weight_max);
    x.sex = rng.bernoulli(fd.p_male) ? Sex::male : Sex::female;
    x.asa_class = static_cast<int>(categorical(rng, fd.asa_probs)) + 1;
    x.surgery_duration = std::clamp(std::exp(rng.normal(fd.duration_log_mean, fd.duration_log_sd)),
                                    fd.duration_min, fd.duration_max);
    x.surgery_type = static_cast<int>(categorical(rng, fd.surgery_type_probs));
    x.chronic_opioid_use = rng.bernoulli(fd.p_chronic);
    x.comorbidity_score = -fd.comorbidity_mean * std::log1p(-rng.uniform());
    return x;
}

// Streams 2i and 2i+1 hold case i's features and outcomes respectively.
std::uint64_t feature_stream(std::uint64_t seed, std::size_t i) { return derive_seed(seed, 2 * i); }
std::uint64_t outcome_stream(std::uint64_t seed, std::size_t i) { return derive_seed(seed, 2 * i + 1); }

}  // namespace

std::vector<CaseFeatures> sample_features(const ScmGroundTruth& gt, std::size_t n, std::uint64_t seed) {
    if (n == 0) throw ValidationError("n", "must be >= 1");
    std::vector<CaseFeatures> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        Rng rng(feature_stream(seed, i));
        out.push_back(draw_case(gt.features, rng));
    }
    return out;
}

double draw_dose_noise(const ScmGroundTruth& gt, Rng& rng) {
    const auto& pol = gt.dose_policy;
    if (pol.noise == NoiseKind::uniform) return rng.uniform(-pol.noise_scale, pol.noise_scale);
    return rng.normal(0.0, pol.noise_scale);
}

DoseMeq assign_observational_dose(const ScmGroundTruth& gt, const CaseFeatures& x, double noise_draw) {
    const auto& pol = gt.dose_policy;
    const auto type = static_cast<std::size_t>(std::clamp(x.surgery_type, 0, kSurgeryTypeCount - 1));
    const double raw = pol.intercept + dot(pol.coef, feature_map(x)) + pol.type_offset[type] + noise_draw;
    return DoseMeq{std::clamp(raw, 0.0, gt.dose_max)};
}

OradeRecord orade_components_from_latent(double latent, const OradeWeights& w) {
    OradeRecord rec;
    const double total = w.total();
    double remaining = std::clamp(latent, 0.0, 10.0) / 10.0 * total;

    // Returns the chosen level in [0,1] on a grid of `levels` steps and
    // consumes its mass from `remaining`.
    const auto take = [&remaining](double weight, int levels) {
        if (weight <= 0) return 0.0;
        const double frac = std::clamp(remaining / weight, 0.0, 1.0);
        const double level = std::round(frac * levels) / levels;
        remaining -= level * weight;
        return level;
    };
    const auto on = [](double level) { return level >= 1.0; };
    const auto four = [](double level) { return static_cast<int>(std::lround(level * 3)); };

    rec.nausea = static_cast<Nausea>(four(take(w.nausea, 3)));
    rec.vomiting = on(take(w.vomiting, 1));
    rec.rescue_antiemetic = on(take(w.rescue_antiemetic, 1));
    rec.dizziness = on(take(w.dizziness, 1));
    rec.itching = on(take(w.itching, 1));
    rec.sedation = static_cast<Sedation>(four(take(w.sedation, 3)));
    rec.urinary_retention = on(take(w.urinary_retention, 1));
    rec.confusion = on(take(w.confusion, 1));
    rec.hallucinations = on(take(w.hallucinations, 1));
    rec.respiratory_depression = on(take(w.respiratory_depression, 1));
    if (rec.respiratory_depression) rec.rescue_naloxone = on(take(w.rescue_naloxone, 1));
    return rec;
}

double expected_pacu_los(const LosModel& m, int pain, double severity) {
    return std::max(0.0, m.intercept + m.pain_coef * pain + m.severity_coef * severity);
}

EncounterRecord simulate_encounter(const ScmGroundTruth& gt, const CaseFeatures& x, DoseMeq dose, Rng& rng) {
    const ResponseParams p = response_params(gt, x);
    const double pain_true = pain_response(p, dose.value);
    const double orade_true = orade_response(p, dose.value);

    EncounterRecord r;
    r.features = x;
    r.treatment = Treatment{0};
    r.administered_dose = dose;

    // Dithered rounding: E[score] equals the latent value away from the ends
    // of the scale, so a deterministic latent does not become a staircase.
    const auto nrs = [&rng](double v) {
        return validate_pain(static_cast<int>(std::lround(std::clamp(v + rng.uniform(-0.5, 0.5), 0.0, 10.0))));
    };
    r.pain_arrival = nrs(pain_true + rng.normal(0.0, gt.pain_noise_sd));
    const int arrival = r.pain_arrival.nrs();
    if (arrival >= 4) r.pain_pre_dosing.push_back(r.pain_arrival);
    if (arrival >= 7) r.pain_pre_dosing.push_back(validate_pain(arrival - 2));
    r.pain_discharge = nrs(0.5 * pain_true + rng.normal(0.0, gt.pain_noise_sd));

    const double latent = std::clamp(orade_true + rng.normal(0.0, gt.orade_noise_sd), 0.0, 10.0);
    r.orades = orade_components_from_latent(latent, gt.orade_weights);
    const double severity = orade_severity(r.orades, gt.orade_weights);
    if (arrival > 0 || severity > 0)
        r.orades.impact_score = static_cast<int>(std::lround(std::clamp(0.5 * (pain_true + latent), 0.0, 10.0)));

    r.rescue_analgesia_meq =
        std::max(0.0, gt.rescue_kappa * (arrival - 4.0) + rng.normal(0.0, gt.rescue_noise_sd));
    r.pacu_los = std::max(0.0, expected_pacu_los(gt.los, arrival, severity) + rng.normal(0.0, gt.los.noise_sd));
    r.ambulation_cas = static_cast<int>(std::lround(
        std::clamp(6.0 - 0.3 * arrival - 0.3 * severity + rng.normal(0.0, gt.cas_noise_sd), 0.0, 6.0)));
    return r;
}

Cohort generate_cohort(const ScmGroundTruth& gt, std::size_t n) {
    validate(gt);
    Cohort cohort;
    cohort.ground_truth = gt;
    const auto features = sample_features(gt, n, gt.seed);

    std::vector<double> cuts;
    if (gt.positivity.enabled) {
        std::vector<double> scores;
        scores.reserve(n);
        for (const auto& x : features) scores.push_back(case_severity_score(x));
        cuts = quantile_cutpoints(std::move(scores), gt.positivity.n_strata);
    }

    cohort.records.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        Rng rng(outcome_stream(gt.seed, i));
        const auto& x = features[i];
        DoseMeq d = assign_observational_dose(gt, x, draw_dose_noise(gt, rng));
        if (gt.positivity.enabled && stratum_of(case_severity_score(x), cuts) == gt.positivity.stratum)
            d.value = std::clamp(d.value, gt.positivity.dose_lo, gt.positivity.dose_hi);
        cohort.records.push_back(simulate_encounter(gt, x, d, rng));
    }
    return cohort;
}

}  // namespace opiaid
