#include "opiaid/recommendation.hpp"

#include <algorithm>

#include "opiaid/errors.hpp"
#include "opiaid/validation.hpp"

namespace opiaid {

double utility(double pain, double orade, const UtilityWeights& w, double rescue) {
    return -(w.w_pain * pain + w.w_orades * orade + w.w_rescue * rescue);
}

double expected_utility(const CadrModel& model, const Treatment& t, DoseMeq d, const CaseFeatures& x,
                        const UtilityWeights& w) {
    validate(w);
    if (w.w_rescue > 0 && !model.rescue_model)
        throw ValidationError("weights.w_rescue", "model has no rescue-analgesia outcome");
    const auto o = predict_outcomes(model, t, d, x);
    return utility(o.pain, o.orade, w, o.rescue);
}

std::string_view to_string(RecommendationWarning w) {
    switch (w) {
        case RecommendationWarning::overlap_violation:
            return "overlap_violation";
        case RecommendationWarning::extrapolated_dose:
            return "extrapolated_dose";
        case RecommendationWarning::flat_utility:
            return "flat_utility";
    }
    return "unknown";
}

std::size_t argmax_lowest(const std::vector<double>& utility) {
    if (utility.empty()) throw ValidationError("utility", "empty curve");
    std::size_t best = 0;
    for (std::size_t i = 1; i < utility.size(); ++i)
        if (utility[i] > utility[best]) best = i;
    return best;
}

Recommendation recommend_from_curve(const CadrModel& model, const CadrCurve& curve, const CaseFeatures& x,
                                    const OverlapDiagnostic* diagnostics) {
    Recommendation r;
    r.grid_index = argmax_lowest(curve.utility);
    r.dose = DoseMeq{curve.doses[r.grid_index]};
    r.expected_utility = curve.utility[r.grid_index];
    r.pain_at_dose = curve.pain_hat[r.grid_index];
    r.orade_at_dose = curve.orade_hat[r.grid_index];
    r.weights = curve.weights;

    if (diagnostics != nullptr &&
        diagnostics->violated(diagnostics->stratum_of(x), diagnostics->dose_bin_of(r.dose.value)))
        r.warnings.push_back(RecommendationWarning::overlap_violation);
    if (r.dose.value < model.observed_dose_min || r.dose.value > model.observed_dose_max)
        r.warnings.push_back(RecommendationWarning::extrapolated_dose);
    const auto [lo, hi] = std::minmax_element(curve.utility.begin(), curve.utility.end());
    if (*hi - *lo < kFlatUtilityTolerance) r.warnings.push_back(RecommendationWarning::flat_utility);
    return r;
}

Recommendation recommend_dose(const CadrModel& model, const CaseFeatures& x, const Treatment& t,
                              const UtilityWeights& w, const OverlapDiagnostic* diagnostics) {
    return recommend_from_curve(model, cadr_curve(model, x, t, w), x, diagnostics);
}

}  // namespace opiaid
