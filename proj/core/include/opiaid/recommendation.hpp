#pragma once

// Utility of predicted outcomes and the per-case dose recommendation: the
// grid dose maximizing expected utility.

#include <cstddef>
#include <cstdint>
#include <string_view>
#include <vector>

#include "opiaid/cadr.hpp"
#include "opiaid/domain.hpp"

namespace opiaid {

struct OverlapDiagnostic;

// -(w_pain*pain + w_orades*orade + w_rescue*rescue). The rescue term is an
// extension that is off by default (w_rescue = 0).
double utility(double pain, double orade, const UtilityWeights& w, double rescue = 0.0);

// Utility of the model's expected outcomes. For ensembles the expectation is
// the member mean, which by linearity equals the mean of member utilities.
// Throws ValidationError when w_rescue > 0 and the model has no rescue model.
double expected_utility(const CadrModel& model, const Treatment& t, DoseMeq d, const CaseFeatures& x,
                        const UtilityWeights& w);

enum class RecommendationWarning : std::uint8_t { overlap_violation, extrapolated_dose, flat_utility };
std::string_view to_string(RecommendationWarning w);

struct Recommendation {
    DoseMeq dose;
    std::size_t grid_index = 0;
    double expected_utility = 0.0;
    double pain_at_dose = 0.0;
    double orade_at_dose = 0.0;
    UtilityWeights weights;
    std::vector<RecommendationWarning> warnings;
    bool operator==(const Recommendation&) const = default;
};

// Utility range below which a curve counts as flat.
inline constexpr double kFlatUtilityTolerance = 1e-6;

// Exhaustive scan of the curve; ties go to the lowest dose.
std::size_t argmax_lowest(const std::vector<double>& utility);

// Picks the argmax of an already computed curve and attaches warnings:
// overlap_violation when the dose falls in a sparse (stratum, dose bin) cell
// of the diagnostic for this case's stratum, extrapolated_dose when it lies
// outside the model's observed dose range, flat_utility for a flat curve.
Recommendation recommend_from_curve(const CadrModel& model, const CadrCurve& curve, const CaseFeatures& x,
                                    const OverlapDiagnostic* diagnostics = nullptr);

Recommendation recommend_dose(const CadrModel& model, const CaseFeatures& x, const Treatment& t,
                              const UtilityWeights& w, const OverlapDiagnostic* diagnostics = nullptr);

}  // namespace opiaid
