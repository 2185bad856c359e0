#pragma once

// Conditional average dose-response (CADR) models: one outcome model per
// endpoint, each taking (treatment, dose, case features) as inputs, swept
// over a dose grid to produce per-case curves.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "opiaid/domain.hpp"
#include "opiaid/learners.hpp"

namespace opiaid {

enum class CadrWarning : std::uint8_t {
    overlap_degenerate,  // no dose variation in the training data
};

std::string_view to_string(CadrWarning w);

struct CadrFitOptions {
    LearnerKind pain_kind = LearnerKind::gradient_boosted_trees;
    LearnerKind orade_kind = LearnerKind::gradient_boosted_trees;
    // Classification fits an 11-class model on the rounded 0..10 target and
    // predicts its expectation. Classification-only learners need it.
    Task pain_task = Task::regression;
    Task orade_task = Task::regression;
    Hyper pain_hyper;
    Hyper orade_hyper;
    PainTimepoint pain_timepoint = PainTimepoint::arrival;
    // Rescue analgesia is only modelled when asked for; it feeds the optional
    // third utility term.
    bool fit_rescue = false;
    LearnerKind rescue_kind = LearnerKind::gradient_boosted_trees;
    Hyper rescue_hyper;
    OradeWeights orade_weights;
    std::uint64_t seed = 1;
};

struct CadrModel {
    FittedModel pain_model;
    FittedModel orade_model;
    std::optional<FittedModel> rescue_model;
    DoseGrid grid = DoseGrid::standard();
    TreatmentRegistry registry = TreatmentRegistry::morphine_only();
    PainTimepoint pain_timepoint = PainTimepoint::arrival;
    OradeWeights orade_weights;
    // Range of administered doses seen in training.
    double observed_dose_min = 0.0;
    double observed_dose_max = 0.0;
    std::vector<CadrWarning> warnings;
};

// Raw input layout shared by every CADR outcome model:
//   treatment (categorical), dose, age, weight, sex (categorical), asa_class,
//   surgery_duration, surgery_type (categorical), chronic_opioid_use,
//   comorbidity_score
FeatureSchema cadr_feature_schema(const TreatmentRegistry& registry);
Eigen::RowVectorXd cadr_feature_row(const Treatment& t, DoseMeq d, const CaseFeatures& x);

// Throws ValidationError for an empty training set or a dose outside the grid;
// learner errors propagate.
CadrModel fit_cadr(std::span<const EncounterRecord> training, const DoseGrid& grid,
                   const TreatmentRegistry& registry, const CadrFitOptions& options);

struct OutcomePrediction {
    double pain = 0.0;    // 0..10
    double orade = 0.0;   // 0..10
    double rescue = 0.0;  // MEQ, >= 0; 0 without a rescue model
    bool operator==(const OutcomePrediction&) const = default;
};

// Throws ValidationError when d is off the grid range or x is invalid.
OutcomePrediction predict_outcomes(const CadrModel& model, const Treatment& t, DoseMeq d, const CaseFeatures& x);

// Member-level predictions for ensemble models (random forests); each row is
// one member. Empty when neither outcome model is an ensemble.
std::vector<OutcomePrediction> predict_outcome_members(const CadrModel& model, const Treatment& t, DoseMeq d,
                                                       const CaseFeatures& x);

struct CadrCurve {
    std::vector<double> doses;
    std::vector<double> pain_hat;
    std::vector<double> orade_hat;
    std::vector<double> rescue_hat;
    std::vector<double> utility;
    // sd of member utilities for ensembles; empty otherwise.
    std::vector<double> spread;
    UtilityWeights weights;
    bool operator==(const CadrCurve&) const = default;
};

CadrCurve cadr_curve(const CadrModel& model, const CaseFeatures& x, const Treatment& t, const UtilityWeights& w);
// Equal to calling cadr_curve per case, evaluated in one batch per model.
std::vector<CadrCurve> cadr_curves(const CadrModel& model, std::span<const CaseFeatures> cases, const Treatment& t,
                                   const UtilityWeights& w);

// Header: dose,pain_hat,orade_hat,utility,spread (spread empty when absent).
std::string curve_csv(const CadrCurve& curve);

inline constexpr int kCadrSchemaVersion = 1;
std::string serialize_cadr(const CadrModel& model);
// Throws VersionMismatch or CorruptArtifact.
CadrModel deserialize_cadr(std::string_view bytes);

}  // namespace opiaid
