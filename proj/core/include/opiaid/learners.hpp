#pragma once

// Supervised learners behind one train/predict interface.
//
// Every learner sees features through a FeatureSchema fixed at fit time:
// continuous columns are standardized with training mean/sd, categorical
// columns one-hot encoded. Predictions are an m x 1 matrix for regression
// and an m x C matrix of class probabilities for classification.

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <Eigen/Dense>

namespace opiaid {

enum class LearnerKind : std::uint8_t {
    multinomial_logistic,
    knn,
    decision_tree,
    random_forest,
    gradient_boosted_trees,
    mlp,
    linear_svm,
    gaussian_naive_bayes,
};

inline constexpr std::array<LearnerKind, 8> kAllLearners = {
    LearnerKind::multinomial_logistic, LearnerKind::knn,        LearnerKind::decision_tree,
    LearnerKind::random_forest,        LearnerKind::gradient_boosted_trees,
    LearnerKind::mlp,                  LearnerKind::linear_svm, LearnerKind::gaussian_naive_bayes,
};

enum class Task : std::uint8_t { regression, classification };

std::string_view to_string(LearnerKind k);
std::string_view to_string(Task t);
LearnerKind parse_learner_kind(std::string_view s);
Task parse_task(std::string_view s);

// Naive Bayes and multinomial logistic regression are classification-only.
bool supports(LearnerKind k, Task t);
bool is_iterative(LearnerKind k);
bool is_ensemble(LearnerKind k);

using Hyper = std::map<std::string, double, std::less<>>;

// Defaults, per learner:
//   multinomial_logistic  epochs 300, learning_rate 0.5, l2 1e-4
//   knn                   k 15, distance_weighted 1
//   decision_tree         max_depth 8 (<= 0 means unbounded), min_samples_leaf 5, max_bins 64
//   random_forest         n_trees 100, max_depth 12, min_samples_leaf 3, max_features 0.5,
//                         bootstrap 1, max_bins 64
//   gradient_boosted_trees rounds 300, learning_rate 0.05, max_depth 4, lambda 1,
//                         min_child_weight 1, colsample 0.8, max_bins 64
//   mlp                   hidden1 32, hidden2 32 (0 drops the layer), epochs 200,
//                         batch_size 32, learning_rate 1e-2 halved every 75 epochs, l2 1e-3,
//                         early_stopping 0 (1: keep the epoch with the lowest held-out loss)
//   linear_svm            lambda 1e-3, epochs 40, epsilon 0.1 (regression)
//   gaussian_naive_bayes  var_smoothing 1e-9
// Classification tasks also accept n_classes; it defaults to max label + 1.
Hyper default_hyper(LearnerKind k);
// Small grid searched on the test split; each entry overrides the defaults.
std::vector<Hyper> tuning_grid(LearnerKind k);

enum class ColumnKind : std::uint8_t { continuous, categorical };

struct FeatureColumn {
    std::string name;
    ColumnKind kind = ColumnKind::continuous;
    int levels = 0;  // categorical only; values are 0..levels-1
    bool operator==(const FeatureColumn&) const = default;
};

struct FeatureSchema {
    std::vector<FeatureColumn> columns;
    // One entry per encoded column; one-hot columns carry mean 0, sd 1.
    std::vector<double> mean;
    std::vector<double> sd;

    static FeatureSchema continuous(std::size_t p);

    std::size_t raw_width() const { return columns.size(); }
    std::size_t encoded_width() const;
    std::vector<std::string> encoded_names() const;
    // Fills mean/sd from raw training data.
    void fit(const Eigen::MatrixXd& raw);
    // Throws SchemaMismatch on a width mismatch or an out-of-range category.
    Eigen::MatrixXd encode(const Eigen::MatrixXd& raw) const;

    bool operator==(const FeatureSchema&) const = default;
};

struct LossPoint {
    int round = 0;
    double train = 0.0;
    double validation = 0.0;
    bool operator==(const LossPoint&) const = default;
};

struct TrainMeta {
    std::uint64_t seed = 0;
    Hyper hyper;
    std::string data_hash;
    std::size_t n_rows = 0;
    // Training residual statistics for regression (the empirical noise term).
    double residual_mean = 0.0;
    double residual_sd = 0.0;
    bool operator==(const TrainMeta&) const = default;
};

// ---- learner states -------------------------------------------------------

struct TreeNode {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0.0;  // go left when x <= threshold
    int left = -1;
    int right = -1;
    std::vector<double> value;  // leaf output: 1 value, or C class probabilities
    bool operator==(const TreeNode&) const = default;
};

struct Tree {
    std::vector<TreeNode> nodes;
    const std::vector<double>& leaf(const double* row) const;
    bool operator==(const Tree&) const = default;
};

struct LogisticState {
    Eigen::MatrixXd weights;  // C x p
    Eigen::VectorXd bias;     // C
};

struct KnnState {
    Eigen::MatrixXd points;   // n x p (encoded)
    Eigen::VectorXd targets;  // regression values or class labels
    int k = 15;
    bool distance_weighted = true;
};

struct TreeState {
    Tree tree;
};

struct ForestState {
    std::vector<Tree> trees;
};

struct BoostState {
    std::vector<double> base_score;          // 1 or C
    double learning_rate = 0.1;
    std::vector<std::vector<Tree>> rounds;   // rounds x outputs, scalar leaves
};

struct MlpState {
    std::vector<int> layer_sizes;          // input, hidden..., output
    std::vector<Eigen::MatrixXd> weights;  // out x in per layer
    std::vector<Eigen::VectorXd> biases;
    bool classification = false;
    double target_mean = 0.0;  // regression targets are standardized
    double target_sd = 1.0;
    double l2 = 0.0;
};

struct SvmState {
    Eigen::MatrixXd weights;  // outputs x p
    Eigen::VectorXd bias;
    double target_mean = 0.0;
    double target_sd = 1.0;
};

struct NaiveBayesState {
    Eigen::VectorXd log_prior;  // C; -inf for classes absent from training
    Eigen::MatrixXd mean;       // C x p
    Eigen::MatrixXd var;        // C x p
};

using ModelState = std::variant<LogisticState, KnnState, TreeState, ForestState, BoostState, MlpState,
                                SvmState, NaiveBayesState>;

struct FittedModel {
    LearnerKind kind = LearnerKind::decision_tree;
    Task task = Task::regression;
    int n_classes = 0;  // classification only
    FeatureSchema feature_schema;
    std::vector<LossPoint> loss_curve;
    TrainMeta train_meta;
    ModelState state;
};

// Fits `kind`. Deterministic given (inputs, hyper, seed). Iterative learners
// fit on a seeded 90% of the rows and report per-round loss on both parts.
// Throws DimensionMismatch, DegenerateTarget or ValidationError.
FittedModel train(LearnerKind kind, Task task, const FeatureSchema& schema, const Eigen::MatrixXd& features,
                  const Eigen::VectorXd& targets, const Hyper& hyper, std::uint64_t seed);

// All-continuous schema convenience overload.
FittedModel train(LearnerKind kind, Task task, const Eigen::MatrixXd& features, const Eigen::VectorXd& targets,
                  const Hyper& hyper, std::uint64_t seed);

// Throws SchemaMismatch when the raw width differs from the fit-time schema.
Eigen::MatrixXd predict(const FittedModel& model, const Eigen::MatrixXd& features);

// Per-member regression predictions (m x members) for ensembles; nullopt for
// single models and classification.
std::optional<Eigen::MatrixXd> predict_members(const FittedModel& model, const Eigen::MatrixXd& features);

// ---- mlp internals exposed for gradient checking ---------------------------

MlpState mlp_init(std::vector<int> layer_sizes, bool classification, std::uint64_t seed);
std::size_t mlp_parameter_count(const MlpState& s);
Eigen::VectorXd mlp_flatten(const MlpState& s);
void mlp_unflatten(MlpState& s, const Eigen::VectorXd& params);
// Mean squared-error/2 (regression; targets are standardized with the
// state's target_mean/target_sd before comparison) or mean
// cross-entropy (targets are class labels), plus l2/2 * |W|^2. Fills the
// gradient with respect to mlp_flatten order when `gradient` is non-null.
double mlp_loss(const MlpState& s, const Eigen::MatrixXd& x, const Eigen::VectorXd& targets,
                Eigen::VectorXd* gradient);

using LossFn = std::function<double(const Eigen::VectorXd&)>;
using GradientFn = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

// max_i |analytic_i - numeric_i| / max(|numeric_i|, 1e-4) with central
// differences of half-width epsilon.
double check_gradient(const LossFn& loss, const GradientFn& gradient, const Eigen::VectorXd& at, double epsilon);
double check_gradient(const MlpState& model, const Eigen::MatrixXd& x, const Eigen::VectorXd& targets,
                      double epsilon);

// ---- artifacts --------------------------------------------------------------

inline constexpr int kModelSchemaVersion = 1;

// Versioned JSON with a canonical field order.
std::string serialize_model(const FittedModel& model);
// Throws VersionMismatch for a newer schema version, CorruptArtifact otherwise.
FittedModel deserialize_model(std::string_view bytes);

}  // namespace opiaid
