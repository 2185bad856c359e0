#pragma once

// Shared pieces of the learner implementations. Not installed.

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "opiaid/learners.hpp"
#include "opiaid/rng.hpp"

namespace opiaid::detail {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

double hyper_value(const Hyper& h, std::string_view key);

// Features quantized once per fit. When a column has at most max_bins
// distinct values every value gets its own bin, so splits are exact.
struct BinnedMatrix {
    std::size_t n = 0;
    std::size_t p = 0;
    std::vector<std::uint16_t> codes;       // column-major, codes[j * n + i]
    std::vector<std::vector<double>> cuts;  // x <= cuts[j][b]  <=>  code <= b

    static BinnedMatrix build(const Eigen::MatrixXd& x, int max_bins);
    std::uint16_t code(std::size_t row, std::size_t feature) const { return codes[feature * n + row]; }
    int bins(std::size_t feature) const { return static_cast<int>(cuts[feature].size()) + 1; }
};

struct TreeParams {
    int max_depth = 8;  // <= 0: unbounded
    int min_samples_leaf = 1;
    double min_child_weight = 0.0;
    double lambda = 0.0;
    double max_features = 1.0;  // fraction of allowed features tried per node
    double min_gain = 1e-12;
    // CART keeps splitting an impure node even when the best split has zero
    // gain (e.g. XOR patterns), so unbounded trees interpolate.
    bool split_zero_gain = true;
};

// Second-order regression tree. Leaves hold -G/(H + lambda). With g = -y,
// h = 1 and lambda = 0 this is a least-squares CART tree.
Tree build_gradient_tree(const BinnedMatrix& x, std::span<const int> rows, std::span<const double> grad,
                         std::span<const double> hess, const TreeParams& params,
                         std::span<const int> allowed_features, Rng& rng);

// Gini classification tree; leaves hold class frequencies.
Tree build_class_tree(const BinnedMatrix& x, std::span<const int> rows, std::span<const int> labels,
                      int n_classes, const TreeParams& params, std::span<const int> allowed_features,
                      Rng& rng);

RowMatrix to_rows(const Eigen::MatrixXd& x);

// Iterative learners hold out a seeded 10% for validation. Below 20 rows the
// fit rows double as the validation rows.
struct FitSplit {
    std::vector<int> fit;
    std::vector<int> validation;
};
FitSplit fit_validation_split(std::size_t n, std::uint64_t seed);

Eigen::MatrixXd take_rows(const Eigen::MatrixXd& x, std::span<const int> rows);
Eigen::VectorXd take(const Eigen::VectorXd& v, std::span<const int> rows);

// Row-wise numerically stable softmax of a scores matrix (m x C).
Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& scores);
double mean_log_loss(const Eigen::MatrixXd& probs, const Eigen::VectorXd& labels);

struct Fit {
    ModelState state;
    std::vector<LossPoint> loss_curve;
};

Fit fit_logistic(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, int n_classes, const Hyper& h,
                 std::uint64_t seed);
Fit fit_knn(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const Hyper& h);
Fit fit_tree(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, Task task, int n_classes, const Hyper& h,
             std::uint64_t seed);
Fit fit_forest(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, Task task, int n_classes, const Hyper& h,
               std::uint64_t seed);
Fit fit_boosting(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, Task task, int n_classes, const Hyper& h,
                 std::uint64_t seed);
Fit fit_mlp(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, Task task, int n_classes, const Hyper& h,
            std::uint64_t seed);
Fit fit_svm(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, Task task, int n_classes, const Hyper& h,
            std::uint64_t seed);
Fit fit_naive_bayes(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, int n_classes, const Hyper& h);

// Predictions on encoded features. Each output row depends only on its input
// row, with a fixed summation order, so batch and single-row predictions agree
// bit for bit.
Eigen::MatrixXd affine_rows(const Eigen::MatrixXd& x, const Eigen::MatrixXd& w, const Eigen::VectorXd& b);
Eigen::MatrixXd predict_state(const ModelState& state, Task task, int n_classes, const Eigen::MatrixXd& x);
Eigen::MatrixXd predict_trees(const std::vector<Tree>& trees, const RowMatrix& x, int width);
Eigen::MatrixXd predict_boosting(const BoostState& s, const RowMatrix& x);
Eigen::MatrixXd predict_knn(const KnnState& s, Task task, int n_classes, const Eigen::MatrixXd& x);
Eigen::MatrixXd mlp_forward(const MlpState& s, const Eigen::MatrixXd& x);

}  // namespace opiaid::detail
