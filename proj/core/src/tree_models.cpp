#include <algorithm>
#include <cmath>
#include <numeric>

#include "learners_internal.hpp"

namespace opiaid::detail {

namespace {

std::vector<int> iota_vector(std::size_t n) {
    std::vector<int> v(n);
    std::iota(v.begin(), v.end(), 0);
    return v;
}

std::vector<int> labels_of(const Eigen::VectorXd& y) {
    std::vector<int> out(static_cast<std::size_t>(y.size()));
    for (Eigen::Index i = 0; i < y.size(); ++i) out[static_cast<std::size_t>(i)] = static_cast<int>(y(i));
    return out;
}

TreeParams cart_params(const Hyper& h) {
    TreeParams p;
    p.max_depth = static_cast<int>(hyper_value(h, "max_depth"));
    p.min_samples_leaf = std::max(1, static_cast<int>(hyper_value(h, "min_samples_leaf")));
    p.split_zero_gain = true;
    if (h.contains("max_features")) p.max_features = hyper_value(h, "max_features");
    return p;
}

Tree grow_cart(const BinnedMatrix& bx, std::span<const int> rows, const Eigen::VectorXd& y, Task task,
               int n_classes, const TreeParams& params, std::span<const int> features, Rng& rng) {
    if (task == Task::classification) {
        const auto labels = labels_of(y);
        return build_class_tree(bx, rows, labels, n_classes, params, features, rng);
    }
    std::vector<double> g(static_cast<std::size_t>(y.size()));
    std::vector<double> ones(g.size(), 1.0);
    for (Eigen::Index i = 0; i < y.size(); ++i) g[static_cast<std::size_t>(i)] = -y(i);
    return build_gradient_tree(bx, rows, g, ones, params, features, rng);
}

}  // namespace

Fit fit_tree(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, Task task, int n_classes, const Hyper& h,
             std::uint64_t seed) {
    const auto bx = BinnedMatrix::build(x, static_cast<int>(hyper_value(h, "max_bins")));
    const auto rows = iota_vector(bx.n);
    const auto features = iota_vector(bx.p);
    Rng rng(derive_seed(seed, 0));
    Fit fit;
    fit.state = TreeState{grow_cart(bx, rows, y, task, n_classes, cart_params(h), features, rng)};
    return fit;
}

Fit fit_forest(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, Task task, int n_classes, const Hyper& h,
               std::uint64_t seed) {
    const auto bx = BinnedMatrix::build(x, static_cast<int>(hyper_value(h, "max_bins")));
    const auto features = iota_vector(bx.p);
    const auto params = cart_params(h);
    const int n_trees = std::max(1, static_cast<int>(hyper_value(h, "n_trees")));
    const bool bootstrap = hyper_value(h, "bootstrap") != 0;

    ForestState forest;
    forest.trees.reserve(static_cast<std::size_t>(n_trees));
    std::vector<int> rows(bx.n);
    for (int t = 0; t < n_trees; ++t) {
        // Tree t uses stream t, so a one-tree forest without bootstrap draws
        // exactly what a single decision tree does.
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(t)));
        if (bootstrap) {
            for (auto& r : rows) r = static_cast<int>(rng.below(bx.n));
            std::sort(rows.begin(), rows.end());
        } else {
            std::iota(rows.begin(), rows.end(), 0);
        }
        forest.trees.push_back(grow_cart(bx, rows, y, task, n_classes, params, features, rng));
    }
    Fit fit;
    fit.state = std::move(forest);
    return fit;
}

Eigen::MatrixXd predict_boosting(const BoostState& s, const RowMatrix& x) {
    const auto width = static_cast<Eigen::Index>(s.base_score.size());
    Eigen::MatrixXd out(x.rows(), width);
    for (Eigen::Index c = 0; c < width; ++c) out.col(c).setConstant(s.base_score[static_cast<std::size_t>(c)]);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const double* row = x.row(i).data();
        for (const auto& round : s.rounds)
            for (Eigen::Index c = 0; c < width; ++c)
                out(i, c) += s.learning_rate * round[static_cast<std::size_t>(c)].leaf(row)[0];
    }
    return out;
}

Fit fit_boosting(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, Task task, int n_classes, const Hyper& h,
                 std::uint64_t seed) {
    const auto split = fit_validation_split(static_cast<std::size_t>(x.rows()), seed);
    const Eigen::MatrixXd xf = take_rows(x, split.fit);
    const Eigen::VectorXd yf = take(y, split.fit);
    const RowMatrix xf_rows = to_rows(xf);
    const RowMatrix xv = to_rows(take_rows(x, split.validation));
    const Eigen::VectorXd yv = take(y, split.validation);

    const auto bx = BinnedMatrix::build(xf, static_cast<int>(hyper_value(h, "max_bins")));
    const auto n = bx.n;
    const int rounds = std::max(1, static_cast<int>(hyper_value(h, "rounds")));
    const double colsample = std::clamp(hyper_value(h, "colsample"), 0.0, 1.0);

    TreeParams params;
    params.max_depth = static_cast<int>(hyper_value(h, "max_depth"));
    params.lambda = hyper_value(h, "lambda");
    params.min_child_weight = hyper_value(h, "min_child_weight");
    params.min_samples_leaf = 1;
    params.split_zero_gain = false;

    BoostState s;
    s.learning_rate = hyper_value(h, "learning_rate");
    const int width = task == Task::regression ? 1 : n_classes;
    if (task == Task::regression) {
        s.base_score = {yf.mean()};
    } else {
        // Log class frequencies with add-one smoothing.
        std::vector<double> counts(static_cast<std::size_t>(n_classes), 1.0);
        for (Eigen::Index i = 0; i < yf.size(); ++i) counts[static_cast<std::size_t>(yf(i))] += 1.0;
        const double total = std::accumulate(counts.begin(), counts.end(), 0.0);
        for (double c : counts) s.base_score.push_back(std::log(c / total));
    }

    Eigen::MatrixXd fscore(static_cast<Eigen::Index>(n), width);
    Eigen::MatrixXd vscore(xv.rows(), width);
    for (int c = 0; c < width; ++c) {
        fscore.col(c).setConstant(s.base_score[static_cast<std::size_t>(c)]);
        vscore.col(c).setConstant(s.base_score[static_cast<std::size_t>(c)]);
    }

    const auto loss = [&](const Eigen::MatrixXd& score, const Eigen::VectorXd& target) {
        if (task == Task::regression) return (score.col(0) - target).squaredNorm() / static_cast<double>(target.size());
        return mean_log_loss(softmax_rows(score), target);
    };

    const auto rows = iota_vector(n);
    const auto all_features = iota_vector(bx.p);
    std::vector<double> g(n), hess(n);
    Fit fit;
    Rng rng(derive_seed(seed, 1));
    for (int r = 0; r < rounds; ++r) {
        std::vector<int> features = all_features;
        const auto keep = static_cast<std::size_t>(
            std::clamp(std::lround(colsample * static_cast<double>(bx.p)), 1L, static_cast<long>(bx.p)));
        if (keep < bx.p) {
            for (std::size_t i = 0; i < keep; ++i)
                std::swap(features[i], features[i + static_cast<std::size_t>(rng.below(bx.p - i))]);
            features.resize(keep);
            std::sort(features.begin(), features.end());
        }

        const Eigen::MatrixXd probs = task == Task::regression ? Eigen::MatrixXd() : softmax_rows(fscore);
        std::vector<Tree> round;
        for (int c = 0; c < width; ++c) {
            for (std::size_t i = 0; i < n; ++i) {
                const auto ii = static_cast<Eigen::Index>(i);
                if (task == Task::regression) {
                    g[i] = fscore(ii, 0) - yf(ii);
                    hess[i] = 1.0;
                } else {
                    const double p = probs(ii, c);
                    g[i] = p - (static_cast<int>(yf(ii)) == c ? 1.0 : 0.0);
                    hess[i] = std::max(p * (1.0 - p), 1e-6);
                }
            }
            round.push_back(build_gradient_tree(bx, rows, g, hess, params, features, rng));
        }
        for (Eigen::Index i = 0; i < xf_rows.rows(); ++i)
            for (int c = 0; c < width; ++c)
                fscore(i, c) += s.learning_rate * round[static_cast<std::size_t>(c)].leaf(xf_rows.row(i).data())[0];
        for (Eigen::Index i = 0; i < xv.rows(); ++i)
            for (int c = 0; c < width; ++c)
                vscore(i, c) += s.learning_rate * round[static_cast<std::size_t>(c)].leaf(xv.row(i).data())[0];
        s.rounds.push_back(std::move(round));
        fit.loss_curve.push_back({r + 1, loss(fscore, yf), loss(vscore, yv)});
    }
    fit.state = std::move(s);
    return fit;
}

}  // namespace opiaid::detail
