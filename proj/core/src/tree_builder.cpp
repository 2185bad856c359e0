#include <algorithm>
#include <cmath>
#include <numeric>

#include "learners_internal.hpp"

namespace opiaid::detail {

BinnedMatrix BinnedMatrix::build(const Eigen::MatrixXd& x, int max_bins) {
    BinnedMatrix b;
    b.n = static_cast<std::size_t>(x.rows());
    b.p = static_cast<std::size_t>(x.cols());
    b.codes.resize(b.n * b.p);
    b.cuts.resize(b.p);
    max_bins = std::clamp(max_bins, 2, 65535);

    std::vector<double> sorted(b.n);
    for (std::size_t j = 0; j < b.p; ++j) {
        for (std::size_t i = 0; i < b.n; ++i) sorted[i] = x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
        std::sort(sorted.begin(), sorted.end());
        std::vector<double> distinct;
        std::unique_copy(sorted.begin(), sorted.end(), std::back_inserter(distinct));

        auto& cuts = b.cuts[j];
        if (distinct.size() <= static_cast<std::size_t>(max_bins)) {
            for (std::size_t k = 0; k + 1 < distinct.size(); ++k)
                cuts.push_back(0.5 * (distinct[k] + distinct[k + 1]));
        } else {
            for (int q = 1; q < max_bins; ++q) {
                const std::size_t idx = static_cast<std::size_t>(q) * b.n / static_cast<std::size_t>(max_bins);
                if (idx == 0 || sorted[idx - 1] == sorted[idx]) continue;
                const double c = 0.5 * (sorted[idx - 1] + sorted[idx]);
                if (cuts.empty() || c > cuts.back()) cuts.push_back(c);
            }
        }
        for (std::size_t i = 0; i < b.n; ++i) {
            const double v = x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
            b.codes[j * b.n + i] =
                static_cast<std::uint16_t>(std::lower_bound(cuts.begin(), cuts.end(), v) - cuts.begin());
        }
    }
    return b;
}

}  // namespace opiaid::detail

namespace opiaid {

const std::vector<double>& Tree::leaf(const double* row) const {
    int k = 0;
    while (nodes[static_cast<std::size_t>(k)].feature >= 0) {
        const auto& node = nodes[static_cast<std::size_t>(k)];
        k = row[node.feature] <= node.threshold ? node.left : node.right;
    }
    return nodes[static_cast<std::size_t>(k)].value;
}

}  // namespace opiaid

namespace opiaid::detail {

namespace {

// Histogram statistics per bin. Gradient mode: {G, H, count, sum g^2}.
// Class mode: {count, c_0, ..., c_{C-1}}.
class Builder {
public:
    Builder(const BinnedMatrix& x, const TreeParams& params, std::span<const int> allowed, Rng& rng, int width)
        : x_(x), params_(params), allowed_(allowed.begin(), allowed.end()), rng_(rng), width_(width) {
        int max_bins = 1;
        for (int f : allowed_) max_bins = std::max(max_bins, x_.bins(static_cast<std::size_t>(f)));
        hist_.resize(static_cast<std::size_t>(max_bins * width_));
    }

    virtual ~Builder() = default;

    Tree run(std::vector<int> rows) {
        rows_ = std::move(rows);
        build(0, rows_.size(), 1);
        return std::move(tree_);
    }

protected:
    virtual void accumulate(double* stats, int row) const = 0;
    virtual double score(const double* stats) const = 0;  // larger is better; gain = children - parent
    virtual bool valid_child(const double* stats) const = 0;
    virtual bool impure(const double* stats) const = 0;
    virtual std::vector<double> leaf_value(const double* stats) const = 0;

    double count(const double* stats) const { return stats[count_slot_]; }
    int count_slot_ = 0;

private:
    int build(std::size_t begin, std::size_t end, int depth) {
        std::vector<double> total(static_cast<std::size_t>(width_), 0.0);
        for (std::size_t i = begin; i < end; ++i) accumulate(total.data(), rows_[i]);

        const int id = static_cast<int>(tree_.nodes.size());
        tree_.nodes.push_back(TreeNode{-1, 0.0, -1, -1, leaf_value(total.data())});

        const bool depth_ok = params_.max_depth <= 0 || depth <= params_.max_depth;
        if (!depth_ok || !impure(total.data()) || count(total.data()) < 2.0 * params_.min_samples_leaf)
            return id;

        const double parent = score(total.data());
        int best_feature = -1;
        int best_bin = -1;
        double best_gain = -1.0;

        std::vector<double> left(static_cast<std::size_t>(width_));
        std::vector<double> right(static_cast<std::size_t>(width_));
        for (int f : candidate_features()) {
            const auto fu = static_cast<std::size_t>(f);
            const int bins = x_.bins(fu);
            if (bins < 2) continue;
            std::fill(hist_.begin(), hist_.begin() + bins * width_, 0.0);
            for (std::size_t i = begin; i < end; ++i) {
                const int r = rows_[i];
                accumulate(&hist_[static_cast<std::size_t>(x_.code(static_cast<std::size_t>(r), fu) * width_)], r);
            }
            std::fill(left.begin(), left.end(), 0.0);
            for (int b = 0; b + 1 < bins; ++b) {
                const double* h = &hist_[static_cast<std::size_t>(b * width_)];
                for (int s = 0; s < width_; ++s) left[static_cast<std::size_t>(s)] += h[s];
                if (count(h) == 0 && b > 0) continue;
                for (int s = 0; s < width_; ++s)
                    right[static_cast<std::size_t>(s)] = total[static_cast<std::size_t>(s)] - left[static_cast<std::size_t>(s)];
                if (!valid_child(left.data()) || !valid_child(right.data())) continue;
                const double gain = score(left.data()) + score(right.data()) - parent;
                if (gain > best_gain + 1e-12) {
                    best_gain = gain;
                    best_feature = f;
                    best_bin = b;
                }
            }
        }
        if (best_feature < 0) return id;
        if (best_gain <= params_.min_gain && !params_.split_zero_gain) return id;

        const auto fu = static_cast<std::size_t>(best_feature);
        const auto mid_it = std::stable_partition(rows_.begin() + static_cast<std::ptrdiff_t>(begin),
                                                  rows_.begin() + static_cast<std::ptrdiff_t>(end), [&](int r) {
                                                      return x_.code(static_cast<std::size_t>(r), fu) <= best_bin;
                                                  });
        const auto mid = static_cast<std::size_t>(mid_it - rows_.begin());
        if (mid == begin || mid == end) return id;

        tree_.nodes[static_cast<std::size_t>(id)].feature = best_feature;
        tree_.nodes[static_cast<std::size_t>(id)].threshold = x_.cuts[fu][static_cast<std::size_t>(best_bin)];
        tree_.nodes[static_cast<std::size_t>(id)].value.clear();
        const int l = build(begin, mid, depth + 1);
        const int r = build(mid, end, depth + 1);
        tree_.nodes[static_cast<std::size_t>(id)].left = l;
        tree_.nodes[static_cast<std::size_t>(id)].right = r;
        return id;
    }

    std::vector<int> candidate_features() {
        const auto p = allowed_.size();
        const auto m = static_cast<std::size_t>(
            std::clamp(std::lround(params_.max_features * static_cast<double>(p)), 1L, static_cast<long>(p)));
        if (m >= p) return allowed_;
        std::vector<int> pool = allowed_;
        for (std::size_t i = 0; i < m; ++i) {
            const auto j = i + static_cast<std::size_t>(rng_.below(p - i));
            std::swap(pool[i], pool[j]);
        }
        pool.resize(m);
        std::sort(pool.begin(), pool.end());
        return pool;
    }

    const BinnedMatrix& x_;
    const TreeParams& params_;
    std::vector<int> allowed_;
    Rng& rng_;
    int width_;
    std::vector<int> rows_;
    std::vector<double> hist_;
    Tree tree_;
};

class GradientBuilder final : public Builder {
public:
    GradientBuilder(const BinnedMatrix& x, std::span<const double> g, std::span<const double> h,
                    const TreeParams& params, std::span<const int> allowed, Rng& rng)
        : Builder(x, params, allowed, rng, 4), g_(g), h_(h), lambda_(params.lambda),
          min_child_weight_(params.min_child_weight), min_leaf_(params.min_samples_leaf) {
        count_slot_ = 2;
    }

protected:
    void accumulate(double* s, int row) const override {
        const double g = g_[static_cast<std::size_t>(row)];
        s[0] += g;
        s[1] += h_[static_cast<std::size_t>(row)];
        s[2] += 1.0;
        s[3] += g * g;
    }
    double score(const double* s) const override {
        const double denom = s[1] + lambda_;
        return denom > 0 ? s[0] * s[0] / denom : 0.0;
    }
    bool valid_child(const double* s) const override {
        return s[2] >= min_leaf_ && s[1] >= min_child_weight_ && s[2] > 0;
    }
    bool impure(const double* s) const override {
        if (s[2] < 2) return false;
        // Spread of g within the node; zero when all gradients agree.
        const double mean = s[0] / s[2];
        return s[3] / s[2] - mean * mean > 1e-14 * std::max(1.0, s[3] / s[2]);
    }
    std::vector<double> leaf_value(const double* s) const override {
        const double denom = s[1] + lambda_;
        return {denom > 0 ? -s[0] / denom : 0.0};
    }

private:
    std::span<const double> g_;
    std::span<const double> h_;
    double lambda_;
    double min_child_weight_;
    double min_leaf_;
};

class GiniBuilder final : public Builder {
public:
    GiniBuilder(const BinnedMatrix& x, std::span<const int> labels, int n_classes, const TreeParams& params,
                std::span<const int> allowed, Rng& rng)
        : Builder(x, params, allowed, rng, n_classes + 1), labels_(labels), n_classes_(n_classes),
          min_leaf_(params.min_samples_leaf) {
        count_slot_ = 0;
    }

protected:
    void accumulate(double* s, int row) const override {
        s[0] += 1.0;
        s[1 + labels_[static_cast<std::size_t>(row)]] += 1.0;
    }
    // n * (1 - gini) = sum c^2 / n, so gain = children - parent is the
    // weighted Gini decrease.
    double score(const double* s) const override {
        if (s[0] <= 0) return 0.0;
        double sq = 0;
        for (int c = 0; c < n_classes_; ++c) sq += s[1 + c] * s[1 + c];
        return sq / s[0];
    }
    bool valid_child(const double* s) const override { return s[0] >= min_leaf_ && s[0] > 0; }
    bool impure(const double* s) const override {
        int present = 0;
        for (int c = 0; c < n_classes_; ++c) present += s[1 + c] > 0 ? 1 : 0;
        return present > 1;
    }
    std::vector<double> leaf_value(const double* s) const override {
        std::vector<double> v(static_cast<std::size_t>(n_classes_), 0.0);
        if (s[0] <= 0) return v;
        for (int c = 0; c < n_classes_; ++c) v[static_cast<std::size_t>(c)] = s[1 + c] / s[0];
        return v;
    }

private:
    std::span<const int> labels_;
    int n_classes_;
    double min_leaf_;
};

}  // namespace

Tree build_gradient_tree(const BinnedMatrix& x, std::span<const int> rows, std::span<const double> grad,
                         std::span<const double> hess, const TreeParams& params,
                         std::span<const int> allowed_features, Rng& rng) {
    GradientBuilder b(x, grad, hess, params, allowed_features, rng);
    return b.run(std::vector<int>(rows.begin(), rows.end()));
}

Tree build_class_tree(const BinnedMatrix& x, std::span<const int> rows, std::span<const int> labels,
                      int n_classes, const TreeParams& params, std::span<const int> allowed_features,
                      Rng& rng) {
    GiniBuilder b(x, labels, n_classes, params, allowed_features, rng);
    return b.run(std::vector<int>(rows.begin(), rows.end()));
}

RowMatrix to_rows(const Eigen::MatrixXd& x) { return RowMatrix(x); }

Eigen::MatrixXd predict_trees(const std::vector<Tree>& trees, const RowMatrix& x, int width) {
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(x.rows(), width);
    if (trees.empty()) return out;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const double* row = x.row(i).data();
        for (const auto& t : trees) {
            const auto& v = t.leaf(row);
            for (int c = 0; c < width; ++c) out(i, c) += v[static_cast<std::size_t>(c)];
        }
    }
    out /= static_cast<double>(trees.size());
    return out;
}

}  // namespace opiaid::detail
