#include <algorithm>
#include <cmath>
#include <numeric>

#include "learners_internal.hpp"

namespace opiaid::detail {

Fit fit_knn(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const Hyper& h) {
    KnnState s;
    s.points = x;
    s.targets = y;
    s.k = std::max(1, static_cast<int>(hyper_value(h, "k")));
    s.distance_weighted = hyper_value(h, "distance_weighted") != 0;
    Fit fit;
    fit.state = std::move(s);
    return fit;
}

// Brute-force neighbours. Ties in distance are broken by training index.
// With distance weighting, exact matches (distance 0) take all the weight.
Eigen::MatrixXd predict_knn(const KnnState& s, Task task, int n_classes, const Eigen::MatrixXd& x) {
    const auto n = static_cast<std::size_t>(s.points.rows());
    const auto k = std::min<std::size_t>(static_cast<std::size_t>(s.k), n);
    const int width = task == Task::regression ? 1 : n_classes;
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(x.rows(), width);

    const RowMatrix pts = to_rows(s.points);
    const RowMatrix qs = to_rows(x);
    std::vector<std::pair<double, int>> dist(n);
    std::vector<double> weights(k);
    for (Eigen::Index q = 0; q < qs.rows(); ++q) {
        for (std::size_t i = 0; i < n; ++i)
            dist[i] = {(pts.row(static_cast<Eigen::Index>(i)) - qs.row(q)).squaredNorm(), static_cast<int>(i)};
        std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k), dist.end());

        const bool exact = dist[0].first == 0.0;
        double total = 0;
        for (std::size_t j = 0; j < k; ++j) {
            double w = 1.0;
            if (s.distance_weighted) w = exact ? (dist[j].first == 0.0 ? 1.0 : 0.0) : 1.0 / std::sqrt(dist[j].first);
            weights[j] = w;
            total += w;
        }
        for (std::size_t j = 0; j < k; ++j) {
            const double w = weights[j] / total;
            const double t = s.targets(dist[j].second);
            if (task == Task::regression)
                out(q, 0) += w * t;
            else
                out(q, static_cast<Eigen::Index>(t)) += w;
        }
    }
    return out;
}

}  // namespace opiaid::detail
