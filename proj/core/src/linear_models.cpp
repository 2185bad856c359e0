// Multinomial logistic regression, linear SVM and Gaussian naive Bayes.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "learners_internal.hpp"

namespace opiaid::detail {

namespace {

Eigen::MatrixXd one_hot(const Eigen::VectorXd& y, int n_classes) {
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(y.size(), n_classes);
    for (Eigen::Index i = 0; i < y.size(); ++i) out(i, static_cast<Eigen::Index>(y(i))) = 1.0;
    return out;
}

}  // namespace

// Full-batch gradient descent on the mean cross-entropy plus l2/2 |W|^2.
Fit fit_logistic(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, int n_classes, const Hyper& h,
                 std::uint64_t seed) {
    const auto split = fit_validation_split(static_cast<std::size_t>(x.rows()), seed);
    const Eigen::MatrixXd xf = take_rows(x, split.fit);
    const Eigen::VectorXd yf = take(y, split.fit);
    const Eigen::MatrixXd xv = take_rows(x, split.validation);
    const Eigen::VectorXd yv = take(y, split.validation);
    const Eigen::MatrixXd target = one_hot(yf, n_classes);

    const int epochs = std::max(1, static_cast<int>(hyper_value(h, "epochs")));
    const double lr = hyper_value(h, "learning_rate");
    const double l2 = hyper_value(h, "l2");

    LogisticState s;
    s.weights = Eigen::MatrixXd::Zero(n_classes, x.cols());
    s.bias = Eigen::VectorXd::Zero(n_classes);
    const double n = static_cast<double>(xf.rows());

    const auto probs = [&s](const Eigen::MatrixXd& m) {
        return softmax_rows((m * s.weights.transpose()).rowwise() + s.bias.transpose());
    };
    const auto objective = [&](const Eigen::MatrixXd& m, const Eigen::VectorXd& t) {
        return mean_log_loss(probs(m), t) + 0.5 * l2 * s.weights.squaredNorm();
    };

    Fit fit;
    for (int e = 0; e < epochs; ++e) {
        const Eigen::MatrixXd resid = probs(xf) - target;  // n x C
        const Eigen::MatrixXd grad_w = resid.transpose() * xf / n + l2 * s.weights;
        const Eigen::VectorXd grad_b = resid.colwise().sum().transpose() / n;
        s.weights -= lr * grad_w;
        s.bias -= lr * grad_b;
        fit.loss_curve.push_back({e + 1, objective(xf, yf), objective(xv, yv)});
    }
    fit.state = std::move(s);
    return fit;
}

// Primal subgradient descent with the Pegasos step 1/(lambda t), offset to
// 1/(1 + lambda t) so early steps stay below 1, and
// projection onto the ball of radius 1/sqrt(lambda). Classification is
// one-vs-rest on the hinge loss; regression uses the epsilon-insensitive
// loss on standardized targets. The returned weights are the average of
// the iterates over the second half of training.
Fit fit_svm(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, Task task, int n_classes, const Hyper& h,
            std::uint64_t seed) {
    const auto split = fit_validation_split(static_cast<std::size_t>(x.rows()), seed);
    const Eigen::MatrixXd xf = take_rows(x, split.fit);
    Eigen::VectorXd yf = take(y, split.fit);
    const Eigen::MatrixXd xv = take_rows(x, split.validation);
    Eigen::VectorXd yv = take(y, split.validation);

    const double lambda = hyper_value(h, "lambda");
    const int epochs = std::max(1, static_cast<int>(hyper_value(h, "epochs")));
    const double eps = hyper_value(h, "epsilon");
    const bool regression = task == Task::regression;
    const int outputs = regression ? 1 : n_classes;

    SvmState s;
    if (regression) {
        s.target_mean = yf.mean();
        const double var = (yf.array() - s.target_mean).square().mean();
        s.target_sd = var > 1e-24 ? std::sqrt(var) : 1.0;
        yf = (yf.array() - s.target_mean) / s.target_sd;
        yv = (yv.array() - s.target_mean) / s.target_sd;
    }

    // Signed target of row i for output c.
    const auto label = [&](const Eigen::VectorXd& t, Eigen::Index i, int c) {
        if (regression) return t(i);
        return static_cast<int>(t(i)) == c ? 1.0 : -1.0;
    };
    const auto row_loss = [&](double margin_or_pred, double target) {
        if (regression) return std::max(0.0, std::abs(margin_or_pred - target) - eps);
        return std::max(0.0, 1.0 - target * margin_or_pred);
    };

    const Eigen::Index p = x.cols();
    Eigen::MatrixXd w = Eigen::MatrixXd::Zero(outputs, p);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(outputs);
    Eigen::MatrixXd w_avg = Eigen::MatrixXd::Zero(outputs, p);
    Eigen::VectorXd b_avg = Eigen::VectorXd::Zero(outputs);
    double averaged = 0;

    const auto objective = [&](const Eigen::MatrixXd& m, const Eigen::VectorXd& t, const Eigen::MatrixXd& ww,
                               const Eigen::VectorXd& bb) {
        const Eigen::MatrixXd scores = (m * ww.transpose()).rowwise() + bb.transpose();
        double total = 0;
        for (Eigen::Index i = 0; i < m.rows(); ++i)
            for (int c = 0; c < outputs; ++c) total += row_loss(scores(i, c), label(t, i, c));
        return total / static_cast<double>(m.rows()) + 0.5 * lambda * ww.squaredNorm();
    };

    Rng rng(derive_seed(seed, 2));
    std::vector<int> order(static_cast<std::size_t>(xf.rows()));
    std::iota(order.begin(), order.end(), 0);
    const double radius = 1.0 / std::sqrt(lambda);
    double t = 0;
    Fit fit;
    for (int e = 0; e < epochs; ++e) {
        for (std::size_t i = order.size(); i-- > 1;) std::swap(order[i], order[static_cast<std::size_t>(rng.below(i + 1))]);
        for (int r : order) {
            t += 1;
            const double step = 1.0 / (1.0 + lambda * t);
            const auto xi = xf.row(r);
            for (int c = 0; c < outputs; ++c) {
                const double target = label(yf, r, c);
                const double pred = xi.dot(w.row(c)) + b(c);
                double sub = 0;  // d loss / d pred
                if (regression) {
                    if (pred - target > eps) sub = 1;
                    else if (target - pred > eps) sub = -1;
                } else if (target * pred < 1) {
                    sub = -target;
                }
                w.row(c) *= 1.0 - step * lambda;
                if (sub != 0) {
                    w.row(c) -= step * sub * xi;
                    b(c) -= step * sub;
                }
                const double norm = w.row(c).norm();
                if (norm > radius) w.row(c) *= radius / norm;
            }
            if (e >= epochs / 2) {
                w_avg += w;
                b_avg += b;
                averaged += 1;
            }
        }
        const Eigen::MatrixXd w_now = averaged > 0 ? Eigen::MatrixXd(w_avg / averaged) : w;
        const Eigen::VectorXd b_now = averaged > 0 ? Eigen::VectorXd(b_avg / averaged) : b;
        fit.loss_curve.push_back({e + 1, objective(xf, yf, w_now, b_now), objective(xv, yv, w_now, b_now)});
    }
    s.weights = w_avg / averaged;
    s.bias = b_avg / averaged;
    fit.state = std::move(s);
    return fit;
}

Fit fit_naive_bayes(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, int n_classes, const Hyper& h) {
    const Eigen::Index p = x.cols();
    NaiveBayesState s;
    s.log_prior = Eigen::VectorXd::Constant(n_classes, -std::numeric_limits<double>::infinity());
    s.mean = Eigen::MatrixXd::Zero(n_classes, p);
    s.var = Eigen::MatrixXd::Ones(n_classes, p);

    double max_var = 0;
    for (Eigen::Index j = 0; j < p; ++j) {
        const double m = x.col(j).mean();
        max_var = std::max(max_var, (x.col(j).array() - m).square().mean());
    }
    const double smoothing = hyper_value(h, "var_smoothing") * std::max(max_var, 1e-12);

    std::vector<double> count(static_cast<std::size_t>(n_classes), 0.0);
    for (Eigen::Index i = 0; i < y.size(); ++i) {
        const auto c = static_cast<Eigen::Index>(y(i));
        count[static_cast<std::size_t>(c)] += 1;
        s.mean.row(c) += x.row(i);
    }
    for (int c = 0; c < n_classes; ++c)
        if (count[static_cast<std::size_t>(c)] > 0) s.mean.row(c) /= count[static_cast<std::size_t>(c)];
    Eigen::MatrixXd sq = Eigen::MatrixXd::Zero(n_classes, p);
    for (Eigen::Index i = 0; i < y.size(); ++i) {
        const auto c = static_cast<Eigen::Index>(y(i));
        sq.row(c) += (x.row(i) - s.mean.row(c)).array().square().matrix();
    }
    const double n = static_cast<double>(y.size());
    for (int c = 0; c < n_classes; ++c) {
        const double k = count[static_cast<std::size_t>(c)];
        if (k == 0) continue;
        s.log_prior(c) = std::log(k / n);
        s.var.row(c) = (sq.row(c).array() / k + smoothing).matrix();
    }
    Fit fit;
    fit.state = std::move(s);
    return fit;
}

}  // namespace opiaid::detail
