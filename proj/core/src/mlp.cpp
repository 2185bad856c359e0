// Fully connected rectifier network trained with mini-batch Adam.

#include <algorithm>
#include <cmath>
#include <numeric>

#include "learners_internal.hpp"
#include "opiaid/errors.hpp"

namespace opiaid {

MlpState mlp_init(std::vector<int> layer_sizes, bool classification, std::uint64_t seed) {
    if (layer_sizes.size() < 2) throw ValidationError("mlp.layers", "need input and output sizes");
    for (int s : layer_sizes)
        if (s < 1) throw ValidationError("mlp.layers", "layer sizes must be >= 1");
    MlpState s;
    s.layer_sizes = std::move(layer_sizes);
    s.classification = classification;
    Rng rng(derive_seed(seed, 3));
    for (std::size_t l = 1; l < s.layer_sizes.size(); ++l) {
        const int in = s.layer_sizes[l - 1];
        const int out = s.layer_sizes[l];
        const double scale = std::sqrt(2.0 / in);  // He initialisation
        Eigen::MatrixXd w(out, in);
        for (Eigen::Index j = 0; j < w.cols(); ++j)
            for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = scale * rng.normal();
        s.weights.push_back(std::move(w));
        s.biases.push_back(Eigen::VectorXd::Zero(out));
    }
    return s;
}

std::size_t mlp_parameter_count(const MlpState& s) {
    std::size_t n = 0;
    for (std::size_t l = 0; l < s.weights.size(); ++l)
        n += static_cast<std::size_t>(s.weights[l].size() + s.biases[l].size());
    return n;
}

Eigen::VectorXd mlp_flatten(const MlpState& s) {
    Eigen::VectorXd out(static_cast<Eigen::Index>(mlp_parameter_count(s)));
    Eigen::Index k = 0;
    for (std::size_t l = 0; l < s.weights.size(); ++l) {
        out.segment(k, s.weights[l].size()) = Eigen::Map<const Eigen::VectorXd>(s.weights[l].data(), s.weights[l].size());
        k += s.weights[l].size();
        out.segment(k, s.biases[l].size()) = s.biases[l];
        k += s.biases[l].size();
    }
    return out;
}

void mlp_unflatten(MlpState& s, const Eigen::VectorXd& params) {
    if (static_cast<std::size_t>(params.size()) != mlp_parameter_count(s))
        throw DimensionMismatch("parameter vector does not match network shape");
    Eigen::Index k = 0;
    for (std::size_t l = 0; l < s.weights.size(); ++l) {
        Eigen::Map<Eigen::VectorXd>(s.weights[l].data(), s.weights[l].size()) = params.segment(k, s.weights[l].size());
        k += s.weights[l].size();
        s.biases[l] = params.segment(k, s.biases[l].size());
        k += s.biases[l].size();
    }
}

namespace {

// Columns are samples throughout: activations are units x batch.
struct Forward {
    std::vector<Eigen::MatrixXd> z;  // pre-activations per layer
    std::vector<Eigen::MatrixXd> a;  // a[0] = input, a[l] = relu(z[l-1]) for hidden layers
};

Forward forward(const MlpState& s, const Eigen::MatrixXd& x) {
    Forward f;
    f.a.push_back(x.transpose());
    const std::size_t layers = s.weights.size();
    for (std::size_t l = 0; l < layers; ++l) {
        Eigen::MatrixXd z = (s.weights[l] * f.a.back()).colwise() + s.biases[l];
        if (l + 1 < layers) f.a.push_back(z.cwiseMax(0.0));
        f.z.push_back(std::move(z));
    }
    return f;
}

// Column-wise softmax of a C x n score matrix.
Eigen::MatrixXd softmax_cols(const Eigen::MatrixXd& z) {
    Eigen::MatrixXd p(z.rows(), z.cols());
    for (Eigen::Index j = 0; j < z.cols(); ++j) {
        const double m = z.col(j).maxCoeff();
        p.col(j) = (z.col(j).array() - m).exp();
        p.col(j) /= p.col(j).sum();
    }
    return p;
}

}  // namespace

double mlp_loss(const MlpState& s, const Eigen::MatrixXd& x, const Eigen::VectorXd& targets,
                Eigen::VectorXd* gradient) {
    if (x.cols() != s.layer_sizes.front()) throw DimensionMismatch("input width does not match network");
    if (x.rows() != targets.size()) throw DimensionMismatch("features and targets differ in length");
    const double n = static_cast<double>(x.rows());
    const Forward f = forward(s, x);
    const Eigen::MatrixXd& out = f.z.back();

    double loss = 0;
    Eigen::MatrixXd delta;  // d loss / d z_last
    if (s.classification) {
        const Eigen::MatrixXd p = softmax_cols(out);
        delta = p;
        for (Eigen::Index j = 0; j < out.cols(); ++j) {
            const auto c = static_cast<Eigen::Index>(targets(j));
            loss -= std::log(std::max(p(c, j), 1e-300));
            delta(c, j) -= 1.0;
        }
        loss /= n;
        delta /= n;
    } else {
        const Eigen::RowVectorXd t = ((targets.array() - s.target_mean) / s.target_sd).matrix().transpose();
        const Eigen::RowVectorXd r = out.row(0) - t;
        loss = 0.5 * r.squaredNorm() / n;
        delta = r / n;
    }
    double penalty = 0;
    for (const auto& w : s.weights) penalty += w.squaredNorm();
    loss += 0.5 * s.l2 * penalty;

    if (gradient != nullptr) {
        gradient->resize(static_cast<Eigen::Index>(mlp_parameter_count(s)));
        std::vector<Eigen::MatrixXd> gw(s.weights.size());
        std::vector<Eigen::VectorXd> gb(s.weights.size());
        for (std::size_t l = s.weights.size(); l-- > 0;) {
            gw[l] = delta * f.a[l].transpose() + s.l2 * s.weights[l];
            gb[l] = delta.rowwise().sum();
            if (l > 0) {
                Eigen::MatrixXd back = s.weights[l].transpose() * delta;
                delta = back.cwiseProduct((f.z[l - 1].array() > 0.0).cast<double>().matrix());
            }
        }
        Eigen::Index k = 0;
        for (std::size_t l = 0; l < gw.size(); ++l) {
            gradient->segment(k, gw[l].size()) = Eigen::Map<const Eigen::VectorXd>(gw[l].data(), gw[l].size());
            k += gw[l].size();
            gradient->segment(k, gb[l].size()) = gb[l];
            k += gb[l].size();
        }
    }
    return loss;
}

double check_gradient(const LossFn& loss, const GradientFn& gradient, const Eigen::VectorXd& at, double epsilon) {
    if (!(epsilon > 0)) throw ValidationError("epsilon", "must be > 0");
    const Eigen::VectorXd analytic = gradient(at);
    Eigen::VectorXd probe = at;
    double worst = 0;
    for (Eigen::Index i = 0; i < at.size(); ++i) {
        probe(i) = at(i) + epsilon;
        const double up = loss(probe);
        probe(i) = at(i) - epsilon;
        const double down = loss(probe);
        probe(i) = at(i);
        const double numeric = (up - down) / (2 * epsilon);
        const double err = std::abs(analytic(i) - numeric) / std::max(std::abs(numeric), 1e-4);
        worst = std::max(worst, err);
    }
    return worst;
}

double check_gradient(const MlpState& model, const Eigen::MatrixXd& x, const Eigen::VectorXd& targets,
                      double epsilon) {
    MlpState work = model;
    const auto loss = [&](const Eigen::VectorXd& p) {
        mlp_unflatten(work, p);
        return mlp_loss(work, x, targets, nullptr);
    };
    const auto grad = [&](const Eigen::VectorXd& p) {
        mlp_unflatten(work, p);
        Eigen::VectorXd g;
        mlp_loss(work, x, targets, &g);
        return g;
    };
    return check_gradient(loss, grad, mlp_flatten(model), epsilon);
}

namespace detail {

Eigen::MatrixXd mlp_forward(const MlpState& s, const Eigen::MatrixXd& x) {
    Eigen::MatrixXd a = x;
    const std::size_t layers = s.weights.size();
    for (std::size_t l = 0; l < layers; ++l) {
        a = affine_rows(a, s.weights[l], s.biases[l]);
        if (l + 1 < layers) a = a.cwiseMax(0.0);
    }
    if (s.classification) return softmax_rows(a);
    return (a.array() * s.target_sd + s.target_mean).matrix();
}

// Adam with a learning rate halved every lr_halving_epochs. The retained
// model is the iterate with the lowest full fit-partition objective seen so
// far, and the curve records that model's losses, so the recorded training
// loss never increases while the optimizer itself is free to wander.
Fit fit_mlp(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, Task task, int n_classes, const Hyper& h,
            std::uint64_t seed) {
    const auto split = fit_validation_split(static_cast<std::size_t>(x.rows()), seed);
    const Eigen::MatrixXd xf = take_rows(x, split.fit);
    const Eigen::VectorXd yf = take(y, split.fit);
    const Eigen::MatrixXd xv = take_rows(x, split.validation);
    const Eigen::VectorXd yv = take(y, split.validation);

    std::vector<int> sizes{static_cast<int>(x.cols())};
    for (const char* key : {"hidden1", "hidden2"}) {
        const int width = static_cast<int>(hyper_value(h, key));
        if (width > 0) sizes.push_back(width);
    }
    const bool classification = task == Task::classification;
    sizes.push_back(classification ? n_classes : 1);

    MlpState s = mlp_init(sizes, classification, seed);
    s.l2 = hyper_value(h, "l2");
    if (!classification) {
        s.target_mean = yf.mean();
        const double var = (yf.array() - s.target_mean).square().mean();
        s.target_sd = var > 1e-24 ? std::sqrt(var) : 1.0;
    }

    const int epochs = std::max(1, static_cast<int>(hyper_value(h, "epochs")));
    const auto batch = static_cast<std::size_t>(std::max(1, static_cast<int>(hyper_value(h, "batch_size"))));
    const double lr0 = hyper_value(h, "learning_rate");
    const int halving = std::max(1, static_cast<int>(hyper_value(h, "lr_halving_epochs")));
    constexpr double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;

    Eigen::VectorXd theta = mlp_flatten(s);
    Eigen::VectorXd m1 = Eigen::VectorXd::Zero(theta.size());
    Eigen::VectorXd m2 = Eigen::VectorXd::Zero(theta.size());
    double step_count = 0;

    Rng rng(derive_seed(seed, 4));
    std::vector<int> order(static_cast<std::size_t>(xf.rows()));
    std::iota(order.begin(), order.end(), 0);

    Fit fit;
    // early_stopping 1 keeps the epoch with the lowest held-out loss and
    // records raw per-epoch losses; 0 keeps the lowest training objective and
    // records the retained model, so the training curve never rises.
    const bool early_stopping = hyper_value(h, "early_stopping") != 0;
    MlpState best = s;
    double best_train = mlp_loss(s, xf, yf, nullptr);
    double best_validation = mlp_loss(s, xv, yv, nullptr);
    Eigen::VectorXd grad;
    Eigen::MatrixXd xb;
    Eigen::VectorXd yb;
    for (int e = 0; e < epochs; ++e) {
        const double lr = lr0 * std::pow(0.5, e / halving);
        for (std::size_t i = order.size(); i-- > 1;) std::swap(order[i], order[static_cast<std::size_t>(rng.below(i + 1))]);
        for (std::size_t start = 0; start < order.size(); start += batch) {
            const std::size_t stop = std::min(order.size(), start + batch);
            const std::span<const int> idx(order.data() + start, stop - start);
            xb = take_rows(xf, idx);
            yb = take(yf, idx);
            mlp_loss(s, xb, yb, &grad);
            step_count += 1;
            m1 = beta1 * m1 + (1 - beta1) * grad;
            m2 = beta2 * m2 + (1 - beta2) * grad.cwiseProduct(grad);
            const double c1 = 1 - std::pow(beta1, step_count);
            const double c2 = 1 - std::pow(beta2, step_count);
            theta.array() -= lr * (m1.array() / c1) / ((m2.array() / c2).sqrt() + adam_eps);
            mlp_unflatten(s, theta);
        }
        const double train = mlp_loss(s, xf, yf, nullptr);
        const double validation = mlp_loss(s, xv, yv, nullptr);
        if (early_stopping ? validation < best_validation : train < best_train) {
            best = s;
            best_train = train;
            best_validation = validation;
        }
        if (early_stopping) {
            fit.loss_curve.push_back({e + 1, train, validation});
        } else {
            fit.loss_curve.push_back({e + 1, best_train, best_validation});
        }
    }
    fit.state = std::move(best);
    return fit;
}

}  // namespace detail

}  // namespace opiaid
