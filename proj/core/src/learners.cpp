#include "opiaid/learners.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "learners_internal.hpp"
#include "opiaid/errors.hpp"
#include "opiaid/hash.hpp"

namespace opiaid {

namespace {

struct KindName {
    LearnerKind kind;
    std::string_view name;
};

constexpr std::array<KindName, 8> kKindNames = {{
    {LearnerKind::multinomial_logistic, "multinomial_logistic"},
    {LearnerKind::knn, "knn"},
    {LearnerKind::decision_tree, "decision_tree"},
    {LearnerKind::random_forest, "random_forest"},
    {LearnerKind::gradient_boosted_trees, "gradient_boosted_trees"},
    {LearnerKind::mlp, "mlp"},
    {LearnerKind::linear_svm, "linear_svm"},
    {LearnerKind::gaussian_naive_bayes, "gaussian_naive_bayes"},
}};

}  // namespace

std::string_view to_string(LearnerKind k) {
    for (const auto& e : kKindNames)
        if (e.kind == k) return e.name;
    return "unknown";
}

std::string_view to_string(Task t) { return t == Task::regression ? "regression" : "classification"; }

LearnerKind parse_learner_kind(std::string_view s) {
    for (const auto& e : kKindNames)
        if (e.name == s) return e.kind;
    throw ValidationError("learner", "unknown learner kind '" + std::string(s) + "'");
}

Task parse_task(std::string_view s) {
    if (s == "regression") return Task::regression;
    if (s == "classification") return Task::classification;
    throw ValidationError("task", "unknown task '" + std::string(s) + "'");
}

bool supports(LearnerKind k, Task t) {
    if (t == Task::classification) return true;
    return k != LearnerKind::gaussian_naive_bayes && k != LearnerKind::multinomial_logistic;
}

bool is_iterative(LearnerKind k) {
    return k == LearnerKind::mlp || k == LearnerKind::gradient_boosted_trees ||
           k == LearnerKind::multinomial_logistic || k == LearnerKind::linear_svm;
}

bool is_ensemble(LearnerKind k) { return k == LearnerKind::random_forest; }

Hyper default_hyper(LearnerKind k) {
    switch (k) {
        case LearnerKind::multinomial_logistic:
            return {{"epochs", 300}, {"learning_rate", 0.5}, {"l2", 1e-4}};
        case LearnerKind::knn:
            return {{"k", 15}, {"distance_weighted", 1}};
        case LearnerKind::decision_tree:
            return {{"max_depth", 8}, {"min_samples_leaf", 5}, {"max_bins", 64}};
        case LearnerKind::random_forest:
            return {{"n_trees", 100}, {"max_depth", 12}, {"min_samples_leaf", 3},
                    {"max_features", 0.5}, {"bootstrap", 1}, {"max_bins", 64}};
        case LearnerKind::gradient_boosted_trees:
            return {{"rounds", 300}, {"learning_rate", 0.05}, {"max_depth", 4}, {"lambda", 1.0},
                    {"min_child_weight", 1.0}, {"colsample", 0.8}, {"max_bins", 64}};
        case LearnerKind::mlp:
            return {{"hidden1", 32}, {"hidden2", 32}, {"epochs", 200}, {"batch_size", 32},
                    {"learning_rate", 1e-2}, {"lr_halving_epochs", 75}, {"l2", 1e-3}, {"early_stopping", 0}};
        case LearnerKind::linear_svm:
            return {{"lambda", 1e-3}, {"epochs", 40}, {"epsilon", 0.1}};
        case LearnerKind::gaussian_naive_bayes:
            return {{"var_smoothing", 1e-9}};
    }
    return {};
}

std::vector<Hyper> tuning_grid(LearnerKind k) {
    switch (k) {
        case LearnerKind::multinomial_logistic:
            return {{{"l2", 1e-4}}, {{"l2", 1e-2}}};
        case LearnerKind::knn:
            return {{{"k", 7}}, {{"k", 15}}, {{"k", 31}}};
        case LearnerKind::decision_tree:
            return {{{"max_depth", 6}}, {{"max_depth", 8}}, {{"max_depth", 10}}};
        case LearnerKind::random_forest:
            return {{{"min_samples_leaf", 3}}, {{"min_samples_leaf", 10}}};
        case LearnerKind::gradient_boosted_trees:
            return {{{"max_depth", 3}}, {{"max_depth", 4}}};
        case LearnerKind::mlp:
            return {{{"early_stopping", 1}}, {{"early_stopping", 1}, {"l2", 3e-3}}, {{"early_stopping", 0}}};
        case LearnerKind::linear_svm:
            return {{{"lambda", 1e-3}}, {{"lambda", 1e-2}}};
        case LearnerKind::gaussian_naive_bayes:
            return {{{"var_smoothing", 1e-9}}, {{"var_smoothing", 1e-3}}};
    }
    return {{}};
}

FeatureSchema FeatureSchema::continuous(std::size_t p) {
    FeatureSchema s;
    for (std::size_t j = 0; j < p; ++j) s.columns.push_back({"x" + std::to_string(j), ColumnKind::continuous, 0});
    return s;
}

std::size_t FeatureSchema::encoded_width() const {
    std::size_t w = 0;
    for (const auto& c : columns) w += c.kind == ColumnKind::categorical ? static_cast<std::size_t>(c.levels) : 1;
    return w;
}

std::vector<std::string> FeatureSchema::encoded_names() const {
    std::vector<std::string> out;
    for (const auto& c : columns) {
        if (c.kind == ColumnKind::continuous) {
            out.push_back(c.name);
        } else {
            for (int l = 0; l < c.levels; ++l) out.push_back(c.name + "=" + std::to_string(l));
        }
    }
    return out;
}

void FeatureSchema::fit(const Eigen::MatrixXd& raw) {
    if (static_cast<std::size_t>(raw.cols()) != columns.size())
        throw SchemaMismatch("feature matrix has " + std::to_string(raw.cols()) + " columns, schema " +
                             std::to_string(columns.size()));
    mean.clear();
    sd.clear();
    const double n = static_cast<double>(raw.rows());
    for (std::size_t j = 0; j < columns.size(); ++j) {
        const auto& c = columns[j];
        if (c.kind == ColumnKind::categorical) {
            for (int l = 0; l < c.levels; ++l) {
                mean.push_back(0.0);
                sd.push_back(1.0);
            }
            continue;
        }
        const auto col = raw.col(static_cast<Eigen::Index>(j));
        const double m = col.sum() / n;
        const double var = (col.array() - m).square().sum() / n;
        mean.push_back(m);
        // Constant columns pass through centred.
        sd.push_back(var > 1e-24 ? std::sqrt(var) : 1.0);
    }
}

Eigen::MatrixXd FeatureSchema::encode(const Eigen::MatrixXd& raw) const {
    if (static_cast<std::size_t>(raw.cols()) != columns.size())
        throw SchemaMismatch("feature matrix has " + std::to_string(raw.cols()) + " columns, model expects " +
                             std::to_string(columns.size()));
    const auto width = encoded_width();
    if (mean.size() != width || sd.size() != width) throw SchemaMismatch("schema is not fitted");
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(raw.rows(), static_cast<Eigen::Index>(width));
    Eigen::Index k = 0;
    for (std::size_t j = 0; j < columns.size(); ++j) {
        const auto& c = columns[j];
        const auto src = static_cast<Eigen::Index>(j);
        if (c.kind == ColumnKind::continuous) {
            out.col(k) = (raw.col(src).array() - mean[static_cast<std::size_t>(k)]) / sd[static_cast<std::size_t>(k)];
            ++k;
            continue;
        }
        for (Eigen::Index i = 0; i < raw.rows(); ++i) {
            const double v = raw(i, src);
            const auto level = static_cast<long>(std::lround(v));
            if (!(v >= 0) || level >= c.levels || std::abs(v - static_cast<double>(level)) > 1e-9)
                throw SchemaMismatch("column '" + c.name + "' has category outside 0.." +
                                     std::to_string(c.levels - 1));
            out(i, k + level) = 1.0;
        }
        k += c.levels;
    }
    return out;
}

namespace detail {

double hyper_value(const Hyper& h, std::string_view key) {
    const auto it = h.find(key);
    if (it == h.end()) throw ValidationError("hyper." + std::string(key), "missing hyperparameter");
    return it->second;
}

FitSplit fit_validation_split(std::size_t n, std::uint64_t seed) {
    FitSplit s;
    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    if (n < 20) {
        s.fit = idx;
        s.validation = idx;
        return s;
    }
    Rng rng(derive_seed(seed, 0xF17));
    for (std::size_t i = n - 1; i > 0; --i) std::swap(idx[i], idx[static_cast<std::size_t>(rng.below(i + 1))]);
    const auto n_val = std::max<std::size_t>(1, n / 10);
    s.validation.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_val));
    s.fit.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_val), idx.end());
    std::sort(s.validation.begin(), s.validation.end());
    std::sort(s.fit.begin(), s.fit.end());
    return s;
}

Eigen::MatrixXd take_rows(const Eigen::MatrixXd& x, std::span<const int> rows) {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), x.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = x.row(rows[i]);
    return out;
}

Eigen::VectorXd take(const Eigen::VectorXd& v, std::span<const int> rows) {
    Eigen::VectorXd out(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) out(static_cast<Eigen::Index>(i)) = v(rows[i]);
    return out;
}

Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& scores) {
    Eigen::MatrixXd p(scores.rows(), scores.cols());
    for (Eigen::Index i = 0; i < scores.rows(); ++i) {
        const double m = scores.row(i).maxCoeff();
        double z = 0;
        for (Eigen::Index c = 0; c < scores.cols(); ++c) {
            p(i, c) = std::isfinite(scores(i, c)) ? std::exp(scores(i, c) - m) : 0.0;
            z += p(i, c);
        }
        p.row(i) /= z;
    }
    return p;
}

double mean_log_loss(const Eigen::MatrixXd& probs, const Eigen::VectorXd& labels) {
    double s = 0;
    for (Eigen::Index i = 0; i < labels.size(); ++i)
        s -= std::log(std::max(probs(i, static_cast<Eigen::Index>(labels(i))), 1e-15));
    return s / static_cast<double>(labels.size());
}

}  // namespace detail

namespace {

Hyper merged_hyper(LearnerKind kind, Task task, const Hyper& user) {
    Hyper h = default_hyper(kind);
    for (const auto& [k, v] : user) {
        if (k == "n_classes" && task == Task::classification) {
            h[k] = v;
            continue;
        }
        if (!h.contains(k))
            throw ValidationError("hyper." + k, "not a hyperparameter of " + std::string(to_string(kind)));
        if (!std::isfinite(v)) throw ValidationError("hyper." + k, "must be finite");
        h[k] = v;
    }
    return h;
}

std::string data_hash(const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
    Sha256 h;
    const auto rows = static_cast<std::uint64_t>(x.rows());
    const auto cols = static_cast<std::uint64_t>(x.cols());
    h.update(&rows, sizeof rows);
    h.update(&cols, sizeof cols);
    // Column-major storage; Eigen owns contiguous data here.
    h.update(x.data(), static_cast<std::size_t>(x.size()) * sizeof(double));
    h.update(y.data(), static_cast<std::size_t>(y.size()) * sizeof(double));
    return h.hex_digest();
}

}  // namespace

FittedModel train(LearnerKind kind, Task task, const FeatureSchema& schema, const Eigen::MatrixXd& features,
                  const Eigen::VectorXd& targets, const Hyper& hyper, std::uint64_t seed) {
    if (features.rows() != targets.size())
        throw DimensionMismatch("features have " + std::to_string(features.rows()) + " rows, targets " +
                                std::to_string(targets.size()));
    if (features.rows() < 2) throw DimensionMismatch("need at least 2 rows to train");
    if (!supports(kind, task))
        throw ValidationError("task", std::string(to_string(kind)) + " does not support " + std::string(to_string(task)));
    if (!features.allFinite()) throw ValidationError("features", "missing or non-finite value");
    if (!targets.allFinite()) throw ValidationError("targets", "missing or non-finite value");

    const Hyper h = merged_hyper(kind, task, hyper);

    FittedModel m;
    m.kind = kind;
    m.task = task;
    m.feature_schema = schema;
    m.feature_schema.fit(features);
    const Eigen::MatrixXd x = m.feature_schema.encode(features);

    if (task == Task::classification) {
        int max_label = 0;
        std::vector<char> seen;
        for (Eigen::Index i = 0; i < targets.size(); ++i) {
            const double v = targets(i);
            if (v < 0 || v != std::floor(v)) throw ValidationError("targets", "class labels must be integers >= 0");
            max_label = std::max(max_label, static_cast<int>(v));
        }
        m.n_classes = max_label + 1;
        if (const auto it = h.find("n_classes"); it != h.end()) {
            if (it->second < m.n_classes) throw ValidationError("hyper.n_classes", "smaller than the largest label");
            m.n_classes = static_cast<int>(it->second);
        }
        seen.assign(static_cast<std::size_t>(m.n_classes), 0);
        int distinct = 0;
        for (Eigen::Index i = 0; i < targets.size(); ++i) {
            auto& flag = seen[static_cast<std::size_t>(targets(i))];
            if (!flag) {
                flag = 1;
                ++distinct;
            }
        }
        if (distinct < 2) throw DegenerateTarget("classification target has a single class");
    }

    detail::Fit fit;
    switch (kind) {
        case LearnerKind::multinomial_logistic:
            fit = detail::fit_logistic(x, targets, m.n_classes, h, seed);
            break;
        case LearnerKind::knn:
            fit = detail::fit_knn(x, targets, h);
            break;
        case LearnerKind::decision_tree:
            fit = detail::fit_tree(x, targets, task, m.n_classes, h, seed);
            break;
        case LearnerKind::random_forest:
            fit = detail::fit_forest(x, targets, task, m.n_classes, h, seed);
            break;
        case LearnerKind::gradient_boosted_trees:
            fit = detail::fit_boosting(x, targets, task, m.n_classes, h, seed);
            break;
        case LearnerKind::mlp:
            fit = detail::fit_mlp(x, targets, task, m.n_classes, h, seed);
            break;
        case LearnerKind::linear_svm:
            fit = detail::fit_svm(x, targets, task, m.n_classes, h, seed);
            break;
        case LearnerKind::gaussian_naive_bayes:
            fit = detail::fit_naive_bayes(x, targets, m.n_classes, h);
            break;
    }
    m.state = std::move(fit.state);
    m.loss_curve = std::move(fit.loss_curve);

    m.train_meta.seed = seed;
    m.train_meta.hyper = h;
    m.train_meta.data_hash = data_hash(features, targets);
    m.train_meta.n_rows = static_cast<std::size_t>(features.rows());
    if (task == Task::regression) {
        const Eigen::VectorXd resid = targets - detail::predict_state(m.state, task, m.n_classes, x).col(0);
        const double n = static_cast<double>(resid.size());
        m.train_meta.residual_mean = resid.sum() / n;
        m.train_meta.residual_sd = std::sqrt((resid.array() - m.train_meta.residual_mean).square().sum() / n);
    }
    return m;
}

FittedModel train(LearnerKind kind, Task task, const Eigen::MatrixXd& features, const Eigen::VectorXd& targets,
                  const Hyper& hyper, std::uint64_t seed) {
    return train(kind, task, FeatureSchema::continuous(static_cast<std::size_t>(features.cols())), features,
                 targets, hyper, seed);
}

Eigen::MatrixXd predict(const FittedModel& model, const Eigen::MatrixXd& features) {
    const Eigen::MatrixXd x = model.feature_schema.encode(features);
    return detail::predict_state(model.state, model.task, model.n_classes, x);
}

std::optional<Eigen::MatrixXd> predict_members(const FittedModel& model, const Eigen::MatrixXd& features) {
    if (model.task != Task::regression) return std::nullopt;
    const auto* forest = std::get_if<ForestState>(&model.state);
    if (forest == nullptr) return std::nullopt;
    const detail::RowMatrix x = detail::to_rows(model.feature_schema.encode(features));
    Eigen::MatrixXd out(x.rows(), static_cast<Eigen::Index>(forest->trees.size()));
    for (Eigen::Index i = 0; i < x.rows(); ++i)
        for (std::size_t t = 0; t < forest->trees.size(); ++t)
            out(i, static_cast<Eigen::Index>(t)) = forest->trees[t].leaf(x.row(i).data())[0];
    return out;
}

namespace detail {

Eigen::MatrixXd affine_rows(const Eigen::MatrixXd& x, const Eigen::MatrixXd& w, const Eigen::VectorXd& b) {
    Eigen::MatrixXd out(x.rows(), w.rows());
    for (Eigen::Index i = 0; i < x.rows(); ++i)
        for (Eigen::Index c = 0; c < w.rows(); ++c) {
            double acc = b(c);
            for (Eigen::Index j = 0; j < x.cols(); ++j) acc += x(i, j) * w(c, j);
            out(i, c) = acc;
        }
    return out;
}

Eigen::MatrixXd predict_state(const ModelState& state, Task task, int n_classes, const Eigen::MatrixXd& x) {
    const int width = task == Task::regression ? 1 : n_classes;
    return std::visit(
        [&](const auto& s) -> Eigen::MatrixXd {
            using S = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<S, TreeState>) {
                return predict_trees({s.tree}, to_rows(x), width);
            } else if constexpr (std::is_same_v<S, ForestState>) {
                return predict_trees(s.trees, to_rows(x), width);
            } else if constexpr (std::is_same_v<S, BoostState>) {
                const Eigen::MatrixXd raw = predict_boosting(s, to_rows(x));
                return task == Task::regression ? raw : softmax_rows(raw);
            } else if constexpr (std::is_same_v<S, MlpState>) {
                return mlp_forward(s, x);
            } else if constexpr (std::is_same_v<S, LogisticState>) {
                return softmax_rows(affine_rows(x, s.weights, s.bias));
            } else if constexpr (std::is_same_v<S, SvmState>) {
                const Eigen::MatrixXd scores = affine_rows(x, s.weights, s.bias);
                if (task == Task::regression) return (scores.array() * s.target_sd + s.target_mean).matrix();
                return softmax_rows(scores);
            } else if constexpr (std::is_same_v<S, NaiveBayesState>) {
                Eigen::MatrixXd scores(x.rows(), s.log_prior.size());
                for (Eigen::Index c = 0; c < s.log_prior.size(); ++c) {
                    if (!std::isfinite(s.log_prior(c))) {
                        scores.col(c).setConstant(-std::numeric_limits<double>::infinity());
                        continue;
                    }
                    double norm = 0;
                    for (Eigen::Index j = 0; j < x.cols(); ++j) norm += std::log(2 * M_PI * s.var(c, j));
                    const Eigen::RowVectorXd mu = s.mean.row(c);
                    const Eigen::RowVectorXd inv = s.var.row(c).cwiseInverse();
                    for (Eigen::Index i = 0; i < x.rows(); ++i)
                        scores(i, c) = s.log_prior(c) - 0.5 * norm -
                                       0.5 * ((x.row(i) - mu).array().square() * inv.array()).sum();
                }
                return softmax_rows(scores);
            } else {
                static_assert(std::is_same_v<S, KnnState>);
                return predict_knn(s, task, n_classes, x);
            }
        },
        state);
}

}  // namespace detail

}  // namespace opiaid
