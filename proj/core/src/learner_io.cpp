// JSON model artifacts.

#include <cmath>
#include <limits>

#include <nlohmann/json.hpp>

#include "opiaid/errors.hpp"
#include "opiaid/learners.hpp"

namespace opiaid {

namespace {

using json = nlohmann::ordered_json;

json matrix_json(const Eigen::MatrixXd& m) {
    json data = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) data.push_back(m(i, j));
    return json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(data)}};
}

Eigen::MatrixXd matrix_from(const json& j) {
    const auto rows = j.at("rows").get<Eigen::Index>();
    const auto cols = j.at("cols").get<Eigen::Index>();
    const auto& data = j.at("data");
    if (rows < 0 || cols < 0 || data.size() != static_cast<std::size_t>(rows * cols))
        throw CorruptArtifact("matrix shape does not match its data");
    Eigen::MatrixXd m(rows, cols);
    std::size_t k = 0;
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index jj = 0; jj < cols; ++jj) m(i, jj) = data[k++].get<double>();
    return m;
}

json vector_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Eigen::VectorXd vector_from(const json& j) {
    const auto v = j.get<std::vector<double>>();
    return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

json tree_json(const Tree& t) {
    json nodes = json::array();
    for (const auto& n : t.nodes) {
        if (n.feature < 0)
            nodes.push_back(json{{"value", n.value}});
        else
            nodes.push_back(json{{"feature", n.feature}, {"threshold", n.threshold}, {"left", n.left}, {"right", n.right}});
    }
    return nodes;
}

Tree tree_from(const json& j) {
    Tree t;
    for (const auto& n : j) {
        TreeNode node;
        if (n.contains("value")) {
            node.value = n.at("value").get<std::vector<double>>();
        } else {
            node.feature = n.at("feature").get<int>();
            node.threshold = n.at("threshold").get<double>();
            node.left = n.at("left").get<int>();
            node.right = n.at("right").get<int>();
        }
        t.nodes.push_back(std::move(node));
    }
    const auto size = static_cast<int>(t.nodes.size());
    if (size == 0) throw CorruptArtifact("empty tree");
    for (const auto& n : t.nodes)
        if (n.feature >= 0 && (n.left <= 0 || n.left >= size || n.right <= 0 || n.right >= size))
            throw CorruptArtifact("tree child index out of range");
    return t;
}

json trees_json(const std::vector<Tree>& trees) {
    json out = json::array();
    for (const auto& t : trees) out.push_back(tree_json(t));
    return out;
}

std::vector<Tree> trees_from(const json& j) {
    std::vector<Tree> out;
    for (const auto& t : j) out.push_back(tree_from(t));
    return out;
}

json state_json(const ModelState& state) {
    return std::visit(
        [](const auto& s) -> json {
            using S = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<S, LogisticState>) {
                return {{"weights", matrix_json(s.weights)}, {"bias", vector_json(s.bias)}};
            } else if constexpr (std::is_same_v<S, KnnState>) {
                return {{"k", s.k},
                        {"distance_weighted", s.distance_weighted},
                        {"points", matrix_json(s.points)},
                        {"targets", vector_json(s.targets)}};
            } else if constexpr (std::is_same_v<S, TreeState>) {
                return {{"tree", tree_json(s.tree)}};
            } else if constexpr (std::is_same_v<S, ForestState>) {
                return {{"trees", trees_json(s.trees)}};
            } else if constexpr (std::is_same_v<S, BoostState>) {
                json rounds = json::array();
                for (const auto& r : s.rounds) rounds.push_back(trees_json(r));
                return {{"base_score", s.base_score}, {"learning_rate", s.learning_rate}, {"rounds", std::move(rounds)}};
            } else if constexpr (std::is_same_v<S, MlpState>) {
                json w = json::array(), b = json::array();
                for (const auto& m : s.weights) w.push_back(matrix_json(m));
                for (const auto& v : s.biases) b.push_back(vector_json(v));
                return {{"layer_sizes", s.layer_sizes},
                        {"classification", s.classification},
                        {"target_mean", s.target_mean},
                        {"target_sd", s.target_sd},
                        {"l2", s.l2},
                        {"weights", std::move(w)},
                        {"biases", std::move(b)}};
            } else if constexpr (std::is_same_v<S, SvmState>) {
                return {{"weights", matrix_json(s.weights)},
                        {"bias", vector_json(s.bias)},
                        {"target_mean", s.target_mean},
                        {"target_sd", s.target_sd}};
            } else {
                // JSON has no -inf; absent classes are written as null.
                json prior = json::array();
                for (Eigen::Index c = 0; c < s.log_prior.size(); ++c) {
                    if (std::isfinite(s.log_prior(c)))
                        prior.push_back(s.log_prior(c));
                    else
                        prior.push_back(nullptr);
                }
                return {{"log_prior", std::move(prior)}, {"mean", matrix_json(s.mean)}, {"var", matrix_json(s.var)}};
            }
        },
        state);
}

ModelState state_from(LearnerKind kind, const json& j) {
    switch (kind) {
        case LearnerKind::multinomial_logistic:
            return LogisticState{matrix_from(j.at("weights")), vector_from(j.at("bias"))};
        case LearnerKind::knn: {
            KnnState s;
            s.k = j.at("k").get<int>();
            s.distance_weighted = j.at("distance_weighted").get<bool>();
            s.points = matrix_from(j.at("points"));
            s.targets = vector_from(j.at("targets"));
            if (s.points.rows() != s.targets.size()) throw CorruptArtifact("knn points and targets differ in length");
            return s;
        }
        case LearnerKind::decision_tree:
            return TreeState{tree_from(j.at("tree"))};
        case LearnerKind::random_forest:
            return ForestState{trees_from(j.at("trees"))};
        case LearnerKind::gradient_boosted_trees: {
            BoostState s;
            s.base_score = j.at("base_score").get<std::vector<double>>();
            s.learning_rate = j.at("learning_rate").get<double>();
            for (const auto& r : j.at("rounds")) {
                s.rounds.push_back(trees_from(r));
                if (s.rounds.back().size() != s.base_score.size()) throw CorruptArtifact("boosting round width");
            }
            return s;
        }
        case LearnerKind::mlp: {
            MlpState s;
            s.layer_sizes = j.at("layer_sizes").get<std::vector<int>>();
            s.classification = j.at("classification").get<bool>();
            s.target_mean = j.at("target_mean").get<double>();
            s.target_sd = j.at("target_sd").get<double>();
            s.l2 = j.at("l2").get<double>();
            for (const auto& m : j.at("weights")) s.weights.push_back(matrix_from(m));
            for (const auto& v : j.at("biases")) s.biases.push_back(vector_from(v));
            if (s.layer_sizes.size() != s.weights.size() + 1 || s.biases.size() != s.weights.size())
                throw CorruptArtifact("mlp layer count");
            for (std::size_t l = 0; l < s.weights.size(); ++l)
                if (s.weights[l].rows() != s.layer_sizes[l + 1] || s.weights[l].cols() != s.layer_sizes[l] ||
                    s.biases[l].size() != s.layer_sizes[l + 1])
                    throw CorruptArtifact("mlp layer shape");
            return s;
        }
        case LearnerKind::linear_svm: {
            SvmState s;
            s.weights = matrix_from(j.at("weights"));
            s.bias = vector_from(j.at("bias"));
            s.target_mean = j.at("target_mean").get<double>();
            s.target_sd = j.at("target_sd").get<double>();
            return s;
        }
        case LearnerKind::gaussian_naive_bayes: {
            NaiveBayesState s;
            const auto& prior = j.at("log_prior");
            s.log_prior.resize(static_cast<Eigen::Index>(prior.size()));
            for (std::size_t c = 0; c < prior.size(); ++c)
                s.log_prior(static_cast<Eigen::Index>(c)) =
                    prior[c].is_null() ? -std::numeric_limits<double>::infinity() : prior[c].get<double>();
            s.mean = matrix_from(j.at("mean"));
            s.var = matrix_from(j.at("var"));
            return s;
        }
    }
    throw CorruptArtifact("unknown learner kind");
}

}  // namespace

std::string serialize_model(const FittedModel& m) {
    json schema_cols = json::array();
    for (const auto& c : m.feature_schema.columns) {
        json col{{"name", c.name}, {"kind", c.kind == ColumnKind::continuous ? "continuous" : "categorical"}};
        if (c.kind == ColumnKind::categorical) col["levels"] = c.levels;
        schema_cols.push_back(std::move(col));
    }
    json curve = json::array();
    for (const auto& p : m.loss_curve) curve.push_back(json{{"round", p.round}, {"train", p.train}, {"validation", p.validation}});
    json hyper = json::object();
    for (const auto& [k, v] : m.train_meta.hyper) hyper[k] = v;

    json doc{
        {"schema_version", kModelSchemaVersion},
        {"kind", std::string(to_string(m.kind))},
        {"task", std::string(to_string(m.task))},
        {"n_classes", m.n_classes},
        {"feature_schema",
         {{"columns", std::move(schema_cols)}, {"mean", m.feature_schema.mean}, {"sd", m.feature_schema.sd}}},
        {"train_meta",
         {{"seed", m.train_meta.seed},
          {"hyper", std::move(hyper)},
          {"data_hash", m.train_meta.data_hash},
          {"n_rows", m.train_meta.n_rows},
          {"residual_mean", m.train_meta.residual_mean},
          {"residual_sd", m.train_meta.residual_sd}}},
        {"loss_curve", std::move(curve)},
        {"state", state_json(m.state)},
    };
    return doc.dump();
}

FittedModel deserialize_model(std::string_view bytes) {
    json doc;
    try {
        doc = json::parse(bytes);
    } catch (const json::exception& e) {
        throw CorruptArtifact(std::string("model artifact is not valid JSON: ") + e.what());
    }
    try {
        const int version = doc.at("schema_version").get<int>();
        if (version > kModelSchemaVersion)
            throw VersionMismatch("model schema version " + std::to_string(version) + " is newer than supported " +
                                  std::to_string(kModelSchemaVersion));
        if (version != kModelSchemaVersion) throw CorruptArtifact("unsupported model schema version");

        FittedModel m;
        m.kind = parse_learner_kind(doc.at("kind").get<std::string>());
        m.task = parse_task(doc.at("task").get<std::string>());
        m.n_classes = doc.at("n_classes").get<int>();

        const auto& fs = doc.at("feature_schema");
        for (const auto& c : fs.at("columns")) {
            FeatureColumn col;
            col.name = c.at("name").get<std::string>();
            const auto kind = c.at("kind").get<std::string>();
            if (kind == "continuous") {
                col.kind = ColumnKind::continuous;
            } else if (kind == "categorical") {
                col.kind = ColumnKind::categorical;
                col.levels = c.at("levels").get<int>();
            } else {
                throw CorruptArtifact("unknown column kind '" + kind + "'");
            }
            m.feature_schema.columns.push_back(std::move(col));
        }
        m.feature_schema.mean = fs.at("mean").get<std::vector<double>>();
        m.feature_schema.sd = fs.at("sd").get<std::vector<double>>();
        if (m.feature_schema.mean.size() != m.feature_schema.encoded_width() ||
            m.feature_schema.sd.size() != m.feature_schema.encoded_width())
            throw CorruptArtifact("feature schema statistics do not match its columns");

        const auto& meta = doc.at("train_meta");
        m.train_meta.seed = meta.at("seed").get<std::uint64_t>();
        for (const auto& [k, v] : meta.at("hyper").items()) m.train_meta.hyper[k] = v.get<double>();
        m.train_meta.data_hash = meta.at("data_hash").get<std::string>();
        m.train_meta.n_rows = meta.at("n_rows").get<std::size_t>();
        m.train_meta.residual_mean = meta.at("residual_mean").get<double>();
        m.train_meta.residual_sd = meta.at("residual_sd").get<double>();

        for (const auto& p : doc.at("loss_curve"))
            m.loss_curve.push_back({p.at("round").get<int>(), p.at("train").get<double>(), p.at("validation").get<double>()});

        m.state = state_from(m.kind, doc.at("state"));
        return m;
    } catch (const json::exception& e) {
        throw CorruptArtifact(std::string("malformed model artifact: ") + e.what());
    } catch (const ValidationError& e) {
        throw CorruptArtifact(std::string("malformed model artifact: ") + e.what());
    }
}

}  // namespace opiaid
