#include "opiaid/cadr.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <nlohmann/json.hpp>

#include "opiaid/errors.hpp"
#include "opiaid/rng.hpp"
#include "opiaid/recommendation.hpp"

namespace opiaid {

namespace {

using json = nlohmann::ordered_json;

constexpr int kNrsClasses = 11;

double clamp_nrs(double v) { return std::clamp(v, 0.0, 10.0); }

// Point prediction from a raw predict() row: regression value or the
// expectation over classes 0..C-1.
double point_value(const FittedModel& m, const Eigen::MatrixXd& raw, Eigen::Index row) {
    if (m.task == Task::regression) return raw(row, 0);
    double e = 0;
    for (Eigen::Index c = 0; c < raw.cols(); ++c) e += static_cast<double>(c) * raw(row, c);
    return e;
}

std::vector<double> column_values(const FittedModel& m, const Eigen::MatrixXd& raw) {
    std::vector<double> out(static_cast<std::size_t>(raw.rows()));
    for (Eigen::Index i = 0; i < raw.rows(); ++i) out[static_cast<std::size_t>(i)] = point_value(m, raw, i);
    return out;
}

void check_dose(const CadrModel& model, DoseMeq d) {
    if (!std::isfinite(d.value) || !model.grid.contains(d.value))
        throw ValidationError("dose", "outside the dose grid [" + std::to_string(model.grid.min_meq()) + ", " +
                                          std::to_string(model.grid.max_meq()) + "]");
}

FittedModel fit_endpoint(LearnerKind kind, Task task, const FeatureSchema& schema, const Eigen::MatrixXd& x,
                         Eigen::VectorXd y, Hyper hyper, std::uint64_t seed, bool bounded) {
    if (task == Task::classification) {
        for (Eigen::Index i = 0; i < y.size(); ++i) y(i) = std::clamp(std::round(y(i)), 0.0, 10.0);
        if (!hyper.contains("n_classes")) hyper["n_classes"] = kNrsClasses;
    } else if (bounded) {
        y = y.cwiseMax(0.0).cwiseMin(10.0);
    }
    return train(kind, task, schema, x, y, hyper, seed);
}

// Member predictions for one model, one column per member; nullopt for
// single models.
std::optional<Eigen::MatrixXd> members_of(const FittedModel& m, const Eigen::MatrixXd& x) {
    return predict_members(m, x);
}

}  // namespace

std::string_view to_string(CadrWarning w) {
    switch (w) {
        case CadrWarning::overlap_degenerate:
            return "overlap_degenerate";
    }
    return "unknown";
}

FeatureSchema cadr_feature_schema(const TreatmentRegistry& registry) {
    FeatureSchema s;
    s.columns = {
        {"treatment", ColumnKind::categorical, static_cast<int>(registry.size())},
        {"dose_meq", ColumnKind::continuous, 0},
        {"age", ColumnKind::continuous, 0},
        {"weight", ColumnKind::continuous, 0},
        {"sex", ColumnKind::categorical, 2},
        {"asa_class", ColumnKind::continuous, 0},
        {"surgery_duration", ColumnKind::continuous, 0},
        {"surgery_type", ColumnKind::categorical, kSurgeryTypeCount},
        {"chronic_opioid_use", ColumnKind::continuous, 0},
        {"comorbidity_score", ColumnKind::continuous, 0},
    };
    return s;
}

Eigen::RowVectorXd cadr_feature_row(const Treatment& t, DoseMeq d, const CaseFeatures& x) {
    Eigen::RowVectorXd r(10);
    r << static_cast<double>(t.opiate_id), d.value, static_cast<double>(x.age), x.weight,
        x.sex == Sex::male ? 1.0 : 0.0, static_cast<double>(x.asa_class), x.surgery_duration,
        static_cast<double>(x.surgery_type), x.chronic_opioid_use ? 1.0 : 0.0, x.comorbidity_score;
    return r;
}

CadrModel fit_cadr(std::span<const EncounterRecord> training, const DoseGrid& grid,
                   const TreatmentRegistry& registry, const CadrFitOptions& options) {
    if (training.empty()) throw ValidationError("training", "empty training split");
    const auto n = static_cast<Eigen::Index>(training.size());
    const FeatureSchema schema = cadr_feature_schema(registry);
    Eigen::MatrixXd x(n, static_cast<Eigen::Index>(schema.raw_width()));
    Eigen::VectorXd pain(n), orade(n), rescue(n);

    CadrModel model;
    model.grid = grid;
    model.registry = registry;
    model.pain_timepoint = options.pain_timepoint;
    model.orade_weights = options.orade_weights;
    model.observed_dose_min = training[0].administered_dose.value;
    model.observed_dose_max = training[0].administered_dose.value;

    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& r = training[static_cast<std::size_t>(i)];
        validate(r.treatment, registry);
        if (!grid.contains(r.administered_dose.value))
            throw ValidationError("training[" + std::to_string(i) + "].administered_dose", "outside the dose grid");
        x.row(i) = cadr_feature_row(r.treatment, r.administered_dose, r.features);
        pain(i) = pain_at(r, options.pain_timepoint);
        orade(i) = orade_severity(r.orades, options.orade_weights);
        rescue(i) = r.rescue_analgesia_meq;
        model.observed_dose_min = std::min(model.observed_dose_min, r.administered_dose.value);
        model.observed_dose_max = std::max(model.observed_dose_max, r.administered_dose.value);
    }
    if (model.observed_dose_max - model.observed_dose_min < 1e-9)
        model.warnings.push_back(CadrWarning::overlap_degenerate);

    model.pain_model = fit_endpoint(options.pain_kind, options.pain_task, schema, x, pain, options.pain_hyper,
                                    derive_seed(options.seed, 0), true);
    model.orade_model = fit_endpoint(options.orade_kind, options.orade_task, schema, x, orade, options.orade_hyper,
                                     derive_seed(options.seed, 1), true);
    if (options.fit_rescue)
        model.rescue_model = fit_endpoint(options.rescue_kind, Task::regression, schema, x, rescue,
                                          options.rescue_hyper, derive_seed(options.seed, 2), false);
    return model;
}

OutcomePrediction predict_outcomes(const CadrModel& model, const Treatment& t, DoseMeq d, const CaseFeatures& x) {
    validate(x);
    validate(t, model.registry);
    check_dose(model, d);
    const Eigen::MatrixXd row = cadr_feature_row(t, d, x);
    OutcomePrediction out;
    out.pain = clamp_nrs(point_value(model.pain_model, predict(model.pain_model, row), 0));
    out.orade = clamp_nrs(point_value(model.orade_model, predict(model.orade_model, row), 0));
    if (model.rescue_model) out.rescue = std::max(0.0, point_value(*model.rescue_model, predict(*model.rescue_model, row), 0));
    return out;
}

std::vector<OutcomePrediction> predict_outcome_members(const CadrModel& model, const Treatment& t, DoseMeq d,
                                                       const CaseFeatures& x) {
    validate(x);
    validate(t, model.registry);
    check_dose(model, d);
    const Eigen::MatrixXd row = cadr_feature_row(t, d, x);
    const auto pm = members_of(model.pain_model, row);
    const auto om = members_of(model.orade_model, row);
    if (!pm && !om) return {};
    // A non-ensemble endpoint contributes its point prediction to every member.
    const Eigen::Index members = pm ? pm->cols() : om->cols();
    if (pm && om && pm->cols() != om->cols()) throw DimensionMismatch("pain and ORADE ensembles differ in size");
    const double pain_point = clamp_nrs(point_value(model.pain_model, predict(model.pain_model, row), 0));
    const double orade_point = clamp_nrs(point_value(model.orade_model, predict(model.orade_model, row), 0));
    double rescue = 0;
    if (model.rescue_model) rescue = std::max(0.0, point_value(*model.rescue_model, predict(*model.rescue_model, row), 0));
    std::vector<OutcomePrediction> out;
    for (Eigen::Index k = 0; k < members; ++k)
        out.push_back({pm ? clamp_nrs((*pm)(0, k)) : pain_point, om ? clamp_nrs((*om)(0, k)) : orade_point, rescue});
    return out;
}

std::vector<CadrCurve> cadr_curves(const CadrModel& model, std::span<const CaseFeatures> cases, const Treatment& t,
                                   const UtilityWeights& w) {
    validate(w);
    validate(t, model.registry);
    if (w.w_rescue > 0 && !model.rescue_model)
        throw ValidationError("weights.w_rescue", "model has no rescue-analgesia outcome");
    for (const auto& x : cases) validate(x);

    const std::size_t g = model.grid.size();
    const auto rows = static_cast<Eigen::Index>(cases.size() * g);
    Eigen::MatrixXd features(rows, 10);
    for (std::size_t c = 0; c < cases.size(); ++c)
        for (std::size_t i = 0; i < g; ++i)
            features.row(static_cast<Eigen::Index>(c * g + i)) = cadr_feature_row(t, DoseMeq{model.grid.at(i)}, cases[c]);

    const auto pain = column_values(model.pain_model, predict(model.pain_model, features));
    const auto orade = column_values(model.orade_model, predict(model.orade_model, features));
    std::vector<double> rescue;
    if (model.rescue_model) rescue = column_values(*model.rescue_model, predict(*model.rescue_model, features));
    const auto pain_members = members_of(model.pain_model, features);
    const auto orade_members = members_of(model.orade_model, features);
    if (pain_members && orade_members && pain_members->cols() != orade_members->cols())
        throw DimensionMismatch("pain and ORADE ensembles differ in size");

    std::vector<CadrCurve> out(cases.size());
    for (std::size_t c = 0; c < cases.size(); ++c) {
        CadrCurve& curve = out[c];
        curve.weights = w;
        curve.doses = model.grid.points();
        for (std::size_t i = 0; i < g; ++i) {
            const std::size_t k = c * g + i;
            const double p = clamp_nrs(pain[k]);
            const double s = clamp_nrs(orade[k]);
            const double r = model.rescue_model ? std::max(0.0, rescue[k]) : 0.0;
            curve.pain_hat.push_back(p);
            curve.orade_hat.push_back(s);
            curve.rescue_hat.push_back(r);
            curve.utility.push_back(utility(p, s, w, r));
            if (pain_members || orade_members) {
                const Eigen::Index members = pain_members ? pain_members->cols() : orade_members->cols();
                const auto ki = static_cast<Eigen::Index>(k);
                double sum = 0, sq = 0;
                for (Eigen::Index m = 0; m < members; ++m) {
                    const double pm = pain_members ? clamp_nrs((*pain_members)(ki, m)) : p;
                    const double sm = orade_members ? clamp_nrs((*orade_members)(ki, m)) : s;
                    const double u = utility(pm, sm, w, r);
                    sum += u;
                    sq += u * u;
                }
                const double mean = sum / static_cast<double>(members);
                curve.spread.push_back(std::sqrt(std::max(0.0, sq / static_cast<double>(members) - mean * mean)));
            }
        }
    }
    return out;
}

CadrCurve cadr_curve(const CadrModel& model, const CaseFeatures& x, const Treatment& t, const UtilityWeights& w) {
    return cadr_curves(model, std::span<const CaseFeatures>(&x, 1), t, w).front();
}

std::string curve_csv(const CadrCurve& curve) {
    std::ostringstream os;
    os.precision(17);
    os << "dose,pain_hat,orade_hat,utility,spread\n";
    for (std::size_t i = 0; i < curve.doses.size(); ++i) {
        os << curve.doses[i] << ',' << curve.pain_hat[i] << ',' << curve.orade_hat[i] << ',' << curve.utility[i] << ',';
        if (i < curve.spread.size()) os << curve.spread[i];
        os << '\n';
    }
    return os.str();
}

// ---- artifacts --------------------------------------------------------------

namespace {

json orade_weights_json(const OradeWeights& w) {
    return {{"nausea", w.nausea},
            {"vomiting", w.vomiting},
            {"sedation", w.sedation},
            {"dizziness", w.dizziness},
            {"itching", w.itching},
            {"urinary_retention", w.urinary_retention},
            {"confusion", w.confusion},
            {"hallucinations", w.hallucinations},
            {"respiratory_depression", w.respiratory_depression},
            {"rescue_naloxone", w.rescue_naloxone},
            {"rescue_antiemetic", w.rescue_antiemetic}};
}

OradeWeights orade_weights_from(const json& j) {
    OradeWeights w;
    w.nausea = j.at("nausea").get<double>();
    w.vomiting = j.at("vomiting").get<double>();
    w.sedation = j.at("sedation").get<double>();
    w.dizziness = j.at("dizziness").get<double>();
    w.itching = j.at("itching").get<double>();
    w.urinary_retention = j.at("urinary_retention").get<double>();
    w.confusion = j.at("confusion").get<double>();
    w.hallucinations = j.at("hallucinations").get<double>();
    w.respiratory_depression = j.at("respiratory_depression").get<double>();
    w.rescue_naloxone = j.at("rescue_naloxone").get<double>();
    w.rescue_antiemetic = j.at("rescue_antiemetic").get<double>();
    return w;
}

}  // namespace

std::string serialize_cadr(const CadrModel& m) {
    json warnings = json::array();
    for (auto w : m.warnings) warnings.push_back(std::string(to_string(w)));
    json doc{
        {"schema_version", kCadrSchemaVersion},
        {"kind", "cadr"},
        {"grid", {{"min_meq", m.grid.min_meq()}, {"max_meq", m.grid.max_meq()}, {"step_meq", m.grid.step_meq()}}},
        {"registry", m.registry.names()},
        {"pain_timepoint", std::string(to_string(m.pain_timepoint))},
        {"orade_weights", orade_weights_json(m.orade_weights)},
        {"observed_dose", {{"min", m.observed_dose_min}, {"max", m.observed_dose_max}}},
        {"warnings", std::move(warnings)},
        {"pain_model", json::parse(serialize_model(m.pain_model))},
        {"orade_model", json::parse(serialize_model(m.orade_model))},
        {"rescue_model", m.rescue_model ? json::parse(serialize_model(*m.rescue_model)) : json(nullptr)},
    };
    return doc.dump();
}

CadrModel deserialize_cadr(std::string_view bytes) {
    json doc;
    try {
        doc = json::parse(bytes);
    } catch (const json::exception& e) {
        throw CorruptArtifact(std::string("CADR artifact is not valid JSON: ") + e.what());
    }
    try {
        const int version = doc.at("schema_version").get<int>();
        if (version > kCadrSchemaVersion)
            throw VersionMismatch("CADR schema version " + std::to_string(version) + " is newer than supported " +
                                  std::to_string(kCadrSchemaVersion));
        if (version != kCadrSchemaVersion || doc.at("kind").get<std::string>() != "cadr")
            throw CorruptArtifact("not a CADR artifact");
        CadrModel m;
        const auto& g = doc.at("grid");
        m.grid = DoseGrid(g.at("min_meq").get<double>(), g.at("max_meq").get<double>(), g.at("step_meq").get<double>());
        m.registry = TreatmentRegistry(doc.at("registry").get<std::vector<std::string>>());
        m.pain_timepoint = parse_pain_timepoint(doc.at("pain_timepoint").get<std::string>());
        m.orade_weights = orade_weights_from(doc.at("orade_weights"));
        m.observed_dose_min = doc.at("observed_dose").at("min").get<double>();
        m.observed_dose_max = doc.at("observed_dose").at("max").get<double>();
        for (const auto& w : doc.at("warnings")) {
            if (w.get<std::string>() != "overlap_degenerate") throw CorruptArtifact("unknown CADR warning");
            m.warnings.push_back(CadrWarning::overlap_degenerate);
        }
        m.pain_model = deserialize_model(doc.at("pain_model").dump());
        m.orade_model = deserialize_model(doc.at("orade_model").dump());
        if (!doc.at("rescue_model").is_null()) m.rescue_model = deserialize_model(doc.at("rescue_model").dump());
        const FeatureSchema expected_columns = cadr_feature_schema(m.registry);
        for (const FittedModel* fm : {&m.pain_model, &m.orade_model})
            if (fm->feature_schema.columns != expected_columns.columns)
                throw CorruptArtifact("outcome model inputs do not match the CADR layout");
        return m;
    } catch (const json::exception& e) {
        throw CorruptArtifact(std::string("malformed CADR artifact: ") + e.what());
    } catch (const ValidationError& e) {
        throw CorruptArtifact(std::string("malformed CADR artifact: ") + e.what());
    }
}

}  // namespace opiaid
