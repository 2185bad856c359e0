#include "opiaid/service.hpp"

#include "opiaid/baselines.hpp"
#include "opiaid/errors.hpp"
#include "opiaid/hash.hpp"
#include "opiaid/io.hpp"
#include "opiaid/recommendation.hpp"

namespace opiaid {

namespace {

Response json_response(int status, const Json& body) { return {status, body.dump()}; }

Response error_response(int status, std::string_view kind, const std::string& field, const std::string& message) {
    return json_response(status, Json{{"error", kind}, {"field", field}, {"message", message}});
}

Response no_model() { return error_response(409, "no_model", "", "no model snapshot is loaded"); }

Json parse_body(std::string_view body) {
    try {
        return Json::parse(body);
    } catch (const Json::parse_error& e) {
        throw ValidationError("body", std::string("malformed JSON: ") + e.what());
    }
}

void reject_unknown_keys(const Json& j, std::initializer_list<std::string_view> known) {
    if (!j.is_object()) throw ValidationError("body", "expected a JSON object");
    for (const auto& [key, _] : j.items()) {
        bool ok = false;
        for (auto k : known) ok = ok || k == key;
        if (!ok) throw ValidationError(key, "unknown field");
    }
}

Treatment treatment_from(const Json& body, const TreatmentRegistry& registry) {
    if (!body.contains("treatment")) return Treatment{0};
    const auto& t = body.at("treatment");
    if (!t.is_string()) throw ValidationError("treatment", "expected an opiate name");
    const auto id = registry.find(t.get<std::string>());
    if (!id) throw ValidationError("treatment", "opiate '" + t.get<std::string>() + "' is not in the model registry");
    return Treatment{*id};
}

UtilityWeights weights_from(const Json& body, const UtilityWeights& fallback) {
    if (!body.contains("weights")) return fallback;
    return weights_from_json(body.at("weights"), "weights");
}

// Shared request handling: validation errors map to 400, everything else the
// library raises on a well-formed body is also a client error.
template <class F>
Response guarded(F&& f) {
    try {
        return f();
    } catch (const ValidationError& e) {
        return error_response(400, "validation", e.field(), e.detail());
    } catch (const Error& e) {
        return error_response(400, "invalid_request", "", e.what());
    } catch (const std::exception& e) {
        return error_response(500, "internal", "", e.what());
    }
}

}  // namespace

std::shared_ptr<const ModelSnapshot> make_snapshot(std::string_view artifact_bytes,
                                                   std::optional<std::string_view> diagnostics_json,
                                                   const std::optional<DoseGrid>& grid_override,
                                                   std::string artifact_path) {
    auto snap = std::make_shared<ModelSnapshot>();
    snap->model = deserialize_cadr(artifact_bytes);
    snap->version_hash = sha256_hex(artifact_bytes);
    snap->artifact_path = std::move(artifact_path);
    if (grid_override) {
        const auto& g = snap->model.grid;
        if (grid_override->min_meq() < g.min_meq() || grid_override->max_meq() > g.max_meq())
            throw ValidationError("grid", "override must lie inside the artifact grid");
        snap->model.grid = *grid_override;
    }
    if (diagnostics_json) {
        Json j;
        try {
            j = Json::parse(*diagnostics_json);
        } catch (const Json::parse_error& e) {
            throw ValidationError("diagnostics", std::string("malformed JSON: ") + e.what());
        }
        snap->diagnostics = overlap_diagnostic_from_json(j);
    }
    return snap;
}

std::shared_ptr<const ModelSnapshot> load_snapshot(const std::filesystem::path& artifact,
                                                   const std::optional<std::filesystem::path>& diagnostics,
                                                   const std::optional<DoseGrid>& grid_override) {
    const std::string bytes = read_file(artifact);
    std::optional<std::string> diag;
    if (diagnostics) diag = read_file(*diagnostics);
    return make_snapshot(bytes, diag ? std::optional<std::string_view>(*diag) : std::nullopt, grid_override,
                         artifact.string());
}

Service::Service(ServiceConfig config) : config_(std::move(config)), started_(std::chrono::steady_clock::now()) {
    validate(config_.default_weights);
}

void Service::set_snapshot(std::shared_ptr<const ModelSnapshot> snapshot) {
    std::lock_guard lock(mutex_);
    snapshot_ = std::move(snapshot);
}

std::shared_ptr<const ModelSnapshot> Service::snapshot() const {
    std::lock_guard lock(mutex_);
    return snapshot_;
}

Response Service::recommend(std::string_view body) const {
    const auto snap = snapshot();
    if (!snap) return no_model();
    return guarded([&] {
        const Json req = parse_body(body);
        reject_unknown_keys(req, {"features", "weights", "treatment", "observed"});
        if (!req.contains("features")) throw ValidationError("features", "required");
        const CaseFeatures x = case_features_from_json(req.at("features"), "features");
        const UtilityWeights w = weights_from(req, config_.default_weights);
        const Treatment t = treatment_from(req, snap->model.registry);

        std::optional<double> rule_dose;
        if (req.contains("observed")) {
            const auto& o = req.at("observed");
            if (!o.is_object()) throw ValidationError("observed", "expected an object");
            for (const auto& [key, _] : o.items())
                if (key != "administered_dose_meq" && key != "pain_0_1h" && key != "orades")
                    throw ValidationError("observed." + key, "unknown field");
            if (!o.contains("administered_dose_meq")) throw ValidationError("observed.administered_dose_meq", "required");
            if (!o.contains("pain_0_1h")) throw ValidationError("observed.pain_0_1h", "required");
            const auto& dose = o.at("administered_dose_meq");
            if (!dose.is_number()) throw ValidationError("observed.administered_dose_meq", "expected a number");
            const auto& pain = o.at("pain_0_1h");
            if (!pain.is_number_integer()) throw ValidationError("observed.pain_0_1h", "expected an NRS integer 0..10");
            PainScore nrs = validate_pain(0);
            try {
                nrs = validate_pain(pain.get<int>());
            } catch (const ValidationError& e) {
                throw ValidationError("observed.pain_0_1h", e.detail());
            }
            const OradeRecord orades = o.contains("orades") ? orade_record_from_json(o.at("orades"), "observed.orades")
                                                            : OradeRecord{};
            try {
                rule_dose = rule_based_optimal_dose(DoseMeq{dose.get<double>()}, nrs, orades, RuleTable::defaults(),
                                                    snap->model.grid.max_meq(), snap->model.orade_weights)
                                .value;
            } catch (const ValidationError& e) {
                throw ValidationError("observed.administered_dose_meq", e.detail());
            }
        }

        const auto rec = recommend_dose(snap->model, x, t, w, snap->diagnostics ? &*snap->diagnostics : nullptr);
        Json out = to_json(rec);
        out["treatment"] = snap->model.registry.name(t.opiate_id);
        if (rule_dose) out["rule_based_dose_meq"] = *rule_dose;
        out["version_hash"] = snap->version_hash;
        return json_response(200, out);
    });
}

Response Service::curve(std::string_view body) const {
    const auto snap = snapshot();
    if (!snap) return no_model();
    return guarded([&] {
        const Json req = parse_body(body);
        reject_unknown_keys(req, {"features", "weights", "treatment"});
        if (!req.contains("features")) throw ValidationError("features", "required");
        const CaseFeatures x = case_features_from_json(req.at("features"), "features");
        const UtilityWeights w = weights_from(req, config_.default_weights);
        const Treatment t = treatment_from(req, snap->model.registry);
        Json out = to_json(cadr_curve(snap->model, x, t, w));
        out["treatment"] = snap->model.registry.name(t.opiate_id);
        out["version_hash"] = snap->version_hash;
        return json_response(200, out);
    });
}

Response Service::model_info() const {
    const auto snap = snapshot();
    if (!snap) return no_model();
    const auto& m = snap->model;
    Json warnings = Json::array();
    for (auto w : m.warnings) warnings.push_back(std::string(to_string(w)));
    Json learners = {{"pain", {{"kind", std::string(to_string(m.pain_model.kind))},
                               {"task", std::string(to_string(m.pain_model.task))}}},
                     {"orade", {{"kind", std::string(to_string(m.orade_model.kind))},
                                {"task", std::string(to_string(m.orade_model.task))}}}};
    if (m.rescue_model) learners["rescue"] = {{"kind", std::string(to_string(m.rescue_model->kind))},
                                              {"task", std::string(to_string(m.rescue_model->task))}};
    return json_response(200, Json{{"version_hash", snap->version_hash},
                                   {"artifact", snap->artifact_path},
                                   {"grid", to_json(m.grid)},
                                   {"registry", m.registry.names()},
                                   {"pain_timepoint", std::string(to_string(m.pain_timepoint))},
                                   {"learners", std::move(learners)},
                                   {"observed_dose_range", {m.observed_dose_min, m.observed_dose_max}},
                                   {"warnings", std::move(warnings)},
                                   {"diagnostics_loaded", snap->diagnostics.has_value()},
                                   {"default_weights", to_json(config_.default_weights)}});
}

Response Service::diagnostics() const {
    const auto snap = snapshot();
    if (!snap) return no_model();
    if (!snap->diagnostics)
        return error_response(404, "no_diagnostics", "", "the loaded snapshot carries no overlap diagnostics");
    Json out = to_json(*snap->diagnostics);
    out["version_hash"] = snap->version_hash;
    return json_response(200, out);
}

Response Service::health() const {
    const auto snap = snapshot();
    const double uptime =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started_).count();
    Json out = {{"status", "ok"}, {"uptime_s", uptime}, {"model_loaded", snap != nullptr}};
    if (snap) out["version_hash"] = snap->version_hash;
    return json_response(200, out);
}

Response Service::admin_load(std::string_view body) {
    return guarded([&] {
        const Json req = parse_body(body);
        reject_unknown_keys(req, {"model_artifact", "diagnostics"});
        if (!req.contains("model_artifact") || !req.at("model_artifact").is_string())
            throw ValidationError("model_artifact", "expected a path");
        std::optional<std::filesystem::path> diag;
        if (req.contains("diagnostics")) {
            if (!req.at("diagnostics").is_string()) throw ValidationError("diagnostics", "expected a path");
            diag = req.at("diagnostics").get<std::string>();
        }
        std::shared_ptr<const ModelSnapshot> snap;
        try {
            snap = load_snapshot(req.at("model_artifact").get<std::string>(), diag, config_.grid);
        } catch (const IoError& e) {
            throw ValidationError("model_artifact", e.what());
        } catch (const VersionMismatch& e) {
            throw ValidationError("model_artifact", e.what());
        } catch (const CorruptArtifact& e) {
            throw ValidationError("model_artifact", e.what());
        }
        set_snapshot(snap);
        return json_response(200, Json{{"loaded", true}, {"version_hash", snap->version_hash}});
    });
}

Response Service::handle(std::string_view method, std::string_view path, std::string_view body) {
    if (method == "POST" && path == "/v1/recommend") return recommend(body);
    if (method == "POST" && path == "/v1/curve") return curve(body);
    if (method == "POST" && path == "/v1/admin/load") return admin_load(body);
    if (method == "GET" && path == "/v1/model") return model_info();
    if (method == "GET" && path == "/v1/diagnostics") return diagnostics();
    if (method == "GET" && path == "/v1/health") return health();
    return error_response(404, "not_found", "", "no route " + std::string(method) + " " + std::string(path));
}

}  // namespace opiaid
