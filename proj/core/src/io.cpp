#include "opiaid/io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <system_error>

#include <unistd.h>

#include "opiaid/errors.hpp"

namespace opiaid {

namespace {

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

// Rethrows a domain validation error under `path`.
template <class F>
auto under(const std::string& path, F&& f) {
    try {
        return f();
    } catch (const ValidationError& e) {
        throw ValidationError(join(path, e.field()), e.detail());
    }
}

void require_object(const Json& j, const std::string& path) {
    if (!j.is_object()) throw ValidationError(path, "expected an object");
}

void reject_unknown(const Json& j, const std::string& path, std::initializer_list<std::string_view> known) {
    for (const auto& [key, _] : j.items()) {
        bool ok = false;
        for (auto k : known) ok = ok || k == key;
        if (!ok) throw ValidationError(join(path, key), "unknown field");
    }
}

const Json& required(const Json& j, const std::string& path, const char* key) {
    const auto it = j.find(key);
    if (it == j.end()) throw ValidationError(join(path, key), "required");
    return *it;
}

double number_at(const Json& v, const std::string& field) {
    if (!v.is_number()) throw ValidationError(field, "expected a number");
    const double d = v.get<double>();
    if (!std::isfinite(d)) throw ValidationError(field, "must be finite");
    return d;
}

int integer_at(const Json& v, const std::string& field) {
    if (v.is_number_integer()) return v.get<int>();
    if (v.is_number_float()) {
        const double d = v.get<double>();
        if (std::isfinite(d) && d == std::floor(d) && std::abs(d) < 1e9) return static_cast<int>(d);
    }
    throw ValidationError(field, "expected an integer");
}

bool bool_at(const Json& v, const std::string& field) {
    if (!v.is_boolean()) throw ValidationError(field, "expected true or false");
    return v.get<bool>();
}

std::string string_at(const Json& v, const std::string& field) {
    if (!v.is_string()) throw ValidationError(field, "expected a string");
    return v.get<std::string>();
}

// Built documents hold small integers as signed; parsed ones as unsigned.
std::uint64_t seed_at(const Json& v, const std::string& field) {
    if (v.is_number_unsigned()) return v.get<std::uint64_t>();
    if (v.is_number_integer() && v.get<std::int64_t>() >= 0) return static_cast<std::uint64_t>(v.get<std::int64_t>());
    throw ValidationError(field, "expected a non-negative integer");
}

}  // namespace

std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

// ---- case features, weights, ORADEs ----------------------------------------------

CaseFeatures case_features_from_json(const Json& j, const std::string& path) {
    require_object(j, path);
    reject_unknown(j, path,
                   {"age", "weight", "sex", "asa_class", "surgery_duration", "surgery_type", "chronic_opioid_use",
                    "comorbidity_score"});
    CaseFeatures x;
    x.age = integer_at(required(j, path, "age"), join(path, "age"));
    x.weight = number_at(required(j, path, "weight"), join(path, "weight"));
    x.sex = under(path, [&] { return parse_sex(string_at(required(j, path, "sex"), join(path, "sex"))); });
    x.asa_class = integer_at(required(j, path, "asa_class"), join(path, "asa_class"));
    x.surgery_duration = number_at(required(j, path, "surgery_duration"), join(path, "surgery_duration"));
    x.surgery_type = integer_at(required(j, path, "surgery_type"), join(path, "surgery_type"));
    x.chronic_opioid_use = bool_at(required(j, path, "chronic_opioid_use"), join(path, "chronic_opioid_use"));
    x.comorbidity_score = number_at(required(j, path, "comorbidity_score"), join(path, "comorbidity_score"));
    under(path, [&] {
        validate(x);
        return 0;
    });
    return x;
}

Json to_json(const CaseFeatures& x) {
    return {{"age", x.age},
            {"weight", x.weight},
            {"sex", std::string(to_string(x.sex))},
            {"asa_class", x.asa_class},
            {"surgery_duration", x.surgery_duration},
            {"surgery_type", x.surgery_type},
            {"chronic_opioid_use", x.chronic_opioid_use},
            {"comorbidity_score", x.comorbidity_score}};
}

UtilityWeights weights_from_json(const Json& j, const std::string& path) {
    UtilityWeights w;
    if (j.is_null()) return w;
    require_object(j, path);
    reject_unknown(j, path, {"w_pain", "w_orades", "w_rescue"});
    if (j.contains("w_pain")) w.w_pain = number_at(j.at("w_pain"), join(path, "w_pain"));
    if (j.contains("w_orades")) w.w_orades = number_at(j.at("w_orades"), join(path, "w_orades"));
    if (j.contains("w_rescue")) w.w_rescue = number_at(j.at("w_rescue"), join(path, "w_rescue"));
    // validate() already names fields as "weights.*".
    try {
        validate(w);
    } catch (const ValidationError& e) {
        std::string field = e.field();
        if (field.rfind("weights", 0) == 0) field = path + field.substr(7);
        throw ValidationError(field, e.detail());
    }
    return w;
}

Json to_json(const UtilityWeights& w) {
    return {{"w_pain", w.w_pain}, {"w_orades", w.w_orades}, {"w_rescue", w.w_rescue}};
}

UtilityWeights parse_weights(std::string_view text) {
    std::vector<double> parts;
    std::size_t start = 0;
    while (start <= text.size()) {
        const std::size_t comma = std::min(text.find(',', start), text.size());
        const std::string_view piece = text.substr(start, comma - start);
        double v = 0;
        const auto res = std::from_chars(piece.data(), piece.data() + piece.size(), v);
        if (piece.empty() || res.ec != std::errc() || res.ptr != piece.data() + piece.size())
            throw ValidationError("weights", "expected w_pain,w_orades[,w_rescue], got '" + std::string(text) + "'");
        parts.push_back(v);
        start = comma + 1;
    }
    if (parts.size() < 2 || parts.size() > 3)
        throw ValidationError("weights", "expected two or three comma-separated numbers");
    UtilityWeights w{parts[0], parts[1], parts.size() == 3 ? parts[2] : 0.0};
    validate(w);
    return w;
}

OradeRecord orade_record_from_json(const Json& j, const std::string& path) {
    OradeRecord r;
    if (j.is_null()) return r;
    require_object(j, path);
    reject_unknown(j, path,
                   {"nausea", "vomiting", "sedation", "dizziness", "itching", "urinary_retention", "confusion",
                    "hallucinations", "respiratory_depression", "rescue_naloxone", "rescue_antiemetic",
                    "impact_score"});
    const auto flag = [&](const char* key, bool& out) {
        if (j.contains(key)) out = bool_at(j.at(key), join(path, key));
    };
    // parse_* name their field "orades.*"; re-root it at `path`.
    try {
        if (j.contains("nausea")) r.nausea = parse_nausea(string_at(j.at("nausea"), "orades.nausea"));
        if (j.contains("sedation")) r.sedation = parse_sedation(string_at(j.at("sedation"), "orades.sedation"));
    } catch (const ValidationError& e) {
        throw ValidationError(path + e.field().substr(6), e.detail());
    }
    flag("vomiting", r.vomiting);
    flag("dizziness", r.dizziness);
    flag("itching", r.itching);
    flag("urinary_retention", r.urinary_retention);
    flag("confusion", r.confusion);
    flag("hallucinations", r.hallucinations);
    flag("respiratory_depression", r.respiratory_depression);
    flag("rescue_naloxone", r.rescue_naloxone);
    flag("rescue_antiemetic", r.rescue_antiemetic);
    if (j.contains("impact_score") && !j.at("impact_score").is_null())
        r.impact_score = integer_at(j.at("impact_score"), join(path, "impact_score"));
    // validate() names fields "orades.*".
    try {
        validate(r);
    } catch (const ValidationError& e) {
        std::string field = e.field();
        if (field.rfind("orades", 0) == 0) field = path + field.substr(6);
        throw ValidationError(field, e.detail());
    }
    return r;
}

Json to_json(const OradeRecord& r) {
    return {{"nausea", std::string(to_string(r.nausea))},
            {"vomiting", r.vomiting},
            {"sedation", std::string(to_string(r.sedation))},
            {"dizziness", r.dizziness},
            {"itching", r.itching},
            {"urinary_retention", r.urinary_retention},
            {"confusion", r.confusion},
            {"hallucinations", r.hallucinations},
            {"respiratory_depression", r.respiratory_depression},
            {"rescue_naloxone", r.rescue_naloxone},
            {"rescue_antiemetic", r.rescue_antiemetic},
            {"impact_score", r.impact_score ? Json(*r.impact_score) : Json(nullptr)}};
}

// ---- results ------------------------------------------------------------------

Json to_json(const Recommendation& r) {
    Json warnings = Json::array();
    for (auto w : r.warnings) warnings.push_back(std::string(to_string(w)));
    return {{"dose_meq", r.dose.value},
            {"grid_index", r.grid_index},
            {"expected_utility", r.expected_utility},
            {"pain_at_dose", r.pain_at_dose},
            {"orade_at_dose", r.orade_at_dose},
            {"weights", to_json(r.weights)},
            {"warnings", std::move(warnings)}};
}

Json to_json(const CadrCurve& c) {
    return {{"doses", c.doses},
            {"pain_hat", c.pain_hat},
            {"orade_hat", c.orade_hat},
            {"rescue_hat", c.rescue_hat},
            {"utility", c.utility},
            {"spread", c.spread.empty() ? Json(nullptr) : Json(c.spread)},
            {"weights", to_json(c.weights)}};
}

Json to_json(const OverlapDiagnostic& d) {
    Json cells = Json::array();
    for (int s = 0; s < d.n_strata; ++s)
        for (int b = 0; b < d.n_dose_bins; ++b)
            cells.push_back(Json{{"stratum", s}, {"dose_bin", b}, {"count", d.count(s, b)}});
    Json violations = Json::array();
    for (const auto& v : d.violations)
        violations.push_back(Json{{"stratum", v.stratum}, {"dose_bin", v.dose_bin}, {"count", v.count}});
    const double width = (d.dose_max - d.dose_min) / d.n_dose_bins;
    Json bins = Json::array();
    for (int b = 0; b < d.n_dose_bins; ++b)
        bins.push_back(Json::array({d.dose_min + b * width, b + 1 == d.n_dose_bins ? d.dose_max : d.dose_min + (b + 1) * width}));
    return {{"n_strata", d.n_strata},
            {"n_dose_bins", d.n_dose_bins},
            {"min_count", d.min_count},
            {"dose_range", {d.dose_min, d.dose_max}},
            {"dose_bins", std::move(bins)},
            {"severity_cutpoints", d.cutpoints},
            {"cells", std::move(cells)},
            {"violations", std::move(violations)}};
}

OverlapDiagnostic overlap_diagnostic_from_json(const Json& j) {
    require_object(j, "diagnostics");
    OverlapDiagnostic d;
    d.n_strata = integer_at(required(j, "diagnostics", "n_strata"), "diagnostics.n_strata");
    d.n_dose_bins = integer_at(required(j, "diagnostics", "n_dose_bins"), "diagnostics.n_dose_bins");
    if (d.n_strata < 1 || d.n_dose_bins < 1) throw ValidationError("diagnostics", "empty table");
    d.min_count = static_cast<std::size_t>(integer_at(required(j, "diagnostics", "min_count"), "diagnostics.min_count"));
    const auto& range = required(j, "diagnostics", "dose_range");
    if (!range.is_array() || range.size() != 2) throw ValidationError("diagnostics.dose_range", "expected [min, max]");
    d.dose_min = number_at(range[0], "diagnostics.dose_range[0]");
    d.dose_max = number_at(range[1], "diagnostics.dose_range[1]");
    const auto& cuts = required(j, "diagnostics", "severity_cutpoints");
    if (!cuts.is_array()) throw ValidationError("diagnostics.severity_cutpoints", "expected an array");
    for (const auto& c : cuts) d.cutpoints.push_back(number_at(c, "diagnostics.severity_cutpoints"));
    d.counts.assign(static_cast<std::size_t>(d.n_strata * d.n_dose_bins), 0);
    for (const auto& c : required(j, "diagnostics", "cells")) {
        const int s = integer_at(required(c, "diagnostics.cells", "stratum"), "diagnostics.cells.stratum");
        const int b = integer_at(required(c, "diagnostics.cells", "dose_bin"), "diagnostics.cells.dose_bin");
        if (s < 0 || s >= d.n_strata || b < 0 || b >= d.n_dose_bins)
            throw ValidationError("diagnostics.cells", "cell outside the table");
        d.counts[static_cast<std::size_t>(s * d.n_dose_bins + b)] =
            static_cast<std::size_t>(integer_at(required(c, "diagnostics.cells", "count"), "diagnostics.cells.count"));
    }
    for (int s = 0; s < d.n_strata; ++s)
        for (int b = 0; b < d.n_dose_bins; ++b)
            if (d.violated(s, b)) d.violations.push_back({s, b, d.count(s, b)});
    return d;
}

Json to_json(const OutcomeMetrics& m) {
    return {{"pain_rmse", m.pain_rmse},
            {"orade_rmse", m.orade_rmse},
            {"pain_accuracy", m.pain_accuracy},
            {"pain_auc", m.pain_auc ? Json(*m.pain_auc) : Json(nullptr)}};
}

Json to_json(const MethodComparison& c) {
    Json ranked = Json::array();
    for (const auto& r : c.ranked)
        ranked.push_back(Json{{"rank", r.rank},
                              {"method", r.method},
                              {"n_cases", r.n_cases},
                              {"regret", r.regret},
                              {"dose_mae", r.dose_mae},
                              {"metrics", r.metrics ? to_json(*r.metrics) : Json(nullptr)},
                              {"overfit", r.overfit}});
    return {{"ranked", std::move(ranked)}, {"carried_forward", {c.carried_forward[0], c.carried_forward[1]}}};
}

namespace {

Json association_json(const Association& a) {
    const auto opt = [](const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); };
    return {{"pearson_r", opt(a.pearson)},
            {"spearman_rho", opt(a.spearman)},
            {"slope", opt(a.slope)},
            {"degenerate", a.degenerate}};
}

}  // namespace

Json to_json(const ProxyReport& r) {
    return {{"n", r.n}, {"pacu_los", association_json(r.los)}, {"ambulation_cas", association_json(r.cas)}};
}

Json to_json(const SplitSpec& s) {
    return {{"train_frac", s.train_frac},
            {"test_frac", s.test_frac},
            {"retention_frac", s.retention_frac},
            {"seed", s.seed}};
}

SplitSpec split_spec_from_json(const Json& j) {
    const std::string path = "split";
    require_object(j, path);
    reject_unknown(j, path, {"train_frac", "test_frac", "retention_frac", "seed"});
    SplitSpec s;
    if (j.contains("train_frac")) s.train_frac = number_at(j.at("train_frac"), "split.train_frac");
    if (j.contains("test_frac")) s.test_frac = number_at(j.at("test_frac"), "split.test_frac");
    if (j.contains("retention_frac")) s.retention_frac = number_at(j.at("retention_frac"), "split.retention_frac");
    if (j.contains("seed")) {
        s.seed = seed_at(j.at("seed"), "split.seed");
    }
    validate(s);
    return s;
}

Json to_json(const DoseGrid& g) {
    return {{"min_meq", g.min_meq()}, {"max_meq", g.max_meq()}, {"step_meq", g.step_meq()}, {"size", g.size()}};
}

DoseGrid dose_grid_from_json(const Json& j) {
    require_object(j, "grid");
    return DoseGrid(number_at(required(j, "grid", "min_meq"), "grid.min_meq"),
                    number_at(required(j, "grid", "max_meq"), "grid.max_meq"),
                    number_at(required(j, "grid", "step_meq"), "grid.step_meq"));
}

DoseGrid parse_grid(std::string_view text) {
    double v[3];
    std::size_t start = 0;
    for (int k = 0; k < 3; ++k) {
        const std::size_t comma = k < 2 ? text.find(',', start) : text.size();
        if (comma == std::string_view::npos) throw ValidationError("grid", "expected min,max,step");
        const std::string_view piece = text.substr(start, comma - start);
        const auto res = std::from_chars(piece.data(), piece.data() + piece.size(), v[k]);
        if (piece.empty() || res.ec != std::errc() || res.ptr != piece.data() + piece.size())
            throw ValidationError("grid", "expected min,max,step, got '" + std::string(text) + "'");
        start = comma + 1;
    }
    return DoseGrid(v[0], v[1], v[2]);
}

// ---- ground truth -------------------------------------------------------------

namespace {

template <std::size_t N>
Json array_json(const std::array<double, N>& a) {
    return Json(std::vector<double>(a.begin(), a.end()));
}

template <std::size_t N>
void read_array(const Json& j, const std::string& field, std::array<double, N>& out) {
    if (!j.is_array() || j.size() != N) throw ValidationError(field, "expected " + std::to_string(N) + " numbers");
    for (std::size_t i = 0; i < N; ++i) out[i] = number_at(j[i], field + "[" + std::to_string(i) + "]");
}

Json affine_json(const AffineParam& p) {
    return {{"intercept", p.intercept},
            {"coef", array_json(p.coef)},
            {"type_offset", array_json(p.type_offset)},
            {"lo", p.lo},
            {"hi", p.hi}};
}

void read_affine(const Json& j, const std::string& path, AffineParam& p) {
    require_object(j, path);
    reject_unknown(j, path, {"intercept", "coef", "type_offset", "lo", "hi"});
    if (j.contains("intercept")) p.intercept = number_at(j.at("intercept"), join(path, "intercept"));
    if (j.contains("coef")) read_array(j.at("coef"), join(path, "coef"), p.coef);
    if (j.contains("type_offset")) read_array(j.at("type_offset"), join(path, "type_offset"), p.type_offset);
    if (j.contains("lo")) p.lo = number_at(j.at("lo"), join(path, "lo"));
    if (j.contains("hi")) p.hi = number_at(j.at("hi"), join(path, "hi"));
}

// Reads the numeric keys listed in `fields` into the matching members.
void read_numbers(const Json& j, const std::string& path,
                  std::initializer_list<std::pair<const char*, double*>> fields) {
    for (auto [key, out] : fields)
        if (j.contains(key)) *out = number_at(j.at(key), join(path, key));
}

}  // namespace

Json to_json(const ScmGroundTruth& gt) {
    const auto& f = gt.features;
    const auto& d = gt.dose_policy;
    const auto& v = gt.positivity;
    const auto& w = gt.orade_weights;
    return {
        {"version", gt.version},
        {"seed", gt.seed},
        {"dose_max", gt.dose_max},
        {"features",
         {{"age_mean", f.age_mean},
          {"age_sd", f.age_sd},
          {"age_max", f.age_max},
          {"weight_mean", f.weight_mean},
          {"weight_sd", f.weight_sd},
          {"weight_min", f.weight_min},
          {"weight_max", f.weight_max},
          {"p_male", f.p_male},
          {"asa_probs", array_json(f.asa_probs)},
          {"duration_log_mean", f.duration_log_mean},
          {"duration_log_sd", f.duration_log_sd},
          {"duration_min", f.duration_min},
          {"duration_max", f.duration_max},
          {"p_chronic", f.p_chronic},
          {"comorbidity_mean", f.comorbidity_mean},
          {"surgery_type_probs", array_json(f.surgery_type_probs)}}},
        {"dose_policy",
         {{"intercept", d.intercept},
          {"coef", array_json(d.coef)},
          {"type_offset", array_json(d.type_offset)},
          {"noise", d.noise == NoiseKind::normal ? "normal" : "uniform"},
          {"noise_scale", d.noise_scale}}},
        {"pain_baseline", affine_json(gt.pain_baseline)},
        {"pain_ed50", affine_json(gt.pain_ed50)},
        {"orade_ceiling", affine_json(gt.orade_ceiling)},
        {"orade_od50", affine_json(gt.orade_od50)},
        {"pain_noise_sd", gt.pain_noise_sd},
        {"orade_noise_sd", gt.orade_noise_sd},
        {"los",
         {{"intercept", gt.los.intercept},
          {"pain_coef", gt.los.pain_coef},
          {"severity_coef", gt.los.severity_coef},
          {"noise_sd", gt.los.noise_sd}}},
        {"rescue_kappa", gt.rescue_kappa},
        {"rescue_noise_sd", gt.rescue_noise_sd},
        {"cas_noise_sd", gt.cas_noise_sd},
        {"orade_weights",
         {{"nausea", w.nausea},
          {"vomiting", w.vomiting},
          {"sedation", w.sedation},
          {"dizziness", w.dizziness},
          {"itching", w.itching},
          {"urinary_retention", w.urinary_retention},
          {"confusion", w.confusion},
          {"hallucinations", w.hallucinations},
          {"respiratory_depression", w.respiratory_depression},
          {"rescue_naloxone", w.rescue_naloxone},
          {"rescue_antiemetic", w.rescue_antiemetic}}},
        {"positivity",
         {{"enabled", v.enabled},
          {"n_strata", v.n_strata},
          {"stratum", v.stratum},
          {"dose_lo", v.dose_lo},
          {"dose_hi", v.dose_hi}}},
    };
}

ScmGroundTruth scm_from_json(const Json& j) {
    const std::string root;
    require_object(j, "scm");
    reject_unknown(j, root,
                   {"preset", "version", "seed", "dose_max", "features", "dose_policy", "pain_baseline", "pain_ed50",
                    "orade_ceiling", "orade_od50", "pain_noise_sd", "orade_noise_sd", "los", "rescue_kappa",
                    "rescue_noise_sd", "cas_noise_sd", "orade_weights", "positivity"});
    ScmGroundTruth gt;
    if (j.contains("preset")) {
        const auto preset = string_at(j.at("preset"), "preset");
        if (preset == "noiseless")
            gt = ScmGroundTruth::noiseless();
        else if (preset != "default")
            throw ValidationError("preset", "expected default|noiseless, got '" + preset + "'");
    }
    if (j.contains("version")) gt.version = string_at(j.at("version"), "version");
    if (j.contains("seed")) {
        gt.seed = seed_at(j.at("seed"), "seed");
    }
    read_numbers(j, root,
                 {{"dose_max", &gt.dose_max},
                  {"pain_noise_sd", &gt.pain_noise_sd},
                  {"orade_noise_sd", &gt.orade_noise_sd},
                  {"rescue_kappa", &gt.rescue_kappa},
                  {"rescue_noise_sd", &gt.rescue_noise_sd},
                  {"cas_noise_sd", &gt.cas_noise_sd}});
    if (j.contains("features")) {
        const auto& f = j.at("features");
        auto& o = gt.features;
        require_object(f, "features");
        reject_unknown(f, "features",
                       {"age_mean", "age_sd", "age_max", "weight_mean", "weight_sd", "weight_min", "weight_max",
                        "p_male", "asa_probs", "duration_log_mean", "duration_log_sd", "duration_min",
                        "duration_max", "p_chronic", "comorbidity_mean", "surgery_type_probs"});
        read_numbers(f, "features",
                     {{"age_mean", &o.age_mean},
                      {"age_sd", &o.age_sd},
                      {"weight_mean", &o.weight_mean},
                      {"weight_sd", &o.weight_sd},
                      {"weight_min", &o.weight_min},
                      {"weight_max", &o.weight_max},
                      {"p_male", &o.p_male},
                      {"duration_log_mean", &o.duration_log_mean},
                      {"duration_log_sd", &o.duration_log_sd},
                      {"duration_min", &o.duration_min},
                      {"duration_max", &o.duration_max},
                      {"p_chronic", &o.p_chronic},
                      {"comorbidity_mean", &o.comorbidity_mean}});
        if (f.contains("age_max")) o.age_max = integer_at(f.at("age_max"), "features.age_max");
        if (f.contains("asa_probs")) read_array(f.at("asa_probs"), "features.asa_probs", o.asa_probs);
        if (f.contains("surgery_type_probs"))
            read_array(f.at("surgery_type_probs"), "features.surgery_type_probs", o.surgery_type_probs);
    }
    if (j.contains("dose_policy")) {
        const auto& d = j.at("dose_policy");
        auto& o = gt.dose_policy;
        require_object(d, "dose_policy");
        reject_unknown(d, "dose_policy", {"intercept", "coef", "type_offset", "noise", "noise_scale"});
        read_numbers(d, "dose_policy", {{"intercept", &o.intercept}, {"noise_scale", &o.noise_scale}});
        if (d.contains("coef")) read_array(d.at("coef"), "dose_policy.coef", o.coef);
        if (d.contains("type_offset")) read_array(d.at("type_offset"), "dose_policy.type_offset", o.type_offset);
        if (d.contains("noise")) {
            const auto kind = string_at(d.at("noise"), "dose_policy.noise");
            if (kind == "normal")
                o.noise = NoiseKind::normal;
            else if (kind == "uniform")
                o.noise = NoiseKind::uniform;
            else
                throw ValidationError("dose_policy.noise", "expected normal|uniform, got '" + kind + "'");
        }
    }
    if (j.contains("pain_baseline")) read_affine(j.at("pain_baseline"), "pain_baseline", gt.pain_baseline);
    if (j.contains("pain_ed50")) read_affine(j.at("pain_ed50"), "pain_ed50", gt.pain_ed50);
    if (j.contains("orade_ceiling")) read_affine(j.at("orade_ceiling"), "orade_ceiling", gt.orade_ceiling);
    if (j.contains("orade_od50")) read_affine(j.at("orade_od50"), "orade_od50", gt.orade_od50);
    if (j.contains("los")) {
        const auto& l = j.at("los");
        require_object(l, "los");
        reject_unknown(l, "los", {"intercept", "pain_coef", "severity_coef", "noise_sd"});
        read_numbers(l, "los",
                     {{"intercept", &gt.los.intercept},
                      {"pain_coef", &gt.los.pain_coef},
                      {"severity_coef", &gt.los.severity_coef},
                      {"noise_sd", &gt.los.noise_sd}});
    }
    if (j.contains("orade_weights")) {
        const auto& w = j.at("orade_weights");
        auto& o = gt.orade_weights;
        require_object(w, "orade_weights");
        reject_unknown(w, "orade_weights",
                       {"nausea", "vomiting", "sedation", "dizziness", "itching", "urinary_retention", "confusion",
                        "hallucinations", "respiratory_depression", "rescue_naloxone", "rescue_antiemetic"});
        read_numbers(w, "orade_weights",
                     {{"nausea", &o.nausea},
                      {"vomiting", &o.vomiting},
                      {"sedation", &o.sedation},
                      {"dizziness", &o.dizziness},
                      {"itching", &o.itching},
                      {"urinary_retention", &o.urinary_retention},
                      {"confusion", &o.confusion},
                      {"hallucinations", &o.hallucinations},
                      {"respiratory_depression", &o.respiratory_depression},
                      {"rescue_naloxone", &o.rescue_naloxone},
                      {"rescue_antiemetic", &o.rescue_antiemetic}});
    }
    if (j.contains("positivity")) {
        const auto& v = j.at("positivity");
        auto& o = gt.positivity;
        require_object(v, "positivity");
        reject_unknown(v, "positivity", {"enabled", "n_strata", "stratum", "dose_lo", "dose_hi"});
        if (v.contains("enabled")) o.enabled = bool_at(v.at("enabled"), "positivity.enabled");
        if (v.contains("n_strata")) o.n_strata = integer_at(v.at("n_strata"), "positivity.n_strata");
        if (v.contains("stratum")) o.stratum = integer_at(v.at("stratum"), "positivity.stratum");
        read_numbers(v, "positivity", {{"dose_lo", &o.dose_lo}, {"dose_hi", &o.dose_hi}});
    }
    validate(gt);
    return gt;
}

// ---- cohort CSV ---------------------------------------------------------------

namespace {

constexpr std::array<std::string_view, 28> kCohortColumns = {
    "age",           "weight",           "sex",
    "asa_class",     "surgery_duration", "surgery_type",
    "chronic_opioid_use", "comorbidity_score", "treatment",
    "administered_dose_meq", "pain_arrival", "pain_pre_dosing",
    "pain_discharge", "nausea",          "vomiting",
    "sedation",      "dizziness",        "itching",
    "urinary_retention", "confusion",    "hallucinations",
    "respiratory_depression", "rescue_naloxone", "rescue_antiemetic",
    "impact_score",  "rescue_analgesia_meq", "pacu_los",
    "ambulation_cas",
};

const char* bool_text(bool b) { return b ? "true" : "false"; }

struct CsvCursor {
    std::size_t line;
    const std::vector<std::string_view>& cells;

    std::string where(std::size_t col) const {
        return "line " + std::to_string(line) + ", column " + std::string(kCohortColumns[col]);
    }
    std::string_view at(std::size_t col) const { return cells[col]; }
    double number(std::size_t col) const {
        const auto s = at(col);
        double v = 0;
        const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
        if (s.empty() || res.ec != std::errc() || res.ptr != s.data() + s.size() || !std::isfinite(v))
            throw ValidationError(where(col), "expected a number, got '" + std::string(s) + "'");
        return v;
    }
    int integer(std::size_t col) const {
        const auto s = at(col);
        int v = 0;
        const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
        if (s.empty() || res.ec != std::errc() || res.ptr != s.data() + s.size())
            throw ValidationError(where(col), "expected an integer, got '" + std::string(s) + "'");
        return v;
    }
    bool boolean(std::size_t col) const {
        const auto s = at(col);
        if (s == "true") return true;
        if (s == "false") return false;
        throw ValidationError(where(col), "expected true|false, got '" + std::string(s) + "'");
    }
    PainScore pain(std::size_t col, std::string_view s) const {
        int v = 0;
        const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
        if (s.empty() || res.ec != std::errc() || res.ptr != s.data() + s.size())
            throw ValidationError(where(col), "expected an NRS score, got '" + std::string(s) + "'");
        try {
            return validate_pain(v);
        } catch (const ValidationError& e) {
            throw ValidationError(where(col), e.detail());
        }
    }
    template <class F>
    auto parse_enum(std::size_t col, F&& f) const {
        try {
            return f(at(col));
        } catch (const ValidationError& e) {
            throw ValidationError(where(col), e.detail());
        }
    }
};

std::vector<std::string_view> split_line(std::string_view line, char sep) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t pos = line.find(sep, start);
        if (pos == std::string_view::npos) {
            out.push_back(line.substr(start));
            return out;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
}

}  // namespace

std::string cohort_csv_header() {
    std::string h;
    for (std::size_t i = 0; i < kCohortColumns.size(); ++i) {
        if (i > 0) h += ',';
        h += kCohortColumns[i];
    }
    return h;
}

std::string write_cohort_csv(std::span<const EncounterRecord> records, const TreatmentRegistry& registry) {
    std::string out = cohort_csv_header() + "\n";
    for (const auto& r : records) {
        const auto& x = r.features;
        const auto& o = r.orades;
        std::string pre;
        for (std::size_t i = 0; i < r.pain_pre_dosing.size(); ++i) {
            if (i > 0) pre += ';';
            pre += std::to_string(r.pain_pre_dosing[i].nrs());
        }
        const std::string fields[] = {
            std::to_string(x.age),
            format_double(x.weight),
            std::string(to_string(x.sex)),
            std::to_string(x.asa_class),
            format_double(x.surgery_duration),
            std::to_string(x.surgery_type),
            bool_text(x.chronic_opioid_use),
            format_double(x.comorbidity_score),
            registry.name(r.treatment.opiate_id),
            format_double(r.administered_dose.value),
            std::to_string(r.pain_arrival.nrs()),
            pre,
            std::to_string(r.pain_discharge.nrs()),
            std::string(to_string(o.nausea)),
            bool_text(o.vomiting),
            std::string(to_string(o.sedation)),
            bool_text(o.dizziness),
            bool_text(o.itching),
            bool_text(o.urinary_retention),
            bool_text(o.confusion),
            bool_text(o.hallucinations),
            bool_text(o.respiratory_depression),
            bool_text(o.rescue_naloxone),
            bool_text(o.rescue_antiemetic),
            o.impact_score ? std::to_string(*o.impact_score) : std::string(),
            format_double(r.rescue_analgesia_meq),
            format_double(r.pacu_los),
            std::to_string(r.ambulation_cas),
        };
        for (std::size_t i = 0; i < std::size(fields); ++i) {
            if (i > 0) out += ',';
            out += fields[i];
        }
        out += '\n';
    }
    return out;
}

std::vector<EncounterRecord> read_cohort_csv(std::string_view text, const TreatmentRegistry& registry) {
    std::vector<EncounterRecord> out;
    std::size_t line_no = 0;
    std::size_t start = 0;
    bool header_seen = false;
    while (start < text.size()) {
        std::size_t end = text.find('\n', start);
        if (end == std::string_view::npos) end = text.size();
        std::string_view line = text.substr(start, end - start);
        start = end + 1;
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (line.empty()) continue;
        if (!header_seen) {
            if (line != cohort_csv_header())
                throw ValidationError("line 1", "unexpected cohort header; expected " + cohort_csv_header());
            header_seen = true;
            continue;
        }
        const auto cells = split_line(line, ',');
        if (cells.size() != kCohortColumns.size())
            throw ValidationError("line " + std::to_string(line_no),
                                  "expected " + std::to_string(kCohortColumns.size()) + " columns, got " +
                                      std::to_string(cells.size()));
        const CsvCursor c{line_no, cells};
        EncounterRecord r;
        auto& x = r.features;
        x.age = c.integer(0);
        x.weight = c.number(1);
        x.sex = c.parse_enum(2, parse_sex);
        x.asa_class = c.integer(3);
        x.surgery_duration = c.number(4);
        x.surgery_type = c.integer(5);
        x.chronic_opioid_use = c.boolean(6);
        x.comorbidity_score = c.number(7);
        const auto id = registry.find(c.at(8));
        if (!id) throw ValidationError(c.where(8), "unknown opiate '" + std::string(c.at(8)) + "'");
        r.treatment = Treatment{*id};
        r.administered_dose = DoseMeq{c.number(9)};
        r.pain_arrival = c.pain(10, c.at(10));
        if (!c.at(11).empty())
            for (auto piece : split_line(c.at(11), ';')) r.pain_pre_dosing.push_back(c.pain(11, piece));
        r.pain_discharge = c.pain(12, c.at(12));
        auto& o = r.orades;
        o.nausea = c.parse_enum(13, parse_nausea);
        o.vomiting = c.boolean(14);
        o.sedation = c.parse_enum(15, parse_sedation);
        o.dizziness = c.boolean(16);
        o.itching = c.boolean(17);
        o.urinary_retention = c.boolean(18);
        o.confusion = c.boolean(19);
        o.hallucinations = c.boolean(20);
        o.respiratory_depression = c.boolean(21);
        o.rescue_naloxone = c.boolean(22);
        o.rescue_antiemetic = c.boolean(23);
        if (!c.at(24).empty()) o.impact_score = c.integer(24);
        r.rescue_analgesia_meq = c.number(25);
        r.pacu_los = c.number(26);
        r.ambulation_cas = c.integer(27);
        try {
            validate(r);
        } catch (const ValidationError& e) {
            throw ValidationError("line " + std::to_string(line_no) + ", " + e.field(), e.detail());
        }
        out.push_back(std::move(r));
    }
    if (!header_seen) throw ValidationError("cohort", "empty cohort file");
    return out;
}

Json cohort_schema_json(const Cohort& cohort, const TreatmentRegistry& registry, const ConversionTable& conversion) {
    Json columns = Json::array();
    for (auto c : kCohortColumns) columns.push_back(std::string(c));
    return {{"format", "opiaid-cohort-csv"},
            {"format_version", 1},
            {"generator_version", cohort.generator_version},
            {"scm_version", cohort.ground_truth.version},
            {"n_records", cohort.records.size()},
            {"columns", std::move(columns)},
            {"registry", registry.names()},
            {"conversion_table_version", conversion.version},
            {"enums",
             {{"sex", {"female", "male"}},
              {"nausea", {"none", "mild", "moderate", "severe"}},
              {"sedation", {"alert", "verbal", "pain", "unresponsive"}}}},
            {"list_separator", ";"}};
}

std::string method_comparison_csv(const MethodComparison& c) {
    std::ostringstream os;
    os << "rank,method,n_cases,regret,dose_mae,pain_rmse,orade_rmse,pain_accuracy,pain_auc,overfit,carried_forward\n";
    for (const auto& r : c.ranked) {
        const bool carried = r.method == c.carried_forward[0] || r.method == c.carried_forward[1];
        os << r.rank << ',' << r.method << ',' << r.n_cases << ',' << format_double(r.regret) << ','
           << format_double(r.dose_mae) << ',';
        if (r.metrics) {
            os << format_double(r.metrics->pain_rmse) << ',' << format_double(r.metrics->orade_rmse) << ','
               << format_double(r.metrics->pain_accuracy) << ','
               << (r.metrics->pain_auc ? format_double(*r.metrics->pain_auc) : std::string()) << ',';
        } else {
            os << ",,,,";
        }
        os << bool_text(r.overfit) << ',' << bool_text(carried) << '\n';
    }
    return os.str();
}

std::string loss_curve_csv(std::span<const LossPoint> curve) {
    std::string out = "round,train,validation\n";
    for (const auto& p : curve)
        out += std::to_string(p.round) + ',' + format_double(p.train) + ',' + format_double(p.validation) + '\n';
    return out;
}

// ---- files --------------------------------------------------------------------

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path.string());
    std::ostringstream os;
    os << in.rdbuf();
    if (in.bad()) throw IoError("error while reading " + path.string());
    return os.str();
}

void write_file_atomic(const std::filesystem::path& path, std::string_view content) {
    std::error_code ec;
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path(), ec);
        if (ec) throw IoError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
    }
    const auto tmp = path.string() + ".tmp." + std::to_string(::getpid());
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write " + tmp);
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        out.flush();
        if (!out) {
            std::filesystem::remove(tmp, ec);
            throw IoError("error while writing " + tmp);
        }
    }
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp, ec);
        throw IoError("cannot move " + tmp + " to " + path.string());
    }
}

}  // namespace opiaid
