#include "opiaid/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "opiaid/cadr.hpp"
#include "opiaid/errors.hpp"

namespace opiaid {

namespace {

using json = nlohmann::ordered_json;

bool matches(const Rule& r, int pain, double severity, bool resp) {
    return pain >= r.pain_min && pain <= r.pain_max && severity > r.severity_above &&
           severity <= r.severity_at_most && (!r.respiratory_depression || *r.respiratory_depression == resp);
}

}  // namespace

RuleTable RuleTable::defaults() {
    RuleTable t;
    t.rules = {
        {"respiratory_depression", 0, 10, -1.0, 10.0, true, -4.0},
        {"severe_pain", 7, 10, -1.0, 10.0, std::nullopt, 4.0},
        {"moderate_pain", 4, 6, -1.0, 10.0, std::nullopt, 2.0},
        {"mild_pain", 1, 3, -1.0, 10.0, std::nullopt, 0.0},
        {"no_pain_with_orades", 0, 0, 10.0 / 3.0, 10.0, std::nullopt, -2.0},
        {"no_pain", 0, 0, -1.0, 10.0, std::nullopt, 0.0},
    };
    return t;
}

std::optional<std::size_t> RuleTable::match(int pain, double severity, bool respiratory_depression) const {
    for (std::size_t i = 0; i < rules.size(); ++i)
        if (matches(rules[i], pain, severity, respiratory_depression)) return i;
    return std::nullopt;
}

void validate(const RuleTable& table) {
    for (std::size_t i = 0; i < table.rules.size(); ++i) {
        const auto& r = table.rules[i];
        const std::string at = "rules[" + std::to_string(i) + "]";
        if (!std::isfinite(r.adjustment_meq)) throw ValidationError(at + ".adjustment_meq", "must be finite");
        if (r.pain_min > r.pain_max) throw ValidationError(at + ".pain_min", "exceeds pain_max");
        if (!(r.severity_above < r.severity_at_most)) throw ValidationError(at + ".severity_above", "empty severity band");
    }
}

bool is_exhaustive(const RuleTable& table) {
    std::set<double> bounds{0.0, 10.0};
    for (const auto& r : table.rules)
        for (double b : {r.severity_above, r.severity_at_most})
            if (b >= 0.0 && b <= 10.0) bounds.insert(b);
    std::vector<double> probes(bounds.begin(), bounds.end());
    const std::size_t k = probes.size();
    for (std::size_t i = 0; i + 1 < k; ++i) probes.push_back(0.5 * (probes[i] + probes[i + 1]));
    for (int pain = 0; pain <= 10; ++pain)
        for (double s : probes)
            for (bool resp : {false, true})
                if (!table.match(pain, s, resp)) return false;
    return true;
}

RuleTable rule_table_from_json(std::string_view text) {
    try {
        const json doc = json::parse(text);
        RuleTable t;
        for (const auto& j : doc.at("rules")) {
            Rule r;
            r.name = j.value("name", std::string{});
            r.pain_min = j.value("pain_min", 0);
            r.pain_max = j.value("pain_max", 10);
            if (j.contains("severity_above") && !j.at("severity_above").is_null())
                r.severity_above = j.at("severity_above").get<double>();
            if (j.contains("severity_at_most") && !j.at("severity_at_most").is_null())
                r.severity_at_most = j.at("severity_at_most").get<double>();
            if (j.contains("respiratory_depression") && !j.at("respiratory_depression").is_null())
                r.respiratory_depression = j.at("respiratory_depression").get<bool>();
            r.adjustment_meq = j.at("adjustment_meq").get<double>();
            t.rules.push_back(std::move(r));
        }
        validate(t);
        return t;
    } catch (const json::exception& e) {
        throw ValidationError("rules", std::string("malformed rule table: ") + e.what());
    }
}

std::string rule_table_to_json(const RuleTable& table) {
    json rules = json::array();
    for (const auto& r : table.rules)
        rules.push_back(json{{"name", r.name},
                             {"pain_min", r.pain_min},
                             {"pain_max", r.pain_max},
                             {"severity_above", r.severity_above},
                             {"severity_at_most", r.severity_at_most},
                             {"respiratory_depression",
                              r.respiratory_depression ? json(*r.respiratory_depression) : json(nullptr)},
                             {"adjustment_meq", r.adjustment_meq}});
    return json{{"rules", std::move(rules)}}.dump(2);
}

DoseMeq rule_based_optimal_dose(DoseMeq administered, PainScore pain_0_1h, const OradeRecord& orades,
                                const RuleTable& table, double dose_max, const OradeWeights& weights) {
    if (!(administered.value >= 0.0)) throw ValidationError("administered", "must be >= 0");
    const double severity = orade_severity(orades, weights);
    const auto hit = table.match(pain_0_1h.nrs(), severity, orades.respiratory_depression);
    if (!hit)
        throw NoMatchingRule("no rule matches pain " + std::to_string(pain_0_1h.nrs()) + ", severity " +
                             std::to_string(severity));
    return DoseMeq{std::clamp(administered.value + table.rules[*hit].adjustment_meq, 0.0, dose_max)};
}

DoseMeq rule_based_optimal_dose(std::span<const Administration> administrations, PainScore pain_0_1h,
                                const OradeRecord& orades, const RuleTable& table, double dose_max,
                                const OradeWeights& weights, const ConversionTable& conversion,
                                const AttributionWindow& window) {
    const DoseMeq total = aggregate_titrated_administrations(administrations, conversion, window);
    return rule_based_optimal_dose(total, pain_0_1h, orades, table, dose_max, weights);
}

// ---- proxy markers ----------------------------------------------------------

namespace {

double variance_of(std::span<const double> v) {
    const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double s = 0;
    for (double x : v) s += (x - m) * (x - m);
    return s / static_cast<double>(v.size());
}

std::vector<double> average_ranks(std::span<const double> v) {
    std::vector<std::size_t> order(v.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> ranks(v.size());
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j < order.size() && v[order[j]] == v[order[i]]) ++j;
        const double r = 0.5 * static_cast<double>(i + 1 + j);
        for (std::size_t k = i; k < j; ++k) ranks[order[k]] = r;
        i = j;
    }
    return ranks;
}

Association associate(std::span<const double> deviation, std::span<const double> outcome) {
    Association a;
    if (variance_of(deviation) <= 1e-24 || variance_of(outcome) <= 1e-24) {
        a.degenerate = true;
        return a;
    }
    a.pearson = pearson(deviation, outcome);
    a.spearman = spearman(deviation, outcome);
    const double n = static_cast<double>(deviation.size());
    const double mx = std::accumulate(deviation.begin(), deviation.end(), 0.0) / n;
    const double my = std::accumulate(outcome.begin(), outcome.end(), 0.0) / n;
    double sxy = 0, sxx = 0;
    for (std::size_t i = 0; i < deviation.size(); ++i) {
        sxy += (deviation[i] - mx) * (outcome[i] - my);
        sxx += (deviation[i] - mx) * (deviation[i] - mx);
    }
    a.slope = sxy / sxx;
    return a;
}

}  // namespace

double pearson(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw DimensionMismatch("correlation inputs differ in length");
    if (a.size() < 2) throw InsufficientData("correlation needs at least two points");
    const double n = static_cast<double>(a.size());
    const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
    const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
    double sab = 0, saa = 0, sbb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    if (saa <= 0 || sbb <= 0) throw InsufficientData("correlation of a constant series");
    return sab / std::sqrt(saa * sbb);
}

double spearman(std::span<const double> a, std::span<const double> b) {
    const auto ra = average_ranks(a);
    const auto rb = average_ranks(b);
    return pearson(ra, rb);
}

ProxyReport proxy_marker_score(std::span<const EncounterRecord> records,
                               const std::function<DoseMeq(const EncounterRecord&)>& recommender) {
    if (records.size() < 10)
        throw InsufficientData("proxy-marker analysis needs at least 10 records, got " + std::to_string(records.size()));
    ProxyReport rep;
    rep.n = records.size();
    std::vector<double> los, cas;
    for (const auto& r : records) {
        rep.deviations.push_back(std::abs(r.administered_dose.value - recommender(r).value));
        los.push_back(r.pacu_los);
        cas.push_back(static_cast<double>(r.ambulation_cas));
    }
    rep.los = associate(rep.deviations, los);
    rep.cas = associate(rep.deviations, cas);
    return rep;
}

std::string proxy_deviations_csv(std::span<const EncounterRecord> records, const ProxyReport& report,
                                 const std::function<DoseMeq(const EncounterRecord&)>& recommender) {
    if (records.size() != report.deviations.size()) throw DimensionMismatch("report does not match records");
    std::ostringstream os;
    os.precision(17);
    os << "index,administered,recommended,deviation,pacu_los,ambulation_cas\n";
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto& r = records[i];
        os << i << ',' << r.administered_dose.value << ',' << recommender(r).value << ',' << report.deviations[i]
           << ',' << r.pacu_los << ',' << r.ambulation_cas << '\n';
    }
    return os.str();
}

ProxyModel fit_proxy_model(std::span<const EncounterRecord> training, const DoseGrid& grid,
                           const TreatmentRegistry& registry, LearnerKind kind, const Hyper& hyper,
                           std::uint64_t seed) {
    if (training.empty()) throw ValidationError("training", "empty training split");
    const auto n = static_cast<Eigen::Index>(training.size());
    Eigen::MatrixXd x(n, 10);
    Eigen::VectorXd y(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& r = training[static_cast<std::size_t>(i)];
        validate(r.treatment, registry);
        x.row(i) = cadr_feature_row(r.treatment, r.administered_dose, r.features);
        y(i) = r.pacu_los;
    }
    ProxyModel m;
    m.grid = grid;
    m.registry = registry;
    m.los_model = train(kind, Task::regression, cadr_feature_schema(registry), x, y, hyper, seed);
    return m;
}

DoseMeq proxy_recommend(const ProxyModel& model, const CaseFeatures& x, const Treatment& t) {
    validate(x);
    validate(t, model.registry);
    const std::size_t g = model.grid.size();
    Eigen::MatrixXd rows(static_cast<Eigen::Index>(g), 10);
    for (std::size_t i = 0; i < g; ++i) rows.row(static_cast<Eigen::Index>(i)) = cadr_feature_row(t, DoseMeq{model.grid.at(i)}, x);
    const Eigen::MatrixXd los = predict(model.los_model, rows);
    std::size_t best = 0;
    for (std::size_t i = 1; i < g; ++i)
        if (los(static_cast<Eigen::Index>(i), 0) < los(static_cast<Eigen::Index>(best), 0)) best = i;
    return DoseMeq{model.grid.at(best)};
}

}  // namespace opiaid
