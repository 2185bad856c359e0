#include "cli.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "opiaid/baselines.hpp"
#include "opiaid/cadr.hpp"
#include "opiaid/errors.hpp"
#include "opiaid/hash.hpp"
#include "opiaid/io.hpp"
#include "opiaid/recommendation.hpp"
#include "opiaid/service.hpp"
#include "opiaid/synthgen.hpp"
#include "opiaid/validation.hpp"

namespace opiaid::cli {

namespace fs = std::filesystem;

namespace {

constexpr const char* kToolVersion = "0.1.0";

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

Json parse_json(std::string_view text, const std::string& what) {
    try {
        return Json::parse(text);
    } catch (const Json::parse_error& e) {
        throw ValidationError(what, std::string("malformed JSON: ") + e.what());
    }
}

Json read_json(const fs::path& path) { return parse_json(read_file(path), path.string()); }

// Inline JSON when the argument starts with '{', a file path otherwise.
Json json_argument(const std::string& arg) {
    if (!arg.empty() && arg.front() == '{') return parse_json(arg, "case");
    return read_json(arg);
}

std::string pretty(const Json& j) { return j.dump(2) + "\n"; }

// Everything a command writes under its --out directory, with content hashes
// for the manifest.
class Outputs {
public:
    explicit Outputs(fs::path dir) : dir_(std::move(dir)) { ensure_dir(dir_); }

    void write(const std::string& name, std::string_view content) {
        const fs::path path = dir_ / name;
        ensure_dir(path.parent_path());
        write_file_atomic(path, content);
        hashes_[name] = sha256_hex(content);
    }
    const fs::path& dir() const { return dir_; }
    const std::map<std::string, std::string>& hashes() const { return hashes_; }

private:
    fs::path dir_;
    std::map<std::string, std::string> hashes_;
};

// The options a subcommand actually received (flags, config file or command
// line), as an argument vector that reproduces the run.
std::vector<std::string> resolved_argv(const CLI::App& sub) {
    std::vector<std::string> argv{sub.get_name()};
    for (const CLI::Option* opt : sub.get_options()) {
        if (opt == sub.get_help_ptr() || opt->get_lnames().empty() || opt->results().empty()) continue;
        const std::string name = "--" + opt->get_lnames().front();
        if (opt->get_expected_min() == 0) {
            if (opt->as<bool>()) argv.push_back(name);
            continue;
        }
        for (const auto& r : opt->results()) {
            argv.push_back(name);
            argv.push_back(r);
        }
    }
    return argv;
}

std::string utc_now() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::ostringstream os;
    os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return os.str();
}

// manifest.json carries no timestamps; those go to run.log.
void finish(const Outputs& outputs, const CLI::App& sub, const std::map<std::string, std::string>& inputs,
            Json extra = Json::object()) {
    Json manifest = {{"tool", "opiaid"}, {"version", kToolVersion}, {"command", sub.get_name()}};
    manifest["argv"] = resolved_argv(sub);
    manifest["inputs"] = inputs;
    manifest["outputs"] = outputs.hashes();
    for (auto& [k, v] : extra.items()) manifest[k] = v;
    write_file_atomic(outputs.dir() / "manifest.json", pretty(manifest));

    std::ofstream log(outputs.dir() / "run.log", std::ios::app);
    log << utc_now() << ' ' << sub.get_name() << " ok\n";
}

// ---- cohort directories ----------------------------------------------------

struct CohortFiles {
    std::vector<EncounterRecord> records;
    TreatmentRegistry registry = TreatmentRegistry::morphine_only();
    std::optional<ScmGroundTruth> ground_truth;
    std::map<std::string, std::string> hashes;
};

CohortFiles load_cohort(const fs::path& dir, bool need_truth) {
    CohortFiles c;
    const auto read_hashed = [&c](const fs::path& p) {
        std::string text = read_file(p);
        c.hashes[p.string()] = sha256_hex(text);
        return text;
    };
    const fs::path schema_path = dir / "cohort_schema.json";
    const Json schema = parse_json(read_hashed(schema_path), schema_path.string());
    if (!schema.contains("registry") || !schema.at("registry").is_array())
        throw ValidationError(schema_path.string(), "missing treatment registry");
    c.registry = TreatmentRegistry(schema.at("registry").get<std::vector<std::string>>());
    c.records = read_cohort_csv(read_hashed(dir / "cohort.csv"), c.registry);
    if (need_truth) {
        const fs::path truth = dir / "ground_truth.json";
        c.ground_truth = scm_from_json(parse_json(read_hashed(truth), truth.string()));
    }
    return c;
}

SplitSpec parse_split(const std::string& text, std::uint64_t seed) {
    std::vector<double> parts;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            parts.push_back(std::stod(item));
        } catch (const std::exception&) {
            throw ValidationError("split", "expected train,test,retention fractions");
        }
    }
    if (parts.size() != 3) throw ValidationError("split", "expected train,test,retention fractions");
    SplitSpec s{parts[0], parts[1], parts[2], seed};
    validate(s);
    return s;
}

Treatment treatment_named(const std::optional<std::string>& name, const TreatmentRegistry& registry) {
    if (!name) return Treatment{0};
    const auto id = registry.find(*name);
    if (!id) throw ValidationError("treatment", "opiate '" + *name + "' is not in the model registry");
    return Treatment{*id};
}

// ---- generate ----------------------------------------------------------------

struct GenerateArgs {
    std::optional<std::string> scm;
    std::string preset = "default";
    std::size_t n = 0;
    std::optional<std::uint64_t> seed;
    std::string out;
};

void cmd_generate(const GenerateArgs& a, const CLI::App& sub, std::ostream& err) {
    std::map<std::string, std::string> inputs;
    ScmGroundTruth gt = a.preset == "noiseless" ? ScmGroundTruth::noiseless() : ScmGroundTruth::defaults();
    if (a.scm) {
        const std::string text = read_file(*a.scm);
        inputs[*a.scm] = sha256_hex(text);
        gt = scm_from_json(parse_json(text, *a.scm));
    }
    if (a.seed) gt.seed = *a.seed;
    validate(gt);

    const Cohort cohort = generate_cohort(gt, a.n);
    const auto registry = TreatmentRegistry::morphine_only();
    Outputs outputs(a.out);
    outputs.write("cohort.csv", write_cohort_csv(cohort.records, registry));
    outputs.write("ground_truth.json", pretty(to_json(gt)));
    outputs.write("cohort_schema.json", pretty(cohort_schema_json(cohort, registry)));
    finish(outputs, sub, inputs, {{"n", a.n}, {"seed", gt.seed}});
    err << "wrote " << a.n << " encounters to " << a.out << "\n";
}

// ---- train ------------------------------------------------------------------

struct TrainArgs {
    std::string cohort;
    std::vector<std::string> learners;
    std::string out;
    std::string split = "0.8,0.15,0.05";
    std::uint64_t split_seed = SplitSpec{}.seed;
    std::uint64_t seed = 1;
    bool tune = false;
    std::string pain_timepoint = "arrival";
    std::string grid = "0,20,0.5";
    std::string proxy_learner = "gradient_boosted_trees";
};

Json hyper_json(const Hyper& h) {
    Json j = Json::object();
    for (const auto& [k, v] : h) j[k] = v;
    return j;
}

void cmd_train(const TrainArgs& a, const CLI::App& sub, std::ostream& err) {
    const CohortFiles cohort = load_cohort(a.cohort, false);
    const SplitSpec spec = parse_split(a.split, a.split_seed);
    const DoseGrid grid = parse_grid(a.grid);
    const PainTimepoint timepoint = parse_pain_timepoint(a.pain_timepoint);
    std::vector<LearnerKind> kinds;
    if (a.learners.empty()) kinds.assign(kAllLearners.begin(), kAllLearners.end());
    for (const auto& name : a.learners) kinds.push_back(parse_learner_kind(name));

    const SplitIndices idx = split(cohort.records.size(), spec);
    const auto training = select(cohort.records, idx.train);
    const auto test = select(cohort.records, idx.test);

    Outputs outputs(a.out);
    Json report = {{"n_train", training.size()}, {"n_test", test.size()}, {"learners", Json::array()}};
    for (const LearnerKind kind : kinds) {
        const std::string name(to_string(kind));
        err << "fitting " << name << "\n";
        CadrFitOptions options;
        options.pain_kind = options.orade_kind = kind;
        if (!supports(kind, Task::regression)) options.pain_task = options.orade_task = Task::classification;
        options.pain_timepoint = timepoint;
        options.seed = a.seed;

        // Candidates are scored on the test split by summed outcome RMSE.
        const std::vector<Hyper> candidates = a.tune ? tuning_grid(kind) : std::vector<Hyper>{Hyper{}};
        std::optional<CadrModel> best;
        Hyper best_hyper;
        double best_score = 0.0;
        OutcomeMetrics best_metrics;
        Json tuning = Json::array();
        for (const Hyper& h : candidates) {
            options.pain_hyper = options.orade_hyper = h;
            CadrModel model = fit_cadr(training, grid, cohort.registry, options);
            const OutcomeMetrics m = outcome_metrics(model, test);
            const double score = m.pain_rmse + m.orade_rmse;
            tuning.push_back({{"hyper", hyper_json(h)}, {"score", score}});
            if (!best || score < best_score) {
                best = std::move(model);
                best_hyper = h;
                best_score = score;
                best_metrics = m;
            }
        }

        const OverfitReport pain_fit = detect_overfit(best->pain_model.loss_curve);
        const OverfitReport orade_fit = detect_overfit(best->orade_model.loss_curve);
        outputs.write("cadr_" + name + ".json", serialize_cadr(*best));
        if (!best->pain_model.loss_curve.empty()) {
            outputs.write("loss/" + name + "_pain.csv", loss_curve_csv(best->pain_model.loss_curve));
            outputs.write("loss/" + name + "_orade.csv", loss_curve_csv(best->orade_model.loss_curve));
        }
        report["learners"].push_back({{"kind", name},
                                      {"task", std::string(to_string(options.pain_task))},
                                      {"hyper", hyper_json(best_hyper)},
                                      {"tuning", std::move(tuning)},
                                      {"test_metrics", to_json(best_metrics)},
                                      {"overfit", {{"pain", pain_fit.overfit}, {"orade", orade_fit.overfit}}}});
    }

    err << "fitting proxy-marker model\n";
    const LearnerKind proxy_kind = parse_learner_kind(a.proxy_learner);
    const ProxyModel proxy = fit_proxy_model(training, grid, cohort.registry, proxy_kind, Hyper{}, a.seed);
    outputs.write("proxy_los.json", serialize_model(proxy.los_model));
    outputs.write("overlap.json", pretty(to_json(overlap_diagnostic(training, grid))));
    outputs.write("split.json", pretty(to_json(spec)));
    outputs.write("train_report.json", pretty(report));
    finish(outputs, sub, cohort.hashes);
}

// ---- evaluate -----------------------------------------------------------------

struct EvaluateArgs {
    std::string cohort;
    std::string models;
    std::string weights = "0.5,0.5";
    std::string out;
    std::optional<std::string> rules;
    bool allow_retention_reuse = false;
};

struct LoadedModel {
    std::string id;
    CadrModel model;
};

void cmd_evaluate(const EvaluateArgs& a, const CLI::App& sub, std::ostream& err) {
    CohortFiles cohort = load_cohort(a.cohort, true);
    const UtilityWeights weights = parse_weights(a.weights);
    const fs::path models_dir = a.models;
    std::map<std::string, std::string> inputs = cohort.hashes;
    const auto read_input = [&inputs](const fs::path& p) {
        std::string text = read_file(p);
        inputs[p.string()] = sha256_hex(text);
        return text;
    };

    const std::string train_manifest = read_input(models_dir / "manifest.json");
    const fs::path split_path = models_dir / "split.json";
    const SplitSpec spec = split_spec_from_json(parse_json(read_input(split_path), split_path.string()));

    std::vector<fs::path> artifacts;
    std::error_code ec;
    for (fs::directory_iterator it(models_dir, ec), end; !ec && it != end; it.increment(ec)) {
        const std::string file = it->path().filename().string();
        if (file.starts_with("cadr_") && file.ends_with(".json")) artifacts.push_back(it->path());
    }
    if (ec) throw IoError("cannot list " + models_dir.string() + ": " + ec.message());
    if (artifacts.empty()) throw ValidationError("models", "no cadr_*.json artifacts in " + models_dir.string());
    std::sort(artifacts.begin(), artifacts.end());

    std::vector<LoadedModel> models;
    for (const auto& p : artifacts) {
        CadrModel m = deserialize_cadr(read_input(p));
        models.push_back({"causal_ml(" + std::string(to_string(m.pain_model.kind)) + ")", std::move(m)});
    }
    const DoseGrid grid = models.front().model.grid;
    const OradeWeights orade_weights = models.front().model.orade_weights;

    const SplitIndices idx = split(cohort.records.size(), spec);
    const auto retention = select(cohort.records, idx.retention);

    std::vector<DoseMethod> methods;
    for (const auto& lm : models) {
        const CadrModel* m = &lm.model;
        DoseMethod method{lm.id, [m, weights](const EncounterRecord& r) {
                              return recommend_dose(*m, r.features, r.treatment, weights).dose;
                          }};
        method.metrics = outcome_metrics(*m, retention);
        method.overfit = detect_overfit(m->pain_model.loss_curve).overfit ||
                         detect_overfit(m->orade_model.loss_curve).overfit;
        methods.push_back(std::move(method));
    }
    std::optional<ProxyModel> proxy;
    const fs::path proxy_path = models_dir / "proxy_los.json";
    if (fs::exists(proxy_path)) {
        proxy = ProxyModel{deserialize_model(read_input(proxy_path)), grid, models.front().model.registry};
        methods.push_back({"proxy_marker", [&proxy](const EncounterRecord& r) {
                               return proxy_recommend(*proxy, r.features, r.treatment);
                           }});
    }
    const RuleTable rules = a.rules ? rule_table_from_json(read_input(*a.rules)) : RuleTable::defaults();
    validate(rules);
    methods.push_back({"rule_based", [&rules, &grid, &orade_weights](const EncounterRecord& r) {
                           return rule_based_optimal_dose(r.administered_dose, r.pain_arrival, r.orades, rules,
                                                          grid.max_meq(), orade_weights);
                       }});

    // One look at the retention split per trained configuration.
    const fs::path ledger_path = models_dir / "retention_ledger.json";
    RetentionLedger ledger{sha256_hex(train_manifest), false};
    if (fs::exists(ledger_path)) {
        const Json j = parse_json(read_file(ledger_path), ledger_path.string());
        if (j.value("config_hash", std::string()) == ledger.config_hash) ledger.used = j.value("used", false);
    }
    if (a.allow_retention_reuse) ledger.used = false;
    claim_retention(ledger);
    write_file_atomic(ledger_path, pretty({{"config_hash", ledger.config_hash}, {"used", ledger.used}}));

    err << "scoring " << methods.size() << " methods on " << retention.size() << " retention cases\n";
    const MethodComparison comparison = evaluate_methods(retention, methods, *cohort.ground_truth, grid, weights);

    Json proxy_reports = Json::object();
    for (const auto& report : comparison.ranked) {
        const auto it = std::find_if(methods.begin(), methods.end(),
                                     [&report](const DoseMethod& m) { return m.id == report.method; });
        try {
            proxy_reports[report.method] = to_json(proxy_marker_score(retention, it->recommend));
        } catch (const InsufficientData& e) {
            proxy_reports[report.method] = {{"error", e.what()}};
        }
    }
    const auto top = std::find_if(methods.begin(), methods.end(), [&comparison](const DoseMethod& m) {
        return m.id == comparison.carried_forward[0];
    });

    Outputs outputs(a.out);
    Json comparison_json = to_json(comparison);
    comparison_json["weights"] = to_json(weights);
    outputs.write("method_comparison.json", pretty(comparison_json));
    outputs.write("method_comparison.csv", method_comparison_csv(comparison));
    outputs.write("proxy_report.json", pretty(proxy_reports));
    if (retention.size() >= 10) {
        const auto report = proxy_marker_score(retention, top->recommend);
        outputs.write("proxy_deviations.csv", proxy_deviations_csv(retention, report, top->recommend));
    }
    finish(outputs, sub, inputs,
           {{"retention_used", true}, {"retention_reuse_allowed", a.allow_retention_reuse}});
    err << "carried forward: " << comparison.carried_forward[0] << ", " << comparison.carried_forward[1] << "\n";
}

// ---- recommend / curves ---------------------------------------------------------

struct CaseArgs {
    std::string model;
    std::string case_json;
    std::optional<std::string> weights;
    std::optional<std::string> treatment;
    std::optional<std::string> diagnostics;
    std::optional<std::string> out;
};

// Same body and response as POST /v1/recommend.
void cmd_recommend(const CaseArgs& a, std::ostream& out) {
    Service service;
    service.set_snapshot(load_snapshot(a.model, a.diagnostics ? std::optional<fs::path>(*a.diagnostics) : std::nullopt));
    Json body = {{"features", json_argument(a.case_json)}};
    if (a.weights) body["weights"] = to_json(parse_weights(*a.weights));
    if (a.treatment) body["treatment"] = *a.treatment;
    const Response r = service.recommend(body.dump());
    const Json j = Json::parse(r.body);
    if (r.status != 200) throw ValidationError(j.value("field", std::string()), j.value("message", std::string()));
    out << pretty(j);
}

void cmd_curves(const CaseArgs& a, std::ostream& out) {
    const CadrModel model = deserialize_cadr(read_file(a.model));
    const CaseFeatures x = case_features_from_json(json_argument(a.case_json));
    const UtilityWeights w = a.weights ? parse_weights(*a.weights) : UtilityWeights{};
    const std::string csv = curve_csv(cadr_curve(model, x, treatment_named(a.treatment, model.registry), w));
    if (a.out) {
        write_file_atomic(*a.out, csv);
    } else {
        out << csv;
    }
}

// ---- diagnose -------------------------------------------------------------------

struct DiagnoseArgs {
    std::string cohort;
    std::string grid = "0,20,0.5";
    int strata = 5;
    int bins = 10;
    std::size_t min_count = 5;
    std::string format = "json";
    std::optional<std::string> out;
};

std::string overlap_table(const OverlapDiagnostic& d) {
    std::ostringstream os;
    os << "stratum";
    const double width = (d.dose_max - d.dose_min) / d.n_dose_bins;
    for (int b = 0; b < d.n_dose_bins; ++b) {
        std::ostringstream label;
        label << d.dose_min + b * width << '-' << d.dose_min + (b + 1) * width;
        os << std::setw(11) << label.str();
    }
    os << '\n';
    for (int s = 0; s < d.n_strata; ++s) {
        os << std::setw(7) << s;
        for (int b = 0; b < d.n_dose_bins; ++b) {
            std::ostringstream cell;
            cell << d.count(s, b) << (d.violated(s, b) ? "*" : "");
            os << std::setw(11) << cell.str();
        }
        os << '\n';
    }
    os << "* fewer than " << d.min_count << " cases; " << d.violations.size() << " violation(s)\n";
    return os.str();
}

void cmd_diagnose(const DiagnoseArgs& a, const CLI::App& sub, std::ostream& out) {
    const CohortFiles cohort = load_cohort(a.cohort, false);
    const OverlapDiagnostic d = overlap_diagnostic(cohort.records, parse_grid(a.grid), a.strata, a.bins, a.min_count);
    out << (a.format == "table" ? overlap_table(d) : pretty(to_json(d)));
    if (a.out) {
        Outputs outputs(*a.out);
        outputs.write("overlap.json", pretty(to_json(d)));
        finish(outputs, sub, cohort.hashes);
    }
}

// ---- serve ------------------------------------------------------------------------

struct ServeArgs {
    std::optional<std::string> model_artifact;
    std::optional<std::string> diagnostics;
    std::optional<std::string> grid;
    std::string default_weights = "0.5,0.5";
    std::string host = "127.0.0.1";
    int port = 8080;
};

void cmd_serve(const ServeArgs& a, std::ostream& err) {
    ServiceConfig config;
    if (a.grid) config.grid = parse_grid(*a.grid);
    config.default_weights = parse_weights(a.default_weights);
    Service service(config);
    if (a.model_artifact) {
        service.set_snapshot(load_snapshot(*a.model_artifact,
                                           a.diagnostics ? std::optional<fs::path>(*a.diagnostics) : std::nullopt,
                                           config.grid));
    }
    HttpServer server(service);
    const int port = server.bind(a.host, a.port);
    if (port < 0) throw IoError("cannot bind " + a.host + ":" + std::to_string(a.port));
    err << "listening on http://" << a.host << ':' << port << "\n";
    server.listen();
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Causal dose-response modelling of opioid dosing on synthetic cohorts", "opiaid"};
    app.set_config("--config", "", "TOML/INI file with option values");
    app.set_version_flag("--version", kToolVersion);
    app.require_subcommand(1);

    GenerateArgs gen;
    auto* generate = app.add_subcommand("generate", "Sample a synthetic cohort with known potential outcomes");
    auto* scm_opt = generate->add_option("--scm", gen.scm, "SCM JSON (overrides on the defaults)");
    generate->add_option("--preset", gen.preset, "Base SCM when --scm is absent")
        ->check(CLI::IsMember({"default", "noiseless"}))
        ->excludes(scm_opt);
    generate->add_option("--n", gen.n, "Number of encounters")->required()->check(CLI::PositiveNumber);
    generate->add_option("--seed", gen.seed, "Overrides the SCM seed");
    generate->add_option("--out", gen.out, "Output directory")->required();

    TrainArgs tr;
    auto* train = app.add_subcommand("train", "Fit CADR models for each learner kind");
    train->add_option("--cohort", tr.cohort, "Cohort directory")->required();
    train->add_option("--learners", tr.learners, "Learner kinds (default: all)")->delimiter(',');
    train->add_option("--out", tr.out, "Models directory")->required();
    train->add_option("--split", tr.split, "train,test,retention fractions")->capture_default_str();
    train->add_option("--split-seed", tr.split_seed, "Split permutation seed")->capture_default_str();
    train->add_option("--seed", tr.seed, "Learner seed")->capture_default_str();
    train->add_flag("--tune", tr.tune, "Grid-search hyperparameters on the test split");
    train->add_option("--pain-timepoint", tr.pain_timepoint, "arrival, pre_dosing_max or discharge")
        ->capture_default_str();
    train->add_option("--grid", tr.grid, "Dose grid min,max,step")->capture_default_str();
    train->add_option("--proxy-learner", tr.proxy_learner, "Learner for the PACU length-of-stay model")
        ->capture_default_str();

    EvaluateArgs ev;
    auto* evaluate = app.add_subcommand("evaluate", "Compare recommenders against the oracle on the retention split");
    evaluate->add_option("--cohort", ev.cohort, "Cohort directory")->required();
    evaluate->add_option("--models", ev.models, "Models directory from train")->required();
    evaluate->add_option("--weights", ev.weights, "w_pain,w_orades[,w_rescue]")->capture_default_str();
    evaluate->add_option("--out", ev.out, "Report directory")->required();
    evaluate->add_option("--rules", ev.rules, "Rule table JSON (default: built-in table)");
    evaluate->add_flag("--allow-retention-reuse", ev.allow_retention_reuse,
                       "Score the retention split again for the same models");

    CaseArgs rec;
    auto* recommend = app.add_subcommand("recommend", "Recommend a dose for one case");
    recommend->add_option("--model", rec.model, "CADR artifact")->required();
    recommend->add_option("--case", rec.case_json, "Case features: JSON file or inline object")->required();
    recommend->add_option("--weights", rec.weights, "w_pain,w_orades[,w_rescue]");
    recommend->add_option("--treatment", rec.treatment, "Opiate name");
    recommend->add_option("--diagnostics", rec.diagnostics, "overlap.json for overlap warnings");

    CaseArgs cur;
    auto* curves = app.add_subcommand("curves", "Write the dose-response curve of one case as CSV");
    curves->add_option("--model", cur.model, "CADR artifact")->required();
    curves->add_option("--case", cur.case_json, "Case features: JSON file or inline object")->required();
    curves->add_option("--weights", cur.weights, "w_pain,w_orades[,w_rescue]");
    curves->add_option("--treatment", cur.treatment, "Opiate name");
    curves->add_option("--out", cur.out, "CSV path (default: stdout)");

    DiagnoseArgs dg;
    auto* diagnose = app.add_subcommand("diagnose", "Overlap (positivity) table of a cohort");
    diagnose->add_option("--cohort", dg.cohort, "Cohort directory")->required();
    diagnose->add_option("--grid", dg.grid, "Dose grid min,max,step")->capture_default_str();
    diagnose->add_option("--strata", dg.strata, "Severity strata")->check(CLI::PositiveNumber)->capture_default_str();
    diagnose->add_option("--bins", dg.bins, "Dose bins")->check(CLI::PositiveNumber)->capture_default_str();
    diagnose->add_option("--min-count", dg.min_count, "Cells below this count are flagged")->capture_default_str();
    diagnose->add_option("--format", dg.format, "json or table")
        ->check(CLI::IsMember({"json", "table"}))
        ->capture_default_str();
    diagnose->add_option("--out", dg.out, "Also write overlap.json and a manifest here");

    ServeArgs sv;
    auto* serve_cmd = app.add_subcommand("serve", "Serve recommendations over HTTP");
    serve_cmd->add_option("--model-artifact", sv.model_artifact, "CADR artifact loaded at startup");
    serve_cmd->add_option("--diagnostics", sv.diagnostics, "overlap.json served at /v1/diagnostics");
    serve_cmd->add_option("--grid", sv.grid, "Dose grid min,max,step (inside the artifact grid)");
    serve_cmd->add_option("--default-weights", sv.default_weights, "Weights when a request has none")
        ->capture_default_str();
    serve_cmd->add_option("--host", sv.host)->capture_default_str();
    serve_cmd->add_option("--port", sv.port)->check(CLI::Range(0, 65535))->capture_default_str();

    std::string preset = "default";
    auto* scm_defaults = app.add_subcommand("scm-defaults", "Print the SCM parameters as JSON");
    scm_defaults->add_option("--preset", preset)->check(CLI::IsMember({"default", "noiseless"}))->capture_default_str();

    std::string manifest_path;
    std::optional<std::string> rerun_out;
    auto* rerun = app.add_subcommand("rerun", "Repeat the command recorded in a manifest");
    rerun->add_option("--manifest", manifest_path, "manifest.json of an earlier run")->required();
    rerun->add_option("--out", rerun_out, "Replace the recorded output location");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err) == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (generate->parsed()) cmd_generate(gen, *generate, err);
        if (train->parsed()) cmd_train(tr, *train, err);
        if (evaluate->parsed()) cmd_evaluate(ev, *evaluate, err);
        if (recommend->parsed()) cmd_recommend(rec, out);
        if (curves->parsed()) cmd_curves(cur, out);
        if (diagnose->parsed()) cmd_diagnose(dg, *diagnose, out);
        if (serve_cmd->parsed()) cmd_serve(sv, err);
        if (scm_defaults->parsed())
            out << pretty(to_json(preset == "noiseless" ? ScmGroundTruth::noiseless() : ScmGroundTruth::defaults()));
        if (rerun->parsed()) {
            const Json manifest = read_json(manifest_path);
            if (!manifest.contains("argv") || !manifest.at("argv").is_array())
                throw ValidationError("argv", manifest_path + " records no command");
            auto argv = manifest.at("argv").get<std::vector<std::string>>();
            if (rerun_out) {
                const auto it = std::find(argv.begin(), argv.end(), "--out");
                if (it == argv.end() || it + 1 == argv.end()) throw ValidationError("out", "recorded command has no --out");
                *(it + 1) = *rerun_out;
            }
            return run(argv, out, err);
        }
    } catch (const IoError& e) {
        err << "error: " << e.what() << "\n";
        return kExitIo;
    } catch (const fs::filesystem_error& e) {
        err << "error: " << e.what() << "\n";
        return kExitIo;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitInvalid;
    }
    return kExitOk;
}

}  // namespace opiaid::cli
