#pragma once

// Serialization of the public types: JSON for configuration, requests and
// reports, CSV for cohorts and plot tables, plus atomic file writes.

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "opiaid/baselines.hpp"
#include "opiaid/cadr.hpp"
#include "opiaid/domain.hpp"
#include "opiaid/recommendation.hpp"
#include "opiaid/synthgen.hpp"
#include "opiaid/validation.hpp"

namespace opiaid {

using Json = nlohmann::ordered_json;

// Field errors are reported as ValidationError with a dotted path rooted at
// `path`, e.g. "features.age".
CaseFeatures case_features_from_json(const Json& j, const std::string& path = "features");
Json to_json(const CaseFeatures& x);

// Missing fields take the defaults (0.5, 0.5, 0).
UtilityWeights weights_from_json(const Json& j, const std::string& path = "weights");
Json to_json(const UtilityWeights& w);
// "w_pain,w_orades" or "w_pain,w_orades,w_rescue".
UtilityWeights parse_weights(std::string_view text);

// Missing components are absent events.
OradeRecord orade_record_from_json(const Json& j, const std::string& path = "orades");
Json to_json(const OradeRecord& r);

Json to_json(const Recommendation& r);
Json to_json(const CadrCurve& c);
Json to_json(const OverlapDiagnostic& d);
// Reads what to_json(OverlapDiagnostic) writes.
OverlapDiagnostic overlap_diagnostic_from_json(const Json& j);
Json to_json(const OutcomeMetrics& m);
Json to_json(const MethodComparison& c);
Json to_json(const ProxyReport& r);
Json to_json(const SplitSpec& s);
SplitSpec split_spec_from_json(const Json& j);
Json to_json(const DoseGrid& g);
DoseGrid dose_grid_from_json(const Json& j);
// "min,max,step"
DoseGrid parse_grid(std::string_view text);

// Full ground truth. Reading starts from the defaults (or the noiseless preset
// when "preset" is "noiseless") and overrides the keys present; unknown keys
// are rejected.
Json to_json(const ScmGroundTruth& gt);
ScmGroundTruth scm_from_json(const Json& j);

// Cohort CSV with a fixed header; enums as lowercase strings, booleans as
// true/false, the pre-dosing pain list joined by ';', numbers in shortest
// round-trip form.
std::string cohort_csv_header();
std::string write_cohort_csv(std::span<const EncounterRecord> records, const TreatmentRegistry& registry);
// Throws ValidationError naming the line and column on malformed input.
std::vector<EncounterRecord> read_cohort_csv(std::string_view text, const TreatmentRegistry& registry);

// Sidecar describing a cohort CSV: columns, registry and table versions.
Json cohort_schema_json(const Cohort& cohort, const TreatmentRegistry& registry,
                        const ConversionTable& conversion = ConversionTable::defaults());

std::string method_comparison_csv(const MethodComparison& c);
std::string loss_curve_csv(std::span<const LossPoint> curve);

// Throws IoError with the path in the message.
std::string read_file(const std::filesystem::path& path);
// Writes to a sibling temporary file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

// Shortest decimal string that reads back to the same double.
std::string format_double(double v);

}  // namespace opiaid
