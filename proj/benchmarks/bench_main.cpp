#include <benchmark/benchmark.h>

#include <map>

#include "opiaid/cadr.hpp"
#include "opiaid/recommendation.hpp"
#include "opiaid/rng.hpp"
#include "opiaid/synthgen.hpp"
#include "opiaid/validation.hpp"

using namespace opiaid;

namespace {

const CadrModel& model(LearnerKind kind) {
    static std::map<LearnerKind, CadrModel> cache;
    auto it = cache.find(kind);
    if (it == cache.end()) {
        const auto c = generate_cohort(ScmGroundTruth::defaults(), 2000);
        CadrFitOptions o;
        o.pain_kind = o.orade_kind = kind;
        it = cache.emplace(kind, fit_cadr(c.records, DoseGrid::standard(), TreatmentRegistry::morphine_only(), o))
                 .first;
    }
    return it->second;
}

void BM_GenerateCohort(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    for (auto _ : state) benchmark::DoNotOptimize(generate_cohort(ScmGroundTruth::defaults(), n));
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_GenerateCohort)->Arg(1000)->Arg(10000);

void BM_TrueOptimalDose(benchmark::State& state) {
    const auto gt = ScmGroundTruth::defaults();
    const CaseFeatures x{};
    for (auto _ : state)
        benchmark::DoNotOptimize(true_optimal_dose(gt, x, Treatment{}, DoseGrid::standard(), UtilityWeights{}));
}
BENCHMARK(BM_TrueOptimalDose);

void BM_FitCadr(benchmark::State& state) {
    const auto kind = static_cast<LearnerKind>(state.range(0));
    const auto c = generate_cohort(ScmGroundTruth::defaults(), 2000);
    CadrFitOptions o;
    o.pain_kind = o.orade_kind = kind;
    for (auto _ : state)
        benchmark::DoNotOptimize(fit_cadr(c.records, DoseGrid::standard(), TreatmentRegistry::morphine_only(), o));
    state.SetLabel(std::string(to_string(kind)));
}
BENCHMARK(BM_FitCadr)
    ->Arg(static_cast<int>(LearnerKind::decision_tree))
    ->Arg(static_cast<int>(LearnerKind::gradient_boosted_trees))
    ->Arg(static_cast<int>(LearnerKind::random_forest))
    ->Unit(benchmark::kMillisecond);

void BM_RecommendDose(benchmark::State& state) {
    const auto kind = static_cast<LearnerKind>(state.range(0));
    const auto& m = model(kind);
    const auto xs = sample_features(ScmGroundTruth::defaults(), 64, 3);
    std::size_t i = 0;
    for (auto _ : state) benchmark::DoNotOptimize(recommend_dose(m, xs[i++ % xs.size()], Treatment{}, UtilityWeights{}));
    state.SetLabel(std::string(to_string(kind)));
}
BENCHMARK(BM_RecommendDose)
    ->Arg(static_cast<int>(LearnerKind::gradient_boosted_trees))
    ->Arg(static_cast<int>(LearnerKind::random_forest))
    ->Arg(static_cast<int>(LearnerKind::mlp))
    ->Unit(benchmark::kMicrosecond);

void BM_CadrCurvesBatch(benchmark::State& state) {
    const auto& m = model(LearnerKind::gradient_boosted_trees);
    const auto xs = sample_features(ScmGroundTruth::defaults(), static_cast<std::size_t>(state.range(0)), 3);
    for (auto _ : state) benchmark::DoNotOptimize(cadr_curves(m, xs, Treatment{}, UtilityWeights{}));
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_CadrCurvesBatch)->Arg(100)->Arg(1000)->Unit(benchmark::kMillisecond);

void BM_OverlapDiagnostic(benchmark::State& state) {
    const auto c = generate_cohort(ScmGroundTruth::defaults(), 10000);
    for (auto _ : state) benchmark::DoNotOptimize(overlap_diagnostic(c.records, DoseGrid::standard()));
}
BENCHMARK(BM_OverlapDiagnostic);

}  // namespace

BENCHMARK_MAIN();
