#pragma once

// Shared fixtures: random valid cases and cohorts cached per process so the
// expensive fits happen once per test binary.

#include <map>
#include <memory>
#include <tuple>
#include <vector>

#include "opiaid/cadr.hpp"
#include "opiaid/rng.hpp"
#include "opiaid/synthgen.hpp"
#include "opiaid/validation.hpp"

namespace support {

using namespace opiaid;

inline CaseFeatures random_case(Rng& rng) {
    CaseFeatures x;
    x.age = 18 + static_cast<int>(rng.below(73));
    x.weight = rng.uniform(45, 140);
    x.sex = rng.bernoulli(0.5) ? Sex::male : Sex::female;
    x.asa_class = 1 + static_cast<int>(rng.below(5));
    x.surgery_duration = rng.uniform(20, 400);
    x.surgery_type = static_cast<int>(rng.below(kSurgeryTypeCount));
    x.chronic_opioid_use = rng.bernoulli(0.2);
    x.comorbidity_score = rng.uniform(0, 6);
    return x;
}

inline const Cohort& cohort(const ScmGroundTruth& gt, std::size_t n) {
    static std::vector<std::unique_ptr<Cohort>> cache;
    for (const auto& c : cache)
        if (c->records.size() == n && c->ground_truth == gt) return *c;
    cache.push_back(std::make_unique<Cohort>(generate_cohort(gt, n)));
    return *cache.back();
}

inline const Cohort& noiseless_cohort(std::size_t n) { return cohort(ScmGroundTruth::noiseless(), n); }

struct FittedSplit {
    std::vector<EncounterRecord> train;
    std::vector<EncounterRecord> test;
    std::vector<EncounterRecord> retention;
    CadrModel model;
};

// Default-split CADR fit on the noiseless cohort.
inline const FittedSplit& noiseless_fit(LearnerKind kind, std::size_t n, const Hyper& hyper = {}) {
    static std::map<std::tuple<LearnerKind, std::size_t, Hyper>, std::unique_ptr<FittedSplit>> cache;
    auto& slot = cache[{kind, n, hyper}];
    if (!slot) {
        const auto& c = noiseless_cohort(n);
        const auto idx = split(c.records.size(), SplitSpec{});
        auto fs = std::make_unique<FittedSplit>();
        fs->train = select(c.records, idx.train);
        fs->test = select(c.records, idx.test);
        fs->retention = select(c.records, idx.retention);
        CadrFitOptions o;
        o.pain_kind = o.orade_kind = kind;
        if (!supports(kind, Task::regression)) o.pain_task = o.orade_task = Task::classification;
        o.pain_hyper = o.orade_hyper = hyper;
        fs->model = fit_cadr(fs->train, DoseGrid::standard(), TreatmentRegistry::morphine_only(), o);
        slot = std::move(fs);
    }
    return *slot;
}

}  // namespace support
