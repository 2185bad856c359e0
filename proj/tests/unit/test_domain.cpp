#include <doctest.h>

#include <algorithm>
#include <array>
#include <vector>

#include "opiaid/domain.hpp"
#include "opiaid/errors.hpp"
#include "opiaid/rng.hpp"
#include "support.hpp"

using namespace opiaid;

TEST_CASE("validate_pain accepts exactly 0..10") {
    CHECK(validate_pain(0).nrs() == 0);
    CHECK(validate_pain(10).nrs() == 10);
    CHECK_THROWS_AS(validate_pain(11), OutOfRange);
    for (int raw = -50; raw <= 50; ++raw) {
        if (raw >= 0 && raw <= 10) {
            CHECK(validate_pain(raw).nrs() == raw);
        } else {
            CHECK_THROWS_AS(validate_pain(raw), OutOfRange);
        }
    }
}

TEST_CASE("case features validation names the field") {
    CaseFeatures x;
    CHECK_NOTHROW(validate(x));
    x.age = 17;
    try {
        validate(x);
        FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
        CHECK(e.field() == "age");
    }
    x = {};
    x.asa_class = 6;
    CHECK_THROWS_AS(validate(x), ValidationError);
    x = {};
    x.surgery_type = kSurgeryTypeCount;
    CHECK_THROWS_AS(validate(x), ValidationError);
    x = {};
    x.weight = -1;
    CHECK_THROWS_AS(validate(x), ValidationError);
}

TEST_CASE("registry starts with morphine only") {
    const auto r = TreatmentRegistry::morphine_only();
    CHECK(r.size() == 1);
    CHECK(r.name(0) == "morphine");
    CHECK(r.find("fentanyl") == std::nullopt);
    CHECK_THROWS_AS(validate(Treatment{1}, r), ValidationError);
}

TEST_CASE("dose grid arithmetic") {
    const auto g = DoseGrid::standard();
    CHECK(g.size() == 41);
    CHECK(g.at(0) == 0.0);
    CHECK(g.at(10) == 5.0);
    CHECK(g.at(40) == 20.0);
    CHECK(g.nearest_index(5.2) == 10);
    CHECK(g.nearest_index(-3) == 0);
    CHECK(g.nearest_index(99) == 40);
    CHECK(DoseGrid(0, 1, 0.3).size() == 4);
    CHECK_THROWS_AS(DoseGrid(5, 5, 1), ValidationError);
    CHECK_THROWS_AS(DoseGrid(0, 1, 0), ValidationError);
    CHECK_THROWS_AS(DoseGrid(-1, 1, 0.5), ValidationError);
}

TEST_CASE("orade severity examples") {
    CHECK(orade_severity(OradeRecord{}) == 0.0);

    OradeRecord worst;
    worst.nausea = Nausea::severe;
    worst.vomiting = worst.dizziness = worst.itching = worst.urinary_retention = true;
    worst.confusion = worst.hallucinations = worst.respiratory_depression = true;
    worst.rescue_naloxone = worst.rescue_antiemetic = true;
    worst.sedation = Sedation::unresponsive;
    CHECK(orade_severity(worst) == doctest::Approx(10.0).epsilon(1e-12));

    OradeRecord nausea;
    nausea.nausea = Nausea::severe;
    // 10 * 1 / (10 unit weights + 3 for respiratory depression)
    CHECK(orade_severity(nausea) == doctest::Approx(10.0 / 13.0).epsilon(1e-12));

    OradeRecord resp;
    resp.respiratory_depression = true;
    CHECK(orade_severity(resp) == doctest::Approx(30.0 / 13.0).epsilon(1e-12));

    OradeRecord moderate;
    moderate.sedation = Sedation::pain;
    CHECK(orade_severity(moderate) == doctest::Approx(10.0 * (2.0 / 3.0) / 13.0).epsilon(1e-12));

    OradeWeights zero{0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0};
    CHECK_THROWS_AS(orade_severity(nausea, zero), AllZeroWeights);
}

TEST_CASE("orade severity is monotone in every component and stays in [0,10]") {
    Rng rng(11);
    for (int trial = 0; trial < 500; ++trial) {
        OradeRecord r;
        r.nausea = static_cast<Nausea>(rng.below(4));
        r.sedation = static_cast<Sedation>(rng.below(4));
        r.vomiting = rng.bernoulli(0.5);
        r.dizziness = rng.bernoulli(0.5);
        r.itching = rng.bernoulli(0.5);
        r.urinary_retention = rng.bernoulli(0.5);
        r.confusion = rng.bernoulli(0.5);
        r.hallucinations = rng.bernoulli(0.5);
        r.respiratory_depression = rng.bernoulli(0.5);
        r.rescue_naloxone = r.respiratory_depression && rng.bernoulli(0.5);
        r.rescue_antiemetic = rng.bernoulli(0.5);
        OradeWeights w;
        w.nausea = rng.uniform(0, 3);
        w.itching = rng.uniform(0, 3);
        w.respiratory_depression = rng.uniform(0, 5);
        const double base = orade_severity(r, w);
        CHECK(base >= 0.0);
        CHECK(base <= 10.0 + 1e-12);

        std::vector<OradeRecord> raised;
        if (r.nausea != Nausea::severe) {
            auto up = r;
            up.nausea = static_cast<Nausea>(static_cast<int>(r.nausea) + 1);
            raised.push_back(up);
        }
        if (r.sedation != Sedation::unresponsive) {
            auto up = r;
            up.sedation = static_cast<Sedation>(static_cast<int>(r.sedation) + 1);
            raised.push_back(up);
        }
        for (bool OradeRecord::*flag :
             {&OradeRecord::vomiting, &OradeRecord::dizziness, &OradeRecord::itching, &OradeRecord::urinary_retention,
              &OradeRecord::confusion, &OradeRecord::hallucinations, &OradeRecord::respiratory_depression,
              &OradeRecord::rescue_antiemetic}) {
            auto up = r;
            up.*flag = true;
            raised.push_back(up);
        }
        for (const auto& up : raised) CHECK(orade_severity(up, w) >= base);
    }
}

TEST_CASE("orade record invariants") {
    OradeRecord r;
    r.rescue_naloxone = true;
    CHECK_THROWS_AS(validate(r), ValidationError);
    r.respiratory_depression = true;
    CHECK_NOTHROW(validate(r));
    r.impact_score = 11;
    CHECK_THROWS_AS(validate(r), ValidationError);
    r.impact_score = 10;
    CHECK_NOTHROW(validate(r));
}

TEST_CASE("respiratory depression examples") {
    CHECK(derive_respiratory_depression(true, {}, {}, false));

    std::vector<VitalSample> rr;
    for (int m = 0; m <= 12; ++m) rr.push_back({static_cast<double>(m), 8.0});
    CHECK(derive_respiratory_depression(false, rr, {}, true));
    CHECK_FALSE(derive_respiratory_depression(false, rr, {}, false));

    std::vector<VitalSample> spo2;
    for (int m = 0; m <= 5; ++m) spo2.push_back({static_cast<double>(m), 89.0});
    spo2.push_back({6.0, 97.0});
    CHECK_FALSE(derive_respiratory_depression(false, {}, spo2, true));

    // 10 minutes below threshold exactly: minute 0 to the recovery sample at 10.
    std::vector<VitalSample> edge = {{0, 85}, {10, 95}};
    CHECK(derive_respiratory_depression(false, {}, edge, true));
    std::vector<VitalSample> short_run = {{0, 85}, {9.5, 95}};
    CHECK_FALSE(derive_respiratory_depression(false, {}, short_run, true));

    std::vector<VitalSample> bad = {{0, 8}, {0, 8}};
    CHECK_THROWS_AS(derive_respiratory_depression(false, bad, {}, true), MalformedSeries);
}

TEST_CASE("respiratory depression is invariant to splitting a sample") {
    Rng rng(5);
    for (int trial = 0; trial < 300; ++trial) {
        std::vector<VitalSample> series;
        double t = 0;
        const int n = 2 + static_cast<int>(rng.below(8));
        for (int i = 0; i < n; ++i) {
            series.push_back({t, rng.bernoulli(0.5) ? rng.uniform(4, 9.9) : rng.uniform(10, 20)});
            t += rng.uniform(0.5, 8);
        }
        const bool before = derive_respiratory_depression(false, series, {}, true);
        const auto k = static_cast<std::size_t>(rng.below(series.size() - 1));
        auto split = series;
        const double mid = 0.5 * (series[k].minute + series[k + 1].minute);
        split.insert(split.begin() + static_cast<long>(k) + 1, VitalSample{mid, series[k].value});
        CHECK(derive_respiratory_depression(false, split, {}, true) == before);
    }
}

TEST_CASE("morphine equivalents") {
    CHECK(to_meq("morphine", 10).value == 10.0);
    CHECK(to_meq("fentanyl", 0.1).value == doctest::Approx(10.0).epsilon(1e-12));
    CHECK(to_meq("morphine", 0).value == 0.0);
    CHECK_THROWS_AS(to_meq("oxycodone", 1), UnknownOpiate);
    CHECK_THROWS_AS(to_meq("morphine", -1), ValidationError);
    CHECK(to_meq(Treatment{0}, TreatmentRegistry::morphine_only(), 7.5).value == 7.5);

    Rng rng(3);
    for (int i = 0; i < 200; ++i) {
        const double a = rng.uniform(0, 5), b = rng.uniform(0, 5);
        for (const char* op : {"morphine", "fentanyl"}) {
            CHECK(to_meq(op, a + b).value == doctest::Approx(to_meq(op, a).value + to_meq(op, b).value).epsilon(1e-12));
        }
    }
}

TEST_CASE("titrated administrations aggregate inside the window") {
    CHECK(aggregate_titrated_administrations({}).value == 0.0);
    const std::vector<Administration> two = {{"morphine", 5, -10}, {"morphine", 5, -2}};
    CHECK(aggregate_titrated_administrations(two).value == 10.0);
    const std::vector<Administration> fent = {{"fentanyl", 0.05, -5}};
    CHECK(aggregate_titrated_administrations(fent).value == doctest::Approx(5.0).epsilon(1e-12));
    const std::vector<Administration> early = {{"morphine", 5, -45}, {"morphine", 3, 0}};
    CHECK(aggregate_titrated_administrations(early).value == 3.0);
    const std::vector<Administration> unknown = {{"tramadol", 5, -5}};
    CHECK_THROWS_AS(aggregate_titrated_administrations(unknown), UnknownOpiate);
}

TEST_CASE("aggregation is permutation invariant") {
    Rng rng(17);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<Administration> admins;
        const int n = 1 + static_cast<int>(rng.below(9));
        for (int i = 0; i < n; ++i)
            admins.push_back({rng.bernoulli(0.5) ? "morphine" : "fentanyl", rng.uniform(0, 0.2), rng.uniform(-40, 5)});
        const double total = aggregate_titrated_administrations(admins).value;
        for (int p = 0; p < 5; ++p) {
            for (std::size_t i = admins.size(); i-- > 1;)
                std::swap(admins[i], admins[static_cast<std::size_t>(rng.below(i + 1))]);
            CHECK(aggregate_titrated_administrations(admins).value == total);
        }
    }
}

TEST_CASE("pain timepoints") {
    EncounterRecord r;
    r.pain_arrival = validate_pain(6);
    r.pain_discharge = validate_pain(2);
    CHECK(pain_at(r, PainTimepoint::arrival) == 6);
    CHECK(pain_at(r, PainTimepoint::discharge) == 2);
    CHECK(pain_at(r, PainTimepoint::pre_dosing_max) == 6);
    r.pain_pre_dosing = {validate_pain(3), validate_pain(8), validate_pain(5)};
    CHECK(pain_at(r, PainTimepoint::pre_dosing_max) == 8);
    CHECK(parse_pain_timepoint("discharge") == PainTimepoint::discharge);
    CHECK_THROWS_AS(parse_pain_timepoint("later"), ValidationError);
}

TEST_CASE("utility weights validation") {
    CHECK_NOTHROW(validate(UtilityWeights{}));
    CHECK_NOTHROW(validate(UtilityWeights{0, 1}));
    CHECK_THROWS_AS(validate(UtilityWeights{0, 0}), ValidationError);
    CHECK_THROWS_AS(validate(UtilityWeights{-1, 1}), ValidationError);
    CHECK_THROWS_AS(validate(UtilityWeights{1, 1, -0.5}), ValidationError);
}

TEST_CASE("severity strata") {
    const std::vector<double> scores = {5, 1, 3, 2, 4, 0, 9, 7, 8, 6};
    const auto cuts = quantile_cutpoints(scores, 5);
    REQUIRE(cuts.size() == 4);
    CHECK(cuts == std::vector<double>{2, 4, 6, 8});
    CHECK(stratum_of(0, cuts) == 0);
    CHECK(stratum_of(2, cuts) == 1);  // ties move up
    CHECK(stratum_of(9, cuts) == 4);

    CaseFeatures x;
    x.asa_class = 4;
    x.comorbidity_score = 3;
    x.age = 85;
    x.chronic_opioid_use = true;
    CHECK(case_severity_score(x) == doctest::Approx(0.5 * 2 + 1.0 + 1.0 + 1.0));
}
