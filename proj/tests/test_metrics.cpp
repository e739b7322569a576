#include <cmath>
#include <cstdint>
#include <vector>

#include "doctest.h"

#include "dla/error.hpp"
#include "dla/metrics.hpp"
#include "dla/rng.hpp"
#include "dla/volume.hpp"

using namespace dla;

namespace {

// every labeled voxel of `truth` becomes a reference entry
LabeledVoxelSet refs_from(const LabelVolume& truth) {
    LabeledVoxelSet s;
    s.dims = truth.dims();
    for (std::size_t i = 0; i < truth.size(); ++i)
        if (truth[i] != kClassUnlabeled)
            s.entries.push_back({std::int64_t(i), truth[i]});
    return s;
}

double harmonic(double a, double b) { return a + b > 0 ? 2.0 * a * b / (a + b) : 0.0; }

}  // namespace

TEST_CASE("worked confusion tables") {
    SUBCASE("balanced 0.98 case") {
        CaseMetrics m = metrics_from_table({98, 2, 2, 98});
        CHECK(m.sensitivity == doctest::Approx(0.98).epsilon(1e-15));
        CHECK(m.ppv == doctest::Approx(0.98).epsilon(1e-15));
        CHECK(m.dsc == doctest::Approx(0.98).epsilon(1e-15));
        CHECK(m.accuracy == doctest::Approx(0.98).epsilon(1e-15));
        CHECK(m.sensitivity_defined);
        CHECK(m.ppv_defined);
        CHECK(m.dsc_defined);
    }
    SUBCASE("no predicted vessels: ppv undefined, sensitivity zero") {
        CaseMetrics m = metrics_from_table({0, 0, 10, 90});
        CHECK(m.sensitivity == 0.0);
        CHECK(m.sensitivity_defined);
        CHECK(m.ppv == 0.0);
        CHECK_FALSE(m.ppv_defined);
        CHECK(m.dsc == 0.0);
        CHECK(m.dsc_defined);
        CHECK(m.accuracy == doctest::Approx(0.9).epsilon(1e-15));
    }
    SUBCASE("everything called vessel") {
        CaseMetrics m = metrics_from_table({50, 50, 0, 0});
        CHECK(m.sensitivity == 1.0);
        CHECK(m.ppv == 0.5);
        CHECK(m.dsc == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
        CHECK(m.accuracy == 0.5);
    }
    SUBCASE("no vessel references: sensitivity undefined") {
        CaseMetrics m = metrics_from_table({0, 5, 0, 15});
        CHECK_FALSE(m.sensitivity_defined);
        CHECK(m.ppv == 0.0);
        CHECK(m.ppv_defined);
        CHECK(m.dsc == 0.0);
        CHECK(m.dsc_defined);
        CHECK(m.accuracy == 0.75);
    }
    SUBCASE("empty table is a data error") {
        CHECK_THROWS_AS(metrics_from_table({0, 0, 0, 0}), DataError);
    }
    SUBCASE("negative count is a data error") {
        CHECK_THROWS_AS(metrics_from_table({-1, 0, 1, 0}), DataError);
    }
}

TEST_CASE("dsc is the harmonic mean of sensitivity and ppv") {
    Rng rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        ConfusionTable t{1 + rng.uniform_int(0, 400), rng.uniform_int(0, 400),
                         rng.uniform_int(0, 400), rng.uniform_int(0, 400)};
        CaseMetrics m = metrics_from_table(t);
        CHECK(std::abs(m.dsc - harmonic(m.sensitivity, m.ppv)) <= 1e-12);
    }
}

TEST_CASE("confusion counts reference entries only") {
    LabelVolume pred({4, 1, 1}), truth({4, 1, 1});
    // voxel 0: both vessel, 1: pred vessel truth bone, 2: pred soft truth
    // vessel, 3: unlabeled in truth (must not be counted)
    pred[0] = kClassVessel;
    pred[1] = kClassVessel;
    pred[2] = kClassSoft;
    pred[3] = kClassVessel;
    truth[0] = kClassVessel;
    truth[1] = kClassBone;
    truth[2] = kClassVessel;
    truth[3] = kClassUnlabeled;
    ConfusionTable t = confusion(pred, refs_from(truth));
    CHECK(t.tp == 1);
    CHECK(t.fp == 1);
    CHECK(t.fn == 1);
    CHECK(t.tn == 0);

    SUBCASE("unlabeled prediction counts as a non-vessel call") {
        pred[0] = kClassUnlabeled;
        ConfusionTable u = confusion(pred, refs_from(truth));
        CHECK(u.tp == 0);
        CHECK(u.fn == 2);
    }
    SUBCASE("duplicated entries scale counts but not metrics") {
        LabeledVoxelSet s = refs_from(truth);
        auto twice = s;
        twice.entries.insert(twice.entries.end(), s.entries.begin(), s.entries.end());
        ConfusionTable u = confusion(pred, twice);
        CHECK(u.tp == 2 * t.tp);
        CHECK(u.fp == 2 * t.fp);
        CHECK(u.fn == 2 * t.fn);
        CaseMetrics a = metrics_from_table(t), b = metrics_from_table(u);
        CHECK(a.sensitivity == b.sensitivity);
        CHECK(a.ppv == b.ppv);
        CHECK(a.dsc == b.dsc);
        CHECK(a.accuracy == b.accuracy);
    }
    SUBCASE("shape and bounds violations") {
        LabelVolume small({2, 1, 1});
        CHECK_THROWS_AS(confusion(small, refs_from(truth)), ShapeError);
        LabeledVoxelSet s = refs_from(truth);
        s.entries.push_back({99, kClassVessel});
        CHECK_THROWS_AS(confusion(pred, s), DataError);
        LabeledVoxelSet empty;
        empty.dims = truth.dims();
        CHECK_THROWS_AS(confusion(pred, empty), DataError);
    }
}

TEST_CASE("swapping prediction and reference swaps sensitivity and ppv") {
    Rng rng(9);
    LabelVolume a({6, 5, 4}), b({6, 5, 4});
    for (std::size_t i = 0; i < a.size(); ++i) {
        a[i] = std::uint8_t(rng.uniform_int(1, 3));
        b[i] = std::uint8_t(rng.uniform_int(1, 3));
    }
    CaseMetrics mab = metrics_from_table(confusion(a, refs_from(b)));
    CaseMetrics mba = metrics_from_table(confusion(b, refs_from(a)));
    CHECK(mab.sensitivity == doctest::Approx(mba.ppv).epsilon(1e-15));
    CHECK(mab.ppv == doctest::Approx(mba.sensitivity).epsilon(1e-15));
    CHECK(mab.accuracy == doctest::Approx(mba.accuracy).epsilon(1e-15));
    CHECK(mab.dsc == doctest::Approx(mba.dsc).epsilon(1e-15));
}

TEST_CASE("confidence interval matches hand-computed t values") {
    SUBCASE("n = 2") {
        CiSummary s = aggregate_ci({0.9, 1.0});
        double sd = std::sqrt(0.005);  // sample sd of {0.9, 1.0}
        double half = 12.706204736174698 * sd / std::sqrt(2.0);
        CHECK(s.mean == doctest::Approx(0.95).epsilon(1e-12));
        CHECK(s.lo == doctest::Approx(0.95 - half).epsilon(1e-9));
        CHECK(s.hi == doctest::Approx(0.95 + half).epsilon(1e-9));
        CHECK(s.n == 2);
        CHECK(s.hi > 1.0);  // bounds are reported unclamped
    }
    SUBCASE("n = 5") {
        std::vector<double> v{0.90, 0.92, 0.94, 0.96, 0.98};
        CiSummary s = aggregate_ci(v);
        double sd = std::sqrt(0.001);
        double half = 2.7764451051977987 * sd / std::sqrt(5.0);
        CHECK(s.mean == doctest::Approx(0.94).epsilon(1e-12));
        CHECK(s.lo == doctest::Approx(0.94 - half).epsilon(1e-9));
        CHECK(s.hi == doctest::Approx(0.94 + half).epsilon(1e-9));
    }
    SUBCASE("identical values give a zero-width interval") {
        CiSummary s = aggregate_ci({0.5, 0.5, 0.5});
        CHECK(s.mean == 0.5);
        CHECK(s.lo == doctest::Approx(0.5).epsilon(1e-12));
        CHECK(s.hi == doctest::Approx(0.5).epsilon(1e-12));
    }
    SUBCASE("fewer than two cases is a data error") {
        CHECK_THROWS_AS(aggregate_ci({}), DataError);
        CHECK_THROWS_AS(aggregate_ci({0.5}), DataError);
    }
}

TEST_CASE("interval covers the true mean about 95 percent of the time") {
    Rng rng(1234);
    const int trials = 2000, n = 10;
    const double mu = 0.5, sigma = 0.1;
    int covered = 0;
    std::vector<double> v(n);
    for (int t = 0; t < trials; ++t) {
        for (auto& x : v) x = rng.normal(mu, sigma);
        CiSummary s = aggregate_ci(v);
        if (s.lo <= mu && mu <= s.hi) ++covered;
    }
    double rate = double(covered) / trials;
    CHECK(rate > 0.93);
    CHECK(rate < 0.97);
}
