#include "dla/metrics.hpp"

#include <cmath>

#include <boost/math/distributions/students_t.hpp>

#include "dla/error.hpp"

namespace dla {

ConfusionTable confusion(const LabelVolume& pred, const LabeledVoxelSet& truth) {
    if (!(pred.dims() == truth.dims)) throw ShapeError("confusion: dimension mismatch");
    if (truth.entries.empty()) throw DataError("confusion: reference set is empty");
    ConfusionTable t;
    for (const auto& e : truth.entries) {
        if (e.index < 0 || static_cast<std::size_t>(e.index) >= pred.size())
            throw DataError("confusion: reference index out of range");
        bool truth_vessel = e.cls == kClassVessel;
        bool pred_vessel = pred[static_cast<std::size_t>(e.index)] == kClassVessel;
        if (truth_vessel && pred_vessel)
            ++t.tp;
        else if (!truth_vessel && pred_vessel)
            ++t.fp;
        else if (truth_vessel && !pred_vessel)
            ++t.fn;
        else
            ++t.tn;
    }
    return t;
}

CaseMetrics metrics_from_table(const ConfusionTable& t) {
    if (t.tp < 0 || t.fp < 0 || t.fn < 0 || t.tn < 0)
        throw DataError("metrics: negative count");
    if (t.total() == 0) throw DataError("metrics: empty confusion table");
    CaseMetrics m;
    auto ratio = [](std::int64_t num, std::int64_t den, double& out, bool& defined) {
        if (den == 0) {
            out = 0.0;
            defined = false;
        } else {
            out = static_cast<double>(num) / static_cast<double>(den);
            defined = true;
        }
    };
    ratio(t.tp, t.tp + t.fn, m.sensitivity, m.sensitivity_defined);
    ratio(t.tp, t.tp + t.fp, m.ppv, m.ppv_defined);
    ratio(2 * t.tp, 2 * t.tp + t.fp + t.fn, m.dsc, m.dsc_defined);
    m.accuracy = static_cast<double>(t.tp + t.tn) / static_cast<double>(t.total());
    return m;
}

CiSummary aggregate_ci(const std::vector<double>& values) {
    const int n = static_cast<int>(values.size());
    if (n < 2) throw DataError("aggregate_ci: need at least two cases");
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= n;
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    double sd = std::sqrt(ss / (n - 1));
    boost::math::students_t dist(n - 1);
    double tq = boost::math::quantile(dist, 0.975);
    double half = tq * sd / std::sqrt(static_cast<double>(n));
    return {mean, mean - half, mean + half, n};
}

}  // namespace dla
