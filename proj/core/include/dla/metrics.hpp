#pragma once

#include <cstdint>
#include <vector>

#include "dla/labelgen.hpp"
#include "dla/volume.hpp"

namespace dla {

// two-by-two table for the vessel class, counted over reference entries only
struct ConfusionTable {
    std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;

    std::int64_t total() const { return tp + fp + fn + tn; }
};

ConfusionTable confusion(const LabelVolume& pred, const LabeledVoxelSet& truth);

// a metric with an impossible denominator reports 0 with its flag cleared
struct CaseMetrics {
    double sensitivity = 0.0, ppv = 0.0, dsc = 0.0, accuracy = 0.0;
    bool sensitivity_defined = true, ppv_defined = true, dsc_defined = true;
};

// sensitivity TP/(TP+FN), ppv TP/(TP+FP), dsc 2TP/(2TP+FP+FN),
// accuracy (TP+TN)/total
CaseMetrics metrics_from_table(const ConfusionTable& t);

struct CiSummary {
    double mean = 0.0, lo = 0.0, hi = 0.0;
    int n = 0;
};

// mean with Student-t 95% interval, mean +/- t_{0.975,n-1} * s / sqrt(n);
// bounds are not clamped here
CiSummary aggregate_ci(const std::vector<double>& values);

}  // namespace dla
