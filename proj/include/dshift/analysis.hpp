#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "dshift/dataset.hpp"

namespace dshift {

struct AnalysisSummary {
    int64_t count = 0;
    double mean = 0.0;
    double min = 0.0;
    double max = 0.0;
};

AnalysisSummary summarize(std::span<const double> values);

/// log2 of the volume of the intersection between the eps-l_inf ball at x and
/// the unit cube: sum_i log2(min(x_i+eps,1) - max(x_i-eps,0)). Stays in log
/// space throughout; the linear product underflows at image dimensions.
double log_perturbable_volume(std::span<const double> x, double eps);

struct VolumeReport {
    double eps = 0.0;
    std::vector<double> per_item;  // bits
    AnalysisSummary summary;
};

VolumeReport dataset_log_volume(const Dataset& ds, double eps);

/// Two-stage nearest-neighbor margin statistic for one class: each point of
/// the class averages its ceil(nn_frac * |complement|) nearest complement
/// distances (l2 on flattened pixels), and the class value averages the
/// smallest ceil(sel_frac * |class|) of those. Counts floor at 1.
double interclass_distance(const Dataset& ds, int32_t cls, double nn_frac = 0.1,
                           double sel_frac = 0.1);

struct InterclassReport {
    std::vector<double> per_class;
    double mean = 0.0;  // unweighted over classes
    double nn_frac = 0.1;
    double sel_frac = 0.1;
};

InterclassReport dataset_interclass(const Dataset& ds, double nn_frac = 0.1, double sel_frac = 0.1);

/// Histogram of pixel values over uniform bins on [0, 1]; the last bin is
/// right-closed so a pixel equal to 1 lands in it.
std::vector<int64_t> pixel_histogram(const Dataset& ds, int bins);

struct McEstimate {
    double estimate = 0.0;
    double stderr_ = 0.0;  // binomial standard error
    int64_t n = 0;
};

/// Monte-Carlo fraction of x ~ Uniform[0,1]^d attackable against the ideal
/// hyperplane classifier of the given cube kind under an l_inf budget:
/// counts |w.x - b| <= eps * ||w||_1. Kind must be one of the two cube
/// hyperplanes.
McEstimate mc_linear_robust_error(SyntheticKind kind, int64_t d, double eps, int64_t n,
                                  uint64_t seed);

}  // namespace dshift
