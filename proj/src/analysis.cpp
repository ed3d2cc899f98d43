#include "dshift/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "dshift/rng.hpp"
#include "parallel.hpp"

namespace dshift {

namespace {

// ceil(frac * m) guarded against cases like 0.1 * 50 evaluating to
// 5.0000000000000004 and ceiling to 6.
int64_t frac_count(double frac, int64_t m) {
    return std::max<int64_t>(1, int64_t(std::ceil(frac * double(m) - 1e-9)));
}

}  // namespace

AnalysisSummary summarize(std::span<const double> values) {
    AnalysisSummary s;
    s.count = int64_t(values.size());
    if (values.empty()) return s;
    double sum = 0.0;
    s.min = values[0];
    s.max = values[0];
    for (double v : values) {
        sum += v;
        s.min = std::min(s.min, v);
        s.max = std::max(s.max, v);
    }
    s.mean = sum / double(s.count);
    return s;
}

double log_perturbable_volume(std::span<const double> x, double eps) {
    if (!(eps > 0.0 && eps < 1.0))
        throw std::invalid_argument("log_perturbable_volume: eps must be in (0, 1)");
    double bits = 0.0;
    for (double v : x) {
        if (!(v >= 0.0 && v <= 1.0))
            throw std::invalid_argument("log_perturbable_volume: pixels must lie in [0, 1]");
        double side = std::min(v + eps, 1.0) - std::max(v - eps, 0.0);
        bits += std::log2(side);
    }
    return bits;
}

VolumeReport dataset_log_volume(const Dataset& ds, double eps) {
    ds.validate();
    const int64_t n = ds.size();
    const int64_t d = ds.pixels_per_item();
    VolumeReport rep;
    rep.eps = eps;
    rep.per_item.resize(size_t(n));
    detail::parallel_chunks(n, 256, [&](int64_t begin, int64_t end, int64_t) {
        for (int64_t i = begin; i < end; ++i)
            rep.per_item[size_t(i)] =
                log_perturbable_volume({ds.images.ptr() + i * d, size_t(d)}, eps);
    });
    rep.summary = summarize(rep.per_item);
    return rep;
}

namespace {

double squared_distance(const double* a, const double* b, int64_t d) {
    double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
    int64_t j = 0;
    for (; j + 4 <= d; j += 4) {
        double d0 = a[j] - b[j];
        double d1 = a[j + 1] - b[j + 1];
        double d2 = a[j + 2] - b[j + 2];
        double d3 = a[j + 3] - b[j + 3];
        s0 += d0 * d0;
        s1 += d1 * d1;
        s2 += d2 * d2;
        s3 += d3 * d3;
    }
    for (; j < d; ++j) {
        double dd = a[j] - b[j];
        s0 += dd * dd;
    }
    return s0 + s1 + s2 + s3;
}

}  // namespace

double interclass_distance(const Dataset& ds, int32_t cls, double nn_frac, double sel_frac) {
    ds.validate();
    if (!(nn_frac > 0.0 && nn_frac <= 1.0) || !(sel_frac > 0.0 && sel_frac <= 1.0))
        throw std::invalid_argument("interclass_distance: fractions must be in (0, 1]");
    const int64_t n = ds.size();
    const int64_t d = ds.pixels_per_item();
    std::vector<int64_t> in_class, complement;
    for (int64_t i = 0; i < n; ++i)
        (ds.labels[size_t(i)] == cls ? in_class : complement).push_back(i);
    if (in_class.empty()) throw std::invalid_argument("interclass_distance: class is empty");
    if (complement.empty()) throw std::invalid_argument("interclass_distance: complement is empty");

    const int64_t k_nn = frac_count(nn_frac, int64_t(complement.size()));
    std::vector<double> margins(in_class.size());
    detail::parallel_chunks(int64_t(in_class.size()), 16, [&](int64_t begin, int64_t end, int64_t) {
        std::vector<double> dists(complement.size());
        for (int64_t ii = begin; ii < end; ++ii) {
            const double* a = ds.images.ptr() + in_class[size_t(ii)] * d;
            for (size_t jj = 0; jj < complement.size(); ++jj)
                dists[jj] = squared_distance(a, ds.images.ptr() + complement[jj] * d, d);
            std::nth_element(dists.begin(), dists.begin() + (k_nn - 1), dists.end());
            double acc = 0.0;
            for (int64_t t = 0; t < k_nn; ++t) acc += std::sqrt(dists[size_t(t)]);
            margins[size_t(ii)] = acc / double(k_nn);
        }
    });

    const int64_t k_sel = frac_count(sel_frac, int64_t(in_class.size()));
    std::nth_element(margins.begin(), margins.begin() + (k_sel - 1), margins.end());
    // Fixed ascending order for the final average keeps the reduction
    // deterministic.
    std::sort(margins.begin(), margins.begin() + k_sel);
    double acc = 0.0;
    for (int64_t t = 0; t < k_sel; ++t) acc += margins[size_t(t)];
    return acc / double(k_sel);
}

InterclassReport dataset_interclass(const Dataset& ds, double nn_frac, double sel_frac) {
    InterclassReport rep;
    rep.nn_frac = nn_frac;
    rep.sel_frac = sel_frac;
    for (int32_t c = 0; c < ds.num_classes; ++c)
        rep.per_class.push_back(interclass_distance(ds, c, nn_frac, sel_frac));
    double sum = 0.0;
    for (double v : rep.per_class) sum += v;
    rep.mean = sum / double(rep.per_class.size());
    return rep;
}

std::vector<int64_t> pixel_histogram(const Dataset& ds, int bins) {
    if (bins < 2) throw std::invalid_argument("pixel_histogram: bins must be >= 2");
    std::vector<int64_t> counts(size_t(bins), 0);
    for (double v : ds.images.data) {
        if (!(v >= 0.0 && v <= 1.0))
            throw std::invalid_argument("pixel_histogram: pixels must lie in [0, 1]");
        int64_t b = std::min<int64_t>(int64_t(v * bins), bins - 1);
        counts[size_t(b)]++;
    }
    return counts;
}

McEstimate mc_linear_robust_error(SyntheticKind kind, int64_t d, double eps, int64_t n,
                                  uint64_t seed) {
    if (kind == SyntheticKind::Spheres)
        throw std::invalid_argument("mc_linear_robust_error: kind must be a cube hyperplane");
    if (d < 1) throw std::invalid_argument("mc_linear_robust_error: d must be >= 1");
    if (n < 1000) throw std::invalid_argument("mc_linear_robust_error: need n >= 1000");
    if (!(eps >= 0.0)) throw std::invalid_argument("mc_linear_robust_error: eps must be >= 0");

    // For w = e1, b = 1/2: attackable iff |x_1 - 1/2| <= eps (||w||_1 = 1).
    // For w = 1, b = d/2: attackable iff |sum x - d/2| <= eps * d.
    const bool ones = kind == SyntheticKind::CubeHyperplaneOnes;
    const double threshold = ones ? eps * double(d) : eps;

    constexpr int64_t kChunk = 1 << 14;
    const int64_t n_chunks = detail::chunk_count(n, kChunk);
    std::vector<int64_t> hits(size_t(n_chunks), 0);
    detail::parallel_chunks(n, kChunk, [&](int64_t begin, int64_t end, int64_t chunk_idx) {
        // Chunk-local stream so results do not depend on the thread count.
        Rng rng(derive_seed(seed, "mc-chunk-" + std::to_string(chunk_idx)));
        int64_t local = 0;
        for (int64_t i = begin; i < end; ++i) {
            double stat;
            if (ones) {
                double s = 0.0;
                for (int64_t j = 0; j < d; ++j) s += rng.uniform01();
                stat = s - double(d) / 2.0;
            } else {
                stat = rng.uniform01() - 0.5;
                for (int64_t j = 1; j < d; ++j) rng.uniform01();
            }
            if (std::fabs(stat) <= threshold) ++local;
        }
        hits[size_t(chunk_idx)] = local;
    });

    int64_t total = 0;
    for (int64_t h : hits) total += h;
    McEstimate est;
    est.n = n;
    est.estimate = double(total) / double(n);
    est.stderr_ = std::sqrt(est.estimate * (1.0 - est.estimate) / double(n));
    return est;
}

}  // namespace dshift
