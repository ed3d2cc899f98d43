#include "dshift/bounds.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace dshift::bounds {

namespace {
constexpr double kSqrt2 = 1.41421356237309504880168872420969808;
constexpr double kSqrt2Pi = 2.50662827463100050241576528481104525;
}  // namespace

double normal_cdf(double x) { return 0.5 * std::erfc(-x / kSqrt2); }

double normal_pdf(double x) { return std::exp(-0.5 * x * x) / kSqrt2Pi; }

namespace {

// Acklam's rational approximation for the normal quantile (~1e-9 relative).
double quantile_estimate(double p) {
    static const double a[6] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                -2.759285104469687e+02, 1.383577518672690e+02,
                                -3.066479806614716e+01, 2.506628277459239e+00};
    static const double b[5] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                -1.556989798598866e+02, 6.680131188771972e+01,
                                -1.328068155288572e+01};
    static const double c[6] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                -2.400758277161838e+00, -2.549732539343734e+00,
                                4.374664141464968e+00,  2.938163982698783e+00};
    static const double d[4] = {7.784695709041462e-03, 3.224671290700398e-01,
                                2.445134137142996e+00, 3.754408661907416e+00};
    const double p_low = 0.02425;
    if (p < p_low) {
        double q = std::sqrt(-2.0 * std::log(p));
        return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
               ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }
    if (p > 1.0 - p_low) {
        double q = std::sqrt(-2.0 * std::log(1.0 - p));
        return -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
               ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }
    double q = p - 0.5;
    double r = q * q;
    return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
           (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
}

}  // namespace

double normal_quantile(double p) {
    if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("normal_quantile: p must be in (0, 1)");
    double x = quantile_estimate(p);
    for (int i = 0; i < 2; ++i) {
        double err = normal_cdf(x) - p;
        double dens = normal_pdf(x);
        if (dens > 0.0) x -= err / dens;
    }
    return x;
}

std::string_view form_name(BoundForm f) {
    switch (f) {
        case BoundForm::GaussianExact: return "gaussian-exact";
        case BoundForm::ExponentialLower: return "exponential-lower";
    }
    return "unknown";
}

BoundResult cube_mass_bound(double p_a, double eps) {
    if (!(p_a > 0.0 && p_a < 1.0))
        throw std::invalid_argument("cube_mass_bound: p must be strictly inside (0, 1)");
    if (!(eps > 0.0)) throw std::invalid_argument("cube_mass_bound: eps must be positive");
    BoundResult r;
    r.value = normal_cdf(eps * kSqrt2Pi + normal_quantile(p_a));
    r.form = BoundForm::GaussianExact;
    if (p_a >= 0.5) r.exponential_lower = 1.0 - std::exp(-M_PI * eps * eps);
    r.p_mass = p_a;
    r.eps = eps;
    r.domain = "cube";
    return r;
}

BoundResult ball_mass_bound(double p_b, double eps, int64_t d) {
    if (!(p_b > 0.0 && p_b <= 1.0))
        throw std::invalid_argument("ball_mass_bound: p must be in (0, 1]");
    if (!(eps > 0.0 && eps < 2.0)) throw std::invalid_argument("ball_mass_bound: eps must be in (0, 2)");
    if (d < 1) throw std::invalid_argument("ball_mass_bound: d must be >= 1");
    const double delta = 1.0 - std::sqrt(1.0 - eps * eps / 4.0);
    BoundResult r;
    // (1-delta)^(2d) underflows long before d ~ 3072, so stay in log space.
    r.value = 1.0 - std::exp(2.0 * static_cast<double>(d) * std::log1p(-delta)) / p_b;
    r.form = BoundForm::GaussianExact;
    const double c = (2.0 - std::sqrt(3.0)) / 3.0;
    r.exponential_lower = 1.0 - std::exp(-2.0 * static_cast<double>(d) * c * eps * eps) / p_b;
    r.p_mass = p_b;
    r.eps = eps;
    r.dim = d;
    r.domain = "ball";
    return r;
}

double vulnerability_bound(int64_t k, double eps, std::string_view domain,
                           std::optional<int64_t> d) {
    if (k < 2) throw std::invalid_argument("vulnerability_bound: k must be >= 2");
    const double complement = 1.0 - 1.0 / static_cast<double>(k);
    double per_class;
    if (domain == "cube") {
        per_class = cube_mass_bound(complement, eps).value;
    } else if (domain == "ball") {
        if (!d) throw std::invalid_argument("vulnerability_bound: ball domain requires d");
        per_class = ball_mass_bound(complement, eps, *d).value;
    } else {
        throw std::invalid_argument("vulnerability_bound: domain must be cube or ball");
    }
    double v = 1.0 - static_cast<double>(k) * (1.0 - per_class);
    return std::clamp(v, 0.0, 1.0);
}

}  // namespace dshift::bounds
