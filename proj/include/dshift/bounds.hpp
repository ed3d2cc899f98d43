#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace dshift::bounds {

/// Standard normal CDF. Accurate to ~1e-15 absolute over [-8, 8].
double normal_cdf(double x);

/// Standard normal density.
double normal_pdf(double x);

/// Inverse of normal_cdf on (0, 1). Rational initial guess refined by two
/// Newton steps, so normal_cdf(normal_quantile(p)) == p to ~1e-15.
double normal_quantile(double p);

enum class BoundForm { GaussianExact, ExponentialLower };

std::string_view form_name(BoundForm f);

/// One evaluated lower bound on the mass of an eps-neighborhood, with the
/// looser exponential companion when it is defined for the same inputs.
struct BoundResult {
    double value = 0.0;
    BoundForm form = BoundForm::GaussianExact;
    std::optional<double> exponential_lower;

    // echoed inputs
    double p_mass = 0.0;
    double eps = 0.0;
    int64_t dim = 0;
    std::string domain;
};

/// Lower bound on the uniform mass of the eps-neighborhood (Euclidean) of a
/// set of mass p_a in the unit cube: Phi(eps*sqrt(2*pi) + Phi^{-1}(p_a)).
/// The exponential companion 1 - exp(-pi*eps^2) is attached when p_a >= 1/2.
BoundResult cube_mass_bound(double p_a, double eps);

/// Lower bound on the uniform mass of the eps-neighborhood of a set of mass
/// p_b in the unit d-ball: 1 - (1/p_b)*(1-delta(eps))^(2d) with
/// delta(eps) = 1 - sqrt(1 - eps^2/4), evaluated in log space. The companion
/// uses delta(eps) >= C*eps^2 with C = (2-sqrt(3))/3.
BoundResult ball_mass_bound(double p_b, double eps, int64_t d);

/// Fraction of samples that any perfect classifier must leave attackable
/// under an l2 budget eps, for k equiprobable classes on the uniform cube or
/// ball. Composes the per-class neighborhood bound over all classes and
/// clamps into [0, 1].
double vulnerability_bound(int64_t k, double eps, std::string_view domain,
                           std::optional<int64_t> d = std::nullopt);

}  // namespace dshift::bounds
