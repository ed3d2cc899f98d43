#pragma once

#include <cstdint>
#include <string>

#include "dshift/dataset.hpp"
#include "dshift/tensor.hpp"

namespace dshift {

enum class TransformKind { Binarize, Smooth, Saturate, Gamma, Scale, Edge };

/// One semantics-preserving pixel-space shift. `param` is the kind-specific
/// knob (s, p, gamma, alpha, sigma); Edge also carries hysteresis thresholds.
struct TransformSpec {
    TransformKind kind = TransformKind::Binarize;
    double param = 0.0;
    double t_low = 0.1;
    double t_high = 0.2;

    void validate() const;
    std::string to_string() const;
    /// Parses "binarize", "smooth(s=3)", "saturate(p=8)", "saturate(p=inf)",
    /// "gamma(g=1.4)", "scale(a=0.821)", "edge(sigma=1)",
    /// "edge(sigma=1,tlow=0.1,thigh=0.2)".
    static TransformSpec parse(std::string_view text);
};

// Element maps on [0,1] tensors. All compute in double precision.
Tensor binarize(const Tensor& x);
Tensor smooth(const Tensor& x, int64_t s);
Tensor saturate(const Tensor& x, double p);  // p >= 1, p = inf allowed
Tensor gamma_map(const Tensor& x, double gamma);
Tensor scale_center(const Tensor& x, double alpha);
Tensor edge_detect(const Tensor& x, double sigma, double t_low, double t_high);

/// Applies the transform to every image; labels carry over unchanged and the
/// provenance chain is extended.
Dataset apply(const Dataset& ds, const TransformSpec& spec);

/// Applies a semicolon-joined chain such as "binarize;smooth(s=3)".
/// "none" or the empty string is the identity.
Dataset apply_chain(const Dataset& ds, const std::string& chain);

}  // namespace dshift
