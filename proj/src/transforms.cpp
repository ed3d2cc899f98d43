#include "dshift/transforms.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <limits>
#include <stdexcept>

namespace dshift {

namespace {

void require_unit_range(const Tensor& x, const char* where) {
    for (double v : x.data)
        if (!(v >= 0.0 && v <= 1.0))
            throw std::invalid_argument(std::string(where) + ": input pixels must lie in [0, 1]");
}

std::string fmt_param(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%g", v);
    return buf;
}

// Parses "name(k=v,k2=v2)" into name + key/value list.
struct ParsedCall {
    std::string name;
    std::vector<std::pair<std::string, double>> args;
};

double parse_number(const std::string& text) {
    if (text == "inf") return std::numeric_limits<double>::infinity();
    size_t used = 0;
    double v = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument("transform: bad number '" + text + "'");
    return v;
}

ParsedCall parse_call(std::string_view text) {
    ParsedCall out;
    auto open = text.find('(');
    if (open == std::string_view::npos) {
        out.name = std::string(text);
        return out;
    }
    if (text.back() != ')') throw std::invalid_argument("transform: missing ')' in '" + std::string(text) + "'");
    out.name = std::string(text.substr(0, open));
    std::string inner(text.substr(open + 1, text.size() - open - 2));
    size_t pos = 0;
    while (pos < inner.size()) {
        size_t comma = inner.find(',', pos);
        if (comma == std::string::npos) comma = inner.size();
        std::string item = inner.substr(pos, comma - pos);
        auto eq = item.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("transform: expected key=value in '" + item + "'");
        out.args.emplace_back(item.substr(0, eq), parse_number(item.substr(eq + 1)));
        pos = comma + 1;
    }
    return out;
}

}  // namespace

void TransformSpec::validate() const {
    switch (kind) {
        case TransformKind::Binarize:
            break;
        case TransformKind::Smooth:
            if (!(param >= 1.0) || param != std::floor(param))
                throw std::invalid_argument("smooth: kernel size must be an integer >= 1");
            break;
        case TransformKind::Saturate:
            if (!(param >= 1.0))  // accepts inf
                throw std::invalid_argument("saturate: p must be >= 1 or inf");
            break;
        case TransformKind::Gamma:
            if (!(param > 0.0) || std::isinf(param))
                throw std::invalid_argument("gamma: exponent must be positive and finite");
            break;
        case TransformKind::Scale:
            if (!(param > 0.0 && param <= 1.0))
                throw std::invalid_argument("scale: alpha must be in (0, 1]");
            break;
        case TransformKind::Edge:
            if (!(param > 0.0)) throw std::invalid_argument("edge: sigma must be positive");
            if (!(t_low >= 0.0 && t_low < t_high))
                throw std::invalid_argument("edge: need 0 <= t_low < t_high");
            break;
    }
}

std::string TransformSpec::to_string() const {
    switch (kind) {
        case TransformKind::Binarize: return "binarize";
        case TransformKind::Smooth: return "smooth(s=" + fmt_param(param) + ")";
        case TransformKind::Saturate:
            return std::isinf(param) ? std::string("saturate(p=inf)")
                                     : "saturate(p=" + fmt_param(param) + ")";
        case TransformKind::Gamma: return "gamma(g=" + fmt_param(param) + ")";
        case TransformKind::Scale: return "scale(a=" + fmt_param(param) + ")";
        case TransformKind::Edge:
            return "edge(sigma=" + fmt_param(param) + ",tlow=" + fmt_param(t_low) +
                   ",thigh=" + fmt_param(t_high) + ")";
    }
    return "unknown";
}

TransformSpec TransformSpec::parse(std::string_view text) {
    ParsedCall call = parse_call(text);
    TransformSpec spec;
    auto arg = [&](const std::string& key) -> double {
        for (auto& [k, v] : call.args)
            if (k == key) return v;
        throw std::invalid_argument("transform '" + call.name + "': missing argument " + key);
    };
    auto arg_or = [&](const std::string& key, double dflt) -> double {
        for (auto& [k, v] : call.args)
            if (k == key) return v;
        return dflt;
    };
    if (call.name == "binarize") {
        spec.kind = TransformKind::Binarize;
    } else if (call.name == "smooth") {
        spec.kind = TransformKind::Smooth;
        spec.param = arg("s");
    } else if (call.name == "saturate") {
        spec.kind = TransformKind::Saturate;
        spec.param = arg("p");
    } else if (call.name == "gamma") {
        spec.kind = TransformKind::Gamma;
        spec.param = arg("g");
    } else if (call.name == "scale") {
        spec.kind = TransformKind::Scale;
        spec.param = arg("a");
    } else if (call.name == "edge") {
        spec.kind = TransformKind::Edge;
        spec.param = arg_or("sigma", 1.0);
        spec.t_low = arg_or("tlow", 0.1);
        spec.t_high = arg_or("thigh", 0.2);
    } else {
        throw std::invalid_argument("unknown transform: '" + call.name + "'");
    }
    spec.validate();
    return spec;
}

Tensor binarize(const Tensor& x) {
    require_unit_range(x, "binarize");
    Tensor out = x;
    for (double& v : out.data) v = v >= 0.5 ? 1.0 : 0.0;
    return out;
}

Tensor smooth(const Tensor& x, int64_t s) {
    require_unit_range(x, "smooth");
    if (x.ndim() != 4) throw std::invalid_argument("smooth: expected N x C x H x W");
    const int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (s < 1) throw std::invalid_argument("smooth: kernel size must be >= 1");
    if (s > std::min(h, w)) throw std::invalid_argument("smooth: kernel larger than image side");

    Tensor out = x;
    const int64_t lo = (s - 1) / 2;  // even kernels anchor top-left
    const double inv = 1.0 / (double(s) * double(s));
    for (int64_t img = 0; img < n * c; ++img) {
        const double* src = x.ptr() + img * h * w;
        double* dst = out.ptr() + img * h * w;
        for (int64_t i = 0; i < h; ++i) {
            for (int64_t j = 0; j < w; ++j) {
                double sum = 0.0;  // zero padding: out-of-bounds taps contribute nothing
                for (int64_t u = i - lo; u < i - lo + s; ++u) {
                    if (u < 0 || u >= h) continue;
                    for (int64_t v = j - lo; v < j - lo + s; ++v) {
                        if (v < 0 || v >= w) continue;
                        sum += src[u * w + v];
                    }
                }
                double blur = sum * inv;
                double orig = src[i * w + j];
                dst[i * w + j] = std::max(orig, blur);
            }
        }
    }
    return out;
}

Tensor saturate(const Tensor& x, double p) {
    require_unit_range(x, "saturate");
    if (!(p >= 1.0)) throw std::invalid_argument("saturate: p must be >= 1 or inf");
    Tensor out = x;
    if (std::isinf(p)) {
        // Explicit three-way threshold; the power form would hit 0^0.
        for (double& v : out.data) v = v > 0.5 ? 1.0 : (v < 0.5 ? 0.0 : 0.5);
        return out;
    }
    const double e = 2.0 / p;
    for (double& v : out.data) {
        double t = 2.0 * v - 1.0;
        double s = t > 0.0 ? 1.0 : (t < 0.0 ? -1.0 : 0.0);
        v = s * std::pow(std::fabs(t), e) / 2.0 + 0.5;
    }
    return out;
}

Tensor gamma_map(const Tensor& x, double gamma) {
    require_unit_range(x, "gamma");
    if (!(gamma > 0.0) || std::isinf(gamma))
        throw std::invalid_argument("gamma: exponent must be positive and finite");
    Tensor out = x;
    for (double& v : out.data) v = std::pow(v, gamma);
    return out;
}

Tensor scale_center(const Tensor& x, double alpha) {
    require_unit_range(x, "scale");
    if (!(alpha > 0.0 && alpha <= 1.0)) throw std::invalid_argument("scale: alpha must be in (0, 1]");
    Tensor out = x;
    for (double& v : out.data) v = alpha * (v - 0.5) + 0.5;
    return out;
}

namespace {

// Separable Gaussian blur with replicate borders (zero padding would
// manufacture edges along the image boundary).
void gaussian_blur(const double* src, double* dst, int64_t h, int64_t w, double sigma,
                   std::vector<double>& tmp) {
    int64_t radius = std::max<int64_t>(1, int64_t(std::ceil(3.0 * sigma)));
    std::vector<double> kernel(size_t(2 * radius + 1));
    double sum = 0.0;
    for (int64_t i = -radius; i <= radius; ++i) {
        double v = std::exp(-0.5 * double(i * i) / (sigma * sigma));
        kernel[size_t(i + radius)] = v;
        sum += v;
    }
    for (double& v : kernel) v /= sum;

    tmp.assign(size_t(h * w), 0.0);
    for (int64_t i = 0; i < h; ++i)
        for (int64_t j = 0; j < w; ++j) {
            double acc = 0.0;
            for (int64_t t = -radius; t <= radius; ++t) {
                int64_t jj = std::clamp<int64_t>(j + t, 0, w - 1);
                acc += kernel[size_t(t + radius)] * src[i * w + jj];
            }
            tmp[size_t(i * w + j)] = acc;
        }
    for (int64_t i = 0; i < h; ++i)
        for (int64_t j = 0; j < w; ++j) {
            double acc = 0.0;
            for (int64_t t = -radius; t <= radius; ++t) {
                int64_t ii = std::clamp<int64_t>(i + t, 0, h - 1);
                acc += kernel[size_t(t + radius)] * tmp[size_t(ii * w + j)];
            }
            dst[i * w + j] = acc;
        }
}

}  // namespace

Tensor edge_detect(const Tensor& x, double sigma, double t_low, double t_high) {
    require_unit_range(x, "edge");
    if (x.ndim() != 4) throw std::invalid_argument("edge: expected N x C x H x W");
    if (x.dim(1) != 1) throw std::invalid_argument("edge: single-channel input required");
    if (!(sigma > 0.0)) throw std::invalid_argument("edge: sigma must be positive");
    if (!(t_low >= 0.0 && t_low < t_high)) throw std::invalid_argument("edge: need 0 <= t_low < t_high");

    const int64_t n = x.dim(0), h = x.dim(2), w = x.dim(3);
    Tensor out = Tensor::zeros({n, 1, h, w});
    std::vector<double> blurred(size_t(h * w)), tmp, gx(size_t(h * w)), gy(size_t(h * w)),
        mag(size_t(h * w)), thin(size_t(h * w));

    auto at = [&](const std::vector<double>& f, int64_t i, int64_t j) {
        i = std::clamp<int64_t>(i, 0, h - 1);
        j = std::clamp<int64_t>(j, 0, w - 1);
        return f[size_t(i * w + j)];
    };

    for (int64_t img = 0; img < n; ++img) {
        const double* src = x.ptr() + img * h * w;
        gaussian_blur(src, blurred.data(), h, w, sigma, tmp);

        double max_mag = 0.0;
        for (int64_t i = 0; i < h; ++i)
            for (int64_t j = 0; j < w; ++j) {
                double sx = at(blurred, i - 1, j + 1) + 2.0 * at(blurred, i, j + 1) +
                            at(blurred, i + 1, j + 1) - at(blurred, i - 1, j - 1) -
                            2.0 * at(blurred, i, j - 1) - at(blurred, i + 1, j - 1);
                double sy = at(blurred, i + 1, j - 1) + 2.0 * at(blurred, i + 1, j) +
                            at(blurred, i + 1, j + 1) - at(blurred, i - 1, j - 1) -
                            2.0 * at(blurred, i - 1, j) - at(blurred, i - 1, j + 1);
                gx[size_t(i * w + j)] = sx;
                gy[size_t(i * w + j)] = sy;
                double m = std::hypot(sx, sy);
                mag[size_t(i * w + j)] = m;
                max_mag = std::max(max_mag, m);
            }
        if (max_mag > 0.0)
            for (double& m : mag) m /= max_mag;

        // Non-maximum suppression along the quantized gradient direction.
        std::fill(thin.begin(), thin.end(), 0.0);
        for (int64_t i = 0; i < h; ++i)
            for (int64_t j = 0; j < w; ++j) {
                double m = mag[size_t(i * w + j)];
                if (m <= 0.0) continue;
                double angle = std::atan2(gy[size_t(i * w + j)], gx[size_t(i * w + j)]);
                double deg = angle * 180.0 / M_PI;
                if (deg < 0.0) deg += 180.0;
                int di, dj;
                if (deg < 22.5 || deg >= 157.5) {
                    di = 0; dj = 1;
                } else if (deg < 67.5) {
                    di = 1; dj = 1;
                } else if (deg < 112.5) {
                    di = 1; dj = 0;
                } else {
                    di = 1; dj = -1;
                }
                auto neighbor = [&](int64_t ii, int64_t jj) {
                    if (ii < 0 || ii >= h || jj < 0 || jj >= w) return 0.0;
                    return mag[size_t(ii * w + jj)];
                };
                if (m >= neighbor(i + di, j + dj) && m >= neighbor(i - di, j - dj))
                    thin[size_t(i * w + j)] = m;
            }

        // Hysteresis: seed at strong pixels, grow through weak ones
        // (8-connected).
        double* dst = out.ptr() + img * h * w;
        std::deque<int64_t> queue;
        for (int64_t idx = 0; idx < h * w; ++idx)
            if (thin[size_t(idx)] >= t_high) {
                dst[idx] = 1.0;
                queue.push_back(idx);
            }
        while (!queue.empty()) {
            int64_t idx = queue.front();
            queue.pop_front();
            int64_t i = idx / w, j = idx % w;
            for (int64_t di = -1; di <= 1; ++di)
                for (int64_t dj = -1; dj <= 1; ++dj) {
                    int64_t ii = i + di, jj = j + dj;
                    if (ii < 0 || ii >= h || jj < 0 || jj >= w) continue;
                    int64_t nidx = ii * w + jj;
                    if (dst[nidx] == 0.0 && thin[size_t(nidx)] >= t_low) {
                        dst[nidx] = 1.0;
                        queue.push_back(nidx);
                    }
                }
        }
    }
    return out;
}

Dataset apply(const Dataset& ds, const TransformSpec& spec) {
    spec.validate();
    Dataset out;
    switch (spec.kind) {
        case TransformKind::Binarize: out.images = binarize(ds.images); break;
        case TransformKind::Smooth: out.images = smooth(ds.images, int64_t(spec.param)); break;
        case TransformKind::Saturate: out.images = saturate(ds.images, spec.param); break;
        case TransformKind::Gamma: out.images = gamma_map(ds.images, spec.param); break;
        case TransformKind::Scale: out.images = scale_center(ds.images, spec.param); break;
        case TransformKind::Edge:
            out.images = edge_detect(ds.images, spec.param, spec.t_low, spec.t_high);
            break;
    }
    out.labels = ds.labels;
    out.num_classes = ds.num_classes;
    out.meta = ds.meta;
    out.meta.chain.push_back(spec.to_string());
    return out;
}

Dataset apply_chain(const Dataset& ds, const std::string& chain) {
    if (chain.empty() || chain == "none") return ds;
    Dataset cur = ds;
    for (const std::string& item : DatasetMeta::parse_chain(chain))
        if (item != "none") cur = apply(cur, TransformSpec::parse(item));
    return cur;
}

}  // namespace dshift
