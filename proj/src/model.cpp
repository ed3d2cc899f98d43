#include "dshift/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "dshift/rng.hpp"
#include "parallel.hpp"

namespace dshift {

namespace {

constexpr int64_t kChunk = 4;  // examples per parallel work unit

int64_t widen_round(int64_t base, double widen) {
    return std::max<int64_t>(1, int64_t(std::floor(double(base) * widen + 0.5)));
}

double dot(const double* a, const double* b, int64_t n) {
    double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
    int64_t i = 0;
    for (; i + 4 <= n; i += 4) {
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    for (; i < n; ++i) s0 += a[i] * b[i];
    return s0 + s1 + s2 + s3;
}

void build_padded(const double* x, int64_t c, int64_t h, int64_t w, int64_t pad, double* xp) {
    const int64_t hp = h + 2 * pad, wp = w + 2 * pad;
    std::fill(xp, xp + c * hp * wp, 0.0);
    for (int64_t ci = 0; ci < c; ++ci)
        for (int64_t i = 0; i < h; ++i)
            std::memcpy(xp + (ci * hp + i + pad) * wp + pad, x + (ci * h + i) * w,
                        size_t(w) * sizeof(double));
}

// ---------------------------------------------------------------- conv

Tensor conv_forward(const Tensor& x, const Layer& ly) {
    const int64_t n = x.dim(0), ic = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int64_t oc = ly.weight.dim(0), k = ly.weight.dim(2);
    const int64_t pad = (k - 1) / 2;
    const int64_t hp = h + 2 * pad, wp = w + 2 * pad;
    Tensor out({n, oc, h, w});
    const double* wt = ly.weight.ptr();
    const double* bias = ly.bias.ptr();
    detail::parallel_chunks(n, kChunk, [&](int64_t begin, int64_t end, int64_t) {
        std::vector<double> xpad(size_t(ic * hp * wp));
        for (int64_t ni = begin; ni < end; ++ni) {
            build_padded(x.ptr() + ni * ic * h * w, ic, h, w, pad, xpad.data());
            for (int64_t o = 0; o < oc; ++o) {
                double* plane = out.ptr() + ((ni * oc + o) * h) * w;
                std::fill(plane, plane + h * w, bias[o]);
                for (int64_t c = 0; c < ic; ++c)
                    for (int64_t u = 0; u < k; ++u)
                        for (int64_t v = 0; v < k; ++v) {
                            const double wv = wt[((o * ic + c) * k + u) * k + v];
                            for (int64_t i = 0; i < h; ++i) {
                                const double* xr = xpad.data() + (c * hp + i + u) * wp + v;
                                double* orow = plane + i * w;
                                for (int64_t j = 0; j < w; ++j) orow[j] += wv * xr[j];
                            }
                        }
            }
        }
    });
    return out;
}

Tensor conv_backward_input(const Tensor& g, const Layer& ly, int64_t ic, int64_t h, int64_t w) {
    const int64_t n = g.dim(0), oc = g.dim(1), k = ly.weight.dim(2);
    const int64_t pad = (k - 1) / 2;
    const int64_t hp = h + 2 * pad, wp = w + 2 * pad;
    Tensor dx({n, ic, h, w});
    const double* wt = ly.weight.ptr();
    detail::parallel_chunks(n, kChunk, [&](int64_t begin, int64_t end, int64_t) {
        std::vector<double> dxpad(size_t(ic * hp * wp));
        for (int64_t ni = begin; ni < end; ++ni) {
            std::fill(dxpad.begin(), dxpad.end(), 0.0);
            for (int64_t o = 0; o < oc; ++o) {
                const double* gplane = g.ptr() + ((ni * oc + o) * h) * w;
                for (int64_t c = 0; c < ic; ++c)
                    for (int64_t u = 0; u < k; ++u)
                        for (int64_t v = 0; v < k; ++v) {
                            const double wv = wt[((o * ic + c) * k + u) * k + v];
                            for (int64_t i = 0; i < h; ++i) {
                                double* dxr = dxpad.data() + (c * hp + i + u) * wp + v;
                                const double* grow = gplane + i * w;
                                for (int64_t j = 0; j < w; ++j) dxr[j] += wv * grow[j];
                            }
                        }
            }
            for (int64_t c = 0; c < ic; ++c)
                for (int64_t i = 0; i < h; ++i)
                    std::memcpy(dx.ptr() + ((ni * ic + c) * h + i) * w,
                                dxpad.data() + (c * hp + i + pad) * wp + pad,
                                size_t(w) * sizeof(double));
        }
    });
    return dx;
}

void conv_backward_params(const Tensor& x, const Tensor& g, const Layer& ly, LayerGrads& out) {
    const int64_t n = x.dim(0), ic = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int64_t oc = ly.weight.dim(0), k = ly.weight.dim(2);
    const int64_t pad = (k - 1) / 2;
    const int64_t hp = h + 2 * pad, wp = w + 2 * pad;
    const int64_t wsize = oc * ic * k * k;
    const int64_t slots = detail::chunk_count(n, kChunk);
    std::vector<double> dw_slots(size_t(slots * wsize), 0.0);
    std::vector<double> db_slots(size_t(slots * oc), 0.0);
    detail::parallel_chunks(n, kChunk, [&](int64_t begin, int64_t end, int64_t slot) {
        std::vector<double> xpad(size_t(ic * hp * wp));
        double* dw = dw_slots.data() + slot * wsize;
        double* db = db_slots.data() + slot * oc;
        for (int64_t ni = begin; ni < end; ++ni) {
            build_padded(x.ptr() + ni * ic * h * w, ic, h, w, pad, xpad.data());
            for (int64_t o = 0; o < oc; ++o) {
                const double* gplane = g.ptr() + ((ni * oc + o) * h) * w;
                double bsum = 0.0;
                for (int64_t i = 0; i < h * w; ++i) bsum += gplane[i];
                db[o] += bsum;
                for (int64_t c = 0; c < ic; ++c)
                    for (int64_t u = 0; u < k; ++u)
                        for (int64_t v = 0; v < k; ++v) {
                            double acc = 0.0;
                            for (int64_t i = 0; i < h; ++i)
                                acc += dot(gplane + i * w, xpad.data() + (c * hp + i + u) * wp + v, w);
                            dw[((o * ic + c) * k + u) * k + v] += acc;
                        }
            }
        }
    });
    out.weight = Tensor(ly.weight.shape);
    out.bias = Tensor(ly.bias.shape);
    // Slot-order reduction keeps the sum independent of thread scheduling.
    for (int64_t s = 0; s < slots; ++s) {
        for (int64_t i = 0; i < wsize; ++i) out.weight.data[size_t(i)] += dw_slots[size_t(s * wsize + i)];
        for (int64_t i = 0; i < oc; ++i) out.bias.data[size_t(i)] += db_slots[size_t(s * oc + i)];
    }
}

// ---------------------------------------------------------------- dense

Tensor dense_forward(const Tensor& x, const Layer& ly) {
    const int64_t n = x.dim(0), in = ly.weight.dim(0), out_dim = ly.weight.dim(1);
    Tensor out({n, out_dim});
    const double* wt = ly.weight.ptr();
    detail::parallel_chunks(n, kChunk, [&](int64_t begin, int64_t end, int64_t) {
        for (int64_t ni = begin; ni < end; ++ni) {
            const double* xr = x.ptr() + ni * in;
            double* orow = out.ptr() + ni * out_dim;
            std::memcpy(orow, ly.bias.ptr(), size_t(out_dim) * sizeof(double));
            for (int64_t i = 0; i < in; ++i) {
                const double xv = xr[i];
                if (xv == 0.0) continue;  // ReLU inputs are ~half zeros
                const double* wrow = wt + i * out_dim;
                for (int64_t o = 0; o < out_dim; ++o) orow[o] += xv * wrow[o];
            }
        }
    });
    return out;
}

Tensor dense_backward_input(const Tensor& g, const Layer& ly) {
    const int64_t n = g.dim(0), in = ly.weight.dim(0), out_dim = ly.weight.dim(1);
    Tensor dx({n, in});
    const double* wt = ly.weight.ptr();
    detail::parallel_chunks(n, kChunk, [&](int64_t begin, int64_t end, int64_t) {
        for (int64_t ni = begin; ni < end; ++ni) {
            const double* grow = g.ptr() + ni * out_dim;
            double* dxr = dx.ptr() + ni * in;
            for (int64_t i = 0; i < in; ++i) dxr[i] = dot(grow, wt + i * out_dim, out_dim);
        }
    });
    return dx;
}

void dense_backward_params(const Tensor& x, const Tensor& g, const Layer& ly, LayerGrads& out) {
    const int64_t n = x.dim(0), in = ly.weight.dim(0), out_dim = ly.weight.dim(1);
    const int64_t wsize = in * out_dim;
    const int64_t slots = detail::chunk_count(n, kChunk);
    std::vector<double> dw_slots(size_t(slots * wsize), 0.0);
    std::vector<double> db_slots(size_t(slots * out_dim), 0.0);
    detail::parallel_chunks(n, kChunk, [&](int64_t begin, int64_t end, int64_t slot) {
        double* dw = dw_slots.data() + slot * wsize;
        double* db = db_slots.data() + slot * out_dim;
        for (int64_t ni = begin; ni < end; ++ni) {
            const double* xr = x.ptr() + ni * in;
            const double* grow = g.ptr() + ni * out_dim;
            for (int64_t o = 0; o < out_dim; ++o) db[o] += grow[o];
            for (int64_t i = 0; i < in; ++i) {
                const double xv = xr[i];
                if (xv == 0.0) continue;
                double* dwr = dw + i * out_dim;
                for (int64_t o = 0; o < out_dim; ++o) dwr[o] += xv * grow[o];
            }
        }
    });
    out.weight = Tensor(ly.weight.shape);
    out.bias = Tensor(ly.bias.shape);
    for (int64_t s = 0; s < slots; ++s) {
        for (int64_t i = 0; i < wsize; ++i) out.weight.data[size_t(i)] += dw_slots[size_t(s * wsize + i)];
        for (int64_t i = 0; i < out_dim; ++i) out.bias.data[size_t(i)] += db_slots[size_t(s * out_dim + i)];
    }
}

// ---------------------------------------------------------------- pool / relu

Tensor pool_forward(const Tensor& x, std::vector<int32_t>& argmax) {
    const int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int64_t ho = h / 2, wo = w / 2;
    Tensor out({n, c, ho, wo});
    argmax.assign(size_t(n * c * ho * wo), 0);
    detail::parallel_chunks(n, kChunk, [&](int64_t begin, int64_t end, int64_t) {
        for (int64_t ni = begin; ni < end; ++ni)
            for (int64_t ci = 0; ci < c; ++ci) {
                const double* plane = x.ptr() + (ni * c + ci) * h * w;
                double* oplane = out.ptr() + (ni * c + ci) * ho * wo;
                int32_t* aplane = argmax.data() + (ni * c + ci) * ho * wo;
                for (int64_t i = 0; i < ho; ++i)
                    for (int64_t j = 0; j < wo; ++j) {
                        double best = plane[(2 * i) * w + 2 * j];
                        int32_t arg = 0;
                        // scan order fixes tie-breaks to the first maximum
                        for (int32_t t = 1; t < 4; ++t) {
                            double v = plane[(2 * i + t / 2) * w + 2 * j + t % 2];
                            if (v > best) {
                                best = v;
                                arg = t;
                            }
                        }
                        oplane[i * wo + j] = best;
                        aplane[i * wo + j] = arg;
                    }
            }
    });
    return out;
}

Tensor pool_backward(const Tensor& g, const std::vector<int32_t>& argmax, int64_t h, int64_t w) {
    const int64_t n = g.dim(0), c = g.dim(1), ho = g.dim(2), wo = g.dim(3);
    Tensor dx({n, c, h, w});
    detail::parallel_chunks(n, kChunk, [&](int64_t begin, int64_t end, int64_t) {
        for (int64_t ni = begin; ni < end; ++ni)
            for (int64_t ci = 0; ci < c; ++ci) {
                const double* gplane = g.ptr() + (ni * c + ci) * ho * wo;
                const int32_t* aplane = argmax.data() + (ni * c + ci) * ho * wo;
                double* dplane = dx.ptr() + (ni * c + ci) * h * w;
                for (int64_t i = 0; i < ho; ++i)
                    for (int64_t j = 0; j < wo; ++j) {
                        int32_t t = aplane[i * wo + j];
                        dplane[(2 * i + t / 2) * w + 2 * j + t % 2] = gplane[i * wo + j];
                    }
            }
    });
    return dx;
}

Tensor relu_forward(const Tensor& x) {
    Tensor out = x;
    for (double& v : out.data) v = v > 0.0 ? v : 0.0;
    return out;
}

Tensor relu_backward(const Tensor& x, const Tensor& g) {
    Tensor dx = g;
    for (int64_t i = 0; i < x.numel(); ++i)
        if (x.data[size_t(i)] <= 0.0) dx.data[size_t(i)] = 0.0;
    return dx;
}

// ---------------------------------------------------------------- standardization

struct StdTrace {
    std::vector<double> denom;
    std::vector<uint8_t> floored;
};

Tensor standardize_forward(const Tensor& x, StdTrace& tr) {
    const int64_t n = x.dim(0);
    const int64_t d = x.numel() / n;
    const double floor_val = 1.0 / std::sqrt(double(d));
    Tensor out(x.shape);
    tr.denom.assign(size_t(n), 0.0);
    tr.floored.assign(size_t(n), 0);
    detail::parallel_chunks(n, kChunk, [&](int64_t begin, int64_t end, int64_t) {
        for (int64_t ni = begin; ni < end; ++ni) {
            const double* xr = x.ptr() + ni * d;
            double* yr = out.ptr() + ni * d;
            double mean = 0.0;
            for (int64_t i = 0; i < d; ++i) mean += xr[i];
            mean /= double(d);
            double var = 0.0;
            for (int64_t i = 0; i < d; ++i) {
                double c = xr[i] - mean;
                var += c * c;
            }
            var /= double(d);
            double sigma = std::sqrt(var);
            bool floored = sigma <= floor_val;
            double denom = floored ? floor_val : sigma;
            for (int64_t i = 0; i < d; ++i) yr[i] = (xr[i] - mean) / denom;
            tr.denom[size_t(ni)] = denom;
            tr.floored[size_t(ni)] = floored ? 1 : 0;
        }
    });
    return out;
}

Tensor standardize_backward(const Tensor& g, const Tensor& y, const StdTrace& tr) {
    const int64_t n = g.dim(0);
    const int64_t d = g.numel() / n;
    Tensor dx(g.shape);
    detail::parallel_chunks(n, kChunk, [&](int64_t begin, int64_t end, int64_t) {
        for (int64_t ni = begin; ni < end; ++ni) {
            const double* gr = g.ptr() + ni * d;
            const double* yr = y.ptr() + ni * d;
            double* dxr = dx.ptr() + ni * d;
            const double denom = tr.denom[size_t(ni)];
            double gmean = 0.0;
            for (int64_t i = 0; i < d; ++i) gmean += gr[i];
            gmean /= double(d);
            if (tr.floored[size_t(ni)]) {
                for (int64_t i = 0; i < d; ++i) dxr[i] = (gr[i] - gmean) / denom;
            } else {
                double gy = 0.0;
                for (int64_t i = 0; i < d; ++i) gy += gr[i] * yr[i];
                gy /= double(d);
                for (int64_t i = 0; i < d; ++i) dxr[i] = (gr[i] - gmean - yr[i] * gy) / denom;
            }
        }
    });
    return dx;
}

// ---------------------------------------------------------------- loss

void softmax_ce(const Tensor& logits, std::span<const int32_t> labels, LossValue& loss,
                Tensor* dlogits) {
    const int64_t n = logits.dim(0), k = logits.dim(1);
    loss.per_example.resize(size_t(n));
    if (dlogits) *dlogits = Tensor(logits.shape);
    for (int64_t ni = 0; ni < n; ++ni) {
        const double* z = logits.ptr() + ni * k;
        double m = z[0];
        for (int64_t c = 1; c < k; ++c) m = std::max(m, z[c]);
        double sum = 0.0;
        for (int64_t c = 0; c < k; ++c) sum += std::exp(z[c] - m);
        double lse = m + std::log(sum);
        loss.per_example[size_t(ni)] = lse - z[labels[size_t(ni)]];
        if (dlogits) {
            double* dz = dlogits->ptr() + ni * k;
            for (int64_t c = 0; c < k; ++c) dz[c] = std::exp(z[c] - lse) / double(n);
            dz[labels[size_t(ni)]] -= 1.0 / double(n);
        }
    }
    double acc = 0.0;
    for (double v : loss.per_example) acc += v;
    loss.mean = acc / double(n);
}

// ---------------------------------------------------------------- forward driver

struct Trace {
    std::vector<Tensor> acts;  // acts[l] = input to layer l; back() = logits
    std::vector<std::vector<int32_t>> pool_arg;
    StdTrace std_trace;
};

void validate_batch(const Model& model, const Tensor& batch) {
    if (batch.ndim() != 4) throw std::invalid_argument("forward: batch must be N x C x H x W");
    for (int i = 0; i < 3; ++i)
        if (batch.dim(i + 1) != model.input_shape[size_t(i)])
            throw std::invalid_argument("forward: batch shape " + shape_string(batch.shape) +
                                        " does not match model input");
    if (!batch.all_finite()) throw std::invalid_argument("forward: batch contains non-finite values");
}

Tensor forward_internal(const Model& model, const Tensor& batch, Trace* tr) {
    validate_batch(model, batch);
    StdTrace local_std;
    StdTrace& st = tr ? tr->std_trace : local_std;
    Tensor cur = model.standardize_input ? standardize_forward(batch, st) : batch;
    if (tr) tr->pool_arg.resize(model.layers.size());
    for (size_t l = 0; l < model.layers.size(); ++l) {
        const Layer& ly = model.layers[l];
        Tensor next;
        switch (ly.kind) {
            case LayerKind::Conv: next = conv_forward(cur, ly); break;
            case LayerKind::ReLU: next = relu_forward(cur); break;
            case LayerKind::MaxPool2: {
                std::vector<int32_t> arg;
                next = pool_forward(cur, arg);
                if (tr) tr->pool_arg[l] = std::move(arg);
                break;
            }
            case LayerKind::Flatten: next = cur.reshaped({cur.dim(0), cur.numel() / cur.dim(0)}); break;
            case LayerKind::Dense: next = dense_forward(cur, ly); break;
        }
        if (tr) tr->acts.push_back(std::move(cur));
        cur = std::move(next);
    }
    if (tr) tr->acts.push_back(cur);
    return cur;
}

double loss_only(const Model& model, const Tensor& batch, std::span<const int32_t> labels) {
    Tensor logits = forward_internal(model, batch, nullptr);
    LossValue loss;
    softmax_ce(logits, labels, loss, nullptr);
    return loss.mean;
}

}  // namespace

int64_t Model::parameter_count() const {
    int64_t n = 0;
    for (const Layer& ly : layers) n += ly.weight.numel() + ly.bias.numel();
    return n;
}

Model build_model(std::string_view arch, double widen, int32_t num_classes,
                  std::span<const int64_t> input_shape, uint64_t seed, bool standardize) {
    if (!(widen > 0.0)) throw std::invalid_argument("build_model: widen must be positive");
    if (num_classes < 2) throw std::invalid_argument("build_model: need at least 2 classes");
    if (input_shape.size() != 3) throw std::invalid_argument("build_model: input shape must be C,H,W");

    Model model;
    model.arch = std::string(arch);
    model.widen = widen;
    model.standardize_input = standardize;
    model.input_shape.assign(input_shape.begin(), input_shape.end());
    model.num_classes = num_classes;

    Rng rng(seed);
    auto he_uniform = [&](Tensor& t, int64_t fan_in) {
        double bound = std::sqrt(6.0 / double(fan_in));
        for (double& v : t.data) v = rng.uniform(-bound, bound);
    };
    auto add_conv = [&](int64_t in_ch, int64_t out_ch, int64_t k) {
        Layer ly;
        ly.kind = LayerKind::Conv;
        ly.weight = Tensor({out_ch, in_ch, k, k});
        ly.bias = Tensor({out_ch});
        he_uniform(ly.weight, in_ch * k * k);
        model.layers.push_back(std::move(ly));
    };
    auto add_dense = [&](int64_t in, int64_t out) {
        Layer ly;
        ly.kind = LayerKind::Dense;
        ly.weight = Tensor({in, out});
        ly.bias = Tensor({out});
        he_uniform(ly.weight, in);
        model.layers.push_back(std::move(ly));
    };
    auto add_plain = [&](LayerKind kind) {
        Layer ly;
        ly.kind = kind;
        model.layers.push_back(std::move(ly));
    };

    const int64_t c = input_shape[0], h = input_shape[1], w = input_shape[2];
    const int64_t flat = c * h * w;

    if (arch == "lenet") {
        static const double allowed[] = {0.125, 0.25, 0.5, 1.0, 2.0, 4.0};
        if (std::find(std::begin(allowed), std::end(allowed), widen) == std::end(allowed))
            throw std::invalid_argument("build_model: lenet widen must be one of "
                                        "0.125, 0.25, 0.5, 1, 2, 4");
        if (h < 4 || w < 4)
            throw std::invalid_argument("build_model: lenet needs spatial dims >= 4");
        const int64_t c1 = widen_round(32, widen);
        const int64_t c2 = widen_round(64, widen);
        const int64_t f1 = widen_round(1024, widen);
        add_conv(c, c1, 5);
        add_plain(LayerKind::ReLU);
        add_plain(LayerKind::MaxPool2);
        add_conv(c1, c2, 5);
        add_plain(LayerKind::ReLU);
        add_plain(LayerKind::MaxPool2);
        add_plain(LayerKind::Flatten);
        add_dense(c2 * (h / 2 / 2) * (w / 2 / 2), f1);
        add_plain(LayerKind::ReLU);
        add_dense(f1, num_classes);
    } else if (arch == "mlp") {
        const int64_t f1 = widen_round(256, widen);
        add_plain(LayerKind::Flatten);
        add_dense(flat, f1);
        add_plain(LayerKind::ReLU);
        add_dense(f1, num_classes);
    } else if (arch == "linear") {
        add_plain(LayerKind::Flatten);
        add_dense(flat, num_classes);
    } else {
        throw std::invalid_argument("build_model: unknown arch '" + std::string(arch) + "'");
    }
    return model;
}

Tensor forward(const Model& model, const Tensor& batch) {
    return forward_internal(model, batch, nullptr);
}

std::vector<int32_t> predict(const Model& model, const Tensor& batch) {
    Tensor logits = forward(model, batch);
    const int64_t n = logits.dim(0), k = logits.dim(1);
    std::vector<int32_t> out(size_t(n));
    for (int64_t ni = 0; ni < n; ++ni) {
        const double* z = logits.ptr() + ni * k;
        int32_t best = 0;
        for (int32_t c = 1; c < k; ++c)
            if (z[c] > z[best]) best = c;
        out[size_t(ni)] = best;
    }
    return out;
}

std::pair<LossValue, Gradients> loss_and_grads(const Model& model, const Tensor& batch,
                                               std::span<const int32_t> labels, GradWrt wrt) {
    if (static_cast<int64_t>(labels.size()) != batch.dim(0))
        throw std::invalid_argument("loss_and_grads: label count does not match batch");
    for (int32_t y : labels)
        if (y < 0 || y >= model.num_classes)
            throw std::invalid_argument("loss_and_grads: label out of range");

    Trace tr;
    Tensor logits = forward_internal(model, batch, &tr);
    LossValue loss;
    Tensor dcur;
    softmax_ce(logits, labels, loss, &dcur);

    const bool want_params = wrt != GradWrt::Input;
    const bool want_input = wrt != GradWrt::Params;
    Gradients grads;
    grads.params.resize(model.layers.size());

    for (int64_t l = int64_t(model.layers.size()) - 1; l >= 0; --l) {
        const Layer& ly = model.layers[size_t(l)];
        const Tensor& in = tr.acts[size_t(l)];
        const bool need_dx = l > 0 || want_input;
        Tensor dprev;
        switch (ly.kind) {
            case LayerKind::Conv:
                if (want_params) conv_backward_params(in, dcur, ly, grads.params[size_t(l)]);
                if (need_dx) dprev = conv_backward_input(dcur, ly, in.dim(1), in.dim(2), in.dim(3));
                break;
            case LayerKind::Dense:
                if (want_params) dense_backward_params(in, dcur, ly, grads.params[size_t(l)]);
                if (need_dx) dprev = dense_backward_input(dcur, ly);
                break;
            case LayerKind::ReLU:
                if (need_dx) dprev = relu_backward(in, dcur);
                break;
            case LayerKind::MaxPool2:
                if (need_dx) dprev = pool_backward(dcur, tr.pool_arg[size_t(l)], in.dim(2), in.dim(3));
                break;
            case LayerKind::Flatten:
                if (need_dx) dprev = dcur.reshaped(in.shape);
                break;
        }
        if (!need_dx) break;
        dcur = std::move(dprev);
    }

    if (want_input)
        grads.input = model.standardize_input
                          ? standardize_backward(dcur, tr.acts[0], tr.std_trace)
                          : std::move(dcur);
    return {std::move(loss), std::move(grads)};
}

double grad_check(const Model& model, const Tensor& batch, std::span<const int32_t> labels,
                  double h) {
    auto [loss, analytic] = loss_and_grads(model, batch, labels, GradWrt::Both);

    Model probe = model;
    Tensor probe_batch = batch;
    Rng rng(derive_seed(0x9d5c0ffee, "grad-check"));

    double worst = 0.0;
    auto check_tensor = [&](Tensor& live, const Tensor& grad) {
        const int64_t m = grad.numel();
        if (m == 0) return;
        std::vector<int64_t> idx;
        if (m <= 200) {
            idx.resize(size_t(m));
            for (int64_t i = 0; i < m; ++i) idx[size_t(i)] = i;
        } else {
            idx.resize(200);
            for (auto& v : idx) v = int64_t(rng.below(uint64_t(m)));
        }
        double scale = 0.0, max_abs_err = 0.0;
        for (int64_t i : idx) {
            const double orig = live.data[size_t(i)];
            live.data[size_t(i)] = orig + h;
            double lp = loss_only(probe, probe_batch, labels);
            live.data[size_t(i)] = orig - h;
            double lm = loss_only(probe, probe_batch, labels);
            live.data[size_t(i)] = orig;
            double fd = (lp - lm) / (2.0 * h);
            double a = grad.data[size_t(i)];
            max_abs_err = std::max(max_abs_err, std::fabs(a - fd));
            scale = std::max({scale, std::fabs(a), std::fabs(fd)});
        }
        worst = std::max(worst, max_abs_err / std::max(scale, 1e-12));
    };

    for (size_t l = 0; l < probe.layers.size(); ++l) {
        if (probe.layers[l].weight.numel() == 0) continue;
        check_tensor(probe.layers[l].weight, analytic.params[l].weight);
        check_tensor(probe.layers[l].bias, analytic.params[l].bias);
    }
    check_tensor(probe_batch, analytic.input);
    return worst;
}

namespace {

constexpr char kModelMagic[4] = {'D', 'S', 'N', 'M'};
constexpr uint32_t kModelVersion = 1;

}  // namespace

void save_model(const Model& model, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open model file for writing: " + path.string());
    auto pod = [&](auto v) { out.write(reinterpret_cast<const char*>(&v), sizeof(v)); };
    out.write(kModelMagic, 4);
    pod(kModelVersion);
    pod(uint32_t(model.arch.size()));
    out.write(model.arch.data(), std::streamsize(model.arch.size()));
    pod(model.widen);
    pod(uint8_t(model.standardize_input ? 1 : 0));
    pod(model.num_classes);
    pod(uint32_t(model.input_shape.size()));
    for (int64_t d : model.input_shape) pod(d);
    pod(uint32_t(model.layers.size()));
    for (const Layer& ly : model.layers) {
        pod(uint32_t(ly.kind));
        uint32_t n_tensors = ly.weight.numel() > 0 ? 2 : 0;
        pod(n_tensors);
        auto tensor_out = [&](const Tensor& t) {
            pod(uint32_t(0));  // dtype f32
            pod(uint32_t(t.shape.size()));
            for (int64_t d : t.shape) pod(d);
            for (double v : t.data) pod(float(v));
        };
        if (n_tensors) {
            tensor_out(ly.weight);
            tensor_out(ly.bias);
        }
    }
    if (!out) throw std::runtime_error("model write failed: " + path.string());
}

Model load_model(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open model file: " + path.string());
    auto pod = [&]<class T>(T& v) {
        in.read(reinterpret_cast<char*>(&v), sizeof(T));
        if (!in) throw std::runtime_error("model file truncated: " + path.string());
    };
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kModelMagic, 4) != 0)
        throw std::runtime_error("model: bad magic in " + path.string());
    uint32_t version;
    pod(version);
    if (version != kModelVersion) throw std::runtime_error("model: unsupported version");

    Model model;
    uint32_t arch_len;
    pod(arch_len);
    model.arch.resize(arch_len);
    in.read(model.arch.data(), arch_len);
    pod(model.widen);
    uint8_t standardize;
    pod(standardize);
    model.standardize_input = standardize != 0;
    pod(model.num_classes);
    uint32_t n_dims;
    pod(n_dims);
    model.input_shape.resize(n_dims);
    for (auto& d : model.input_shape) pod(d);
    uint32_t n_layers;
    pod(n_layers);
    model.layers.resize(n_layers);
    for (Layer& ly : model.layers) {
        uint32_t kind, n_tensors;
        pod(kind);
        pod(n_tensors);
        ly.kind = LayerKind(kind);
        auto tensor_in = [&](Tensor& t) {
            uint32_t dtype, ndim;
            pod(dtype);
            if (dtype != 0) throw std::runtime_error("model: unsupported dtype");
            pod(ndim);
            std::vector<int64_t> shape(ndim);
            for (auto& d : shape) pod(d);
            t = Tensor(shape);
            for (double& v : t.data) {
                float f;
                pod(f);
                v = double(f);
            }
        };
        if (n_tensors == 2) {
            tensor_in(ly.weight);
            tensor_in(ly.bias);
        } else if (n_tensors != 0) {
            throw std::runtime_error("model: unexpected tensor count");
        }
    }
    return model;
}

}  // namespace dshift
