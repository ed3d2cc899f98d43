#include "dshift/attack.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

#include "dshift/rng.hpp"

namespace dshift {

namespace {

constexpr int64_t kEvalBatch = 200;

double sign_of(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

void assert_feasible(const Tensor& x, const Tensor& x_adv, const AttackConfig& cfg) {
    const double tol = cfg.eps + 1e-6;
    for (int64_t i = 0; i < x.numel(); ++i) {
        double d = x_adv.data[size_t(i)] - x.data[size_t(i)];
        if (std::fabs(d) > tol) throw std::logic_error("pgd: budget violated");
        if (cfg.clip_domain) {
            double v = x_adv.data[size_t(i)];
            if (!(v >= 0.0 && v <= 1.0)) throw std::logic_error("pgd: domain violated");
        }
    }
}

}  // namespace

void AttackConfig::validate() const {
    if (!(eps >= 0.0)) throw std::invalid_argument("attack: eps must be >= 0");
    if (eps > 0.0 && !(step > 0.0)) throw std::invalid_argument("attack: step must be positive");
    if (iters < 1) throw std::invalid_argument("attack: iters must be >= 1");
}

Tensor pgd(const Model& model, const Tensor& x, std::span<const int32_t> targets,
           const AttackConfig& cfg) {
    cfg.validate();
    if (static_cast<int64_t>(targets.size()) != x.dim(0))
        throw std::invalid_argument("pgd: target count does not match batch");
    for (int32_t t : targets)
        if (t < 0 || t >= model.num_classes) throw std::invalid_argument("pgd: target out of range");
    if (cfg.eps == 0.0) return x;

    const int64_t total = x.numel();
    Tensor x_adv = x;

    if (cfg.random_start) {
        Rng rng(cfg.seed);
        for (int64_t i = 0; i < total; ++i)
            x_adv.data[size_t(i)] += rng.uniform(-cfg.eps, cfg.eps);
    }
    auto project = [&]() {
        for (int64_t i = 0; i < total; ++i) {
            double lo = x.data[size_t(i)] - cfg.eps;
            double hi = x.data[size_t(i)] + cfg.eps;
            double v = std::clamp(x_adv.data[size_t(i)], lo, hi);
            if (cfg.clip_domain) v = std::clamp(v, 0.0, 1.0);
            x_adv.data[size_t(i)] = v;
        }
    };
    project();

    for (int it = 0; it < cfg.iters; ++it) {
        auto [loss, grads] = loss_and_grads(model, x_adv, targets, GradWrt::Input);
        for (int64_t i = 0; i < total; ++i)
            x_adv.data[size_t(i)] += cfg.step * sign_of(grads.input.data[size_t(i)]);
        project();
    }
    assert_feasible(x, x_adv, cfg);
    return x_adv;
}

LinearAttackResult linear_optimal_attack(std::span<const double> w, double b, const Tensor& x,
                                         int y, double eps) {
    if (y != 1 && y != -1) throw std::invalid_argument("linear_optimal_attack: y must be +1 or -1");
    if (static_cast<int64_t>(w.size()) != x.numel())
        throw std::invalid_argument("linear_optimal_attack: weight length does not match x");
    if (!(eps >= 0.0)) throw std::invalid_argument("linear_optimal_attack: eps must be >= 0");

    LinearAttackResult res;
    res.x_adv = x;
    double margin = -b;
    double l1 = 0.0;
    for (size_t i = 0; i < w.size(); ++i) {
        margin += w[i] * x.data[i];
        l1 += std::fabs(w[i]);
        res.x_adv.data[i] -= eps * double(y) * sign_of(w[i]);
    }
    res.flipped = double(y) * margin <= eps * l1;
    return res;
}

namespace {

// Attacks the dataset batch by batch and reports the per-example predictions
// on the adversarial inputs. Per-example results do not depend on the batch
// split; batching is for memory only.
std::vector<int32_t> attacked_predictions(const Model& model, const Dataset& ds,
                                          const std::vector<int32_t>& targets, AttackConfig cfg,
                                          uint64_t seed_tag) {
    const int64_t n = ds.size();
    const int64_t d = ds.pixels_per_item();
    const auto& shape = ds.images.shape;
    std::vector<int32_t> preds(size_t(n));
    for (int64_t begin = 0, batch_idx = 0; begin < n; begin += kEvalBatch, ++batch_idx) {
        int64_t end = std::min(n, begin + kEvalBatch);
        int64_t bn = end - begin;
        Tensor bx({bn, shape[1], shape[2], shape[3]});
        std::memcpy(bx.ptr(), ds.images.ptr() + begin * d, size_t(bn * d) * sizeof(double));
        std::vector<int32_t> bt(targets.begin() + begin, targets.begin() + end);
        AttackConfig bc = cfg;
        bc.seed = derive_seed(seed_tag, "batch-" + std::to_string(batch_idx));
        Tensor adv = pgd(model, bx, bt, bc);
        std::vector<int32_t> bp = predict(model, adv);
        std::copy(bp.begin(), bp.end(), preds.begin() + begin);
    }
    return preds;
}

}  // namespace

EvalReport evaluate(const Model& model, const Dataset& ds, const std::optional<AttackConfig>& cfg) {
    ds.validate();
    if (ds.size() == 0) throw std::invalid_argument("evaluate: empty dataset");
    const int64_t n = ds.size();
    const int64_t d = ds.pixels_per_item();
    const auto& shape = ds.images.shape;

    std::vector<int32_t> clean_preds(size_t(n));
    for (int64_t begin = 0; begin < n; begin += kEvalBatch) {
        int64_t end = std::min(n, begin + kEvalBatch);
        int64_t bn = end - begin;
        Tensor bx({bn, shape[1], shape[2], shape[3]});
        std::memcpy(bx.ptr(), ds.images.ptr() + begin * d, size_t(bn * d) * sizeof(double));
        std::vector<int32_t> bp = predict(model, bx);
        std::copy(bp.begin(), bp.end(), clean_preds.begin() + begin);
    }

    EvalReport rep;
    rep.count = n;
    int64_t clean_correct = 0;
    for (int64_t i = 0; i < n; ++i)
        if (clean_preds[size_t(i)] == ds.labels[size_t(i)]) ++clean_correct;
    rep.clean_acc = double(clean_correct) / double(n);
    if (!cfg) return rep;

    rep.attack = *cfg;

    // Robust accuracy: attack against the true labels; an example already
    // misclassified clean counts as non-robust.
    std::vector<int32_t> adv_preds =
        attacked_predictions(model, ds, ds.labels, *cfg, derive_seed(cfg->seed, "vs-label"));
    int64_t robust = 0;
    for (int64_t i = 0; i < n; ++i)
        if (clean_preds[size_t(i)] == ds.labels[size_t(i)] &&
            adv_preds[size_t(i)] == ds.labels[size_t(i)])
            ++robust;
    rep.robust_acc = double(robust) / double(n);

    // Robustness w.r.t. predictions: attack against the clean predictions and
    // ask whether any prediction moved.
    std::vector<int32_t> pred_preds =
        attacked_predictions(model, ds, clean_preds, *cfg, derive_seed(cfg->seed, "vs-prediction"));
    int64_t stable = 0;
    for (int64_t i = 0; i < n; ++i)
        if (pred_preds[size_t(i)] == clean_preds[size_t(i)]) ++stable;
    rep.robust_wrt_pred = double(stable) / double(n);
    return rep;
}

}  // namespace dshift
