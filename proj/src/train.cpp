#include "dshift/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

#include "dshift/rng.hpp"
#include "dshift/transforms.hpp"

namespace dshift {

void TrainConfig::validate() const {
    if (batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
    if (total_steps < 1) throw std::invalid_argument("train: total_steps must be >= 1");
    if (lr_schedule.empty()) throw std::invalid_argument("train: lr schedule is empty");
    if (lr_schedule.front().first != 0)
        throw std::invalid_argument("train: lr schedule must start at step 0");
    for (size_t i = 0; i < lr_schedule.size(); ++i) {
        if (!(lr_schedule[i].second > 0.0)) throw std::invalid_argument("train: lr must be positive");
        if (i > 0 && lr_schedule[i].first <= lr_schedule[i - 1].first)
            throw std::invalid_argument("train: lr schedule steps must be strictly increasing");
    }
    if (!(momentum >= 0.0 && momentum < 1.0))
        throw std::invalid_argument("train: momentum must be in [0, 1)");
    if (!(weight_decay >= 0.0)) throw std::invalid_argument("train: weight_decay must be >= 0");
    if (adversarial) attack.validate();
}

double TrainConfig::lr_at(int64_t step) const {
    double lr = lr_schedule.front().second;
    for (const auto& [s, v] : lr_schedule)
        if (step >= s) lr = v;
    return lr;
}

namespace {

struct OptimizerState {
    // Adam moments / SGD velocity, aligned with the model layer tensors.
    std::vector<LayerGrads> m;
    std::vector<LayerGrads> v;
    int64_t t = 0;

    explicit OptimizerState(const Model& model) {
        m.resize(model.layers.size());
        v.resize(model.layers.size());
        for (size_t l = 0; l < model.layers.size(); ++l) {
            if (model.layers[l].weight.numel() == 0) continue;
            m[l].weight = Tensor(model.layers[l].weight.shape);
            m[l].bias = Tensor(model.layers[l].bias.shape);
            v[l].weight = Tensor(model.layers[l].weight.shape);
            v[l].bias = Tensor(model.layers[l].bias.shape);
        }
    }
};

void adam_update(Tensor& w, const Tensor& g, Tensor& m, Tensor& v, double lr, int64_t t) {
    constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    const double bc1 = 1.0 - std::pow(beta1, double(t));
    const double bc2 = 1.0 - std::pow(beta2, double(t));
    for (int64_t i = 0; i < w.numel(); ++i) {
        double gi = g.data[size_t(i)];
        double mi = beta1 * m.data[size_t(i)] + (1.0 - beta1) * gi;
        double vi = beta2 * v.data[size_t(i)] + (1.0 - beta2) * gi * gi;
        m.data[size_t(i)] = mi;
        v.data[size_t(i)] = vi;
        w.data[size_t(i)] -= lr * (mi / bc1) / (std::sqrt(vi / bc2) + eps);
    }
}

void sgd_update(Tensor& w, const Tensor& g, Tensor& vel, double lr, double momentum) {
    for (int64_t i = 0; i < w.numel(); ++i) {
        double vi = momentum * vel.data[size_t(i)] + g.data[size_t(i)];
        vel.data[size_t(i)] = vi;
        w.data[size_t(i)] -= lr * vi;
    }
}

struct ProbeMetrics {
    double clean = 0.0;
    std::optional<double> robust;
};

// Lightweight probe evaluation: clean accuracy, plus robust accuracy against
// true labels when an attack is given. Kept separate from evaluate() which
// also runs the vs-prediction attack.
ProbeMetrics probe_eval(const Model& model, const Dataset& probe,
                        const std::optional<AttackConfig>& atk) {
    ProbeMetrics pm;
    const int64_t n = probe.size();
    const int64_t d = probe.pixels_per_item();
    constexpr int64_t kBatch = 200;
    int64_t clean_ok = 0, robust_ok = 0;
    for (int64_t begin = 0, bi = 0; begin < n; begin += kBatch, ++bi) {
        int64_t end = std::min(n, begin + kBatch);
        Tensor bx({end - begin, probe.images.dim(1), probe.images.dim(2), probe.images.dim(3)});
        std::memcpy(bx.ptr(), probe.images.ptr() + begin * d, size_t((end - begin) * d) * sizeof(double));
        std::vector<int32_t> by(probe.labels.begin() + begin, probe.labels.begin() + end);
        std::vector<int32_t> clean = predict(model, bx);
        for (size_t i = 0; i < by.size(); ++i)
            if (clean[i] == by[i]) ++clean_ok;
        if (atk) {
            AttackConfig bc = *atk;
            bc.seed = derive_seed(atk->seed, "probe-batch-" + std::to_string(bi));
            std::vector<int32_t> adv = predict(model, pgd(model, bx, by, bc));
            for (size_t i = 0; i < by.size(); ++i)
                if (clean[i] == by[i] && adv[i] == by[i]) ++robust_ok;
        }
    }
    pm.clean = double(clean_ok) / double(n);
    if (atk) pm.robust = double(robust_ok) / double(n);
    return pm;
}

}  // namespace

TrainResult train(Model model, const Dataset& train_ds, const TrainConfig& cfg,
                  const Dataset* probe) {
    cfg.validate();
    train_ds.validate();
    if (train_ds.size() < cfg.batch_size)
        throw std::invalid_argument("train: dataset smaller than one batch");

    const int64_t n = train_ds.size();
    const int64_t d = train_ds.pixels_per_item();
    const auto& ishape = train_ds.images.shape;

    OptimizerState opt(model);
    TrainResult result;
    result.history.reserve(size_t(cfg.total_steps));

    std::vector<int64_t> order(size_t(n));
    int64_t cursor = n;  // forces a shuffle at step 0
    int64_t epoch = 0;

    Tensor bx({cfg.batch_size, ishape[1], ishape[2], ishape[3]});
    std::vector<int32_t> by(size_t(cfg.batch_size));

    for (int64_t step = 0; step < cfg.total_steps; ++step) {
        if (cursor + cfg.batch_size > n) {
            for (int64_t i = 0; i < n; ++i) order[size_t(i)] = i;
            Rng rng(derive_seed(cfg.seed, "epoch-" + std::to_string(epoch)));
            rng.shuffle(order);
            cursor = 0;
            ++epoch;
        }
        for (int64_t i = 0; i < cfg.batch_size; ++i) {
            int64_t src = order[size_t(cursor + i)];
            std::memcpy(bx.ptr() + i * d, train_ds.images.ptr() + src * d, size_t(d) * sizeof(double));
            by[size_t(i)] = train_ds.labels[size_t(src)];
        }
        cursor += cfg.batch_size;

        const Tensor* step_input = &bx;
        Tensor adv;
        if (cfg.adversarial) {
            AttackConfig atk = cfg.attack;
            atk.seed = derive_seed(cfg.seed, "attack-step-" + std::to_string(step));
            std::vector<int32_t> targets = by;
            if (atk.mode == AttackMode::VsPrediction) targets = predict(model, bx);
            adv = pgd(model, bx, targets, atk);
            step_input = &adv;
        }

        auto [loss, grads] = loss_and_grads(model, *step_input, by, GradWrt::Params);
        if (!std::isfinite(loss.mean))
            throw std::runtime_error("train: loss diverged at step " + std::to_string(step));

        const double lr = cfg.lr_at(step);
        opt.t += 1;
        for (size_t l = 0; l < model.layers.size(); ++l) {
            Layer& ly = model.layers[l];
            if (ly.weight.numel() == 0) continue;
            if (cfg.weight_decay > 0.0) {
                const double shrink = 1.0 - lr * cfg.weight_decay;
                for (double& w : ly.weight.data) w *= shrink;
            }
            if (cfg.optimizer == Optimizer::Adam) {
                adam_update(ly.weight, grads.params[l].weight, opt.m[l].weight, opt.v[l].weight, lr, opt.t);
                adam_update(ly.bias, grads.params[l].bias, opt.m[l].bias, opt.v[l].bias, lr, opt.t);
            } else {
                sgd_update(ly.weight, grads.params[l].weight, opt.m[l].weight, lr, cfg.momentum);
                sgd_update(ly.bias, grads.params[l].bias, opt.m[l].bias, lr, cfg.momentum);
            }
        }

        HistoryRow row;
        row.step = step;
        row.loss = loss.mean;
        const bool probe_now =
            probe && ((cfg.eval_every > 0 && (step + 1) % cfg.eval_every == 0) ||
                      step + 1 == cfg.total_steps);
        if (probe_now) {
            std::optional<AttackConfig> atk;
            if (cfg.adversarial) {
                atk = cfg.attack;
                atk->seed = derive_seed(cfg.seed, "probe-step-" + std::to_string(step));
            }
            ProbeMetrics pm = probe_eval(model, *probe, atk);
            row.clean_acc = pm.clean;
            row.robust_acc = pm.robust;
        }
        result.history.push_back(row);
    }

    result.model = std::move(model);
    return result;
}

SweepAxis parse_sweep_axis(std::string_view name) {
    if (name == "widen") return SweepAxis::Widen;
    if (name == "train_size") return SweepAxis::TrainSize;
    if (name == "transform_param") return SweepAxis::TransformParam;
    throw std::invalid_argument("unknown sweep axis: " + std::string(name));
}

std::vector<SweepRow> sweep(const SweepConfig& cfg, const Dataset& train_ds,
                            const Dataset& test_ds) {
    if (cfg.values.empty()) throw std::invalid_argument("sweep: values must be nonempty");
    std::vector<SweepRow> rows;
    for (const std::string& value : cfg.values) {
        Dataset tr = train_ds;
        Dataset te = test_ds;
        double widen = cfg.widen;
        switch (cfg.axis) {
            case SweepAxis::Widen: widen = std::stod(value); break;
            case SweepAxis::TrainSize:
                tr = subset(train_ds, std::stoll(value), true, derive_seed(cfg.seed, "sweep-subset"));
                break;
            case SweepAxis::TransformParam:
                tr = apply_chain(train_ds, value);
                te = apply_chain(test_ds, value);
                break;
        }
        Model model = build_model(cfg.arch, widen, tr.num_classes,
                                  {tr.images.shape.data() + 1, 3},
                                  derive_seed(cfg.seed, "sweep-model"), cfg.standardize);
        TrainConfig tc = cfg.train;
        tc.seed = derive_seed(cfg.seed, "sweep-train-" + value);
        TrainResult res = train(std::move(model), tr, tc);

        SweepRow row;
        row.value = value;
        EvalReport on_train = evaluate(res.model, tr, cfg.eval_attack);
        EvalReport on_test = evaluate(res.model, te, cfg.eval_attack);
        row.train_clean = on_train.clean_acc;
        row.test_clean = on_test.clean_acc;
        row.train_robust = on_train.robust_acc;
        row.test_robust = on_test.robust_acc;
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace dshift
