#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dshift/attack.hpp"
#include "dshift/dataset.hpp"
#include "dshift/model.hpp"

namespace dshift {

enum class Optimizer { Adam, SgdMomentum };

struct TrainConfig {
    Optimizer optimizer = Optimizer::Adam;
    // Piecewise-constant schedule: (step, lr) with strictly increasing steps,
    // first entry at step 0.
    std::vector<std::pair<int64_t, double>> lr_schedule = {{0, 1e-4}};
    double momentum = 0.9;
    double weight_decay = 0.0;  // decoupled; applies to weight tensors only
    int64_t batch_size = 50;
    int64_t total_steps = 1000;
    bool adversarial = false;
    AttackConfig attack;  // used when adversarial
    uint64_t seed = 0;
    int64_t eval_every = 0;  // 0 = never; probe evals also run at the last step

    void validate() const;
    double lr_at(int64_t step) const;
};

struct HistoryRow {
    int64_t step = 0;
    double loss = 0.0;
    std::optional<double> clean_acc;   // on the probe set
    std::optional<double> robust_acc;  // on the probe set, adversarial runs only
};

struct TrainResult {
    Model model;
    std::vector<HistoryRow> history;
};

/// Seeded (adversarially) trained model. Adversarial mode regenerates the
/// attack on every minibatch against the current weights before the gradient
/// step. Aborts with an error if the loss leaves the finite range.
TrainResult train(Model model, const Dataset& train_ds, const TrainConfig& cfg,
                  const Dataset* probe = nullptr);

enum class SweepAxis { Widen, TrainSize, TransformParam };

SweepAxis parse_sweep_axis(std::string_view name);

struct SweepRow {
    std::string value;
    double train_clean = 0.0;
    double test_clean = 0.0;
    std::optional<double> train_robust;
    std::optional<double> test_robust;
};

struct SweepConfig {
    SweepAxis axis = SweepAxis::Widen;
    std::vector<std::string> values;  // "0.25" | "3000" | "smooth(s=3)" / "none"
    std::string arch = "lenet";
    double widen = 0.25;
    bool standardize = false;
    TrainConfig train;
    std::optional<AttackConfig> eval_attack;
    uint64_t seed = 0;
};

/// One (train, evaluate) run per axis value with fixed derived seeds; returns
/// the long-form train/test x clean/robust table.
std::vector<SweepRow> sweep(const SweepConfig& cfg, const Dataset& train_ds,
                            const Dataset& test_ds);

}  // namespace dshift
