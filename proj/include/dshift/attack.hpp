#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "dshift/dataset.hpp"
#include "dshift/model.hpp"
#include "dshift/tensor.hpp"

namespace dshift {

enum class AttackMode { VsLabel, VsPrediction };

struct AttackConfig {
    double eps = 0.3;         // l_inf budget in pixel units
    double step = 0.01;       // per-iteration step size
    int iters = 40;
    bool random_start = true;
    bool clip_domain = true;  // project iterates back into [0, 1]
    AttackMode mode = AttackMode::VsLabel;
    uint64_t seed = 0;

    void validate() const;
};

/// l_inf PGD: delta steps by step * sign(input gradient of the mean
/// cross-entropy against `targets`), clamped to the eps-ball and then, when
/// clip_domain is set, to [0, 1]. A zero gradient coordinate takes no step.
/// The returned batch always satisfies the budget (asserted internally).
Tensor pgd(const Model& model, const Tensor& x, std::span<const int32_t> targets,
           const AttackConfig& cfg);

struct LinearAttackResult {
    Tensor x_adv;
    bool flipped = false;
};

/// Closed-form worst-case l_inf attack on a binary linear classifier
/// sign(w.x - b) with labels y in {-1, +1}: x_adv = x - eps * y * sign(w),
/// flipped iff y * (w.x - b) <= eps * ||w||_1.
LinearAttackResult linear_optimal_attack(std::span<const double> w, double b, const Tensor& x,
                                         int y, double eps);

struct EvalReport {
    int64_t count = 0;
    double clean_acc = 0.0;
    std::optional<double> robust_acc;       // attack vs true labels
    std::optional<double> robust_wrt_pred;  // attack vs the clean predictions
    std::optional<AttackConfig> attack;
};

/// Clean accuracy, plus (when an attack config is given) robust accuracy and
/// robustness w.r.t. predictions. An example counts as robust only if it is
/// both correctly classified clean and still correct under attack; robustness
/// w.r.t. predictions asks whether the attack can change the prediction.
EvalReport evaluate(const Model& model, const Dataset& ds,
                    const std::optional<AttackConfig>& cfg);

}  // namespace dshift
