#pragma once

#include <cstdint>

#include "vssl/tensor.hpp"

namespace vssl {

// Pseudo-label assignment rule: the confident class is promoted to the target
// value T, everything else keeps its soft probability.
struct PseudoLabelRule {
    double target_value = 10.0;        // T
    double confidence_threshold = 0.95;  // delta; > 0.5 so at most one class fires
    bool detach_targets = true;
};

enum class WarmupMode { step, linear };

struct LossSchedule {
    double lambda_d = 1.0;
    double tau_fraction = 2.0 / 3.0;
    WarmupMode warmup_mode = WarmupMode::step;
};

struct LossBreakdown {
    double loss_s = 0.0;
    double loss_u = 0.0;
    double loss_d = 0.0;
    double lambda_u_t = 0.0;
    double total = 0.0;
    int64_t iteration = 0;
};

// Cross-entropy losses return the scalar loss tensor plus a degenerate flag
// for empty batches (loss 0, nothing recorded on the graph).
struct CeLoss {
    Tensor value;
    bool degenerate = false;
};

// Mean over rows of -sum_c y^c log p^c. `targets` must be one-hot;
// differentiable through `probs`.
CeLoss supervised_ce(const Tensor& probs, const Tensor& targets);

// Applies the rule row-wise: y_hat^c = T where p^c >= delta, else p^c.
// With detach_targets the result carries no gradient; otherwise gradient
// passes through the soft-kept entries only.
Tensor pseudo_assign(const Tensor& probs, const PseudoLabelRule& rule);

// Mean over rows of -sum_c y_hat^c log p^c.
CeLoss pseudo_ce(const Tensor& targets, const Tensor& probs);

// Soft cross-entropy against frozen teacher rows: mean over all rows of
// -sum_l h^l log q^l. Row-count mismatch is rejected.
Tensor distill_soft_ce(const Tensor& teacher_probs, const Tensor& student_probs);

double lambda_u(int64_t iteration, int64_t total_iterations, const LossSchedule& schedule);

// total = L_s + lambda_u(t) * L_u + lambda_d * L_d, evaluated in exactly this
// association order (the trainer mirrors it when composing the graph).
LossBreakdown combined_loss(double loss_s, double loss_u, double loss_d,
                            const LossSchedule& schedule, int64_t iteration,
                            int64_t total_iterations);

}  // namespace vssl
