#include "vssl/losses.hpp"

#include <cmath>

namespace vssl {

namespace {

void check_rows(const char* op, const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": expected matching [N,K] tensors, got " +
                         shape_str(a.shape()) + " and " + shape_str(b.shape()));
    }
}

// mean over rows of -sum(target * log p), composed from primitive ops so the
// gradient (through p, and through soft targets when they carry one) falls
// out of the graph.
CeLoss ce_mean(const Tensor& targets, const Tensor& probs) {
    const int64_t rows = probs.dim(0);
    CeLoss out;
    out.value = scale(sum_all(mul(targets, log_clamped(probs))),
                      -1.0 / static_cast<double>(rows));
    return out;
}

}  // namespace

CeLoss supervised_ce(const Tensor& probs, const Tensor& targets) {
    if (!probs.defined() || probs.numel() == 0) {
        return CeLoss{Tensor::scalar(0.0), true};
    }
    check_rows("supervised_ce", probs, targets);
    return ce_mean(targets, probs);
}

Tensor pseudo_assign(const Tensor& probs, const PseudoLabelRule& rule) {
    if (probs.rank() != 2) {
        throw ShapeError("pseudo_assign: expected [U,C], got " + shape_str(probs.shape()));
    }
    const int64_t n = probs.numel();
    Tensor out(probs.shape());
    const double* p = probs.data();
    double* y = out.data();
    for (int64_t i = 0; i < n; ++i) {
        y[i] = p[i] >= rule.confidence_threshold ? rule.target_value : p[i];
    }

    if (!rule.detach_targets && detail::should_record({&probs})) {
        detail::mark_as_op_output(out);
        auto pi = probs.impl();
        auto oi = out.impl();
        const double delta = rule.confidence_threshold;
        Graph::active()->record("pseudo_assign", {pi}, out, [pi, oi, delta, n] {
            const double* g = oi->grad.data();
            const double* p = pi->values.data();
            double* gp = detail::ensure_grad(*pi).data();
            for (int64_t i = 0; i < n; ++i) {
                if (p[i] < delta) gp[i] += g[i];  // T entries are constants
            }
        });
    }
    return out;
}

CeLoss pseudo_ce(const Tensor& targets, const Tensor& probs) {
    if (!probs.defined() || probs.numel() == 0) {
        return CeLoss{Tensor::scalar(0.0), true};
    }
    check_rows("pseudo_ce", targets, probs);
    return ce_mean(targets, probs);
}

Tensor distill_soft_ce(const Tensor& teacher_probs, const Tensor& student_probs) {
    if (teacher_probs.rank() != 2 || student_probs.rank() != 2 ||
        teacher_probs.dim(0) != student_probs.dim(0) ||
        teacher_probs.dim(1) != student_probs.dim(1)) {
        throw ShapeError("distill_soft_ce: teacher rows " +
                         shape_str(teacher_probs.shape()) + " do not match student " +
                         shape_str(student_probs.shape()));
    }
    return ce_mean(teacher_probs, student_probs).value;
}

double lambda_u(int64_t iteration, int64_t total_iterations, const LossSchedule& schedule) {
    const int64_t tau =
        std::llround(schedule.tau_fraction * static_cast<double>(total_iterations));
    if (iteration >= tau) return 1.0;
    if (schedule.warmup_mode == WarmupMode::step) return 0.0;
    if (tau <= 0) return 1.0;
    return static_cast<double>(iteration) / static_cast<double>(tau);
}

LossBreakdown combined_loss(double loss_s, double loss_u, double loss_d,
                            const LossSchedule& schedule, int64_t iteration,
                            int64_t total_iterations) {
    LossBreakdown out;
    out.loss_s = loss_s;
    out.loss_u = loss_u;
    out.loss_d = loss_d;
    out.lambda_u_t = lambda_u(iteration, total_iterations, schedule);
    out.iteration = iteration;
    out.total = loss_s + out.lambda_u_t * loss_u + schedule.lambda_d * loss_d;
    return out;
}

}  // namespace vssl
