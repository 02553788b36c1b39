#include "vssl/optim.hpp"

#include <cmath>

namespace vssl {

OptState make_opt_state(const ParamSet& params) {
    OptState state;
    state.velocity.reserve(params.size());
    for (const auto& p : params.all()) {
        state.velocity.emplace_back(static_cast<size_t>(p.value.numel()), 0.0);
    }
    return state;
}

double lr_at(int64_t iteration, const SgdConfig& config) {
    const int64_t plateaus = iteration / config.decay_every;
    return config.lr0 / std::pow(config.decay_factor, static_cast<double>(plateaus));
}

void sgd_step(ParamSet& params, OptState& state, double lr, const SgdConfig& config) {
    if (state.velocity.size() != params.size()) {
        throw ShapeError("optimizer state holds " + std::to_string(state.velocity.size()) +
                         " buffers for " + std::to_string(params.size()) + " parameters");
    }
    for (size_t i = 0; i < params.size(); ++i) {
        Tensor& w = params.all()[i].value;
        std::vector<double>& v = state.velocity[i];
        if (static_cast<int64_t>(v.size()) != w.numel()) {
            throw ShapeError("velocity buffer " + params.all()[i].name + " has " +
                             std::to_string(v.size()) + " elements, parameter has " +
                             std::to_string(w.numel()));
        }
        const bool has_grad = w.has_grad();
        const double* g = has_grad ? w.grad().data() : nullptr;
        double* wd = w.data();
        const int64_t n = w.numel();
        for (int64_t j = 0; j < n; ++j) {
            const double grad = (has_grad ? g[j] : 0.0) + config.weight_decay * wd[j];
            v[j] = config.momentum * v[j] + grad;
            wd[j] -= lr * v[j];
        }
    }
    ++state.step_count;
}

}  // namespace vssl
