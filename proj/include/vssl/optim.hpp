#pragma once

#include <cstdint>
#include <vector>

#include "vssl/models.hpp"

namespace vssl {

struct SgdConfig {
    double lr0 = 0.01;
    double momentum = 0.9;
    double weight_decay = 0.001;
    double decay_factor = 10.0;
    int64_t decay_every = 10000;  // iterations per learning-rate plateau
};

// Velocity buffers mirror the parameter set element for element.
struct OptState {
    std::vector<std::vector<double>> velocity;
    int64_t step_count = 0;
};

OptState make_opt_state(const ParamSet& params);

// lr0 / decay_factor^floor(iteration / decay_every)
double lr_at(int64_t iteration, const SgdConfig& config);

// Coupled weight decay, classical momentum:
//   g' = g + weight_decay * w;  v = momentum * v + g';  w -= lr * v
void sgd_step(ParamSet& params, OptState& state, double lr, const SgdConfig& config);

}  // namespace vssl
