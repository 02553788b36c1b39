#include "vssl/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "vssl/rng.hpp"

namespace vssl {

double grad_check(const std::function<Tensor()>& loss_fn, std::span<Tensor> params,
                  double eps, int64_t max_elements_per_tensor, uint64_t sample_seed) {
    for (Tensor& p : params) p.zero_grad();

    Graph graph;
    {
        RecordScope scope(graph);
        Tensor loss = loss_fn();
        graph.backward(loss);
    }

    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (Tensor& p : params) {
        analytic.push_back(p.has_grad() ? p.grad()
                                        : std::vector<double>(p.numel(), 0.0));
    }

    Rng rng(sample_seed);
    double worst = 0.0;
    for (size_t pi = 0; pi < params.size(); ++pi) {
        Tensor& p = params[pi];
        const int64_t n = p.numel();
        std::vector<int64_t> picks;
        if (max_elements_per_tensor <= 0 || n <= max_elements_per_tensor) {
            picks.resize(static_cast<size_t>(n));
            std::iota(picks.begin(), picks.end(), 0);
        } else {
            for (int64_t i = 0; i < max_elements_per_tensor; ++i) {
                picks.push_back(rng.next_index(n));
            }
        }
        for (int64_t idx : picks) {
            double* slot = p.data() + idx;
            const double saved = *slot;
            *slot = saved + eps;
            const double up = loss_fn().value();
            *slot = saved - eps;
            const double down = loss_fn().value();
            *slot = saved;
            const double numeric = (up - down) / (2.0 * eps);
            const double a = analytic[pi][static_cast<size_t>(idx)];
            const double rel =
                std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
            worst = std::max(worst, rel);
        }
    }
    return worst;
}

}  // namespace vssl
