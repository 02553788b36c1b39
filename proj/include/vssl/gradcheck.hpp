#pragma once

#include <cstdint>
#include <functional>
#include <span>

#include "vssl/tensor.hpp"

namespace vssl {

// Central-difference verification of reverse-mode gradients.
//
// `loss_fn` must rebuild the forward computation from the current parameter
// values and return the scalar loss tensor. It is invoked once under an
// active graph to obtain analytic gradients, then twice per sampled element
// (at w+eps and w-eps) without recording. Relative error per element is
// |analytic - numeric| / max(1e-8, |analytic| + |numeric|); the maximum over
// all sampled elements is returned.
//
// `max_elements_per_tensor` caps the probe count per parameter (sampled
// deterministically from `sample_seed`); 0 checks every element.
double grad_check(const std::function<Tensor()>& loss_fn,
                  std::span<Tensor> params, double eps,
                  int64_t max_elements_per_tensor = 0,
                  uint64_t sample_seed = 0x5eed);

}  // namespace vssl
