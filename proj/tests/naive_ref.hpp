#pragma once

// Naive nested-loop reference implementations used as independent oracles for
// the optimized kernels. Deliberately written as direct transcriptions of the
// operation definitions, sharing no code with the library paths they check.

#include <array>
#include <cstdint>
#include <limits>

#include "vssl/rng.hpp"
#include "vssl/tensor.hpp"

namespace naive {

inline vssl::Tensor random_tensor(vssl::Shape shape, vssl::Rng& rng, double lo = -1.0,
                                  double hi = 1.0) {
    vssl::Tensor t(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = rng.next_uniform(lo, hi);
    return t;
}

inline vssl::Tensor conv3d(const vssl::Tensor& x, const vssl::Tensor& k,
                           const vssl::Tensor& b, std::array<int64_t, 3> stride,
                           std::array<int64_t, 3> pad) {
    const int64_t N = x.dim(0), CI = x.dim(1), T = x.dim(2), H = x.dim(3), W = x.dim(4);
    const int64_t CO = k.dim(0), KT = k.dim(2), KH = k.dim(3), KW = k.dim(4);
    const int64_t TO = (T + 2 * pad[0] - KT) / stride[0] + 1;
    const int64_t HO = (H + 2 * pad[1] - KH) / stride[1] + 1;
    const int64_t WO = (W + 2 * pad[2] - KW) / stride[2] + 1;
    vssl::Tensor y({N, CO, TO, HO, WO});
    for (int64_t n = 0; n < N; ++n)
        for (int64_t co = 0; co < CO; ++co)
            for (int64_t to = 0; to < TO; ++to)
                for (int64_t ho = 0; ho < HO; ++ho)
                    for (int64_t wo = 0; wo < WO; ++wo) {
                        double acc = b.data()[co];
                        for (int64_t ci = 0; ci < CI; ++ci)
                            for (int64_t dt = 0; dt < KT; ++dt)
                                for (int64_t dh = 0; dh < KH; ++dh)
                                    for (int64_t dw = 0; dw < KW; ++dw) {
                                        const int64_t ti = to * stride[0] - pad[0] + dt;
                                        const int64_t hi = ho * stride[1] - pad[1] + dh;
                                        const int64_t wi = wo * stride[2] - pad[2] + dw;
                                        if (ti < 0 || ti >= T || hi < 0 || hi >= H ||
                                            wi < 0 || wi >= W)
                                            continue;
                                        acc += k.data()[(((co * CI + ci) * KT + dt) * KH + dh) * KW + dw] *
                                               x.data()[(((n * CI + ci) * T + ti) * H + hi) * W + wi];
                                    }
                        y.data()[(((n * CO + co) * TO + to) * HO + ho) * WO + wo] = acc;
                    }
    return y;
}

inline vssl::Tensor conv2d(const vssl::Tensor& x, const vssl::Tensor& k,
                           const vssl::Tensor& b, std::array<int64_t, 2> stride,
                           std::array<int64_t, 2> pad) {
    const int64_t N = x.dim(0), CI = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int64_t CO = k.dim(0), KH = k.dim(2), KW = k.dim(3);
    const int64_t HO = (H + 2 * pad[0] - KH) / stride[0] + 1;
    const int64_t WO = (W + 2 * pad[1] - KW) / stride[1] + 1;
    vssl::Tensor y({N, CO, HO, WO});
    for (int64_t n = 0; n < N; ++n)
        for (int64_t co = 0; co < CO; ++co)
            for (int64_t ho = 0; ho < HO; ++ho)
                for (int64_t wo = 0; wo < WO; ++wo) {
                    double acc = b.data()[co];
                    for (int64_t ci = 0; ci < CI; ++ci)
                        for (int64_t dh = 0; dh < KH; ++dh)
                            for (int64_t dw = 0; dw < KW; ++dw) {
                                const int64_t hi = ho * stride[0] - pad[0] + dh;
                                const int64_t wi = wo * stride[1] - pad[1] + dw;
                                if (hi < 0 || hi >= H || wi < 0 || wi >= W) continue;
                                acc += k.data()[((co * CI + ci) * KH + dh) * KW + dw] *
                                       x.data()[((n * CI + ci) * H + hi) * W + wi];
                            }
                    y.data()[((n * CO + co) * HO + ho) * WO + wo] = acc;
                }
    return y;
}

inline vssl::Tensor pool3d(const vssl::Tensor& x, bool max_mode,
                           std::array<int64_t, 3> window, std::array<int64_t, 3> stride) {
    const int64_t N = x.dim(0), C = x.dim(1), T = x.dim(2), H = x.dim(3), W = x.dim(4);
    const int64_t TO = (T - window[0]) / stride[0] + 1;
    const int64_t HO = (H - window[1]) / stride[1] + 1;
    const int64_t WO = (W - window[2]) / stride[2] + 1;
    vssl::Tensor y({N, C, TO, HO, WO});
    for (int64_t n = 0; n < N; ++n)
        for (int64_t c = 0; c < C; ++c)
            for (int64_t to = 0; to < TO; ++to)
                for (int64_t ho = 0; ho < HO; ++ho)
                    for (int64_t wo = 0; wo < WO; ++wo) {
                        double best = -std::numeric_limits<double>::infinity();
                        double sum = 0.0;
                        for (int64_t dt = 0; dt < window[0]; ++dt)
                            for (int64_t dh = 0; dh < window[1]; ++dh)
                                for (int64_t dw = 0; dw < window[2]; ++dw) {
                                    const double v =
                                        x.data()[(((n * C + c) * T + to * stride[0] + dt) * H +
                                                  ho * stride[1] + dh) * W +
                                                 wo * stride[2] + dw];
                                    best = v > best ? v : best;
                                    sum += v;
                                }
                        y.data()[(((n * C + c) * TO + to) * HO + ho) * WO + wo] =
                            max_mode ? best
                                     : sum / static_cast<double>(window[0] * window[1] * window[2]);
                    }
    return y;
}

inline vssl::Tensor linear(const vssl::Tensor& x, const vssl::Tensor& w,
                           const vssl::Tensor& b) {
    const int64_t N = x.dim(0), D = x.dim(1), O = w.dim(0);
    vssl::Tensor y({N, O});
    for (int64_t n = 0; n < N; ++n)
        for (int64_t o = 0; o < O; ++o) {
            double acc = b.data()[o];
            for (int64_t d = 0; d < D; ++d) acc += x.data()[n * D + d] * w.data()[o * D + d];
            y.data()[n * O + o] = acc;
        }
    return y;
}

inline vssl::Tensor global_avg_pool(const vssl::Tensor& x) {
    const int64_t N = x.dim(0), C = x.dim(1);
    int64_t vol = 1;
    for (int64_t i = 2; i < x.rank(); ++i) vol *= x.dim(i);
    vssl::Tensor y({N, C});
    for (int64_t nc = 0; nc < N * C; ++nc) {
        double acc = 0.0;
        for (int64_t i = 0; i < vol; ++i) acc += x.data()[nc * vol + i];
        y.data()[nc] = acc / static_cast<double>(vol);
    }
    return y;
}

inline double max_abs_diff(const vssl::Tensor& a, const vssl::Tensor& b) {
    double worst = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i) {
        const double d = a.data()[i] - b.data()[i];
        worst = std::max(worst, d < 0 ? -d : d);
    }
    return worst;
}

}  // namespace naive
