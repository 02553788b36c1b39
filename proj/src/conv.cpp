#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <memory>
#include <vector>

#ifdef __AVX512F__
#include <immintrin.h>
#endif

#include "vssl/parallel.hpp"
#include "vssl/tensor.hpp"

// Convolution, pooling and global-average kernels. The stride-1 3D paths are
// the training hot spot; they work on zero-padded copies so every inner loop
// is a branch-free FMA run over the width axis, which the compiler turns into
// vector code without -ffast-math. Each output element is produced by exactly
// one worker with a fixed accumulation order, so results are bit-identical
// for any thread count.

namespace vssl {

namespace {

double striped_dot(const double* __restrict a, const double* __restrict b, int64_t n) {
    double s[8] = {0, 0, 0, 0, 0, 0, 0, 0};
    int64_t i = 0;
    for (; i + 8 <= n; i += 8) {
        for (int j = 0; j < 8; ++j) s[j] += a[i + j] * b[i + j];
    }
    for (; i < n; ++i) s[0] += a[i] * b[i];
    return ((s[0] + s[1]) + (s[2] + s[3])) + ((s[4] + s[5]) + (s[6] + s[7]));
}

double striped_sum(const double* __restrict a, int64_t n) {
    double s[8] = {0, 0, 0, 0, 0, 0, 0, 0};
    int64_t i = 0;
    for (; i + 8 <= n; i += 8) {
        for (int j = 0; j < 8; ++j) s[j] += a[i + j];
    }
    for (; i < n; ++i) s[0] += a[i];
    return ((s[0] + s[1]) + (s[2] + s[3])) + ((s[4] + s[5]) + (s[6] + s[7]));
}

struct Conv3dDims {
    int64_t n, ci, t, h, w;
    int64_t co, kt, kh, kw;
    int64_t st, sh, sw;
    int64_t pt, ph, pw;
    int64_t to, ho, wo;
};

Conv3dDims conv3d_dims(const Tensor& x, const Tensor& k, const Tensor& b,
                       std::array<int64_t, 3> stride, std::array<int64_t, 3> pad) {
    if (x.rank() != 5 || k.rank() != 5) {
        throw ShapeError("conv3d: expected input [N,Ci,T,H,W] and kernel "
                         "[Co,Ci,kt,kh,kw], got input " + shape_str(x.shape()) +
                         " kernel " + shape_str(k.shape()));
    }
    Conv3dDims d{};
    d.n = x.dim(0); d.ci = x.dim(1); d.t = x.dim(2); d.h = x.dim(3); d.w = x.dim(4);
    d.co = k.dim(0); d.kt = k.dim(2); d.kh = k.dim(3); d.kw = k.dim(4);
    d.st = stride[0]; d.sh = stride[1]; d.sw = stride[2];
    d.pt = pad[0]; d.ph = pad[1]; d.pw = pad[2];
    if (k.dim(1) != d.ci) {
        throw ShapeError("conv3d: channel mismatch between input " +
                         shape_str(x.shape()) + " and kernel " + shape_str(k.shape()));
    }
    if (b.rank() != 1 || b.dim(0) != d.co) {
        throw ShapeError("conv3d: bias " + shape_str(b.shape()) +
                         " does not match kernel " + shape_str(k.shape()));
    }
    if (d.st < 1 || d.sh < 1 || d.sw < 1 || d.pt < 0 || d.ph < 0 || d.pw < 0) {
        throw ShapeError("conv3d: invalid stride/padding");
    }
    if (d.kt > d.t + 2 * d.pt || d.kh > d.h + 2 * d.ph || d.kw > d.w + 2 * d.pw) {
        throw ShapeError("conv3d: kernel " + shape_str(k.shape()) +
                         " larger than padded input " + shape_str(x.shape()));
    }
    d.to = (d.t + 2 * d.pt - d.kt) / d.st + 1;
    d.ho = (d.h + 2 * d.ph - d.kh) / d.sh + 1;
    d.wo = (d.w + 2 * d.pw - d.kw) / d.sw + 1;
    return d;
}

// Zero-padded copy of a [N,C,T,H,W] block.
std::vector<double> pad5(const double* src, int64_t n, int64_t c, int64_t t,
                         int64_t h, int64_t w, int64_t pt, int64_t ph, int64_t pw) {
    const int64_t tp = t + 2 * pt, hp = h + 2 * ph, wp = w + 2 * pw;
    std::vector<double> out(static_cast<size_t>(n * c * tp * hp * wp), 0.0);
    parallel_for(n * c, [&](int64_t begin, int64_t end) {
        for (int64_t nc = begin; nc < end; ++nc) {
            const double* s = src + nc * t * h * w;
            double* dst = out.data() + nc * tp * hp * wp;
            for (int64_t ti = 0; ti < t; ++ti) {
                for (int64_t hi = 0; hi < h; ++hi) {
                    std::memcpy(dst + ((ti + pt) * hp + hi + ph) * wp + pw,
                                s + (ti * h + hi) * w,
                                static_cast<size_t>(w) * sizeof(double));
                }
            }
        }
    });
    return out;
}

// Stride-1 core, blocked over COB output channels so each input row load
// feeds COB fused accumulator rows. kw == 3 is the training kernel width and
// gets a fully fused inner loop.
template <int COB>
void conv3d_s1_block(const double* __restrict xp, const double* __restrict ker,
                     const double* bias, double* __restrict out, int64_t n,
                     int64_t co0, int64_t ci_count, int64_t tp, int64_t hp,
                     int64_t wp, int64_t co_count, int64_t kt, int64_t kh,
                     int64_t kw, int64_t to, int64_t ho, int64_t wo,
                     bool accumulate, double* __restrict accbuf) {
    const int64_t ksz = ci_count * kt * kh * kw;
    const double* xpn = xp + n * ci_count * tp * hp * wp;
    for (int64_t t = 0; t < to; ++t) {
        for (int64_t h = 0; h < ho; ++h) {
            for (int b = 0; b < COB; ++b) {
                const double bv = bias ? bias[co0 + b] : 0.0;
                double* acc = accbuf + b * wo;
                for (int64_t i = 0; i < wo; ++i) acc[i] = bv;
            }
            for (int64_t ci = 0; ci < ci_count; ++ci) {
                const double* xc = xpn + ci * tp * hp * wp;
                for (int64_t dt = 0; dt < kt; ++dt) {
                    for (int64_t dh = 0; dh < kh; ++dh) {
                        const double* __restrict xrow = xc + ((t + dt) * hp + h + dh) * wp;
                        const int64_t koff = ((ci * kt + dt) * kh + dh) * kw;
                        if (kw == 3) {
                            double w0[COB], w1[COB], w2[COB];
                            for (int b = 0; b < COB; ++b) {
                                const double* kc = ker + (co0 + b) * ksz + koff;
                                w0[b] = kc[0];
                                w1[b] = kc[1];
                                w2[b] = kc[2];
                            }
                            for (int64_t i = 0; i < wo; ++i) {
                                const double x0 = xrow[i];
                                const double x1 = xrow[i + 1];
                                const double x2 = xrow[i + 2];
                                for (int b = 0; b < COB; ++b) {
                                    accbuf[b * wo + i] += w0[b] * x0 + w1[b] * x1 + w2[b] * x2;
                                }
                            }
                        } else {
                            for (int64_t dw = 0; dw < kw; ++dw) {
                                double wv[COB];
                                for (int b = 0; b < COB; ++b) {
                                    wv[b] = ker[(co0 + b) * ksz + koff + dw];
                                }
                                const double* __restrict xr = xrow + dw;
                                for (int64_t i = 0; i < wo; ++i) {
                                    for (int b = 0; b < COB; ++b) {
                                        accbuf[b * wo + i] += wv[b] * xr[i];
                                    }
                                }
                            }
                        }
                    }
                }
            }
            for (int b = 0; b < COB; ++b) {
                double* orow =
                    out + (((n * co_count + co0 + b) * to + t) * ho + h) * wo;
                const double* acc = accbuf + b * wo;
                if (accumulate) {
                    for (int64_t i = 0; i < wo; ++i) orow[i] += acc[i];
                } else {
                    std::memcpy(orow, acc, static_cast<size_t>(wo) * sizeof(double));
                }
            }
        }
    }
}

#ifdef __AVX512F__

// 8-channel x 8-lane register tile; requires co_count % 8 == 0 and wo % 8 == 0.
// Eight named zmm accumulators with broadcast-FMA against shifted row loads.
void conv3d_s1_tile8(const double* __restrict xp, const double* __restrict ker,
                     const double* bias, double* __restrict out, int64_t n,
                     int64_t co0, int64_t ci_count, int64_t tp, int64_t hp,
                     int64_t wp, int64_t co_count, int64_t kt, int64_t kh,
                     int64_t kw, int64_t to, int64_t ho, int64_t wo,
                     bool accumulate) {
    const int64_t ksz = ci_count * kt * kh * kw;
    const double* xpn = xp + n * ci_count * tp * hp * wp;
    const double* kr0 = ker + (co0 + 0) * ksz;
    const double* kr1 = ker + (co0 + 1) * ksz;
    const double* kr2 = ker + (co0 + 2) * ksz;
    const double* kr3 = ker + (co0 + 3) * ksz;
    const double* kr4 = ker + (co0 + 4) * ksz;
    const double* kr5 = ker + (co0 + 5) * ksz;
    const double* kr6 = ker + (co0 + 6) * ksz;
    const double* kr7 = ker + (co0 + 7) * ksz;
    for (int64_t t = 0; t < to; ++t) {
        for (int64_t h = 0; h < ho; ++h) {
            for (int64_t w0 = 0; w0 < wo; w0 += 8) {
                __m512d a0 = _mm512_set1_pd(bias ? bias[co0 + 0] : 0.0);
                __m512d a1 = _mm512_set1_pd(bias ? bias[co0 + 1] : 0.0);
                __m512d a2 = _mm512_set1_pd(bias ? bias[co0 + 2] : 0.0);
                __m512d a3 = _mm512_set1_pd(bias ? bias[co0 + 3] : 0.0);
                __m512d a4 = _mm512_set1_pd(bias ? bias[co0 + 4] : 0.0);
                __m512d a5 = _mm512_set1_pd(bias ? bias[co0 + 5] : 0.0);
                __m512d a6 = _mm512_set1_pd(bias ? bias[co0 + 6] : 0.0);
                __m512d a7 = _mm512_set1_pd(bias ? bias[co0 + 7] : 0.0);
                for (int64_t ci = 0; ci < ci_count; ++ci) {
                    const double* xc = xpn + ci * tp * hp * wp;
                    for (int64_t dt = 0; dt < kt; ++dt) {
                        for (int64_t dh = 0; dh < kh; ++dh) {
                            const double* __restrict xrow =
                                xc + ((t + dt) * hp + h + dh) * wp + w0;
                            const int64_t koff = ((ci * kt + dt) * kh + dh) * kw;
                            for (int64_t dw = 0; dw < kw; ++dw) {
                                const __m512d xv = _mm512_loadu_pd(xrow + dw);
                                const int64_t k = koff + dw;
                                a0 = _mm512_fmadd_pd(xv, _mm512_set1_pd(kr0[k]), a0);
                                a1 = _mm512_fmadd_pd(xv, _mm512_set1_pd(kr1[k]), a1);
                                a2 = _mm512_fmadd_pd(xv, _mm512_set1_pd(kr2[k]), a2);
                                a3 = _mm512_fmadd_pd(xv, _mm512_set1_pd(kr3[k]), a3);
                                a4 = _mm512_fmadd_pd(xv, _mm512_set1_pd(kr4[k]), a4);
                                a5 = _mm512_fmadd_pd(xv, _mm512_set1_pd(kr5[k]), a5);
                                a6 = _mm512_fmadd_pd(xv, _mm512_set1_pd(kr6[k]), a6);
                                a7 = _mm512_fmadd_pd(xv, _mm512_set1_pd(kr7[k]), a7);
                            }
                        }
                    }
                }
                const int64_t obase = ((n * co_count + co0) * to + t) * ho * wo + h * wo + w0;
                const int64_t ostride = to * ho * wo;
                __m512d accs[8] = {a0, a1, a2, a3, a4, a5, a6, a7};
                for (int b = 0; b < 8; ++b) {
                    double* orow = out + obase + b * ostride;
                    if (accumulate) {
                        _mm512_storeu_pd(orow,
                                         _mm512_add_pd(_mm512_loadu_pd(orow), accs[b]));
                    } else {
                        _mm512_storeu_pd(orow, accs[b]);
                    }
                }
            }
        }
    }
}

#else

// Portable fallback with the same contract.
void conv3d_s1_tile8(const double* __restrict xp, const double* __restrict ker,
                     const double* bias, double* __restrict out, int64_t n,
                     int64_t co0, int64_t ci_count, int64_t tp, int64_t hp,
                     int64_t wp, int64_t co_count, int64_t kt, int64_t kh,
                     int64_t kw, int64_t to, int64_t ho, int64_t wo,
                     bool accumulate) {
    const int64_t ksz = ci_count * kt * kh * kw;
    const double* xpn = xp + n * ci_count * tp * hp * wp;
    for (int64_t t = 0; t < to; ++t) {
        for (int64_t h = 0; h < ho; ++h) {
            for (int64_t w0 = 0; w0 < wo; w0 += 8) {
                double acc[8][8];
                for (int b = 0; b < 8; ++b) {
                    const double bv = bias ? bias[co0 + b] : 0.0;
                    for (int l = 0; l < 8; ++l) acc[b][l] = bv;
                }
                for (int64_t ci = 0; ci < ci_count; ++ci) {
                    const double* xc = xpn + ci * tp * hp * wp;
                    for (int64_t dt = 0; dt < kt; ++dt) {
                        for (int64_t dh = 0; dh < kh; ++dh) {
                            const double* __restrict xrow =
                                xc + ((t + dt) * hp + h + dh) * wp + w0;
                            const int64_t koff = ((ci * kt + dt) * kh + dh) * kw;
                            for (int64_t dw = 0; dw < kw; ++dw) {
                                const double* __restrict xr = xrow + dw;
                                const double* kdw = ker + koff + dw;
                                for (int b = 0; b < 8; ++b) {
                                    const double wv = kdw[(co0 + b) * ksz];
                                    for (int l = 0; l < 8; ++l) acc[b][l] += wv * xr[l];
                                }
                            }
                        }
                    }
                }
                for (int b = 0; b < 8; ++b) {
                    double* orow =
                        out + (((n * co_count + co0 + b) * to + t) * ho + h) * wo + w0;
                    if (accumulate) {
                        for (int l = 0; l < 8; ++l) orow[l] += acc[b][l];
                    } else {
                        for (int l = 0; l < 8; ++l) orow[l] = acc[b][l];
                    }
                }
            }
        }
    }
}

#endif  // __AVX512F__

void conv3d_rows_s1(const double* xp, const double* ker, const double* bias,
                    double* out, int64_t n_batch, int64_t ci_count, int64_t tp,
                    int64_t hp, int64_t wp, int64_t co_count, int64_t kt,
                    int64_t kh, int64_t kw, int64_t to, int64_t ho, int64_t wo,
                    bool accumulate) {
    if (co_count % 8 == 0 && wo % 8 == 0) {
        const int64_t co_blocks = co_count / 8;
        parallel_for(n_batch * co_blocks, [&](int64_t begin, int64_t end) {
            for (int64_t task = begin; task < end; ++task) {
                conv3d_s1_tile8(xp, ker, bias, out, task / co_blocks,
                                (task % co_blocks) * 8, ci_count, tp, hp, wp,
                                co_count, kt, kh, kw, to, ho, wo, accumulate);
            }
        });
        return;
    }
    constexpr int kBlock = 4;
    const int64_t co_blocks = (co_count + kBlock - 1) / kBlock;
    parallel_for(n_batch * co_blocks, [&](int64_t begin, int64_t end) {
        std::vector<double> acc(static_cast<size_t>(kBlock * wo));
        for (int64_t task = begin; task < end; ++task) {
            const int64_t n = task / co_blocks;
            const int64_t co0 = (task % co_blocks) * kBlock;
            const int64_t width = std::min<int64_t>(kBlock, co_count - co0);
            switch (width) {
                case 4:
                    conv3d_s1_block<4>(xp, ker, bias, out, n, co0, ci_count, tp, hp,
                                       wp, co_count, kt, kh, kw, to, ho, wo,
                                       accumulate, acc.data());
                    break;
                case 3:
                    conv3d_s1_block<3>(xp, ker, bias, out, n, co0, ci_count, tp, hp,
                                       wp, co_count, kt, kh, kw, to, ho, wo,
                                       accumulate, acc.data());
                    break;
                case 2:
                    conv3d_s1_block<2>(xp, ker, bias, out, n, co0, ci_count, tp, hp,
                                       wp, co_count, kt, kh, kw, to, ho, wo,
                                       accumulate, acc.data());
                    break;
                default:
                    conv3d_s1_block<1>(xp, ker, bias, out, n, co0, ci_count, tp, hp,
                                       wp, co_count, kt, kh, kw, to, ho, wo,
                                       accumulate, acc.data());
                    break;
            }
        }
    });
}

// Generic strided forward, used outside the training fast path.
void conv3d_forward_generic(const Conv3dDims& d, const double* x, const double* k,
                            const double* b, double* y) {
    parallel_for(d.n * d.co, [&](int64_t begin, int64_t end) {
        for (int64_t task = begin; task < end; ++task) {
            const int64_t n = task / d.co;
            const int64_t co = task % d.co;
            for (int64_t to = 0; to < d.to; ++to) {
                for (int64_t ho = 0; ho < d.ho; ++ho) {
                    for (int64_t wo = 0; wo < d.wo; ++wo) {
                        double acc = b ? b[co] : 0.0;
                        for (int64_t ci = 0; ci < d.ci; ++ci) {
                            for (int64_t dt = 0; dt < d.kt; ++dt) {
                                const int64_t ti = to * d.st - d.pt + dt;
                                if (ti < 0 || ti >= d.t) continue;
                                for (int64_t dh = 0; dh < d.kh; ++dh) {
                                    const int64_t hi = ho * d.sh - d.ph + dh;
                                    if (hi < 0 || hi >= d.h) continue;
                                    for (int64_t dw = 0; dw < d.kw; ++dw) {
                                        const int64_t wi = wo * d.sw - d.pw + dw;
                                        if (wi < 0 || wi >= d.w) continue;
                                        acc += k[(((co * d.ci + ci) * d.kt + dt) * d.kh + dh) * d.kw + dw] *
                                               x[(((n * d.ci + ci) * d.t + ti) * d.h + hi) * d.w + wi];
                                    }
                                }
                            }
                        }
                        y[(((n * d.co + co) * d.to + to) * d.ho + ho) * d.wo + wo] = acc;
                    }
                }
            }
        }
    });
}

void conv3d_backward_input_generic(const Conv3dDims& d, const double* k,
                                   const double* gy, double* gx) {
    parallel_for(d.n * d.ci, [&](int64_t begin, int64_t end) {
        for (int64_t task = begin; task < end; ++task) {
            const int64_t n = task / d.ci;
            const int64_t ci = task % d.ci;
            for (int64_t ti = 0; ti < d.t; ++ti) {
                for (int64_t hi = 0; hi < d.h; ++hi) {
                    for (int64_t wi = 0; wi < d.w; ++wi) {
                        double acc = 0.0;
                        for (int64_t co = 0; co < d.co; ++co) {
                            for (int64_t dt = 0; dt < d.kt; ++dt) {
                                const int64_t tnum = ti + d.pt - dt;
                                if (tnum < 0 || tnum % d.st != 0) continue;
                                const int64_t to = tnum / d.st;
                                if (to >= d.to) continue;
                                for (int64_t dh = 0; dh < d.kh; ++dh) {
                                    const int64_t hnum = hi + d.ph - dh;
                                    if (hnum < 0 || hnum % d.sh != 0) continue;
                                    const int64_t ho = hnum / d.sh;
                                    if (ho >= d.ho) continue;
                                    for (int64_t dw = 0; dw < d.kw; ++dw) {
                                        const int64_t wnum = wi + d.pw - dw;
                                        if (wnum < 0 || wnum % d.sw != 0) continue;
                                        const int64_t wo = wnum / d.sw;
                                        if (wo >= d.wo) continue;
                                        acc += k[(((co * d.ci + ci) * d.kt + dt) * d.kh + dh) * d.kw + dw] *
                                               gy[(((n * d.co + co) * d.to + to) * d.ho + ho) * d.wo + wo];
                                    }
                                }
                            }
                        }
                        gx[(((n * d.ci + ci) * d.t + ti) * d.h + hi) * d.w + wi] += acc;
                    }
                }
            }
        }
    });
}

void conv3d_backward_weights_generic(const Conv3dDims& d, const double* x,
                                     const double* gy, double* gk) {
    parallel_for(d.co, [&](int64_t begin, int64_t end) {
        for (int64_t co = begin; co < end; ++co) {
            for (int64_t ci = 0; ci < d.ci; ++ci) {
                for (int64_t dt = 0; dt < d.kt; ++dt) {
                    for (int64_t dh = 0; dh < d.kh; ++dh) {
                        for (int64_t dw = 0; dw < d.kw; ++dw) {
                            double acc = 0.0;
                            for (int64_t n = 0; n < d.n; ++n) {
                                for (int64_t to = 0; to < d.to; ++to) {
                                    const int64_t ti = to * d.st - d.pt + dt;
                                    if (ti < 0 || ti >= d.t) continue;
                                    for (int64_t ho = 0; ho < d.ho; ++ho) {
                                        const int64_t hi = ho * d.sh - d.ph + dh;
                                        if (hi < 0 || hi >= d.h) continue;
                                        for (int64_t wo = 0; wo < d.wo; ++wo) {
                                            const int64_t wi = wo * d.sw - d.pw + dw;
                                            if (wi < 0 || wi >= d.w) continue;
                                            acc += gy[(((n * d.co + co) * d.to + to) * d.ho + ho) * d.wo + wo] *
                                                   x[(((n * d.ci + ci) * d.t + ti) * d.h + hi) * d.w + wi];
                                        }
                                    }
                                }
                            }
                            gk[(((co * d.ci + ci) * d.kt + dt) * d.kh + dh) * d.kw + dw] += acc;
                        }
                    }
                }
            }
        }
    });
}

// Stride-1 weight gradient against the padded input copy: every inner dot is
// a full row with no bounds logic.
void conv3d_backward_weights_s1(const Conv3dDims& d, const double* xp,
                                const double* gy, double* gk) {
    const int64_t tp = d.t + 2 * d.pt, hp = d.h + 2 * d.ph, wp = d.w + 2 * d.pw;
    const int64_t ksz = d.ci * d.kt * d.kh * d.kw;
    parallel_for(d.co, [&](int64_t begin, int64_t end) {
        std::vector<double> acc(static_cast<size_t>(ksz));
        for (int64_t co = begin; co < end; ++co) {
            std::fill(acc.begin(), acc.end(), 0.0);
            for (int64_t n = 0; n < d.n; ++n) {
                const double* xpn = xp + n * d.ci * tp * hp * wp;
                for (int64_t to = 0; to < d.to; ++to) {
                    for (int64_t ho = 0; ho < d.ho; ++ho) {
                        const double* gyrow =
                            gy + (((n * d.co + co) * d.to + to) * d.ho + ho) * d.wo;
                        double* a = acc.data();
                        for (int64_t ci = 0; ci < d.ci; ++ci) {
                            const double* xc = xpn + ci * tp * hp * wp;
                            for (int64_t dt = 0; dt < d.kt; ++dt) {
                                for (int64_t dh = 0; dh < d.kh; ++dh) {
                                    const double* xrow = xc + ((to + dt) * hp + ho + dh) * wp;
                                    for (int64_t dw = 0; dw < d.kw; ++dw) {
                                        *a++ += striped_dot(gyrow, xrow + dw, d.wo);
                                    }
                                }
                            }
                        }
                    }
                }
            }
            double* gkc = gk + co * ksz;
            for (int64_t i = 0; i < ksz; ++i) gkc[i] += acc[i];
        }
    });
}

// Register-tiled weight gradient for the training shapes: kw == 3,
// co_count % 8 == 0, wo % 8 == 0. Eight dY rows feed 8co x 3dw lane
// accumulators that are only reduced across lanes once per task, after the
// full (n, to, ho) sweep, keeping the summation order fixed.
#ifdef __AVX512F__
void conv3d_backward_weights_s1_tile8(const Conv3dDims& d, const double* xp,
                                      const double* gy, double* gk) {
    const int64_t tp = d.t + 2 * d.pt, hp = d.h + 2 * d.ph, wp = d.w + 2 * d.pw;
    const int64_t ksz = d.ci * d.kt * d.kh * d.kw;
    const int64_t rows = d.ci * d.kt * d.kh;  // (ci,dt,dh) groups of 3 dw taps
    const int64_t plane = d.to * d.ho * d.wo;
    const int64_t co_blocks = d.co / 8;
    parallel_for(co_blocks, [&](int64_t begin, int64_t end) {
        // lane accumulators: [row][co(8)][dw(3)][lane(8)]
        std::vector<double> lacc(static_cast<size_t>(rows * 8 * 3 * 8));
        for (int64_t cb = begin; cb < end; ++cb) {
            const int64_t co0 = cb * 8;
            std::fill(lacc.begin(), lacc.end(), 0.0);
            for (int64_t n = 0; n < d.n; ++n) {
                const double* xpn = xp + n * d.ci * tp * hp * wp;
                const double* gyn = gy + (n * d.co + co0) * plane;
                // `to` outermost keeps the eight dY rows of the current output
                // plane slice L1-resident across all (ci,dt,dh) groups
                for (int64_t to = 0; to < d.to; ++to) {
                    double* lrow = lacc.data();
                    for (int64_t ci = 0; ci < d.ci; ++ci) {
                        const double* xc = xpn + ci * tp * hp * wp;
                        for (int64_t dt = 0; dt < d.kt; ++dt) {
                            for (int64_t dh = 0; dh < d.kh; ++dh) {
                            __m512d a00 = _mm512_loadu_pd(lrow + 0 * 8);
                            __m512d a01 = _mm512_loadu_pd(lrow + 1 * 8);
                            __m512d a02 = _mm512_loadu_pd(lrow + 2 * 8);
                            __m512d a10 = _mm512_loadu_pd(lrow + 3 * 8);
                            __m512d a11 = _mm512_loadu_pd(lrow + 4 * 8);
                            __m512d a12 = _mm512_loadu_pd(lrow + 5 * 8);
                            __m512d a20 = _mm512_loadu_pd(lrow + 6 * 8);
                            __m512d a21 = _mm512_loadu_pd(lrow + 7 * 8);
                            __m512d a22 = _mm512_loadu_pd(lrow + 8 * 8);
                            __m512d a30 = _mm512_loadu_pd(lrow + 9 * 8);
                            __m512d a31 = _mm512_loadu_pd(lrow + 10 * 8);
                            __m512d a32 = _mm512_loadu_pd(lrow + 11 * 8);
                            __m512d a40 = _mm512_loadu_pd(lrow + 12 * 8);
                            __m512d a41 = _mm512_loadu_pd(lrow + 13 * 8);
                            __m512d a42 = _mm512_loadu_pd(lrow + 14 * 8);
                            __m512d a50 = _mm512_loadu_pd(lrow + 15 * 8);
                            __m512d a51 = _mm512_loadu_pd(lrow + 16 * 8);
                            __m512d a52 = _mm512_loadu_pd(lrow + 17 * 8);
                            __m512d a60 = _mm512_loadu_pd(lrow + 18 * 8);
                            __m512d a61 = _mm512_loadu_pd(lrow + 19 * 8);
                            __m512d a62 = _mm512_loadu_pd(lrow + 20 * 8);
                            __m512d a70 = _mm512_loadu_pd(lrow + 21 * 8);
                            __m512d a71 = _mm512_loadu_pd(lrow + 22 * 8);
                            __m512d a72 = _mm512_loadu_pd(lrow + 23 * 8);
                            {
                                for (int64_t ho = 0; ho < d.ho; ++ho) {
                                    const double* __restrict xrow =
                                        xc + ((to + dt) * hp + ho + dh) * wp;
                                    const double* gybase = gyn + (to * d.ho + ho) * d.wo;
                                    for (int64_t w0 = 0; w0 < d.wo; w0 += 8) {
                                        const __m512d x0 = _mm512_loadu_pd(xrow + w0);
                                        const __m512d x1 = _mm512_loadu_pd(xrow + w0 + 1);
                                        const __m512d x2 = _mm512_loadu_pd(xrow + w0 + 2);
                                        __m512d g;
                                        g = _mm512_loadu_pd(gybase + 0 * plane + w0);
                                        a00 = _mm512_fmadd_pd(g, x0, a00);
                                        a01 = _mm512_fmadd_pd(g, x1, a01);
                                        a02 = _mm512_fmadd_pd(g, x2, a02);
                                        g = _mm512_loadu_pd(gybase + 1 * plane + w0);
                                        a10 = _mm512_fmadd_pd(g, x0, a10);
                                        a11 = _mm512_fmadd_pd(g, x1, a11);
                                        a12 = _mm512_fmadd_pd(g, x2, a12);
                                        g = _mm512_loadu_pd(gybase + 2 * plane + w0);
                                        a20 = _mm512_fmadd_pd(g, x0, a20);
                                        a21 = _mm512_fmadd_pd(g, x1, a21);
                                        a22 = _mm512_fmadd_pd(g, x2, a22);
                                        g = _mm512_loadu_pd(gybase + 3 * plane + w0);
                                        a30 = _mm512_fmadd_pd(g, x0, a30);
                                        a31 = _mm512_fmadd_pd(g, x1, a31);
                                        a32 = _mm512_fmadd_pd(g, x2, a32);
                                        g = _mm512_loadu_pd(gybase + 4 * plane + w0);
                                        a40 = _mm512_fmadd_pd(g, x0, a40);
                                        a41 = _mm512_fmadd_pd(g, x1, a41);
                                        a42 = _mm512_fmadd_pd(g, x2, a42);
                                        g = _mm512_loadu_pd(gybase + 5 * plane + w0);
                                        a50 = _mm512_fmadd_pd(g, x0, a50);
                                        a51 = _mm512_fmadd_pd(g, x1, a51);
                                        a52 = _mm512_fmadd_pd(g, x2, a52);
                                        g = _mm512_loadu_pd(gybase + 6 * plane + w0);
                                        a60 = _mm512_fmadd_pd(g, x0, a60);
                                        a61 = _mm512_fmadd_pd(g, x1, a61);
                                        a62 = _mm512_fmadd_pd(g, x2, a62);
                                        g = _mm512_loadu_pd(gybase + 7 * plane + w0);
                                        a70 = _mm512_fmadd_pd(g, x0, a70);
                                        a71 = _mm512_fmadd_pd(g, x1, a71);
                                        a72 = _mm512_fmadd_pd(g, x2, a72);
                                    }
                                }
                            }
                            _mm512_storeu_pd(lrow + 0 * 8, a00);
                            _mm512_storeu_pd(lrow + 1 * 8, a01);
                            _mm512_storeu_pd(lrow + 2 * 8, a02);
                            _mm512_storeu_pd(lrow + 3 * 8, a10);
                            _mm512_storeu_pd(lrow + 4 * 8, a11);
                            _mm512_storeu_pd(lrow + 5 * 8, a12);
                            _mm512_storeu_pd(lrow + 6 * 8, a20);
                            _mm512_storeu_pd(lrow + 7 * 8, a21);
                            _mm512_storeu_pd(lrow + 8 * 8, a22);
                            _mm512_storeu_pd(lrow + 9 * 8, a30);
                            _mm512_storeu_pd(lrow + 10 * 8, a31);
                            _mm512_storeu_pd(lrow + 11 * 8, a32);
                            _mm512_storeu_pd(lrow + 12 * 8, a40);
                            _mm512_storeu_pd(lrow + 13 * 8, a41);
                            _mm512_storeu_pd(lrow + 14 * 8, a42);
                            _mm512_storeu_pd(lrow + 15 * 8, a50);
                            _mm512_storeu_pd(lrow + 16 * 8, a51);
                            _mm512_storeu_pd(lrow + 17 * 8, a52);
                            _mm512_storeu_pd(lrow + 18 * 8, a60);
                            _mm512_storeu_pd(lrow + 19 * 8, a61);
                            _mm512_storeu_pd(lrow + 20 * 8, a62);
                            _mm512_storeu_pd(lrow + 21 * 8, a70);
                            _mm512_storeu_pd(lrow + 22 * 8, a71);
                            _mm512_storeu_pd(lrow + 23 * 8, a72);
                            lrow += 8 * 3 * 8;
                            }
                        }
                    }
                }
            }
            // Lane reduction in a fixed order, once per weight element.
            for (int64_t row = 0; row < rows; ++row) {
                const double* lrow = lacc.data() + row * 8 * 3 * 8;
                for (int b = 0; b < 8; ++b) {
                    for (int v = 0; v < 3; ++v) {
                        const double* l = lrow + (b * 3 + v) * 8;
                        const double s = ((l[0] + l[1]) + (l[2] + l[3])) +
                                         ((l[4] + l[5]) + (l[6] + l[7]));
                        gk[(co0 + b) * ksz + row * 3 + v] += s;
                    }
                }
            }
        }
    });
}
#else
void conv3d_backward_weights_s1_tile8(const Conv3dDims& d, const double* xp,
                                      const double* gy, double* gk) {
    conv3d_backward_weights_s1(d, xp, gy, gk);
}
#endif  // __AVX512F__

}  // namespace

Tensor conv3d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
              std::array<int64_t, 3> stride, std::array<int64_t, 3> padding) {
    const Conv3dDims d = conv3d_dims(input, kernel, bias, stride, padding);
    const bool unit_stride = d.st == 1 && d.sh == 1 && d.sw == 1;
    Tensor out({d.n, d.co, d.to, d.ho, d.wo});

    if (unit_stride) {
        const auto xp = pad5(input.data(), d.n, d.ci, d.t, d.h, d.w, d.pt, d.ph, d.pw);
        conv3d_rows_s1(xp.data(), kernel.data(), bias.data(), out.data(), d.n, d.ci,
                       d.t + 2 * d.pt, d.h + 2 * d.ph, d.w + 2 * d.pw, d.co, d.kt,
                       d.kh, d.kw, d.to, d.ho, d.wo, /*accumulate=*/false);
    } else {
        conv3d_forward_generic(d, input.data(), kernel.data(), bias.data(), out.data());
    }

    if (detail::should_record({&input, &kernel, &bias})) {
        detail::mark_as_op_output(out);
        auto xi = input.impl();
        auto ki = kernel.impl();
        auto bi = bias.impl();
        auto oi = out.impl();
        Graph::active()->record("conv3d", {xi, ki, bi}, out, [xi, ki, bi, oi, d, unit_stride] {
            const double* gy = oi->grad.data();
            if (bi->requires_grad) {
                double* gb = detail::ensure_grad(*bi).data();
                const int64_t plane = d.to * d.ho * d.wo;
                for (int64_t co = 0; co < d.co; ++co) {
                    double acc = 0.0;
                    for (int64_t n = 0; n < d.n; ++n) {
                        acc += striped_sum(gy + (n * d.co + co) * plane, plane);
                    }
                    gb[co] += acc;
                }
            }
            if (ki->requires_grad) {
                double* gk = detail::ensure_grad(*ki).data();
                if (unit_stride) {
                    const auto xp = pad5(xi->values.data(), d.n, d.ci, d.t, d.h, d.w,
                                         d.pt, d.ph, d.pw);
                    if (d.kw == 3 && d.co % 8 == 0 && d.wo % 8 == 0) {
                        conv3d_backward_weights_s1_tile8(d, xp.data(), gy, gk);
                    } else {
                        conv3d_backward_weights_s1(d, xp.data(), gy, gk);
                    }
                } else {
                    conv3d_backward_weights_generic(d, xi->values.data(), gy, gk);
                }
            }
            if (xi->requires_grad) {
                double* gx = detail::ensure_grad(*xi).data();
                if (unit_stride) {
                    // dX is the stride-1 correlation of padded dY with the
                    // channel-transposed, axis-flipped kernel.
                    const int64_t ppt = d.kt - 1 - d.pt, pph = d.kh - 1 - d.ph,
                                  ppw = d.kw - 1 - d.pw;
                    const auto gyp = pad5(gy, d.n, d.co, d.to, d.ho, d.wo, ppt, pph, ppw);
                    std::vector<double> kflip(
                        static_cast<size_t>(d.ci * d.co * d.kt * d.kh * d.kw));
                    const double* k = ki->values.data();
                    for (int64_t ci = 0; ci < d.ci; ++ci) {
                        for (int64_t co = 0; co < d.co; ++co) {
                            for (int64_t dt = 0; dt < d.kt; ++dt) {
                                for (int64_t dh = 0; dh < d.kh; ++dh) {
                                    for (int64_t dw = 0; dw < d.kw; ++dw) {
                                        kflip[(((ci * d.co + co) * d.kt + dt) * d.kh + dh) * d.kw + dw] =
                                            k[(((co * d.ci + ci) * d.kt + (d.kt - 1 - dt)) * d.kh +
                                               (d.kh - 1 - dh)) * d.kw + (d.kw - 1 - dw)];
                                    }
                                }
                            }
                        }
                    }
                    conv3d_rows_s1(gyp.data(), kflip.data(), nullptr, gx, d.n, d.co,
                                   d.to + 2 * ppt, d.ho + 2 * pph, d.wo + 2 * ppw, d.ci,
                                   d.kt, d.kh, d.kw, d.t, d.h, d.w, /*accumulate=*/true);
                } else {
                    conv3d_backward_input_generic(d, ki->values.data(), gy, gx);
                }
            }
        });
    }
    return out;
}

// ---- conv2d (im2col + small matmul, any stride) ------------------------------

namespace {

struct Conv2dDims {
    int64_t n, ci, h, w;
    int64_t co, kh, kw;
    int64_t sh, sw, ph, pw;
    int64_t ho, wo;
    int64_t patch() const { return ci * kh * kw; }
    int64_t positions() const { return n * ho * wo; }
};

Conv2dDims conv2d_dims(const Tensor& x, const Tensor& k, const Tensor& b,
                       std::array<int64_t, 2> stride, std::array<int64_t, 2> pad) {
    if (x.rank() != 4 || k.rank() != 4) {
        throw ShapeError("conv2d: expected input [N,Ci,H,W] and kernel [Co,Ci,kh,kw],"
                         " got input " + shape_str(x.shape()) + " kernel " +
                         shape_str(k.shape()));
    }
    Conv2dDims d{};
    d.n = x.dim(0); d.ci = x.dim(1); d.h = x.dim(2); d.w = x.dim(3);
    d.co = k.dim(0); d.kh = k.dim(2); d.kw = k.dim(3);
    d.sh = stride[0]; d.sw = stride[1]; d.ph = pad[0]; d.pw = pad[1];
    if (k.dim(1) != d.ci) {
        throw ShapeError("conv2d: channel mismatch between input " +
                         shape_str(x.shape()) + " and kernel " + shape_str(k.shape()));
    }
    if (b.rank() != 1 || b.dim(0) != d.co) {
        throw ShapeError("conv2d: bias " + shape_str(b.shape()) +
                         " does not match kernel " + shape_str(k.shape()));
    }
    if (d.sh < 1 || d.sw < 1 || d.ph < 0 || d.pw < 0) {
        throw ShapeError("conv2d: invalid stride/padding");
    }
    if (d.kh > d.h + 2 * d.ph || d.kw > d.w + 2 * d.pw) {
        throw ShapeError("conv2d: kernel " + shape_str(k.shape()) +
                         " larger than padded input " + shape_str(x.shape()));
    }
    d.ho = (d.h + 2 * d.ph - d.kh) / d.sh + 1;
    d.wo = (d.w + 2 * d.pw - d.kw) / d.sw + 1;
    return d;
}

std::vector<double> im2col(const Conv2dDims& d, const double* x) {
    std::vector<double> cols(static_cast<size_t>(d.positions() * d.patch()));
    parallel_for(d.n, [&](int64_t begin, int64_t end) {
        for (int64_t n = begin; n < end; ++n) {
            double* base = cols.data() + n * d.ho * d.wo * d.patch();
            for (int64_t ho = 0; ho < d.ho; ++ho) {
                for (int64_t wo = 0; wo < d.wo; ++wo) {
                    double* col = base + (ho * d.wo + wo) * d.patch();
                    for (int64_t ci = 0; ci < d.ci; ++ci) {
                        for (int64_t dh = 0; dh < d.kh; ++dh) {
                            const int64_t hi = ho * d.sh - d.ph + dh;
                            for (int64_t dw = 0; dw < d.kw; ++dw) {
                                const int64_t wi = wo * d.sw - d.pw + dw;
                                const bool inside =
                                    hi >= 0 && hi < d.h && wi >= 0 && wi < d.w;
                                *col++ = inside
                                    ? x[((n * d.ci + ci) * d.h + hi) * d.w + wi]
                                    : 0.0;
                            }
                        }
                    }
                }
            }
        }
    });
    return cols;
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
              std::array<int64_t, 2> stride, std::array<int64_t, 2> padding) {
    const Conv2dDims d = conv2d_dims(input, kernel, bias, stride, padding);
    Tensor out({d.n, d.co, d.ho, d.wo});
    const auto cols = im2col(d, input.data());
    const int64_t patch = d.patch();
    const int64_t plane = d.ho * d.wo;

    {
        const double* k = kernel.data();
        const double* b = bias.data();
        double* y = out.data();
        parallel_for(d.positions(), [&](int64_t begin, int64_t end) {
            for (int64_t pos = begin; pos < end; ++pos) {
                const double* col = cols.data() + pos * patch;
                const int64_t n = pos / plane;
                const int64_t offset = pos % plane;
                for (int64_t co = 0; co < d.co; ++co) {
                    y[(n * d.co + co) * plane + offset] =
                        b[co] + striped_dot(k + co * patch, col, patch);
                }
            }
        });
    }

    if (detail::should_record({&input, &kernel, &bias})) {
        detail::mark_as_op_output(out);
        auto xi = input.impl();
        auto ki = kernel.impl();
        auto bi = bias.impl();
        auto oi = out.impl();
        // im2col is cheap relative to carrying the buffer across the step, so
        // the backward pass rebuilds it on demand.
        Graph::active()->record("conv2d", {xi, ki, bi}, out, [xi, ki, bi, oi, d] {
            const int64_t patch = d.patch();
            const int64_t plane = d.ho * d.wo;
            const double* gy = oi->grad.data();
            if (bi->requires_grad) {
                double* gb = detail::ensure_grad(*bi).data();
                for (int64_t co = 0; co < d.co; ++co) {
                    double acc = 0.0;
                    for (int64_t n = 0; n < d.n; ++n) {
                        acc += striped_sum(gy + (n * d.co + co) * plane, plane);
                    }
                    gb[co] += acc;
                }
            }
            if (ki->requires_grad) {
                const auto cols = im2col(d, xi->values.data());
                double* gk = detail::ensure_grad(*ki).data();
                parallel_for(d.co, [&](int64_t begin, int64_t end) {
                    for (int64_t co = begin; co < end; ++co) {
                        double* gkr = gk + co * patch;
                        for (int64_t n = 0; n < d.n; ++n) {
                            const double* gyp = gy + (n * d.co + co) * plane;
                            const double* colbase = cols.data() + n * plane * patch;
                            for (int64_t p = 0; p < plane; ++p) {
                                const double g = gyp[p];
                                const double* col = colbase + p * patch;
                                for (int64_t i = 0; i < patch; ++i) gkr[i] += g * col[i];
                            }
                        }
                    }
                });
            }
            if (xi->requires_grad) {
                double* gx = detail::ensure_grad(*xi).data();
                const double* k = ki->values.data();
                parallel_for(d.n, [&](int64_t begin, int64_t end) {
                    std::vector<double> dcol(static_cast<size_t>(patch));
                    for (int64_t n = begin; n < end; ++n) {
                        for (int64_t ho = 0; ho < d.ho; ++ho) {
                            for (int64_t wo = 0; wo < d.wo; ++wo) {
                                std::fill(dcol.begin(), dcol.end(), 0.0);
                                for (int64_t co = 0; co < d.co; ++co) {
                                    const double g =
                                        gy[((n * d.co + co) * d.ho + ho) * d.wo + wo];
                                    const double* kr = k + co * patch;
                                    for (int64_t i = 0; i < patch; ++i) dcol[i] += g * kr[i];
                                }
                                const double* col = dcol.data();
                                for (int64_t ci = 0; ci < d.ci; ++ci) {
                                    for (int64_t dh = 0; dh < d.kh; ++dh) {
                                        const int64_t hi = ho * d.sh - d.ph + dh;
                                        for (int64_t dw = 0; dw < d.kw; ++dw) {
                                            const int64_t wi = wo * d.sw - d.pw + dw;
                                            const double g = *col++;
                                            if (hi >= 0 && hi < d.h && wi >= 0 && wi < d.w) {
                                                gx[((n * d.ci + ci) * d.h + hi) * d.w + wi] += g;
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                });
            }
        });
    }
    return out;
}

// ---- pooling ------------------------------------------------------------------

Tensor pool3d(const Tensor& input, PoolMode mode, std::array<int64_t, 3> window,
              std::array<int64_t, 3> stride) {
    if (input.rank() != 5) {
        throw ShapeError("pool3d: expected [N,C,T,H,W], got " + shape_str(input.shape()));
    }
    const int64_t n = input.dim(0), c = input.dim(1), t = input.dim(2),
                  h = input.dim(3), w = input.dim(4);
    const int64_t wt = window[0], wh = window[1], ww = window[2];
    const int64_t st = stride[0], sh = stride[1], sw = stride[2];
    if (wt < 1 || wh < 1 || ww < 1 || st < 1 || sh < 1 || sw < 1 || wt > t ||
        wh > h || ww > w) {
        throw ShapeError("pool3d: window " + std::to_string(wt) + "x" +
                         std::to_string(wh) + "x" + std::to_string(ww) +
                         " invalid for input " + shape_str(input.shape()));
    }
    const int64_t to = (t - wt) / st + 1;
    const int64_t ho = (h - wh) / sh + 1;
    const int64_t wo = (w - ww) / sw + 1;
    Tensor out({n, c, to, ho, wo});

    const bool is_max = mode == PoolMode::max;
    // Scan-order argmax per output cell, kept for the max backward.
    auto argmax = is_max ? std::make_shared<std::vector<int64_t>>(
                               static_cast<size_t>(out.numel()))
                         : nullptr;
    const double* x = input.data();
    double* y = out.data();
    const double inv_volume = 1.0 / static_cast<double>(wt * wh * ww);

    parallel_for(n * c, [&](int64_t begin, int64_t end) {
        for (int64_t nc = begin; nc < end; ++nc) {
            const double* xc = x + nc * t * h * w;
            double* yc = y + nc * to * ho * wo;
            int64_t* am = argmax ? argmax->data() + nc * to * ho * wo : nullptr;
            for (int64_t ot = 0; ot < to; ++ot) {
                for (int64_t oh = 0; oh < ho; ++oh) {
                    for (int64_t ow = 0; ow < wo; ++ow) {
                        const int64_t t0 = ot * st, h0 = oh * sh, w0 = ow * sw;
                        if (is_max) {
                            double best = -std::numeric_limits<double>::infinity();
                            int64_t best_idx = -1;
                            for (int64_t dt = 0; dt < wt; ++dt) {
                                for (int64_t dh = 0; dh < wh; ++dh) {
                                    const double* row = xc + ((t0 + dt) * h + h0 + dh) * w + w0;
                                    for (int64_t dw = 0; dw < ww; ++dw) {
                                        if (row[dw] > best) {
                                            best = row[dw];
                                            best_idx = ((t0 + dt) * h + h0 + dh) * w + w0 + dw;
                                        }
                                    }
                                }
                            }
                            *yc++ = best;
                            *am++ = nc * t * h * w + best_idx;
                        } else {
                            double acc = 0.0;
                            for (int64_t dt = 0; dt < wt; ++dt) {
                                for (int64_t dh = 0; dh < wh; ++dh) {
                                    const double* row = xc + ((t0 + dt) * h + h0 + dh) * w + w0;
                                    for (int64_t dw = 0; dw < ww; ++dw) acc += row[dw];
                                }
                            }
                            *yc++ = acc * inv_volume;
                        }
                    }
                }
            }
        }
    });

    if (detail::should_record({&input})) {
        detail::mark_as_op_output(out);
        auto xi = input.impl();
        auto oi = out.impl();
        const int64_t cells = to * ho * wo;
        Graph::active()->record("pool3d", {xi}, out,
                                [xi, oi, argmax, is_max, n, c, t, h, w, to, ho, wo,
                                 wt, wh, ww, st, sh, sw, cells, inv_volume] {
            const double* g = oi->grad.data();
            double* gx = detail::ensure_grad(*xi).data();
            parallel_for(n * c, [&](int64_t begin, int64_t end) {
                for (int64_t nc = begin; nc < end; ++nc) {
                    const double* gc = g + nc * cells;
                    if (is_max) {
                        const int64_t* am = argmax->data() + nc * cells;
                        for (int64_t i = 0; i < cells; ++i) gx[am[i]] += gc[i];
                    } else {
                        double* gxc = gx + nc * t * h * w;
                        for (int64_t ot = 0; ot < to; ++ot) {
                            for (int64_t oh = 0; oh < ho; ++oh) {
                                for (int64_t ow = 0; ow < wo; ++ow) {
                                    const double gv =
                                        gc[(ot * ho + oh) * wo + ow] * inv_volume;
                                    for (int64_t dt = 0; dt < wt; ++dt) {
                                        for (int64_t dh = 0; dh < wh; ++dh) {
                                            double* row = gxc +
                                                ((ot * st + dt) * h + oh * sh + dh) * w +
                                                ow * sw;
                                            for (int64_t dw = 0; dw < ww; ++dw) row[dw] += gv;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            });
        });
    }
    return out;
}

namespace {

Tensor global_avg_impl(const Tensor& input, int64_t spatial_rank) {
    const int64_t n = input.dim(0), c = input.dim(1);
    int64_t volume = 1;
    for (int64_t i = 2; i < 2 + spatial_rank; ++i) volume *= input.dim(i);
    Tensor out({n, c});
    const double* x = input.data();
    double* y = out.data();
    const double inv = 1.0 / static_cast<double>(volume);
    parallel_for(n * c, [&](int64_t begin, int64_t end) {
        for (int64_t nc = begin; nc < end; ++nc) {
            y[nc] = striped_sum(x + nc * volume, volume) * inv;
        }
    });

    if (detail::should_record({&input})) {
        detail::mark_as_op_output(out);
        auto xi = input.impl();
        auto oi = out.impl();
        Graph::active()->record("global_avg_pool", {xi}, out, [xi, oi, n, c, volume, inv] {
            const double* g = oi->grad.data();
            double* gx = detail::ensure_grad(*xi).data();
            parallel_for(n * c, [&](int64_t begin, int64_t end) {
                for (int64_t nc = begin; nc < end; ++nc) {
                    const double gv = g[nc] * inv;
                    double* row = gx + nc * volume;
                    for (int64_t i = 0; i < volume; ++i) row[i] += gv;
                }
            });
        });
    }
    return out;
}

}  // namespace

Tensor global_avg_pool(const Tensor& input) {
    if (input.rank() != 5) {
        throw ShapeError("global_avg_pool: expected [N,C,T,H,W], got " +
                         shape_str(input.shape()));
    }
    return global_avg_impl(input, 3);
}

Tensor global_avg_pool2d(const Tensor& input) {
    if (input.rank() != 4) {
        throw ShapeError("global_avg_pool2d: expected [N,C,H,W], got " +
                         shape_str(input.shape()));
    }
    return global_avg_impl(input, 2);
}

}  // namespace vssl
