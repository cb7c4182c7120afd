#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <stdexcept>

#include "sonostate/rng.hpp"
#include "sonostate/tensor.hpp"

namespace sono::nn {

enum class Mode { train, infer };
enum class LayerKind { conv2d, dense };

// Weights and biases of one parameterized layer.
// conv2d weights: (out_channels, in_channels, kh, kw); dense: (out_units, in_units).
template <typename T>
struct LayerParams {
    LayerKind kind = LayerKind::dense;
    Tensor<T> weights;
    Tensor<T> biases;
};

// He-initialized weight draws: zero-mean normal with var(w) = 2 / fan_in.
template <typename T>
Tensor<T> he_init(std::size_t fan_in, std::size_t count, Rng& rng) {
    if (fan_in == 0) throw std::invalid_argument("he_init: fan_in must be >= 1");
    double sigma = std::sqrt(2.0 / double(fan_in));
    Tensor<T> out(Shape{count});
    for (std::size_t i = 0; i < count; ++i) out[i] = T(sigma * rng.normal());
    return out;
}

namespace detail {

// Reused scratch (im2col panels and the like); one arena per scalar type.
// Single-threaded by design, matching the deterministic reference mode.
template <typename T>
T* workspace(std::size_t slot, std::size_t count) {
    static thread_local std::vector<T> pool[3];
    auto& v = pool[slot];
    if (v.size() < count) v.resize(count);
    return v.data();
}

// C[M,N] (+)= A[M,K] * B[K,N], row-major contiguous. saxpy inner form,
// k unrolled by 4; N panels keep the C row hot and K blocks keep the B
// panel L2-resident across the M sweep.
template <typename T>
void gemm(const T* __restrict a, const T* __restrict b, T* __restrict c, std::size_t m_dim,
          std::size_t k_dim, std::size_t n_dim, bool accumulate) {
    constexpr std::size_t kPanelN = 4096;
    constexpr std::size_t kBlockK = 48;
    if (!accumulate) std::memset(c, 0, m_dim * n_dim * sizeof(T));
    for (std::size_t n0 = 0; n0 < n_dim; n0 += kPanelN) {
        const std::size_t len = std::min(n_dim, n0 + kPanelN) - n0;
        for (std::size_t k0 = 0; k0 < k_dim; k0 += kBlockK) {
            const std::size_t k1 = std::min(k_dim, k0 + kBlockK);
            for (std::size_t m = 0; m < m_dim; ++m) {
                T* __restrict crow = c + m * n_dim + n0;
                std::size_t k = k0;
                for (; k + 4 <= k1; k += 4) {
                    const T a0 = a[m * k_dim + k], a1 = a[m * k_dim + k + 1];
                    const T a2 = a[m * k_dim + k + 2], a3 = a[m * k_dim + k + 3];
                    const T* __restrict b0 = b + k * n_dim + n0;
                    const T* __restrict b1 = b0 + n_dim;
                    const T* __restrict b2 = b1 + n_dim;
                    const T* __restrict b3 = b2 + n_dim;
                    for (std::size_t n = 0; n < len; ++n)
                        crow[n] += a0 * b0[n] + a1 * b1[n] + a2 * b2[n] + a3 * b3[n];
                }
                for (; k < k1; ++k) {
                    const T av = a[m * k_dim + k];
                    const T* __restrict brow = b + k * n_dim + n0;
                    for (std::size_t n = 0; n < len; ++n) crow[n] += av * brow[n];
                }
            }
        }
    }
}

// Fixed-width SIMD lanes via GCC vector extensions; lane sums happen in a
// fixed order so results are deterministic for a given binary.
template <typename T>
struct VecTraits;
template <>
struct VecTraits<float> {
    using V = float __attribute__((vector_size(32)));
    static constexpr std::size_t width = 8;
};
template <>
struct VecTraits<double> {
    using V = double __attribute__((vector_size(32)));
    static constexpr std::size_t width = 4;
};

template <typename T>
inline typename VecTraits<T>::V vload(const T* p) {
    typename VecTraits<T>::V v;
    __builtin_memcpy(&v, p, sizeof(v));
    return v;
}

template <typename T>
inline T vsum(typename VecTraits<T>::V v) {
    T s = 0;
    for (std::size_t l = 0; l < VecTraits<T>::width; ++l) s += v[l];
    return s;
}

// C[M,N] (+)= A[M,K] * B[N,K]^T: dot products over the long shared axis,
// two B rows per pass.
template <typename T>
void gemm_abt(const T* __restrict a, const T* __restrict b, T* __restrict c, std::size_t m_dim,
              std::size_t k_dim, std::size_t n_dim, bool accumulate) {
    using V = typename VecTraits<T>::V;
    constexpr std::size_t w = VecTraits<T>::width;
    for (std::size_t m = 0; m < m_dim; ++m) {
        const T* __restrict arow = a + m * k_dim;
        std::size_t n = 0;
        for (; n + 2 <= n_dim; n += 2) {
            const T* __restrict b0 = b + n * k_dim;
            const T* __restrict b1 = b0 + k_dim;
            V acc0{}, acc1{};
            std::size_t k = 0;
            for (; k + w <= k_dim; k += w) {
                const V av = vload(arow + k);
                acc0 += av * vload(b0 + k);
                acc1 += av * vload(b1 + k);
            }
            T s0 = vsum<T>(acc0), s1 = vsum<T>(acc1);
            for (; k < k_dim; ++k) {
                s0 += arow[k] * b0[k];
                s1 += arow[k] * b1[k];
            }
            T* out = c + m * n_dim + n;
            if (accumulate) {
                out[0] += s0;
                out[1] += s1;
            } else {
                out[0] = s0;
                out[1] = s1;
            }
        }
        for (; n < n_dim; ++n) {
            const T* __restrict brow = b + n * k_dim;
            V acc0{}, acc1{}, acc2{}, acc3{};
            std::size_t k = 0;
            for (; k + 4 * w <= k_dim; k += 4 * w) {
                acc0 += vload(arow + k) * vload(brow + k);
                acc1 += vload(arow + k + w) * vload(brow + k + w);
                acc2 += vload(arow + k + 2 * w) * vload(brow + k + 2 * w);
                acc3 += vload(arow + k + 3 * w) * vload(brow + k + 3 * w);
            }
            for (; k + w <= k_dim; k += w) acc0 += vload(arow + k) * vload(brow + k);
            T s = vsum<T>(acc0) + vsum<T>(acc1) + vsum<T>(acc2) + vsum<T>(acc3);
            for (; k < k_dim; ++k) s += arow[k] * brow[k];
            if (accumulate)
                c[m * n_dim + n] += s;
            else
                c[m * n_dim + n] = s;
        }
    }
}

struct ConvDims {
    std::size_t c, h, w, o, kh, kw, oh, ow, stride, pad;
};

template <typename T>
ConvDims conv_dims(const Tensor<T>& in, const LayerParams<T>& p, std::size_t stride,
                   std::size_t pad) {
    if (in.rank() != 3) throw std::invalid_argument("conv2d: input must be (C,H,W)");
    if (p.weights.rank() != 4) throw std::invalid_argument("conv2d: weights must be (O,C,kh,kw)");
    if (stride == 0) throw std::invalid_argument("conv2d: stride must be positive");
    ConvDims d{};
    d.c = in.extent(0);
    d.h = in.extent(1);
    d.w = in.extent(2);
    d.o = p.weights.extent(0);
    d.kh = p.weights.extent(2);
    d.kw = p.weights.extent(3);
    d.stride = stride;
    d.pad = pad;
    if (p.weights.extent(1) != d.c)
        throw std::invalid_argument("conv2d: weight in-channels do not match input");
    if (p.biases.size() != d.o) throw std::invalid_argument("conv2d: bias length != out-channels");
    const std::size_t ph = d.h + 2 * pad, pw = d.w + 2 * pad;
    if (d.kh > ph || d.kw > pw) throw std::invalid_argument("conv2d: kernel larger than input");
    d.oh = (ph - d.kh) / stride + 1;
    d.ow = (pw - d.kw) / stride + 1;
    return d;
}

// col is (C*kh*kw) x (oh*ow)
template <typename T>
void im2col(const T* in, const ConvDims& d, T* col) {
    const std::size_t n = d.oh * d.ow;
    for (std::size_t c = 0; c < d.c; ++c) {
        const T* plane = in + c * d.h * d.w;
        for (std::size_t u = 0; u < d.kh; ++u) {
            for (std::size_t v = 0; v < d.kw; ++v) {
                T* row = col + ((c * d.kh + u) * d.kw + v) * n;
                for (std::size_t i = 0; i < d.oh; ++i) {
                    const std::ptrdiff_t sy = std::ptrdiff_t(i * d.stride + u) - std::ptrdiff_t(d.pad);
                    T* dst = row + i * d.ow;
                    if (sy < 0 || sy >= std::ptrdiff_t(d.h)) {
                        std::memset(dst, 0, d.ow * sizeof(T));
                        continue;
                    }
                    const T* srow = plane + std::size_t(sy) * d.w;
                    if (d.stride == 1 && d.pad == 0) {
                        std::memcpy(dst, srow + v, d.ow * sizeof(T));
                    } else {
                        for (std::size_t j = 0; j < d.ow; ++j) {
                            const std::ptrdiff_t sx =
                                std::ptrdiff_t(j * d.stride + v) - std::ptrdiff_t(d.pad);
                            dst[j] = (sx < 0 || sx >= std::ptrdiff_t(d.w)) ? T(0)
                                                                           : srow[sx];
                        }
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im_add(const T* col, const ConvDims& d, T* in_grad) {
    const std::size_t n = d.oh * d.ow;
    for (std::size_t c = 0; c < d.c; ++c) {
        T* plane = in_grad + c * d.h * d.w;
        for (std::size_t u = 0; u < d.kh; ++u) {
            for (std::size_t v = 0; v < d.kw; ++v) {
                const T* row = col + ((c * d.kh + u) * d.kw + v) * n;
                for (std::size_t i = 0; i < d.oh; ++i) {
                    const std::ptrdiff_t sy = std::ptrdiff_t(i * d.stride + u) - std::ptrdiff_t(d.pad);
                    if (sy < 0 || sy >= std::ptrdiff_t(d.h)) continue;
                    T* drow = plane + std::size_t(sy) * d.w;
                    const T* srow = row + i * d.ow;
                    for (std::size_t j = 0; j < d.ow; ++j) {
                        const std::ptrdiff_t sx =
                            std::ptrdiff_t(j * d.stride + v) - std::ptrdiff_t(d.pad);
                        if (sx >= 0 && sx < std::ptrdiff_t(d.w)) drow[sx] += srow[j];
                    }
                }
            }
        }
    }
}

}  // namespace detail

// Valid convolution by default (pad = 0). Output (O, oh, ow) with
// out(o,i,j) = bias(o) + sum_{c,u,v} in(c, i*s+u-pad, j*s+v-pad) * w(o,c,u,v).
template <typename T>
Tensor<T> conv2d(const Tensor<T>& in, const LayerParams<T>& p, std::size_t stride = 1,
                 std::size_t pad = 0) {
    const auto d = detail::conv_dims(in, p, stride, pad);
    const std::size_t k = d.c * d.kh * d.kw, n = d.oh * d.ow;
    T* col = detail::workspace<T>(0, k * n);
    detail::im2col(in.data(), d, col);
    Tensor<T> out(Shape{d.o, d.oh, d.ow});
    detail::gemm(p.weights.data(), col, out.data(), d.o, k, n, false);
    for (std::size_t o = 0; o < d.o; ++o) {
        T* row = out.data() + o * n;
        const T b = p.biases[o];
        for (std::size_t i = 0; i < n; ++i) row[i] += b;
    }
    return out;
}

template <typename T>
struct ConvGrads {
    Tensor<T> input, weights, biases;
};

// Accumulating backward: weight/bias gradients are added into the given
// buffers, the input gradient (if requested) is returned. The im2col buffer
// is recomputed rather than cached.
template <typename T>
Tensor<T> conv2d_backward_acc(const Tensor<T>& in, const LayerParams<T>& p,
                              const Tensor<T>& upstream, std::size_t stride, std::size_t pad,
                              bool need_input_grad, Tensor<T>& weight_acc, Tensor<T>& bias_acc) {
    const auto d = detail::conv_dims(in, p, stride, pad);
    const std::size_t k = d.c * d.kh * d.kw, n = d.oh * d.ow;
    if (upstream.shape() != Shape{d.o, d.oh, d.ow})
        throw std::invalid_argument("conv2d_backward: upstream shape mismatch");
    if (weight_acc.shape() != p.weights.shape() || bias_acc.size() != d.o)
        throw std::invalid_argument("conv2d_backward: accumulator shape mismatch");

    T* col = detail::workspace<T>(0, k * n);
    detail::im2col(in.data(), d, col);

    // dW[o, k] += sum_n up[o, n] * col[k, n]
    detail::gemm_abt(upstream.data(), col, weight_acc.data(), d.o, n, k, true);

    // db[o] += sum_n up[o, n], accumulated in 64-bit
    for (std::size_t o = 0; o < d.o; ++o) {
        double s = 0;
        const T* row = upstream.data() + o * n;
        for (std::size_t i = 0; i < n; ++i) s += double(row[i]);
        bias_acc[o] += T(s);
    }

    if (!need_input_grad) return Tensor<T>();

    // dcol = W^T * up, then scatter back
    T* wt = detail::workspace<T>(1, k * d.o);
    for (std::size_t o = 0; o < d.o; ++o)
        for (std::size_t kk = 0; kk < k; ++kk) wt[kk * d.o + o] = p.weights[o * k + kk];
    T* dcol = detail::workspace<T>(2, k * n);
    detail::gemm(wt, upstream.data(), dcol, k, d.o, n, false);
    Tensor<T> input_grad(in.shape());
    detail::col2im_add(dcol, d, input_grad.data());
    return input_grad;
}

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& in, const LayerParams<T>& p,
                             const Tensor<T>& upstream, std::size_t stride = 1,
                             std::size_t pad = 0, bool need_input_grad = true) {
    ConvGrads<T> g{Tensor<T>(), Tensor<T>(p.weights.shape()), Tensor<T>(p.biases.shape())};
    g.input =
        conv2d_backward_acc(in, p, upstream, stride, pad, need_input_grad, g.weights, g.biases);
    return g;
}

template <typename T>
struct PoolResult {
    Tensor<T> output;
    std::vector<std::uint32_t> argmax;  // linear index into the input, one per output element
};

// Max pooling over (wh, ww) windows. Ties broken by lowest linear index.
template <typename T>
PoolResult<T> maxpool2d(const Tensor<T>& in, std::size_t wh, std::size_t ww,
                        std::size_t stride) {
    if (in.rank() != 3) throw std::invalid_argument("maxpool2d: input must be (C,H,W)");
    if (stride == 0 || wh == 0 || ww == 0)
        throw std::invalid_argument("maxpool2d: window and stride must be positive");
    const std::size_t c = in.extent(0), h = in.extent(1), w = in.extent(2);
    if (wh > h || ww > w) throw std::invalid_argument("maxpool2d: window larger than input");
    const std::size_t oh = (h - wh) / stride + 1, ow = (w - ww) / stride + 1;
    PoolResult<T> r{Tensor<T>(Shape{c, oh, ow}), std::vector<std::uint32_t>(c * oh * ow)};
    std::size_t out_idx = 0;
    for (std::size_t ch = 0; ch < c; ++ch) {
        const T* plane = in.data() + ch * h * w;
        for (std::size_t i = 0; i < oh; ++i) {
            for (std::size_t j = 0; j < ow; ++j, ++out_idx) {
                std::size_t best = (i * stride) * w + j * stride;
                T bv = plane[best];
                for (std::size_t u = 0; u < wh; ++u) {
                    const std::size_t row = (i * stride + u) * w;
                    for (std::size_t v = 0; v < ww; ++v) {
                        const std::size_t idx = row + j * stride + v;
                        if (plane[idx] > bv) {
                            bv = plane[idx];
                            best = idx;
                        }
                    }
                }
                r.output[out_idx] = bv;
                r.argmax[out_idx] = std::uint32_t(ch * h * w + best);
            }
        }
    }
    return r;
}

template <typename T>
Tensor<T> maxpool2d_backward(const Shape& in_shape, const std::vector<std::uint32_t>& argmax,
                             const Tensor<T>& upstream) {
    if (argmax.size() != upstream.size())
        throw std::invalid_argument("maxpool2d_backward: argmax/upstream size mismatch");
    Tensor<T> g(in_shape);
    for (std::size_t i = 0; i < argmax.size(); ++i) g[argmax[i]] += upstream[i];
    return g;
}

// out = W x + b
template <typename T>
Tensor<T> dense(const Tensor<T>& x, const LayerParams<T>& p) {
    if (p.weights.rank() != 2) throw std::invalid_argument("dense: weights must be (out,in)");
    const std::size_t out_n = p.weights.extent(0), in_n = p.weights.extent(1);
    if (x.size() != in_n)
        throw std::invalid_argument("dense: input length " + std::to_string(x.size()) +
                                    " != in-units " + std::to_string(in_n));
    if (p.biases.size() != out_n) throw std::invalid_argument("dense: bias length != out-units");
    Tensor<T> y(Shape{out_n});
    detail::gemm_abt(p.weights.data(), x.data(), y.data(), out_n, in_n, 1, false);
    for (std::size_t i = 0; i < out_n; ++i) y[i] += p.biases[i];
    return y;
}

template <typename T>
struct DenseGrads {
    Tensor<T> input, weights, biases;
};

// Accumulating form: adds this call's weight/bias gradients into the given
// buffers (used by the training loop to avoid per-sample allocations).
template <typename T>
Tensor<T> dense_backward_acc(const Tensor<T>& x, const LayerParams<T>& p,
                             const Tensor<T>& upstream, Tensor<T>& weight_acc,
                             Tensor<T>& bias_acc) {
    const std::size_t out_n = p.weights.extent(0), in_n = p.weights.extent(1);
    if (upstream.size() != out_n)
        throw std::invalid_argument("dense_backward: upstream length mismatch");
    if (weight_acc.shape() != p.weights.shape() || bias_acc.size() != out_n)
        throw std::invalid_argument("dense_backward: accumulator shape mismatch");
    Tensor<T> dx(Shape{in_n});
    for (std::size_t o = 0; o < out_n; ++o) {
        const T u = upstream[o];
        const T* __restrict wrow = p.weights.data() + o * in_n;
        T* __restrict gw = weight_acc.data() + o * in_n;
        T* __restrict dxp = dx.data();
        const T* __restrict xp = x.data();
        for (std::size_t i = 0; i < in_n; ++i) {
            gw[i] += u * xp[i];
            dxp[i] += u * wrow[i];
        }
        bias_acc[o] += u;
    }
    return dx;
}

template <typename T>
DenseGrads<T> dense_backward(const Tensor<T>& x, const LayerParams<T>& p,
                             const Tensor<T>& upstream) {
    DenseGrads<T> g{Tensor<T>(), Tensor<T>(p.weights.shape()), Tensor<T>(p.biases.shape())};
    g.input = dense_backward_acc(x, p, upstream, g.weights, g.biases);
    return g;
}

// f(x) = x for x > 0, exp(x) - 1 otherwise (alpha = 1).
template <typename T>
Tensor<T> elu(const Tensor<T>& x) {
    Tensor<T> y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i)
        y[i] = x[i] > T(0) ? x[i] : T(std::expm1(double(x[i])));
    return y;
}

// f'(x) = 1 for x > 0, exp(x) = f(x) + 1 otherwise; computed from the output.
template <typename T>
Tensor<T> elu_backward(const Tensor<T>& elu_out, const Tensor<T>& upstream) {
    if (elu_out.size() != upstream.size())
        throw std::invalid_argument("elu_backward: size mismatch");
    Tensor<T> g(upstream.shape());
    for (std::size_t i = 0; i < g.size(); ++i)
        g[i] = elu_out[i] > T(0) ? upstream[i] : upstream[i] * (elu_out[i] + T(1));
    return g;
}

template <typename T>
struct DropoutResult {
    Tensor<T> output;
    Tensor<T> mask;  // 0 where dropped, 1/(1-rate) where kept
};

// Inverted dropout: inference is the identity.
template <typename T>
DropoutResult<T> dropout(const Tensor<T>& x, double rate, Mode mode, Rng& rng) {
    if (rate < 0.0 || rate >= 1.0) throw std::invalid_argument("dropout: rate must be in [0,1)");
    DropoutResult<T> r{Tensor<T>(x.shape()), Tensor<T>(x.shape(), T(1))};
    if (mode == Mode::infer || rate == 0.0) {
        r.output = x;
        return r;
    }
    const T keep_scale = T(1.0 / (1.0 - rate));
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (rng.uniform() < rate) {
            r.mask[i] = T(0);
            r.output[i] = T(0);
        } else {
            r.mask[i] = keep_scale;
            r.output[i] = x[i] * keep_scale;
        }
    }
    return r;
}

template <typename T>
Tensor<T> dropout_backward(const Tensor<T>& upstream, const Tensor<T>& mask) {
    if (upstream.size() != mask.size())
        throw std::invalid_argument("dropout_backward: size mismatch");
    Tensor<T> g(upstream.shape());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = upstream[i] * mask[i];
    return g;
}

template <typename T>
struct AdamState {
    Tensor<T> m, v;
    std::int64_t t = 0;

    explicit AdamState(const Shape& s) : m(s), v(s) {}
    AdamState() = default;
};

// Bias-corrected ADAM update, in place. The per-element arithmetic runs in
// double so the closed-form first-step value is exact at T = float.
template <typename T>
void adam_step(Tensor<T>& params, const Tensor<T>& grads, AdamState<T>& st, double lr,
               double beta1, double beta2, double eps) {
    if (params.shape() != grads.shape() || params.shape() != st.m.shape() ||
        params.shape() != st.v.shape())
        throw std::invalid_argument("adam_step: shape mismatch");
    if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1)
        throw std::invalid_argument("adam_step: betas must be in [0,1)");
    if (eps <= 0) throw std::invalid_argument("adam_step: eps must be positive");
    st.t += 1;
    const double bc1 = 1.0 - std::pow(beta1, double(st.t));
    const double bc2 = 1.0 - std::pow(beta2, double(st.t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = double(grads[i]);
        const double m = beta1 * double(st.m[i]) + (1.0 - beta1) * g;
        const double v = beta2 * double(st.v[i]) + (1.0 - beta2) * g * g;
        st.m[i] = T(m);
        st.v[i] = T(v);
        params[i] = T(double(params[i]) - lr * (m / bc1) / (std::sqrt(v / bc2) + eps));
    }
}

}  // namespace sono::nn
