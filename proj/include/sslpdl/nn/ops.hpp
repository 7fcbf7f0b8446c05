#pragma once

// Differentiable building blocks with hand-written backward passes. Every
// forward fills a cache that the matching backward consumes; parameters are
// passed as raw spans so the same code serves float and double.

#include <algorithm>
#include <cmath>
#include <vector>

#include "sslpdl/error.hpp"
#include "sslpdl/nn/tensor.hpp"

namespace sslpdl::nn {

// ---------------------------------------------------------------------------
// dense kernels: out[co][p] += sum_j W[co][j] * cols[j][p]

namespace kernel {

template <class T>
inline void matmul_acc(const T* W, const T* cols, T* out, std::size_t co, std::size_t J, std::size_t P) {
    for (std::size_t o = 0; o < co; ++o) {
        T* dst = out + o * P;
        const T* wr = W + o * J;
        for (std::size_t j = 0; j < J; ++j) {
            const T wv = wr[j];
            const T* src = cols + j * P;
            for (std::size_t p = 0; p < P; ++p) dst[p] += wv * src[p];
        }
    }
}

// dW[co][j] += sum_p dy[co][p] cols[j][p]
template <class T>
inline void weight_grad(const T* dy, const T* cols, T* dW, std::size_t co, std::size_t J, std::size_t P) {
    for (std::size_t o = 0; o < co; ++o) {
        const T* g = dy + o * P;
        for (std::size_t j = 0; j < J; ++j) {
            const T* src = cols + j * P;
            T acc = 0;
            for (std::size_t p = 0; p < P; ++p) acc += g[p] * src[p];
            dW[o * J + j] += acc;
        }
    }
}

// dcols[j][p] = sum_o W[o][j] dy[o][p]
template <class T>
inline void input_grad(const T* W, const T* dy, T* dcols, std::size_t co, std::size_t J, std::size_t P) {
    std::fill(dcols, dcols + J * P, T(0));
    for (std::size_t o = 0; o < co; ++o) {
        const T* g = dy + o * P;
        const T* wr = W + o * J;
        for (std::size_t j = 0; j < J; ++j) {
            const T wv = wr[j];
            T* dst = dcols + j * P;
            for (std::size_t p = 0; p < P; ++p) dst[p] += wv * g[p];
        }
    }
}

} // namespace kernel

// ---------------------------------------------------------------------------
// fully connected layer on row vectors: y[n][o] = sum_i W[o][i] x[n][i] + b[o]

template <class T>
inline std::vector<T> linear_forward(const std::vector<T>& x, std::size_t rows, std::size_t in, const T* W, const T* b,
                                     std::size_t out) {
    if (x.size() != rows * in) throw ArgumentError("linear: input size mismatch");
    std::vector<T> y(rows * out);
    for (std::size_t n = 0; n < rows; ++n)
        for (std::size_t o = 0; o < out; ++o) {
            T acc = b ? b[o] : T(0);
            for (std::size_t i = 0; i < in; ++i) acc += W[o * in + i] * x[n * in + i];
            y[n * out + o] = acc;
        }
    return y;
}

// Accumulates dW/db and returns dx.
template <class T>
inline std::vector<T> linear_backward(const std::vector<T>& x, std::size_t rows, std::size_t in, const T* W,
                                      std::size_t out, const std::vector<T>& dy, T* dW, T* db) {
    std::vector<T> dx(rows * in, T(0));
    for (std::size_t n = 0; n < rows; ++n)
        for (std::size_t o = 0; o < out; ++o) {
            const T g = dy[n * out + o];
            if (db) db[o] += g;
            for (std::size_t i = 0; i < in; ++i) {
                if (dW) dW[o * in + i] += g * x[n * in + i];
                dx[n * in + i] += g * W[o * in + i];
            }
        }
    return dx;
}

// ---------------------------------------------------------------------------
// convolution with replicate (clamp-to-border) padding

struct ConvSpec {
    std::size_t cin = 0;
    std::size_t cout = 0;
    std::size_t k = 1;
    std::size_t stride = 1;
    std::size_t pad = 0;

    std::size_t fan_in() const noexcept { return cin * k * k; }
    std::size_t out_dim(std::size_t in) const { return (in + 2 * pad - k) / stride + 1; }
};

template <class T>
struct ConvCache {
    std::size_t in_c = 0, in_h = 0, in_w = 0;
    std::vector<T> cols;
};

namespace detail {

inline std::size_t clamp_index(long v, std::size_t n) {
    return static_cast<std::size_t>(std::clamp<long>(v, 0, static_cast<long>(n) - 1));
}

// Flat input index for every (ci*k*k + ky*k + kx, output position).
inline void conv_gather_index(const ConvSpec& s, std::size_t h, std::size_t w, std::vector<std::size_t>& idx) {
    const std::size_t oh = s.out_dim(h), ow = s.out_dim(w), P = oh * ow, kk = s.k * s.k;
    idx.resize(kk * P);
    for (std::size_t ky = 0; ky < s.k; ++ky)
        for (std::size_t kx = 0; kx < s.k; ++kx) {
            std::size_t* dst = idx.data() + (ky * s.k + kx) * P;
            for (std::size_t oy = 0; oy < oh; ++oy) {
                const std::size_t iy = clamp_index(static_cast<long>(oy * s.stride + ky) - static_cast<long>(s.pad), h);
                for (std::size_t ox = 0; ox < ow; ++ox) {
                    const std::size_t ix =
                        clamp_index(static_cast<long>(ox * s.stride + kx) - static_cast<long>(s.pad), w);
                    dst[oy * ow + ox] = iy * w + ix;
                }
            }
        }
}

} // namespace detail

template <class T>
inline Tensor<T> conv2d_forward(const Tensor<T>& x, const T* W, const T* b, const ConvSpec& s, ConvCache<T>* cache = nullptr) {
    if (x.c != s.cin) throw ArgumentError("conv2d: input channel mismatch");
    const std::size_t oh = s.out_dim(x.h), ow = s.out_dim(x.w), P = oh * ow, kk = s.k * s.k, J = s.cin * kk;
    std::vector<std::size_t> idx;
    detail::conv_gather_index(s, x.h, x.w, idx);
    std::vector<T> local;
    std::vector<T>& cols = cache ? cache->cols : local;
    cols.resize(J * P);
    for (std::size_t ci = 0; ci < s.cin; ++ci) {
        const T* src = x.channel(ci);
        for (std::size_t q = 0; q < kk; ++q) {
            T* dst = cols.data() + (ci * kk + q) * P;
            const std::size_t* ix = idx.data() + q * P;
            for (std::size_t p = 0; p < P; ++p) dst[p] = src[ix[p]];
        }
    }
    Tensor<T> y(s.cout, oh, ow);
    for (std::size_t o = 0; o < s.cout; ++o) std::fill(y.channel(o), y.channel(o) + P, b ? b[o] : T(0));
    kernel::matmul_acc(W, cols.data(), y.data.data(), s.cout, J, P);
    if (cache) {
        cache->in_c = x.c;
        cache->in_h = x.h;
        cache->in_w = x.w;
    }
    return y;
}

// Accumulates dW/db; returns dx when `want_dx`.
template <class T>
inline Tensor<T> conv2d_backward(const ConvCache<T>& cache, const T* W, const ConvSpec& s, const Tensor<T>& dy, T* dW,
                                 T* db, bool want_dx = true) {
    const std::size_t P = dy.plane(), kk = s.k * s.k, J = s.cin * kk;
    if (dy.c != s.cout || cache.cols.size() != J * P) throw ArgumentError("conv2d backward: shape mismatch");
    if (dW) kernel::weight_grad(dy.data.data(), cache.cols.data(), dW, s.cout, J, P);
    if (db)
        for (std::size_t o = 0; o < s.cout; ++o) {
            T acc = 0;
            for (std::size_t p = 0; p < P; ++p) acc += dy.channel(o)[p];
            db[o] += acc;
        }
    Tensor<T> dx;
    if (!want_dx) return dx;
    std::vector<T> dcols(J * P);
    kernel::input_grad(W, dy.data.data(), dcols.data(), s.cout, J, P);
    std::vector<std::size_t> idx;
    detail::conv_gather_index(s, cache.in_h, cache.in_w, idx);
    dx = Tensor<T>(cache.in_c, cache.in_h, cache.in_w);
    for (std::size_t ci = 0; ci < s.cin; ++ci) {
        T* dst = dx.channel(ci);
        for (std::size_t q = 0; q < kk; ++q) {
            const T* src = dcols.data() + (ci * kk + q) * P;
            const std::size_t* ix = idx.data() + q * P;
            for (std::size_t p = 0; p < P; ++p) dst[ix[p]] += src[p];
        }
    }
    return dx;
}

// ---------------------------------------------------------------------------
// offset aggregation: a k x k (odd k, stride 1) convolution whose taps are
// displaced per output location and read by bilinear interpolation.
// offsets has 2*k*k channels: (dy_j, dx_j) for tap j. Sample coordinates are
// clamped to the grid; a clamped coordinate has zero gradient.

template <class T>
struct OffsetCache {
    std::size_t in_c = 0, h = 0, w = 0;
    std::vector<T> cols;
    // per (tap, position): corner indices and fractional weights
    std::vector<std::size_t> y0, y1, x0, x1;
    std::vector<T> fy, fx;
    std::vector<unsigned char> live_y, live_x;
};

template <class T>
inline Tensor<T> offset_aggregate_forward(const Tensor<T>& x, const Tensor<T>& offsets, const T* W, const T* b,
                                          std::size_t cout, std::size_t k, OffsetCache<T>* cache = nullptr) {
    const std::size_t kk = k * k, P = x.plane(), J = x.c * kk;
    if (k % 2 == 0) throw ArgumentError("offset_aggregate: kernel size must be odd");
    if (offsets.c != 2 * kk || offsets.h != x.h || offsets.w != x.w)
        throw ArgumentError("offset_aggregate: offsets must be shaped (2k^2, h, w)");
    OffsetCache<T> local;
    OffsetCache<T>& cc = cache ? *cache : local;
    cc.in_c = x.c;
    cc.h = x.h;
    cc.w = x.w;
    for (auto* v : {&cc.y0, &cc.y1, &cc.x0, &cc.x1}) v->resize(kk * P);
    cc.fy.resize(kk * P);
    cc.fx.resize(kk * P);
    cc.live_y.resize(kk * P);
    cc.live_x.resize(kk * P);
    const long half = static_cast<long>(k / 2);
    const T ymax = static_cast<T>(x.h - 1), xmax = static_cast<T>(x.w - 1);
    for (std::size_t j = 0; j < kk; ++j) {
        const long dy = static_cast<long>(j / k) - half, dx = static_cast<long>(j % k) - half;
        const T* offy = offsets.channel(2 * j);
        const T* offx = offsets.channel(2 * j + 1);
        for (std::size_t r = 0; r < x.h; ++r)
            for (std::size_t c = 0; c < x.w; ++c) {
                const std::size_t p = r * x.w + c, q = j * P + p;
                T yy = static_cast<T>(static_cast<long>(r) + dy) + offy[p];
                T xx = static_cast<T>(static_cast<long>(c) + dx) + offx[p];
                cc.live_y[q] = (yy >= 0 && yy <= ymax);
                cc.live_x[q] = (xx >= 0 && xx <= xmax);
                yy = std::clamp(yy, T(0), ymax);
                xx = std::clamp(xx, T(0), xmax);
                const T fy0 = std::floor(yy), fx0 = std::floor(xx);
                cc.y0[q] = static_cast<std::size_t>(fy0);
                cc.x0[q] = static_cast<std::size_t>(fx0);
                cc.y1[q] = std::min(cc.y0[q] + 1, x.h - 1);
                cc.x1[q] = std::min(cc.x0[q] + 1, x.w - 1);
                cc.fy[q] = yy - fy0;
                cc.fx[q] = xx - fx0;
            }
    }
    cc.cols.resize(J * P);
    for (std::size_t ci = 0; ci < x.c; ++ci) {
        const T* src = x.channel(ci);
        for (std::size_t j = 0; j < kk; ++j) {
            T* dst = cc.cols.data() + (ci * kk + j) * P;
            for (std::size_t p = 0; p < P; ++p) {
                const std::size_t q = j * P + p;
                const std::size_t w0 = x.w;
                const T ly = cc.fy[q], lx = cc.fx[q];
                const T v00 = src[cc.y0[q] * w0 + cc.x0[q]], v01 = src[cc.y0[q] * w0 + cc.x1[q]];
                const T v10 = src[cc.y1[q] * w0 + cc.x0[q]], v11 = src[cc.y1[q] * w0 + cc.x1[q]];
                dst[p] = (T(1) - ly) * ((T(1) - lx) * v00 + lx * v01) + ly * ((T(1) - lx) * v10 + lx * v11);
            }
        }
    }
    Tensor<T> y(cout, x.h, x.w);
    for (std::size_t o = 0; o < cout; ++o) std::fill(y.channel(o), y.channel(o) + P, b ? b[o] : T(0));
    kernel::matmul_acc(W, cc.cols.data(), y.data.data(), cout, J, P);
    return y;
}

template <class T>
struct OffsetGrads {
    Tensor<T> dx;
    Tensor<T> doffsets;
};

template <class T>
inline OffsetGrads<T> offset_aggregate_backward(const OffsetCache<T>& cc, const Tensor<T>& x, const T* W,
                                                std::size_t cout, std::size_t k, const Tensor<T>& dy, T* dW, T* db) {
    const std::size_t kk = k * k, P = x.plane(), J = x.c * kk;
    if (dy.c != cout || dy.plane() != P || cc.cols.size() != J * P)
        throw ArgumentError("offset_aggregate backward: shape mismatch");
    if (dW) kernel::weight_grad(dy.data.data(), cc.cols.data(), dW, cout, J, P);
    if (db)
        for (std::size_t o = 0; o < cout; ++o) {
            T acc = 0;
            for (std::size_t p = 0; p < P; ++p) acc += dy.channel(o)[p];
            db[o] += acc;
        }
    std::vector<T> dcols(J * P);
    kernel::input_grad(W, dy.data.data(), dcols.data(), cout, J, P);
    OffsetGrads<T> g{Tensor<T>(x.c, x.h, x.w), Tensor<T>(2 * kk, x.h, x.w)};
    const std::size_t w0 = x.w;
    for (std::size_t ci = 0; ci < x.c; ++ci) {
        const T* src = x.channel(ci);
        T* dx = g.dx.channel(ci);
        for (std::size_t j = 0; j < kk; ++j) {
            const T* dc = dcols.data() + (ci * kk + j) * P;
            T* doy = g.doffsets.channel(2 * j);
            T* dox = g.doffsets.channel(2 * j + 1);
            for (std::size_t p = 0; p < P; ++p) {
                const std::size_t q = j * P + p;
                const T ly = cc.fy[q], lx = cc.fx[q], gval = dc[p];
                const std::size_t i00 = cc.y0[q] * w0 + cc.x0[q], i01 = cc.y0[q] * w0 + cc.x1[q];
                const std::size_t i10 = cc.y1[q] * w0 + cc.x0[q], i11 = cc.y1[q] * w0 + cc.x1[q];
                dx[i00] += gval * (T(1) - ly) * (T(1) - lx);
                dx[i01] += gval * (T(1) - ly) * lx;
                dx[i10] += gval * ly * (T(1) - lx);
                dx[i11] += gval * ly * lx;
                const T v00 = src[i00], v01 = src[i01], v10 = src[i10], v11 = src[i11];
                if (cc.live_y[q]) doy[p] += gval * ((T(1) - lx) * (v10 - v00) + lx * (v11 - v01));
                if (cc.live_x[q]) dox[p] += gval * ((T(1) - ly) * (v01 - v00) + ly * (v11 - v10));
            }
        }
    }
    return g;
}

// ---------------------------------------------------------------------------
// channel-wise layer normalization at every pixel

template <class T>
struct NormCache {
    Tensor<T> xhat;
    std::vector<T> rstd;
};

inline constexpr double kLayerNormEps = 1e-6;

template <class T>
inline Tensor<T> layer_norm_forward(const Tensor<T>& x, const T* gain, const T* bias, NormCache<T>* cache = nullptr) {
    const std::size_t P = x.plane(), C = x.c;
    Tensor<T> y(C, x.h, x.w);
    Tensor<T> xhat(C, x.h, x.w);
    std::vector<T> rstd(P);
    for (std::size_t p = 0; p < P; ++p) {
        T mean = 0;
        for (std::size_t k = 0; k < C; ++k) mean += x.data[k * P + p];
        mean /= static_cast<T>(C);
        T var = 0;
        for (std::size_t k = 0; k < C; ++k) {
            const T d = x.data[k * P + p] - mean;
            var += d * d;
        }
        var /= static_cast<T>(C);
        const T rs = T(1) / std::sqrt(var + static_cast<T>(kLayerNormEps));
        rstd[p] = rs;
        for (std::size_t k = 0; k < C; ++k) {
            const T xh = (x.data[k * P + p] - mean) * rs;
            xhat.data[k * P + p] = xh;
            y.data[k * P + p] = xh * gain[k] + bias[k];
        }
    }
    if (cache) {
        cache->xhat = std::move(xhat);
        cache->rstd = std::move(rstd);
    }
    return y;
}

template <class T>
inline Tensor<T> layer_norm_backward(const NormCache<T>& cache, const T* gain, const Tensor<T>& dy, T* dgain,
                                     T* dbias) {
    const auto& xhat = cache.xhat;
    const std::size_t P = xhat.plane(), C = xhat.c;
    Tensor<T> dx(C, xhat.h, xhat.w);
    std::vector<T> dxh(C);
    for (std::size_t p = 0; p < P; ++p) {
        T m1 = 0, m2 = 0;
        for (std::size_t k = 0; k < C; ++k) {
            const T g = dy.data[k * P + p];
            const T xh = xhat.data[k * P + p];
            if (dgain) dgain[k] += g * xh;
            if (dbias) dbias[k] += g;
            dxh[k] = g * gain[k];
            m1 += dxh[k];
            m2 += dxh[k] * xh;
        }
        m1 /= static_cast<T>(C);
        m2 /= static_cast<T>(C);
        for (std::size_t k = 0; k < C; ++k) dx.data[k * P + p] = cache.rstd[p] * (dxh[k] - m1 - xhat.data[k * P + p] * m2);
    }
    return dx;
}

// ---------------------------------------------------------------------------
// GELU, tanh approximation: 0.5 x (1 + tanh(u)), u = sqrt(2/pi) (x + 0.044715 x^3).
// Evaluated as x * sigmoid(2u), which avoids the cancellation in 1 + tanh(u) for x << 0.

template <class T>
inline T sigmoid(T v) {
    return v >= 0 ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
}

template <class T>
inline T gelu(T x) {
    const T s = static_cast<T>(0.7978845608028654), a = static_cast<T>(0.044715);
    return x * sigmoid(T(2) * s * (x + a * x * x * x));
}

template <class T>
inline T gelu_grad(T x) {
    const T s = static_cast<T>(0.7978845608028654), a = static_cast<T>(0.044715);
    const T v = T(2) * s * (x + a * x * x * x);
    const T p = sigmoid(v), q = sigmoid(-v);
    return p + x * p * q * T(2) * s * (T(1) + T(3) * a * x * x);
}

template <class T>
inline Tensor<T> gelu_forward(const Tensor<T>& x) {
    Tensor<T> y(x.c, x.h, x.w);
    for (std::size_t i = 0; i < x.size(); ++i) y.data[i] = gelu(x.data[i]);
    return y;
}

template <class T>
inline Tensor<T> gelu_backward(const Tensor<T>& x, const Tensor<T>& dy) {
    Tensor<T> dx(x.c, x.h, x.w);
    for (std::size_t i = 0; i < x.size(); ++i) dx.data[i] = dy.data[i] * gelu_grad(x.data[i]);
    return dx;
}

// ---------------------------------------------------------------------------
// nearest-neighbour 2x upsampling and pixel shuffle

template <class T>
inline Tensor<T> upsample2_forward(const Tensor<T>& x) {
    Tensor<T> y(x.c, 2 * x.h, 2 * x.w);
    for (std::size_t k = 0; k < x.c; ++k)
        for (std::size_t r = 0; r < y.h; ++r)
            for (std::size_t c = 0; c < y.w; ++c) y.at(k, r, c) = x.at(k, r / 2, c / 2);
    return y;
}

template <class T>
inline Tensor<T> upsample2_backward(const Tensor<T>& dy) {
    Tensor<T> dx(dy.c, dy.h / 2, dy.w / 2);
    for (std::size_t k = 0; k < dy.c; ++k)
        for (std::size_t r = 0; r < dy.h; ++r)
            for (std::size_t c = 0; c < dy.w; ++c) dx.at(k, r / 2, c / 2) += dy.at(k, r, c);
    return dx;
}

// (C*f*f, h, w) -> (C, h*f, w*f); input channel c*f*f + dy*f + dx feeds output (c, r*f+dy, q*f+dx).
template <class T>
inline Tensor<T> pixel_shuffle_forward(const Tensor<T>& x, std::size_t f) {
    if (x.c % (f * f) != 0) throw ArgumentError("pixel_shuffle: channels not divisible by f^2");
    const std::size_t C = x.c / (f * f);
    Tensor<T> y(C, x.h * f, x.w * f);
    for (std::size_t k = 0; k < C; ++k)
        for (std::size_t a = 0; a < f; ++a)
            for (std::size_t b = 0; b < f; ++b) {
                const T* src = x.channel(k * f * f + a * f + b);
                for (std::size_t r = 0; r < x.h; ++r)
                    for (std::size_t c = 0; c < x.w; ++c) y.at(k, r * f + a, c * f + b) = src[r * x.w + c];
            }
    return y;
}

template <class T>
inline Tensor<T> pixel_shuffle_backward(const Tensor<T>& dy, std::size_t f) {
    const std::size_t C = dy.c, h = dy.h / f, w = dy.w / f;
    Tensor<T> dx(C * f * f, h, w);
    for (std::size_t k = 0; k < C; ++k)
        for (std::size_t a = 0; a < f; ++a)
            for (std::size_t b = 0; b < f; ++b) {
                T* dst = dx.channel(k * f * f + a * f + b);
                for (std::size_t r = 0; r < h; ++r)
                    for (std::size_t c = 0; c < w; ++c) dst[r * w + c] = dy.at(k, r * f + a, c * f + b);
            }
    return dx;
}

} // namespace sslpdl::nn
