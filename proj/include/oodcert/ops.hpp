// Copyright 2026 The oodcert Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include <Eigen/Core>

#include "oodcert/autodiff.hpp"

// Differentiable primitives. Layout conventions: dense layers take [B, N],
// image layers take [B, C, H, W].

namespace oodcert::ad {

namespace detail {

template<class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template<class T>
using MapMat = Eigen::Map<RowMat<T>>;
template<class T>
using CMapMat = Eigen::Map<const RowMat<T>>;

template<class T>
void same_shape(const char* op, const Var<T>& a, const Var<T>& b)
{
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs "
                         + shape_str(b.shape()));
    }
}

/// Elementwise map with derivative df(x, y).
template<class T, class F, class DF>
Var<T> unary(const char* op, const Var<T>& a, F f, DF df)
{
    Tensor<T> out(a.shape());
    const T* x = a.value().ptr();
    T* y = out.ptr();
    for (std::size_t i = 0; i < out.size(); ++i) y[i] = f(x[i]);
    return make<T>(op, std::move(out), {a.ptr()}, [df](Node<T>& self) {
        Node<T>& p = *self.parents[0];
        T* g = p.grad_buffer().ptr();
        const T* x = p.value.ptr();
        const T* y = self.value.ptr();
        const T* gy = self.grad.ptr();
        for (std::size_t i = 0; i < self.value.size(); ++i) g[i] += gy[i] * df(x[i], y[i]);
    });
}

template<class T>
T sigmoid(T x)
{
    return x >= 0 ? T{1} / (T{1} + std::exp(-x)) : std::exp(x) / (T{1} + std::exp(x));
}

}  // namespace detail

//---------------------------------------------------------------------------//
// Elementwise arithmetic

template<class T>
Var<T> add(const Var<T>& a, const Var<T>& b)
{
    detail::same_shape("add", a, b);
    Tensor<T> out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
    return detail::make<T>("add", std::move(out), {a.ptr(), b.ptr()}, [](Node<T>& s) {
        for (auto& p : s.parents) {
            if (!p->requires_grad) continue;
            T* g = p->grad_buffer().ptr();
            for (std::size_t i = 0; i < s.grad.size(); ++i) g[i] += s.grad[i];
        }
    });
}

template<class T>
Var<T> sub(const Var<T>& a, const Var<T>& b)
{
    detail::same_shape("sub", a, b);
    Tensor<T> out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
    return detail::make<T>("sub", std::move(out), {a.ptr(), b.ptr()}, [](Node<T>& s) {
        for (std::size_t k = 0; k < 2; ++k) {
            auto& p = s.parents[k];
            if (!p->requires_grad) continue;
            T sign = k == 0 ? T{1} : T{-1};
            T* g = p->grad_buffer().ptr();
            for (std::size_t i = 0; i < s.grad.size(); ++i) g[i] += sign * s.grad[i];
        }
    });
}

template<class T>
Var<T> mul(const Var<T>& a, const Var<T>& b)
{
    detail::same_shape("mul", a, b);
    Tensor<T> out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
    return detail::make<T>("mul", std::move(out), {a.ptr(), b.ptr()}, [](Node<T>& s) {
        Node<T>& pa = *s.parents[0];
        Node<T>& pb = *s.parents[1];
        if (pa.requires_grad) {
            T* g = pa.grad_buffer().ptr();
            for (std::size_t i = 0; i < s.grad.size(); ++i) g[i] += s.grad[i] * pb.value[i];
        }
        if (pb.requires_grad) {
            T* g = pb.grad_buffer().ptr();
            for (std::size_t i = 0; i < s.grad.size(); ++i) g[i] += s.grad[i] * pa.value[i];
        }
    });
}

template<class T>
Var<T> div(const Var<T>& a, const Var<T>& b)
{
    detail::same_shape("div", a, b);
    Tensor<T> out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] /= b.value()[i];
    return detail::make<T>("div", std::move(out), {a.ptr(), b.ptr()}, [](Node<T>& s) {
        Node<T>& pa = *s.parents[0];
        Node<T>& pb = *s.parents[1];
        if (pa.requires_grad) {
            T* g = pa.grad_buffer().ptr();
            for (std::size_t i = 0; i < s.grad.size(); ++i) g[i] += s.grad[i] / pb.value[i];
        }
        if (pb.requires_grad) {
            T* g = pb.grad_buffer().ptr();
            for (std::size_t i = 0; i < s.grad.size(); ++i) {
                g[i] -= s.grad[i] * s.value[i] / pb.value[i];
            }
        }
    });
}

template<class T>
Var<T> scale(const Var<T>& a, T c)
{
    return detail::unary<T>("scale", a, [c](T x) { return c * x; }, [c](T, T) { return c; });
}

template<class T>
Var<T> add_scalar(const Var<T>& a, T c)
{
    return detail::unary<T>("add_scalar", a, [c](T x) { return x + c; }, [](T, T) { return T{1}; });
}

template<class T>
Var<T> neg(const Var<T>& a)
{
    return scale(a, T{-1});
}

//---------------------------------------------------------------------------//
// Nonlinearities

template<class T>
Var<T> relu(const Var<T>& a)
{
    return detail::unary<T>(
        "relu", a, [](T x) { return x > 0 ? x : T{0}; }, [](T x, T) { return x > 0 ? T{1} : T{0}; });
}

template<class T>
Var<T> tanh(const Var<T>& a)
{
    return detail::unary<T>(
        "tanh", a, [](T x) { return std::tanh(x); }, [](T, T y) { return T{1} - y * y; });
}

template<class T>
Var<T> silu(const Var<T>& a)
{
    return detail::unary<T>(
        "silu", a, [](T x) { return x * detail::sigmoid(x); },
        [](T x, T) {
            T s = detail::sigmoid(x);
            return s * (T{1} + x * (T{1} - s));
        });
}

template<class T>
Var<T> softplus(const Var<T>& a)
{
    return detail::unary<T>(
        "softplus", a, [](T x) { return std::max(x, T{0}) + std::log1p(std::exp(-std::abs(x))); },
        [](T x, T) { return detail::sigmoid(x); });
}

template<class T>
Var<T> exp(const Var<T>& a)
{
    return detail::unary<T>("exp", a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template<class T>
Var<T> log(const Var<T>& a)
{
    return detail::unary<T>("log", a, [](T x) { return std::log(x); }, [](T x, T) { return T{1} / x; });
}

template<class T>
Var<T> abs(const Var<T>& a)
{
    return detail::unary<T>(
        "abs", a, [](T x) { return std::abs(x); },
        [](T x, T) { return x > 0 ? T{1} : (x < 0 ? T{-1} : T{0}); });
}

template<class T>
Var<T> square(const Var<T>& a)
{
    return detail::unary<T>("square", a, [](T x) { return x * x; }, [](T x, T) { return 2 * x; });
}

template<class T>
Var<T> activation(const std::string& name, const Var<T>& a)
{
    if (name == "silu") return silu(a);
    if (name == "tanh") return tanh(a);
    if (name == "relu") return relu(a);
    throw ConfigError("unknown activation '" + name + "'");
}

//---------------------------------------------------------------------------//
// Reductions

template<class T>
Var<T> sum(const Var<T>& a)
{
    T acc{0};
    for (T v : a.value().data()) acc += v;
    return detail::make<T>("sum", Tensor<T>::scalar(acc), {a.ptr()}, [](Node<T>& s) {
        T g0 = s.grad[0];
        for (T& g : s.parents[0]->grad_buffer().data()) g += g0;
    });
}

template<class T>
Var<T> mean(const Var<T>& a)
{
    return scale(sum(a), T{1} / static_cast<T>(a.value().size()));
}

//---------------------------------------------------------------------------//
// Shape manipulation

template<class T>
Var<T> reshape(const Var<T>& a, Shape shape)
{
    return detail::make<T>("reshape", a.value().reshaped(std::move(shape)), {a.ptr()},
                           [](Node<T>& s) {
                               T* g = s.parents[0]->grad_buffer().ptr();
                               for (std::size_t i = 0; i < s.grad.size(); ++i) g[i] += s.grad[i];
                           });
}

/// Concatenate [B, C1, ...] and [B, C2, ...] along axis 1.
template<class T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b)
{
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa.size() < 2 || sa.size() != sb.size() || sa[0] != sb[0]
        || !std::equal(sa.begin() + 2, sa.end(), sb.begin() + 2)) {
        throw ShapeError("concat_channels: incompatible " + shape_str(sa) + " and " + shape_str(sb));
    }
    std::size_t batch = sa[0];
    std::size_t na = a.value().size() / batch;
    std::size_t nb = b.value().size() / batch;
    Shape so = sa;
    so[1] += sb[1];
    Tensor<T> out(so);
    for (std::size_t i = 0; i < batch; ++i) {
        std::copy_n(a.value().ptr() + i * na, na, out.ptr() + i * (na + nb));
        std::copy_n(b.value().ptr() + i * nb, nb, out.ptr() + i * (na + nb) + na);
    }
    return detail::make<T>("concat_channels", std::move(out), {a.ptr(), b.ptr()},
                           [batch, na, nb](Node<T>& s) {
                               Node<T>& pa = *s.parents[0];
                               Node<T>& pb = *s.parents[1];
                               for (std::size_t i = 0; i < batch; ++i) {
                                   const T* gs = s.grad.ptr() + i * (na + nb);
                                   if (pa.requires_grad) {
                                       T* g = pa.grad_buffer().ptr() + i * na;
                                       for (std::size_t j = 0; j < na; ++j) g[j] += gs[j];
                                   }
                                   if (pb.requires_grad) {
                                       T* g = pb.grad_buffer().ptr() + i * nb;
                                       for (std::size_t j = 0; j < nb; ++j) g[j] += gs[na + j];
                                   }
                               }
                           });
}

//---------------------------------------------------------------------------//
// Broadcast adds

/// a[..., N] + b[N]
template<class T>
Var<T> add_rowvec(const Var<T>& a, const Var<T>& b)
{
    std::size_t n = b.value().size();
    if (a.shape().empty() || a.shape().back() != n || b.shape().size() != 1) {
        throw ShapeError("add_rowvec: " + shape_str(a.shape()) + " + " + shape_str(b.shape()));
    }
    Tensor<T> out = a.value();
    std::size_t rows = out.size() / n;
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < n; ++j) out[r * n + j] += b.value()[j];
    return detail::make<T>("add_rowvec", std::move(out), {a.ptr(), b.ptr()},
                           [rows, n](Node<T>& s) {
                               Node<T>& pa = *s.parents[0];
                               Node<T>& pb = *s.parents[1];
                               if (pa.requires_grad) {
                                   T* g = pa.grad_buffer().ptr();
                                   for (std::size_t i = 0; i < s.grad.size(); ++i) g[i] += s.grad[i];
                               }
                               if (pb.requires_grad) {
                                   T* g = pb.grad_buffer().ptr();
                                   for (std::size_t r = 0; r < rows; ++r)
                                       for (std::size_t j = 0; j < n; ++j) g[j] += s.grad[r * n + j];
                               }
                           });
}

/// a[B, C, ...] + e[B, C], broadcast over trailing axes.
template<class T>
Var<T> add_channels(const Var<T>& a, const Var<T>& e)
{
    const Shape& sa = a.shape();
    if (sa.size() < 2 || e.shape() != Shape{sa[0], sa[1]}) {
        throw ShapeError("add_channels: " + shape_str(sa) + " + " + shape_str(e.shape()));
    }
    std::size_t bc = sa[0] * sa[1];
    std::size_t inner = a.value().size() / bc;
    Tensor<T> out = a.value();
    for (std::size_t k = 0; k < bc; ++k)
        for (std::size_t j = 0; j < inner; ++j) out[k * inner + j] += e.value()[k];
    return detail::make<T>("add_channels", std::move(out), {a.ptr(), e.ptr()},
                           [bc, inner](Node<T>& s) {
                               Node<T>& pa = *s.parents[0];
                               Node<T>& pe = *s.parents[1];
                               if (pa.requires_grad) {
                                   T* g = pa.grad_buffer().ptr();
                                   for (std::size_t i = 0; i < s.grad.size(); ++i) g[i] += s.grad[i];
                               }
                               if (pe.requires_grad) {
                                   T* g = pe.grad_buffer().ptr();
                                   for (std::size_t k = 0; k < bc; ++k) {
                                       T acc{0};
                                       for (std::size_t j = 0; j < inner; ++j) acc += s.grad[k * inner + j];
                                       g[k] += acc;
                                   }
                               }
                           });
}

//---------------------------------------------------------------------------//
// Dense

/// a[M, K] @ b[K, N]
template<class T>
Var<T> matmul(const Var<T>& a, const Var<T>& b)
{
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0]) {
        throw ShapeError("matmul: " + shape_str(sa) + " @ " + shape_str(sb));
    }
    std::size_t m = sa[0], k = sa[1], n = sb[1];
    Tensor<T> out({m, n});
    using namespace detail;
    MapMat<T>(out.ptr(), m, n).noalias() =
        CMapMat<T>(a.value().ptr(), m, k) * CMapMat<T>(b.value().ptr(), k, n);
    return make<T>("matmul", std::move(out), {a.ptr(), b.ptr()}, [m, k, n](Node<T>& s) {
        Node<T>& pa = *s.parents[0];
        Node<T>& pb = *s.parents[1];
        CMapMat<T> gy(s.grad.ptr(), m, n);
        if (pa.requires_grad) {
            MapMat<T>(pa.grad_buffer().ptr(), m, k).noalias() +=
                gy * CMapMat<T>(pb.value.ptr(), k, n).transpose();
        }
        if (pb.requires_grad) {
            MapMat<T>(pb.grad_buffer().ptr(), k, n).noalias() +=
                CMapMat<T>(pa.value.ptr(), m, k).transpose() * gy;
        }
    });
}

/// x[B, K] @ w[K, N] + b[N]
template<class T>
Var<T> affine(const Var<T>& x, const Var<T>& w, const Var<T>& b)
{
    return add_rowvec(matmul(x, w), b);
}

//---------------------------------------------------------------------------//
// Convolution and resampling

enum class Padding { same, valid };

namespace detail {

struct ConvGeom {
    std::size_t c, h, w, k, pad, ho, wo;
};

template<class T>
void im2col(const T* x, const ConvGeom& g, T* cols)
{
    std::size_t plane = g.ho * g.wo;
    for (std::size_t c = 0; c < g.c; ++c)
        for (std::size_t ki = 0; ki < g.k; ++ki)
            for (std::size_t kj = 0; kj < g.k; ++kj) {
                T* row = cols + ((c * g.k + ki) * g.k + kj) * plane;
                for (std::size_t oy = 0; oy < g.ho; ++oy) {
                    auto iy = static_cast<std::ptrdiff_t>(oy + ki) - static_cast<std::ptrdiff_t>(g.pad);
                    T* dst = row + oy * g.wo;
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) {
                        std::fill_n(dst, g.wo, T{0});
                        continue;
                    }
                    const T* src = x + (c * g.h + static_cast<std::size_t>(iy)) * g.w;
                    for (std::size_t ox = 0; ox < g.wo; ++ox) {
                        auto ix = static_cast<std::ptrdiff_t>(ox + kj) - static_cast<std::ptrdiff_t>(g.pad);
                        dst[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) ? T{0} : src[ix];
                    }
                }
            }
}

template<class T>
void col2im_add(const T* cols, const ConvGeom& g, T* dx)
{
    std::size_t plane = g.ho * g.wo;
    for (std::size_t c = 0; c < g.c; ++c)
        for (std::size_t ki = 0; ki < g.k; ++ki)
            for (std::size_t kj = 0; kj < g.k; ++kj) {
                const T* row = cols + ((c * g.k + ki) * g.k + kj) * plane;
                for (std::size_t oy = 0; oy < g.ho; ++oy) {
                    auto iy = static_cast<std::ptrdiff_t>(oy + ki) - static_cast<std::ptrdiff_t>(g.pad);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
                    T* dst = dx + (c * g.h + static_cast<std::size_t>(iy)) * g.w;
                    for (std::size_t ox = 0; ox < g.wo; ++ox) {
                        auto ix = static_cast<std::ptrdiff_t>(ox + kj) - static_cast<std::ptrdiff_t>(g.pad);
                        if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.w)) dst[ix] += row[oy * g.wo + ox];
                    }
                }
            }
}

}  // namespace detail

/// Stride-1 2D convolution: x[B, C, H, W], w[O, C, K, K], b[O] -> [B, O, H', W'].
template<class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, Padding padding = Padding::same)
{
    const Shape& sx = x.shape();
    const Shape& sw = w.shape();
    if (sx.size() != 4 || sw.size() != 4 || sw[1] != sx[1] || sw[2] != sw[3]
        || b.shape() != Shape{sw[0]}) {
        throw ShapeError("conv2d: x " + shape_str(sx) + ", w " + shape_str(sw) + ", b "
                         + shape_str(b.shape()));
    }
    std::size_t k = sw[2];
    if (padding == Padding::same && k % 2 == 0) throw ShapeError("conv2d: same padding needs odd kernel");
    std::size_t pad = padding == Padding::same ? (k - 1) / 2 : 0;
    if (sx[2] + 2 * pad < k || sx[3] + 2 * pad < k) throw ShapeError("conv2d: kernel larger than input");
    detail::ConvGeom g{sx[1], sx[2], sx[3], k, pad, sx[2] + 2 * pad - k + 1, sx[3] + 2 * pad - k + 1};
    std::size_t batch = sx[0], outc = sw[0], ckk = g.c * k * k, plane = g.ho * g.wo;

    using namespace detail;
    Tensor<T> out({batch, outc, g.ho, g.wo});
    AlignedVector<T> cols(ckk * plane);
    CMapMat<T> wm(w.value().ptr(), outc, ckk);
    for (std::size_t i = 0; i < batch; ++i) {
        im2col(x.value().ptr() + i * g.c * g.h * g.w, g, cols.data());
        MapMat<T> o(out.ptr() + i * outc * plane, outc, plane);
        o.noalias() = wm * CMapMat<T>(cols.data(), ckk, plane);
        for (std::size_t oc = 0; oc < outc; ++oc) o.row(oc).array() += b.value()[oc];
    }
    return make<T>("conv2d", std::move(out), {x.ptr(), w.ptr(), b.ptr()},
                   [g, batch, outc, ckk, plane](Node<T>& s) {
                       Node<T>& px = *s.parents[0];
                       Node<T>& pw = *s.parents[1];
                       Node<T>& pb = *s.parents[2];
                       AlignedVector<T> cols(ckk * plane);
                       AlignedVector<T> dcols(px.requires_grad ? ckk * plane : 0);
                       CMapMat<T> wm(pw.value.ptr(), outc, ckk);
                       std::size_t in_n = g.c * g.h * g.w;
                       for (std::size_t i = 0; i < batch; ++i) {
                           CMapMat<T> gy(s.grad.ptr() + i * outc * plane, outc, plane);
                           if (pw.requires_grad) {
                               im2col(px.value.ptr() + i * in_n, g, cols.data());
                               MapMat<T>(pw.grad_buffer().ptr(), outc, ckk).noalias() +=
                                   gy * CMapMat<T>(cols.data(), ckk, plane).transpose();
                           }
                           if (pb.requires_grad) {
                               T* gb = pb.grad_buffer().ptr();
                               for (std::size_t oc = 0; oc < outc; ++oc) gb[oc] += gy.row(oc).sum();
                           }
                           if (px.requires_grad) {
                               MapMat<T>(dcols.data(), ckk, plane).noalias() = wm.transpose() * gy;
                               col2im_add(dcols.data(), g, px.grad_buffer().ptr() + i * in_n);
                           }
                       }
                   });
}

namespace detail {

inline void check_pool(const Shape& s, const char* op)
{
    if (s.size() != 4 || s[2] % 2 || s[3] % 2) {
        throw ShapeError(std::string(op) + ": needs [B,C,H,W] with even H, W, got " + shape_str(s));
    }
}

}  // namespace detail

/// 2x2 average pooling with stride 2.
template<class T>
Var<T> avg_pool2(const Var<T>& x)
{
    const Shape& s = x.shape();
    detail::check_pool(s, "avg_pool2");
    std::size_t planes = s[0] * s[1], h = s[2], w = s[3], ho = h / 2, wo = w / 2;
    Tensor<T> out({s[0], s[1], ho, wo});
    const T* in = x.value().ptr();
    for (std::size_t p = 0; p < planes; ++p)
        for (std::size_t i = 0; i < ho; ++i)
            for (std::size_t j = 0; j < wo; ++j) {
                const T* q = in + p * h * w + 2 * i * w + 2 * j;
                out[(p * ho + i) * wo + j] = T(0.25) * (q[0] + q[1] + q[w] + q[w + 1]);
            }
    return detail::make<T>("avg_pool2", std::move(out), {x.ptr()}, [planes, h, w, ho, wo](Node<T>& s) {
        T* g = s.parents[0]->grad_buffer().ptr();
        for (std::size_t p = 0; p < planes; ++p)
            for (std::size_t i = 0; i < ho; ++i)
                for (std::size_t j = 0; j < wo; ++j) {
                    T v = T(0.25) * s.grad[(p * ho + i) * wo + j];
                    T* q = g + p * h * w + 2 * i * w + 2 * j;
                    q[0] += v;
                    q[1] += v;
                    q[w] += v;
                    q[w + 1] += v;
                }
    });
}

/// 2x2 max pooling with stride 2; ties go to the first element in row-major order.
template<class T>
Var<T> max_pool2(const Var<T>& x)
{
    const Shape& s = x.shape();
    detail::check_pool(s, "max_pool2");
    std::size_t planes = s[0] * s[1], h = s[2], w = s[3], ho = h / 2, wo = w / 2;
    Tensor<T> out({s[0], s[1], ho, wo});
    std::vector<std::size_t> arg(out.size());
    const T* in = x.value().ptr();
    for (std::size_t p = 0; p < planes; ++p)
        for (std::size_t i = 0; i < ho; ++i)
            for (std::size_t j = 0; j < wo; ++j) {
                std::size_t base = p * h * w + 2 * i * w + 2 * j;
                std::size_t best = base;
                for (std::size_t off : {base + 1, base + w, base + w + 1})
                    if (in[off] > in[best]) best = off;
                std::size_t o = (p * ho + i) * wo + j;
                out[o] = in[best];
                arg[o] = best;
            }
    return detail::make<T>("max_pool2", std::move(out), {x.ptr()}, [arg = std::move(arg)](Node<T>& s) {
        T* g = s.parents[0]->grad_buffer().ptr();
        for (std::size_t o = 0; o < arg.size(); ++o) g[arg[o]] += s.grad[o];
    });
}

/// Nearest-neighbour 2x upsampling.
template<class T>
Var<T> upsample2(const Var<T>& x)
{
    const Shape& s = x.shape();
    if (s.size() != 4) throw ShapeError("upsample2: needs [B,C,H,W], got " + shape_str(s));
    std::size_t planes = s[0] * s[1], h = s[2], w = s[3], ho = 2 * h, wo = 2 * w;
    Tensor<T> out({s[0], s[1], ho, wo});
    const T* in = x.value().ptr();
    for (std::size_t p = 0; p < planes; ++p)
        for (std::size_t i = 0; i < ho; ++i)
            for (std::size_t j = 0; j < wo; ++j) out[(p * ho + i) * wo + j] = in[(p * h + i / 2) * w + j / 2];
    return detail::make<T>("upsample2", std::move(out), {x.ptr()}, [planes, h, w, ho, wo](Node<T>& s) {
        T* g = s.parents[0]->grad_buffer().ptr();
        for (std::size_t p = 0; p < planes; ++p)
            for (std::size_t i = 0; i < ho; ++i)
                for (std::size_t j = 0; j < wo; ++j) g[(p * h + i / 2) * w + j / 2] += s.grad[(p * ho + i) * wo + j];
    });
}

//---------------------------------------------------------------------------//
// Normalization

/// Softmax over the last axis.
template<class T>
Var<T> softmax(const Var<T>& x)
{
    if (x.shape().empty()) throw ShapeError("softmax of a scalar");
    std::size_t n = x.shape().back();
    std::size_t rows = x.value().size() / n;
    Tensor<T> out(x.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        const T* in = x.value().ptr() + r * n;
        T* o = out.ptr() + r * n;
        T mx = *std::max_element(in, in + n);
        T z{0};
        for (std::size_t j = 0; j < n; ++j) z += (o[j] = std::exp(in[j] - mx));
        for (std::size_t j = 0; j < n; ++j) o[j] /= z;
    }
    return detail::make<T>("softmax", std::move(out), {x.ptr()}, [rows, n](Node<T>& s) {
        T* g = s.parents[0]->grad_buffer().ptr();
        for (std::size_t r = 0; r < rows; ++r) {
            const T* y = s.value.ptr() + r * n;
            const T* gy = s.grad.ptr() + r * n;
            T dotp{0};
            for (std::size_t j = 0; j < n; ++j) dotp += gy[j] * y[j];
            for (std::size_t j = 0; j < n; ++j) g[r * n + j] += y[j] * (gy[j] - dotp);
        }
    });
}

/// Layer normalization over the last axis with affine gamma[N], beta[N].
template<class T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps = T(1e-5))
{
    if (x.shape().empty()) throw ShapeError("layer_norm of a scalar");
    std::size_t n = x.shape().back();
    if (gamma.shape() != Shape{n} || beta.shape() != Shape{n}) throw ShapeError("layer_norm: affine shape");
    std::size_t rows = x.value().size() / n;
    Tensor<T> xhat(x.shape());
    std::vector<T> inv_std(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const T* in = x.value().ptr() + r * n;
        T mu{0};
        for (std::size_t j = 0; j < n; ++j) mu += in[j];
        mu /= static_cast<T>(n);
        T var{0};
        for (std::size_t j = 0; j < n; ++j) var += (in[j] - mu) * (in[j] - mu);
        var /= static_cast<T>(n);
        inv_std[r] = T{1} / std::sqrt(var + eps);
        for (std::size_t j = 0; j < n; ++j) xhat[r * n + j] = (in[j] - mu) * inv_std[r];
    }
    Tensor<T> out(x.shape());
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < n; ++j)
            out[r * n + j] = xhat[r * n + j] * gamma.value()[j] + beta.value()[j];
    return detail::make<T>(
        "layer_norm", std::move(out), {x.ptr(), gamma.ptr(), beta.ptr()},
        [rows, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<T>& s) {
            Node<T>& px = *s.parents[0];
            Node<T>& pg = *s.parents[1];
            Node<T>& pb = *s.parents[2];
            for (std::size_t r = 0; r < rows; ++r) {
                const T* gy = s.grad.ptr() + r * n;
                const T* xh = xhat.ptr() + r * n;
                if (pg.requires_grad) {
                    T* gg = pg.grad_buffer().ptr();
                    for (std::size_t j = 0; j < n; ++j) gg[j] += gy[j] * xh[j];
                }
                if (pb.requires_grad) {
                    T* gb = pb.grad_buffer().ptr();
                    for (std::size_t j = 0; j < n; ++j) gb[j] += gy[j];
                }
                if (px.requires_grad) {
                    T sum_d{0}, sum_dx{0};
                    for (std::size_t j = 0; j < n; ++j) {
                        T d = gy[j] * pg.value[j];
                        sum_d += d;
                        sum_dx += d * xh[j];
                    }
                    T* gx = px.grad_buffer().ptr() + r * n;
                    T nn = static_cast<T>(n);
                    for (std::size_t j = 0; j < n; ++j) {
                        T d = gy[j] * pg.value[j];
                        gx[j] += inv_std[r] / nn * (nn * d - sum_d - xh[j] * sum_dx);
                    }
                }
            }
        });
}

}  // namespace oodcert::ad
