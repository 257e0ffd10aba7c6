#pragma once

// Differentiable tensor ops. Convolution is im2col + Eigen GEMM, chunked
// over output pixels so the column buffer stays bounded at large inputs.

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <memory>
#include <vector>

#include "goelan/autograd.hpp"

namespace goelan {
namespace ops {

template <class T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatCM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor>;

inline int conv_out_dim(int in, int kernel, int stride, int pad) {
    return (in + 2 * pad - kernel) / stride + 1;
}

namespace detail {

// Fill `col` (K x cols) for output pixels [p0, p0+cols) of image `in_img`.
// K = cin*k*k. Out-of-bounds taps are zero.
template <class T>
void im2col_chunk(const T* x, int cin, int ih, int iw, int k, int stride, int pad, int ow,
                  std::int64_t p0, std::int64_t cols, T* col) {
    const std::int64_t K = std::int64_t(cin) * k * k;
    for (std::int64_t pc = 0; pc < cols; ++pc) {
        const std::int64_t p = p0 + pc;
        const int oy = int(p / ow);
        const int ox = int(p % ow);
        const int iy0 = oy * stride - pad;
        const int ix0 = ox * stride - pad;
        T* dst = col + pc * K;
        for (int c = 0; c < cin; ++c) {
            const T* plane = x + std::int64_t(c) * ih * iw;
            for (int ky = 0; ky < k; ++ky) {
                const int iy = iy0 + ky;
                for (int kx = 0; kx < k; ++kx) {
                    const int ix = ix0 + kx;
                    *dst++ = (iy >= 0 && iy < ih && ix >= 0 && ix < iw)
                                 ? plane[std::int64_t(iy) * iw + ix]
                                 : T(0);
                }
            }
        }
    }
}

// Scatter-add of a column chunk back into the input gradient.
template <class T>
void col2im_chunk(const T* col, int cin, int ih, int iw, int k, int stride, int pad, int ow,
                  std::int64_t p0, std::int64_t cols, T* gx) {
    const std::int64_t K = std::int64_t(cin) * k * k;
    for (std::int64_t pc = 0; pc < cols; ++pc) {
        const std::int64_t p = p0 + pc;
        const int oy = int(p / ow);
        const int ox = int(p % ow);
        const int iy0 = oy * stride - pad;
        const int ix0 = ox * stride - pad;
        const T* src = col + pc * K;
        for (int c = 0; c < cin; ++c) {
            T* plane = gx + std::int64_t(c) * ih * iw;
            for (int ky = 0; ky < k; ++ky) {
                const int iy = iy0 + ky;
                for (int kx = 0; kx < k; ++kx) {
                    const int ix = ix0 + kx;
                    if (iy >= 0 && iy < ih && ix >= 0 && ix < iw)
                        plane[std::int64_t(iy) * iw + ix] += *src;
                    ++src;
                }
            }
        }
    }
}

inline std::int64_t conv_chunk_cols(std::int64_t K) {
    // keep the column buffer around <= 32 MiB of doubles
    const std::int64_t budget = (std::int64_t(1) << 22);
    return std::max<std::int64_t>(1, budget / std::max<std::int64_t>(1, K));
}

}  // namespace detail

// y = conv2d(x, w) + b. Weight layout (cout, cin, k, k); bias (1, cout, 1, 1)
// or an invalid Value for none. "Same" padding is pad = k/2 from the caller.
template <class T>
Value<T> conv2d(Tape<T>& tape, Value<T> x, Value<T> w, Value<T> b, int stride, int pad) {
    const Tensor<T>& xv = x.val();
    const Tensor<T>& wv = w.val();
    const int cout = wv.n(), cin = wv.c(), k = wv.h();
    if (wv.h() != wv.w()) fail_shape("conv2d: non-square kernel");
    if (xv.c() != cin)
        fail_shape("conv2d: input has ", xv.c(), " channels, weights expect ", cin);
    const int oh = conv_out_dim(xv.h(), k, stride, pad);
    const int ow = conv_out_dim(xv.w(), k, stride, pad);
    if (oh < 1 || ow < 1) fail_shape("conv2d: output would be empty");

    Tensor<T> out(xv.n(), cout, oh, ow);
    const std::int64_t K = std::int64_t(cin) * k * k;
    const std::int64_t HW = std::int64_t(oh) * ow;
    const std::int64_t chunk = detail::conv_chunk_cols(K);
    std::vector<T> col(std::size_t(K * std::min(chunk, HW)));

    Eigen::Map<const MatRM<T>> wm(wv.data(), cout, K);
    const bool has_bias = b.valid();
    for (int n = 0; n < xv.n(); ++n) {
        const T* xp = xv.data() + std::int64_t(n) * cin * xv.plane();
        T* op = out.data() + std::int64_t(n) * cout * HW;
        for (std::int64_t p0 = 0; p0 < HW; p0 += chunk) {
            const std::int64_t cols = std::min(chunk, HW - p0);
            detail::im2col_chunk(xp, cin, xv.h(), xv.w(), k, stride, pad, ow, p0, cols,
                                 col.data());
            Eigen::Map<const MatCM<T>> cm(col.data(), K, cols);
            Eigen::Map<MatRM<T>, 0, Eigen::OuterStride<>> om(op + p0, cout, cols,
                                                             Eigen::OuterStride<>(HW));
            om.noalias() = wm * cm;
        }
        if (has_bias) {
            const T* bp = b.val().data();
            for (int c = 0; c < cout; ++c) {
                T* row = op + std::int64_t(c) * HW;
                for (std::int64_t i = 0; i < HW; ++i) row[i] += bp[c];
            }
        }
    }

    auto* xn = tape.node_ptr(x.idx);
    auto* wn = tape.node_ptr(w.idx);
    auto* bn = has_bias ? tape.node_ptr(b.idx) : nullptr;
    bool ng = xn->needs_grad || wn->needs_grad || (bn && bn->needs_grad);
    int stride_c = stride, pad_c = pad;
    return tape.make(std::move(out), ng, [=](typename Tape<T>::Node& self) {
        const Tensor<T>& go = self.grad;
        const Tensor<T>& xv2 = xn->val;
        const Tensor<T>& wv2 = wn->val;
        const int oh2 = go.h(), ow2 = go.w();
        const std::int64_t HW2 = std::int64_t(oh2) * ow2;
        const std::int64_t K2 = std::int64_t(wv2.c()) * wv2.h() * wv2.w();
        const std::int64_t chunk2 = detail::conv_chunk_cols(K2);
        std::vector<T> colb(std::size_t(K2 * std::min(chunk2, HW2)));
        Eigen::Map<const MatRM<T>> wm2(wv2.data(), wv2.n(), K2);

        if (wn->needs_grad) wn->ensure_grad();
        if (xn->needs_grad) xn->ensure_grad();
        Eigen::Map<MatRM<T>> gwm(wn->needs_grad ? wn->grad.data() : nullptr,
                                 wn->needs_grad ? wv2.n() : 0, wn->needs_grad ? K2 : 0);

        for (int n = 0; n < xv2.n(); ++n) {
            const T* xp = xv2.data() + std::int64_t(n) * xv2.c() * xv2.plane();
            const T* gp = go.data() + std::int64_t(n) * go.c() * HW2;
            for (std::int64_t p0 = 0; p0 < HW2; p0 += chunk2) {
                const std::int64_t cols = std::min(chunk2, HW2 - p0);
                Eigen::Map<const MatRM<T>, 0, Eigen::OuterStride<>> gom(
                    gp + p0, go.c(), cols, Eigen::OuterStride<>(HW2));
                if (wn->needs_grad) {
                    detail::im2col_chunk(xp, xv2.c(), xv2.h(), xv2.w(), wv2.h(), stride_c,
                                         pad_c, ow2, p0, cols, colb.data());
                    Eigen::Map<const MatCM<T>> cm(colb.data(), K2, cols);
                    gwm.noalias() += gom * cm.transpose();
                }
                if (xn->needs_grad) {
                    Eigen::Map<MatCM<T>> cgm(colb.data(), K2, cols);
                    cgm.noalias() = wm2.transpose() * gom;
                    detail::col2im_chunk(colb.data(), xv2.c(), xv2.h(), xv2.w(), wv2.h(),
                                         stride_c, pad_c, ow2, p0, cols,
                                         xn->grad.data() +
                                             std::int64_t(n) * xv2.c() * xv2.plane());
                }
            }
        }
        if (bn && bn->needs_grad) {
            bn->ensure_grad();
            T* gb = bn->grad.data();
            for (int n = 0; n < go.n(); ++n)
                for (int c = 0; c < go.c(); ++c) {
                    const T* row = go.data() + (std::int64_t(n) * go.c() + c) * HW2;
                    T s = 0;
                    for (std::int64_t i = 0; i < HW2; ++i) s += row[i];
                    gb[c] += s;
                }
        }
    });
}

// Batch normalization. Training mode normalizes with biased batch statistics
// and updates the running buffers in place (a side effect outside the tape);
// eval mode normalizes with the running buffers.
template <class T>
Value<T> batchnorm(Tape<T>& tape, Value<T> x, Value<T> gamma, Value<T> beta,
                   Parameter<T>& run_mean, Parameter<T>& run_var, bool training,
                   T momentum = T(0.03), T eps = T(1e-5)) {
    const Tensor<T>& xv = x.val();
    const int C = xv.c();
    if (gamma.val().size() != C || beta.val().size() != C || run_mean.value.size() != C ||
        run_var.value.size() != C)
        fail_shape("batchnorm: channel mismatch (C=", C, ")");

    Tensor<T> mean(1, C, 1, 1), invstd(1, C, 1, 1);
    const std::int64_t M = std::int64_t(xv.n()) * xv.plane();
    if (training) {
        for (int c = 0; c < C; ++c) {
            double s = 0.0;
            for (int n = 0; n < xv.n(); ++n) {
                const T* p = xv.data() + (std::int64_t(n) * C + c) * xv.plane();
                for (std::int64_t i = 0; i < xv.plane(); ++i) s += double(p[i]);
            }
            const double mu = s / double(M);
            double v = 0.0;
            for (int n = 0; n < xv.n(); ++n) {
                const T* p = xv.data() + (std::int64_t(n) * C + c) * xv.plane();
                for (std::int64_t i = 0; i < xv.plane(); ++i) {
                    const double d = double(p[i]) - mu;
                    v += d * d;
                }
            }
            v /= double(M);
            mean.data()[c] = T(mu);
            invstd.data()[c] = T(1.0 / std::sqrt(v + double(eps)));
            run_mean.value.data()[c] =
                T((1.0 - double(momentum)) * double(run_mean.value.data()[c]) + double(momentum) * mu);
            run_var.value.data()[c] =
                T((1.0 - double(momentum)) * double(run_var.value.data()[c]) + double(momentum) * v);
        }
    } else {
        for (int c = 0; c < C; ++c) {
            mean.data()[c] = run_mean.value.data()[c];
            invstd.data()[c] = T(1.0 / std::sqrt(double(run_var.value.data()[c]) + double(eps)));
        }
    }

    Tensor<T> out = Tensor<T>::zeros_like(xv);
    const T* g = gamma.val().data();
    const T* be = beta.val().data();
    for (int n = 0; n < xv.n(); ++n)
        for (int c = 0; c < C; ++c) {
            const T* p = xv.data() + (std::int64_t(n) * C + c) * xv.plane();
            T* o = out.data() + (std::int64_t(n) * C + c) * xv.plane();
            const T mu = mean.data()[c], is = invstd.data()[c];
            for (std::int64_t i = 0; i < xv.plane(); ++i)
                o[i] = g[c] * (p[i] - mu) * is + be[c];
        }

    auto* xn = tape.node_ptr(x.idx);
    auto* gn = tape.node_ptr(gamma.idx);
    auto* bn = tape.node_ptr(beta.idx);
    bool ng = xn->needs_grad || gn->needs_grad || bn->needs_grad;
    bool train_c = training;
    return tape.make(std::move(out), ng, [=](typename Tape<T>::Node& self) {
        const Tensor<T>& go = self.grad;
        const Tensor<T>& xv2 = xn->val;
        const int C2 = xv2.c();
        const std::int64_t plane = xv2.plane();
        const std::int64_t M2 = std::int64_t(xv2.n()) * plane;
        const T* gm = gn->val.data();
        if (gn->needs_grad) gn->ensure_grad();
        if (bn->needs_grad) bn->ensure_grad();
        if (xn->needs_grad) xn->ensure_grad();
        for (int c = 0; c < C2; ++c) {
            const T mu = mean.data()[c], is = invstd.data()[c];
            double sum_go = 0.0, sum_go_xhat = 0.0;
            for (int n = 0; n < xv2.n(); ++n) {
                const T* gp = go.data() + (std::int64_t(n) * C2 + c) * plane;
                const T* xp = xv2.data() + (std::int64_t(n) * C2 + c) * plane;
                for (std::int64_t i = 0; i < plane; ++i) {
                    sum_go += double(gp[i]);
                    sum_go_xhat += double(gp[i]) * double((xp[i] - mu) * is);
                }
            }
            if (gn->needs_grad) gn->grad.data()[c] += T(sum_go_xhat);
            if (bn->needs_grad) bn->grad.data()[c] += T(sum_go);
            if (!xn->needs_grad) continue;
            if (train_c) {
                // d/dx of ((x - mean(x)) * invstd(x)) with batch statistics
                for (int n = 0; n < xv2.n(); ++n) {
                    const T* gp = go.data() + (std::int64_t(n) * C2 + c) * plane;
                    const T* xp = xv2.data() + (std::int64_t(n) * C2 + c) * plane;
                    T* dx = xn->grad.data() + (std::int64_t(n) * C2 + c) * plane;
                    for (std::int64_t i = 0; i < plane; ++i) {
                        const double xhat = double((xp[i] - mu) * is);
                        dx[i] += T(double(gm[c]) * double(is) / double(M2) *
                                   (double(M2) * double(gp[i]) - sum_go - xhat * sum_go_xhat));
                    }
                }
            } else {
                for (int n = 0; n < xv2.n(); ++n) {
                    const T* gp = go.data() + (std::int64_t(n) * C2 + c) * plane;
                    T* dx = xn->grad.data() + (std::int64_t(n) * C2 + c) * plane;
                    for (std::int64_t i = 0; i < plane; ++i) dx[i] += gp[i] * gm[c] * is;
                }
            }
        }
    });
}

template <class T>
Value<T> silu(Tape<T>& tape, Value<T> x) {
    const Tensor<T>& xv = x.val();
    Tensor<T> out = Tensor<T>::zeros_like(xv);
    const T* p = xv.data();
    T* o = out.data();
    for (std::int64_t i = 0, e = xv.size(); i < e; ++i) {
        const T s = T(1) / (T(1) + std::exp(-p[i]));
        o[i] = p[i] * s;
    }
    auto* xn = tape.node_ptr(x.idx);
    return tape.make(std::move(out), xn->needs_grad, [=](typename Tape<T>::Node& self) {
        if (!xn->needs_grad) return;
        xn->ensure_grad();
        const T* xp = xn->val.data();
        const T* gp = self.grad.data();
        T* dx = xn->grad.data();
        for (std::int64_t i = 0, e = xn->val.size(); i < e; ++i) {
            const T s = T(1) / (T(1) + std::exp(-xp[i]));
            dx[i] += gp[i] * s * (T(1) + xp[i] * (T(1) - s));
        }
    });
}

template <class T>
Value<T> sigmoid(Tape<T>& tape, Value<T> x) {
    const Tensor<T>& xv = x.val();
    Tensor<T> out = Tensor<T>::zeros_like(xv);
    const T* p = xv.data();
    T* o = out.data();
    for (std::int64_t i = 0, e = xv.size(); i < e; ++i) o[i] = T(1) / (T(1) + std::exp(-p[i]));
    auto* xn = tape.node_ptr(x.idx);
    Tensor<T> saved = out;  // shares storage
    return tape.make(std::move(out), xn->needs_grad, [=](typename Tape<T>::Node& self) {
        if (!xn->needs_grad) return;
        xn->ensure_grad();
        const T* s = saved.data();
        const T* gp = self.grad.data();
        T* dx = xn->grad.data();
        for (std::int64_t i = 0, e = saved.size(); i < e; ++i)
            dx[i] += gp[i] * s[i] * (T(1) - s[i]);
    });
}

// Max pooling with stride 1 and "same" padding; out-of-bounds taps ignored.
template <class T>
Value<T> maxpool_same(Tape<T>& tape, Value<T> x, int k) {
    const Tensor<T>& xv = x.val();
    if (k > xv.h() || k > xv.w())
        fail_config("maxpool_same: window ", k, " larger than feature map ", xv.h(), "x", xv.w());
    const int pad = k / 2;
    Tensor<T> out = Tensor<T>::zeros_like(xv);
    auto argmax = std::make_shared<std::vector<std::int64_t>>(std::size_t(xv.size()));
    for (int n = 0; n < xv.n(); ++n)
        for (int c = 0; c < xv.c(); ++c) {
            const std::int64_t base = (std::int64_t(n) * xv.c() + c) * xv.plane();
            const T* plane = xv.data() + base;
            T* o = out.data() + base;
            for (int y = 0; y < xv.h(); ++y)
                for (int xx = 0; xx < xv.w(); ++xx) {
                    T best = -std::numeric_limits<T>::infinity();
                    std::int64_t bi = -1;
                    for (int ky = 0; ky < k; ++ky) {
                        const int iy = y - pad + ky;
                        if (iy < 0 || iy >= xv.h()) continue;
                        for (int kx = 0; kx < k; ++kx) {
                            const int ix = xx - pad + kx;
                            if (ix < 0 || ix >= xv.w()) continue;
                            const T v = plane[std::int64_t(iy) * xv.w() + ix];
                            if (v > best) {
                                best = v;
                                bi = std::int64_t(iy) * xv.w() + ix;
                            }
                        }
                    }
                    o[std::int64_t(y) * xv.w() + xx] = best;
                    (*argmax)[std::size_t(base + std::int64_t(y) * xv.w() + xx)] = base + bi;
                }
        }
    auto* xn = tape.node_ptr(x.idx);
    return tape.make(std::move(out), xn->needs_grad, [=](typename Tape<T>::Node& self) {
        if (!xn->needs_grad) return;
        xn->ensure_grad();
        const T* gp = self.grad.data();
        T* dx = xn->grad.data();
        for (std::int64_t i = 0, e = self.grad.size(); i < e; ++i)
            dx[(*argmax)[std::size_t(i)]] += gp[i];
    });
}

// 2x2 average pooling with stride 2 and ceil semantics; edge cells average
// over in-bounds elements only, so constants stay constant.
template <class T>
Value<T> avgpool2(Tape<T>& tape, Value<T> x) {
    const Tensor<T>& xv = x.val();
    const int oh = (xv.h() + 1) / 2, ow = (xv.w() + 1) / 2;
    Tensor<T> out(xv.n(), xv.c(), oh, ow);
    for (int n = 0; n < xv.n(); ++n)
        for (int c = 0; c < xv.c(); ++c) {
            const T* plane = xv.data() + (std::int64_t(n) * xv.c() + c) * xv.plane();
            T* o = out.data() + (std::int64_t(n) * xv.c() + c) * std::int64_t(oh) * ow;
            for (int y = 0; y < oh; ++y)
                for (int xx = 0; xx < ow; ++xx) {
                    T s = 0;
                    int cnt = 0;
                    for (int dy = 0; dy < 2; ++dy)
                        for (int dx = 0; dx < 2; ++dx) {
                            const int iy = 2 * y + dy, ix = 2 * xx + dx;
                            if (iy < xv.h() && ix < xv.w()) {
                                s += plane[std::int64_t(iy) * xv.w() + ix];
                                ++cnt;
                            }
                        }
                    o[std::int64_t(y) * ow + xx] = s / T(cnt);
                }
        }
    auto* xn = tape.node_ptr(x.idx);
    return tape.make(std::move(out), xn->needs_grad, [=](typename Tape<T>::Node& self) {
        if (!xn->needs_grad) return;
        xn->ensure_grad();
        const Tensor<T>& go = self.grad;
        const Tensor<T>& xv2 = xn->val;
        const int oh2 = go.h(), ow2 = go.w();
        for (int n = 0; n < xv2.n(); ++n)
            for (int c = 0; c < xv2.c(); ++c) {
                const T* gp = go.data() + (std::int64_t(n) * xv2.c() + c) * go.plane();
                T* dx = xn->grad.data() + (std::int64_t(n) * xv2.c() + c) * xv2.plane();
                for (int y = 0; y < oh2; ++y)
                    for (int xx = 0; xx < ow2; ++xx) {
                        int cnt = 0;
                        for (int dy = 0; dy < 2; ++dy)
                            for (int dx2 = 0; dx2 < 2; ++dx2)
                                if (2 * y + dy < xv2.h() && 2 * xx + dx2 < xv2.w()) ++cnt;
                        const T g = gp[std::int64_t(y) * ow2 + xx] / T(cnt);
                        for (int dy = 0; dy < 2; ++dy)
                            for (int dx2 = 0; dx2 < 2; ++dx2) {
                                const int iy = 2 * y + dy, ix = 2 * xx + dx2;
                                if (iy < xv2.h() && ix < xv2.w())
                                    dx[std::int64_t(iy) * xv2.w() + ix] += g;
                            }
                    }
            }
    });
}

// Nearest-neighbor resampling to (th, tw); works for both up and down.
template <class T>
Value<T> resize_nearest(Tape<T>& tape, Value<T> x, int th, int tw) {
    const Tensor<T>& xv = x.val();
    if (th < 1 || tw < 1) fail_shape("resize_nearest: bad target size");
    Tensor<T> out(xv.n(), xv.c(), th, tw);
    for (int n = 0; n < xv.n(); ++n)
        for (int c = 0; c < xv.c(); ++c) {
            const T* plane = xv.data() + (std::int64_t(n) * xv.c() + c) * xv.plane();
            T* o = out.data() + (std::int64_t(n) * xv.c() + c) * std::int64_t(th) * tw;
            for (int y = 0; y < th; ++y) {
                const int sy = int(std::int64_t(y) * xv.h() / th);
                for (int xx = 0; xx < tw; ++xx) {
                    const int sx = int(std::int64_t(xx) * xv.w() / tw);
                    o[std::int64_t(y) * tw + xx] = plane[std::int64_t(sy) * xv.w() + sx];
                }
            }
        }
    auto* xn = tape.node_ptr(x.idx);
    return tape.make(std::move(out), xn->needs_grad, [=](typename Tape<T>::Node& self) {
        if (!xn->needs_grad) return;
        xn->ensure_grad();
        const Tensor<T>& go = self.grad;
        const Tensor<T>& xv2 = xn->val;
        for (int n = 0; n < xv2.n(); ++n)
            for (int c = 0; c < xv2.c(); ++c) {
                const T* gp = go.data() + (std::int64_t(n) * xv2.c() + c) * go.plane();
                T* dx = xn->grad.data() + (std::int64_t(n) * xv2.c() + c) * xv2.plane();
                for (int y = 0; y < go.h(); ++y) {
                    const int sy = int(std::int64_t(y) * xv2.h() / go.h());
                    for (int xx = 0; xx < go.w(); ++xx) {
                        const int sx = int(std::int64_t(xx) * xv2.w() / go.w());
                        dx[std::int64_t(sy) * xv2.w() + sx] += gp[std::int64_t(y) * go.w() + xx];
                    }
                }
            }
    });
}

template <class T>
Value<T> concat_c(Tape<T>& tape, const std::vector<Value<T>>& xs) {
    if (xs.empty()) fail_shape("concat_c: empty input list");
    const Tensor<T>& first = xs[0].val();
    int ctot = 0;
    for (const auto& v : xs) {
        const Tensor<T>& t = v.val();
        if (t.n() != first.n() || t.h() != first.h() || t.w() != first.w())
            fail_shape("concat_c: spatial/batch mismatch");
        ctot += t.c();
    }
    Tensor<T> out(first.n(), ctot, first.h(), first.w());
    std::vector<typename Tape<T>::Node*> parents;
    parents.reserve(xs.size());
    bool ng = false;
    for (const auto& v : xs) {
        parents.push_back(tape.node_ptr(v.idx));
        ng = ng || parents.back()->needs_grad;
    }
    for (int n = 0; n < first.n(); ++n) {
        int coff = 0;
        for (const auto& v : xs) {
            const Tensor<T>& t = v.val();
            const T* src = t.data() + std::int64_t(n) * t.c() * t.plane();
            T* dst = out.data() + (std::int64_t(n) * ctot + coff) * first.plane();
            std::copy(src, src + std::int64_t(t.c()) * t.plane(), dst);
            coff += t.c();
        }
    }
    return tape.make(std::move(out), ng, [=](typename Tape<T>::Node& self) {
        const Tensor<T>& go = self.grad;
        for (int n = 0; n < go.n(); ++n) {
            int coff = 0;
            for (auto* p : parents) {
                const Tensor<T>& t = p->val;
                if (p->needs_grad) {
                    p->ensure_grad();
                    const T* src = go.data() + (std::int64_t(n) * go.c() + coff) * go.plane();
                    T* dst = p->grad.data() + std::int64_t(n) * t.c() * t.plane();
                    for (std::int64_t i = 0, e = std::int64_t(t.c()) * t.plane(); i < e; ++i)
                        dst[i] += src[i];
                }
                coff += t.c();
            }
        }
    });
}

template <class T>
Value<T> slice_c(Tape<T>& tape, Value<T> x, int c0, int len) {
    const Tensor<T>& xv = x.val();
    if (c0 < 0 || len < 1 || c0 + len > xv.c())
        fail_shape("slice_c: range [", c0, ",", c0 + len, ") out of ", xv.c(), " channels");
    Tensor<T> out(xv.n(), len, xv.h(), xv.w());
    for (int n = 0; n < xv.n(); ++n) {
        const T* src = xv.data() + (std::int64_t(n) * xv.c() + c0) * xv.plane();
        T* dst = out.data() + std::int64_t(n) * len * xv.plane();
        std::copy(src, src + std::int64_t(len) * xv.plane(), dst);
    }
    auto* xn = tape.node_ptr(x.idx);
    return tape.make(std::move(out), xn->needs_grad, [=](typename Tape<T>::Node& self) {
        if (!xn->needs_grad) return;
        xn->ensure_grad();
        const Tensor<T>& go = self.grad;
        const Tensor<T>& xv2 = xn->val;
        for (int n = 0; n < go.n(); ++n) {
            const T* src = go.data() + std::int64_t(n) * go.c() * go.plane();
            T* dst = xn->grad.data() + (std::int64_t(n) * xv2.c() + c0) * xv2.plane();
            for (std::int64_t i = 0, e = std::int64_t(go.c()) * go.plane(); i < e; ++i)
                dst[i] += src[i];
        }
    });
}

template <class T>
Value<T> add(Tape<T>& tape, Value<T> a, Value<T> b) {
    const Tensor<T>& av = a.val();
    const Tensor<T>& bv = b.val();
    if (!av.same_shape(bv)) fail_shape("add: shape mismatch");
    Tensor<T> out = av.clone();
    out.add_(bv);
    auto* an = tape.node_ptr(a.idx);
    auto* bn = tape.node_ptr(b.idx);
    return tape.make(std::move(out), an->needs_grad || bn->needs_grad,
                     [=](typename Tape<T>::Node& self) {
                         accumulate<T>(an, self.grad);
                         accumulate<T>(bn, self.grad);
                     });
}

// out = sum_i coeffs[i] * xs[i], elementwise.
template <class T>
Value<T> weighted_sum(Tape<T>& tape, const std::vector<Value<T>>& xs,
                      const std::vector<T>& coeffs) {
    if (xs.empty() || xs.size() != coeffs.size()) fail_shape("weighted_sum: arity mismatch");
    Tensor<T> out = Tensor<T>::zeros_like(xs[0].val());
    bool ng = false;
    std::vector<typename Tape<T>::Node*> parents;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const Tensor<T>& t = xs[i].val();
        if (!t.same_shape(out)) fail_shape("weighted_sum: shape mismatch");
        const T* s = t.data();
        T* d = out.data();
        for (std::int64_t j = 0, e = out.size(); j < e; ++j) d[j] += coeffs[i] * s[j];
        parents.push_back(tape.node_ptr(xs[i].idx));
        ng = ng || parents.back()->needs_grad;
    }
    std::vector<T> cs = coeffs;
    return tape.make(std::move(out), ng, [=](typename Tape<T>::Node& self) {
        for (std::size_t i = 0; i < parents.size(); ++i) {
            if (!parents[i]->needs_grad) continue;
            parents[i]->ensure_grad();
            const T* g = self.grad.data();
            T* d = parents[i]->grad.data();
            for (std::int64_t j = 0, e = self.grad.size(); j < e; ++j) d[j] += cs[i] * g[j];
        }
    });
}

// Scalar sum of all elements; the standard reduction for gradient checks.
template <class T>
Value<T> sum_all(Tape<T>& tape, Value<T> x) {
    const Tensor<T>& xv = x.val();
    double s = 0.0;
    const T* p = xv.data();
    for (std::int64_t i = 0, e = xv.size(); i < e; ++i) s += double(p[i]);
    auto* xn = tape.node_ptr(x.idx);
    return tape.make(Tensor<T>::scalar(T(s)), xn->needs_grad,
                     [=](typename Tape<T>::Node& self) {
                         if (!xn->needs_grad) return;
                         xn->ensure_grad();
                         const T g = self.grad.data()[0];
                         T* d = xn->grad.data();
                         for (std::int64_t i = 0, e = xn->val.size(); i < e; ++i) d[i] += g;
                     });
}

}  // namespace ops
}  // namespace goelan
