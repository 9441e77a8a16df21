#include "m3net/tensor.hpp"

#define EIGEN_DONT_PARALLELIZE
#include <Eigen/Core>

#ifdef _OPENMP
#include <omp.h>
#endif

#include <thread>

namespace m3net {

namespace {
int g_thread_cap = 0;  // 0 = hardware default
thread_local bool g_grad_enabled = true;
}  // namespace

int thread_cap() {
    if (g_thread_cap > 0) return g_thread_cap;
    unsigned hw = std::thread::hardware_concurrency();
    return hw > 0 ? static_cast<int>(hw) : 1;
}

void set_thread_cap(int n) { g_thread_cap = n > 0 ? n : 0; }

bool grad_enabled() { return g_grad_enabled; }
void set_grad_enabled(bool on) { g_grad_enabled = on; }

namespace kernels {

template <typename T>
using EMat = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename T>
using ECMat = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

// Row-major C[m,n] = A[m,k] * B[k,n]. Row blocks are independent, so splitting
// over threads keeps every output element's reduction order fixed: results are
// bit-identical for any thread count.
template <typename T>
void gemm(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n, bool accumulate) {
    ECMat<T> B(b, k, n);
#ifdef _OPENMP
    const bool nested = omp_in_parallel();
#else
    const bool nested = false;
#endif
    int threads = thread_cap();
    if (nested || threads <= 1 || m * k * n < (1 << 18) || m < 2) {
        ECMat<T> A(a, m, k);
        EMat<T> C(c, m, n);
        if (accumulate)
            C.noalias() += A * B;
        else
            C.noalias() = A * B;
        return;
    }
    int blocks = std::min<int64_t>(threads, m);
#pragma omp parallel for schedule(static) num_threads(blocks)
    for (int blk = 0; blk < blocks; ++blk) {
        int64_t r0 = m * blk / blocks;
        int64_t r1 = m * (blk + 1) / blocks;
        if (r1 <= r0) continue;
        ECMat<T> A(a + r0 * k, r1 - r0, k);
        EMat<T> C(c + r0 * n, r1 - r0, n);
        if (accumulate)
            C.noalias() += A * B;
        else
            C.noalias() = A * B;
    }
}

template <typename T>
void im2col(const T* img, int64_t c_in, int64_t h, int64_t w, int64_t kernel, int64_t stride,
            int64_t dilation, int64_t pad, int64_t h_out, int64_t w_out, T* col) {
    // col is [c_in*kernel*kernel, h_out*w_out]
    for (int64_t c = 0; c < c_in; ++c) {
        for (int64_t ky = 0; ky < kernel; ++ky) {
            for (int64_t kx = 0; kx < kernel; ++kx) {
                T* row = col + ((c * kernel + ky) * kernel + kx) * h_out * w_out;
                const int64_t off_x = kx * dilation - pad;
                if (stride == 1) {
                    // each output row is one contiguous segment of the input row
                    const int64_t x_lo = std::max<int64_t>(0, -off_x);
                    const int64_t x_hi = std::min<int64_t>(w_out, w - off_x);
                    for (int64_t oy = 0; oy < h_out; ++oy) {
                        int64_t iy = oy - pad + ky * dilation;
                        T* dst = row + oy * w_out;
                        if (iy < 0 || iy >= h || x_lo >= x_hi) {
                            std::fill(dst, dst + w_out, T(0));
                            continue;
                        }
                        const T* src = img + (c * h + iy) * w + off_x;
                        std::fill(dst, dst + x_lo, T(0));
                        std::copy(src + x_lo, src + x_hi, dst + x_lo);
                        std::fill(dst + x_hi, dst + w_out, T(0));
                    }
                } else {
                    for (int64_t oy = 0; oy < h_out; ++oy) {
                        int64_t iy = oy * stride - pad + ky * dilation;
                        if (iy < 0 || iy >= h) {
                            std::fill(row + oy * w_out, row + (oy + 1) * w_out, T(0));
                            continue;
                        }
                        const T* src = img + (c * h + iy) * w;
                        for (int64_t ox = 0; ox < w_out; ++ox) {
                            int64_t ix = ox * stride + off_x;
                            row[oy * w_out + ox] = (ix >= 0 && ix < w) ? src[ix] : T(0);
                        }
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im(const T* col, int64_t c_in, int64_t h, int64_t w, int64_t kernel, int64_t stride,
            int64_t dilation, int64_t pad, int64_t h_out, int64_t w_out, T* img) {
    // accumulates into img [c_in, h, w]
    for (int64_t c = 0; c < c_in; ++c) {
        for (int64_t ky = 0; ky < kernel; ++ky) {
            for (int64_t kx = 0; kx < kernel; ++kx) {
                const T* row = col + ((c * kernel + ky) * kernel + kx) * h_out * w_out;
                const int64_t off_x = kx * dilation - pad;
                if (stride == 1) {
                    const int64_t x_lo = std::max<int64_t>(0, -off_x);
                    const int64_t x_hi = std::min<int64_t>(w_out, w - off_x);
                    if (x_lo >= x_hi) continue;
                    for (int64_t oy = 0; oy < h_out; ++oy) {
                        int64_t iy = oy - pad + ky * dilation;
                        if (iy < 0 || iy >= h) continue;
                        T* dst = img + (c * h + iy) * w + off_x;
                        const T* src = row + oy * w_out;
                        for (int64_t ox = x_lo; ox < x_hi; ++ox) dst[ox] += src[ox];
                    }
                } else {
                    for (int64_t oy = 0; oy < h_out; ++oy) {
                        int64_t iy = oy * stride - pad + ky * dilation;
                        if (iy < 0 || iy >= h) continue;
                        T* dst = img + (c * h + iy) * w;
                        for (int64_t ox = 0; ox < w_out; ++ox) {
                            int64_t ix = ox * stride + off_x;
                            if (ix >= 0 && ix < w) dst[ix] += row[oy * w_out + ox];
                        }
                    }
                }
            }
        }
    }
}

template void gemm<float>(const float*, const float*, float*, int64_t, int64_t, int64_t, bool);
template void gemm<double>(const double*, const double*, double*, int64_t, int64_t, int64_t, bool);
template void im2col<float>(const float*, int64_t, int64_t, int64_t, int64_t, int64_t, int64_t, int64_t, int64_t, int64_t, float*);
template void im2col<double>(const double*, int64_t, int64_t, int64_t, int64_t, int64_t, int64_t, int64_t, int64_t, int64_t, double*);
template void col2im<float>(const float*, int64_t, int64_t, int64_t, int64_t, int64_t, int64_t, int64_t, int64_t, int64_t, float*);
template void col2im<double>(const double*, int64_t, int64_t, int64_t, int64_t, int64_t, int64_t, int64_t, int64_t, int64_t, double*);

}  // namespace kernels

namespace {

template <typename T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    if (a.shape() != b.shape())
        throw ValidationError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                              shape_str(b.shape()));
}

int par_threads(int64_t work) {
#ifdef _OPENMP
    if (omp_in_parallel()) return 1;
#endif
    return static_cast<int>(std::min<int64_t>(thread_cap(), std::max<int64_t>(work, 1)));
}

// y[i] = f(i) over a fixed chunk split; every element is written by exactly
// one thread, so the result does not depend on the thread count
template <typename F>
void par_elementwise(int64_t n, F&& f) {
    int threads = par_threads(n / (1 << 15));
    if (threads <= 1) {
        f(0, n);
        return;
    }
#pragma omp parallel for schedule(static) num_threads(threads)
    for (int t = 0; t < threads; ++t) f(n * t / threads, n * (t + 1) / threads);
}

}  // namespace

// --- elementwise --------------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    check_same_shape(a, b, "add");
    bool tracked = detail::track<T>({a, b});
    Tensor<T> out = detail::make_result<T>(a.shape(), tracked, {a.node(), b.node()});
    const T* av = a.data().data();
    const T* bv = b.data().data();
    T* ov = out.data().data();
    par_elementwise(static_cast<int64_t>(out.data().size()), [&](int64_t lo, int64_t hi) {
        for (int64_t i = lo; i < hi; ++i) ov[i] = av[i] + bv[i];
    });
    if (tracked) {
        auto an = a.node(), bn = b.node();
        auto on = out.node().get();
        out.node()->backprop = [an, bn, on]() {
            int64_t n = static_cast<int64_t>(on->grad.size());
            if (an->requires_grad) {
                an->ensure_grad();
                T* dst = an->grad.data();
                const T* g = on->grad.data();
                par_elementwise(n, [&](int64_t lo, int64_t hi) {
                    for (int64_t i = lo; i < hi; ++i) dst[i] += g[i];
                });
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                T* dst = bn->grad.data();
                const T* g = on->grad.data();
                par_elementwise(n, [&](int64_t lo, int64_t hi) {
                    for (int64_t i = lo; i < hi; ++i) dst[i] += g[i];
                });
            }
        };
    }
    return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    check_same_shape(a, b, "mul");
    bool tracked = detail::track<T>({a, b});
    Tensor<T> out = detail::make_result<T>(a.shape(), tracked, {a.node(), b.node()});
    const auto& av = a.data();
    const auto& bv = b.data();
    auto& ov = out.data();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
    if (tracked) {
        auto an = a.node(), bn = b.node();
        auto on = out.node().get();
        out.node()->backprop = [an, bn, on]() {
            if (an->requires_grad) {
                an->ensure_grad();
                for (size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i] * bn->values[i];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (size_t i = 0; i < on->grad.size(); ++i) bn->grad[i] += on->grad[i] * an->values[i];
            }
        };
    }
    return out;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
    bool tracked = detail::track<T>({a});
    Tensor<T> out = detail::make_result<T>({1}, tracked, {a.node()});
    double acc = 0.0;
    for (T v : a.data()) acc += static_cast<double>(v);
    out.data()[0] = static_cast<T>(acc);
    if (tracked) {
        auto an = a.node();
        auto on = out.node().get();
        out.node()->backprop = [an, on]() {
            an->ensure_grad();
            T g = on->grad[0];
            for (T& v : an->grad) v += g;
        };
    }
    return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
    bool tracked = detail::track<T>({a});
    Tensor<T> out = detail::make_result<T>(a.shape(), tracked, {a.node()});
    const auto& av = a.data();
    auto& ov = out.data();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * factor;
    if (tracked) {
        auto an = a.node();
        auto on = out.node().get();
        out.node()->backprop = [an, on, factor]() {
            an->ensure_grad();
            for (size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i] * factor;
        };
    }
    return out;
}

template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts) {
    if (parts.empty()) throw ValidationError("concat_channels: empty input list");
    const Shape& s0 = parts[0].shape();
    if (s0.size() != 4) throw ValidationError("concat_channels: expects NCHW tensors, got " + shape_str(s0));
    int64_t n = s0[0], h = s0[2], w = s0[3];
    int64_t c_total = 0;
    bool tracked = false;
    std::vector<std::shared_ptr<TensorNode<T>>> parents;
    for (const auto& p : parts) {
        const Shape& s = p.shape();
        if (s.size() != 4 || s[0] != n || s[2] != h || s[3] != w)
            throw ValidationError("concat_channels: spatial/batch mismatch " + shape_str(s0) + " vs " + shape_str(s));
        c_total += s[1];
        tracked = tracked || (grad_enabled() && p.requires_grad());
        parents.push_back(p.node());
    }
    Tensor<T> out = detail::make_result<T>({n, c_total, h, w}, tracked, std::move(parents));
    auto& ov = out.data();
    int64_t plane = h * w;
    int64_t c_off = 0;
    for (const auto& p : parts) {
        int64_t c = p.dim(1);
        const auto& pv = p.data();
        for (int64_t b = 0; b < n; ++b)
            std::memcpy(ov.data() + (b * c_total + c_off) * plane, pv.data() + b * c * plane,
                        sizeof(T) * c * plane);
        c_off += c;
    }
    if (tracked) {
        auto on = out.node().get();
        std::vector<std::shared_ptr<TensorNode<T>>> nodes;
        std::vector<int64_t> chans;
        for (const auto& p : parts) {
            nodes.push_back(p.node());
            chans.push_back(p.dim(1));
        }
        out.node()->backprop = [on, nodes, chans, n, plane, c_total]() {
            int64_t off = 0;
            for (size_t i = 0; i < nodes.size(); ++i) {
                auto& pn = nodes[i];
                int64_t c = chans[i];
                if (pn->requires_grad) {
                    pn->ensure_grad();
                    for (int64_t b = 0; b < n; ++b) {
                        const T* src = on->grad.data() + (b * c_total + off) * plane;
                        T* dst = pn->grad.data() + b * c * plane;
                        for (int64_t j = 0; j < c * plane; ++j) dst[j] += src[j];
                    }
                }
                off += c;
            }
        };
    }
    return out;
}

// --- conv2d ---------------------------------------------------------------------

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 int64_t stride, int64_t dilation, int64_t padding) {
    const Shape& xs = input.shape();
    const Shape& ws = weight.shape();
    if (xs.size() != 4) throw ValidationError("conv2d: input must be NCHW, got " + shape_str(xs));
    if (ws.size() != 4 || ws[2] != ws[3])
        throw ValidationError("conv2d: weight must be [Cout,Cin,k,k], got " + shape_str(ws));
    if (xs[1] != ws[1])
        throw ValidationError("conv2d: input channels " + shape_str(xs) + " do not match kernel channels " +
                              shape_str(ws));
    if (bias.shape() != Shape{ws[0]})
        throw ValidationError("conv2d: bias shape " + shape_str(bias.shape()) + " must be [" +
                              std::to_string(ws[0]) + "]");
    if (stride < 1 || dilation < 1 || padding < 0) throw ValidationError("conv2d: bad stride/dilation/padding");

    int64_t n = xs[0], c_in = xs[1], h = xs[2], w = xs[3];
    int64_t c_out = ws[0], k = ws[2];
    int64_t h_out = (h + 2 * padding - dilation * (k - 1) - 1) / stride + 1;
    int64_t w_out = (w + 2 * padding - dilation * (k - 1) - 1) / stride + 1;
    if (h_out < 1 || w_out < 1)
        throw ValidationError("conv2d: kernel does not fit input " + shape_str(xs));

    bool tracked = detail::track<T>({input, weight, bias});
    Tensor<T> out =
        detail::make_result<T>({n, c_out, h_out, w_out}, tracked, {input.node(), weight.node(), bias.node()});

    const int64_t kk = c_in * k * k;
    const int64_t hw = h_out * w_out;
    const T* x = input.data().data();
    const T* wm = weight.data().data();
    const T* bv = bias.data().data();
    T* y = out.data().data();

    // pointwise convolutions skip the im2col staging entirely
    const bool pointwise = k == 1 && stride == 1 && padding == 0;

    int nt = par_threads(n);
#pragma omp parallel num_threads(nt) if (nt > 1)
    {
        std::vector<T> col;
        if (!pointwise) col.resize(static_cast<size_t>(kk * hw));
#pragma omp for schedule(static)
        for (int64_t b = 0; b < n; ++b) {
            const T* cols = x + b * c_in * h * w;
            if (!pointwise) {
                kernels::im2col(x + b * c_in * h * w, c_in, h, w, k, stride, dilation, padding, h_out, w_out,
                                col.data());
                cols = col.data();
            }
            kernels::gemm(wm, cols, y + b * c_out * hw, c_out, kk, hw, false);
            for (int64_t co = 0; co < c_out; ++co) {
                T* plane = y + (b * c_out + co) * hw;
                T add = bv[co];
                for (int64_t i = 0; i < hw; ++i) plane[i] += add;
            }
        }
    }

    if (tracked) {
        auto xn = input.node(), wn = weight.node(), bn = bias.node();
        auto on = out.node().get();
        out.node()->backprop = [=]() {
            const T* dy = on->grad.data();
            // per-sample weight-gradient slots keep the final reduction order
            // fixed regardless of thread count
            std::vector<T> dw_slots;
            if (wn->requires_grad) dw_slots.assign(static_cast<size_t>(n * c_out * kk), T(0));
            if (xn->requires_grad) xn->ensure_grad();

            int bt = par_threads(n);
#pragma omp parallel num_threads(bt) if (bt > 1)
            {
                std::vector<T> col, dcol;
                if (!pointwise) {
                    col.resize(static_cast<size_t>(kk * hw));
                    dcol.resize(static_cast<size_t>(kk * hw));
                }
                using CM = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
                using M = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
#pragma omp for schedule(static)
                for (int64_t b = 0; b < n; ++b) {
                    const T* cols = xn->values.data() + b * c_in * h * w;
                    if (wn->requires_grad) {
                        if (!pointwise) {
                            kernels::im2col(xn->values.data() + b * c_in * h * w, c_in, h, w, k, stride,
                                            dilation, padding, h_out, w_out, col.data());
                            cols = col.data();
                        }
                        // dW_b [c_out, kk] = dY_b [c_out, hw] * col^T [hw, kk]
                        CM dyb(dy + b * c_out * hw, c_out, hw);
                        CM colm(cols, kk, hw);
                        M dwb(dw_slots.data() + b * c_out * kk, c_out, kk);
                        dwb.noalias() = dyb * colm.transpose();
                    }
                    if (xn->requires_grad) {
                        CM wmat(wn->values.data(), c_out, kk);
                        CM dyb(dy + b * c_out * hw, c_out, hw);
                        if (pointwise) {
                            // dX_b += W^T * dY_b, accumulated directly
                            M dxb(xn->grad.data() + b * c_in * h * w, kk, hw);
                            dxb.noalias() += wmat.transpose() * dyb;
                        } else {
                            // dcol [kk, hw] = W^T [kk, c_out] * dY_b [c_out, hw]
                            M dcolm(dcol.data(), kk, hw);
                            dcolm.noalias() = wmat.transpose() * dyb;
                            kernels::col2im(dcol.data(), c_in, h, w, k, stride, dilation, padding, h_out,
                                            w_out, xn->grad.data() + b * c_in * h * w);
                        }
                    }
                }
            }
            if (wn->requires_grad) {
                wn->ensure_grad();
                for (int64_t b = 0; b < n; ++b) {
                    const T* slot = dw_slots.data() + b * c_out * kk;
                    for (int64_t i = 0; i < c_out * kk; ++i) wn->grad[i] += slot[i];
                }
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (int64_t b = 0; b < n; ++b)
                    for (int64_t co = 0; co < c_out; ++co) {
                        const T* plane = dy + (b * c_out + co) * hw;
                        T acc = T(0);
                        for (int64_t i = 0; i < hw; ++i) acc += plane[i];
                        bn->grad[co] += acc;
                    }
            }
        };
    }
    return out;
}

// --- prelu -----------------------------------------------------------------------

template <typename T>
Tensor<T> prelu(const Tensor<T>& input, const Tensor<T>& slope) {
    const Shape& xs = input.shape();
    if (xs.size() != 4) throw ValidationError("prelu: input must be NCHW, got " + shape_str(xs));
    int64_t c = xs[1];
    if (slope.size() != c)
        throw ValidationError("prelu: slope size " + std::to_string(slope.size()) + " must equal channels " +
                              std::to_string(c));
    for (T a : slope.data())
        if (!std::isfinite(static_cast<double>(a))) throw ValidationError("prelu: non-finite slope");

    bool tracked = detail::track<T>({input, slope});
    Tensor<T> out = detail::make_result<T>(xs, tracked, {input.node(), slope.node()});
    int64_t n = xs[0], plane = xs[2] * xs[3];
    const T* x = input.data().data();
    const T* a = slope.data().data();
    T* y = out.data().data();
    {
        int pt = par_threads(n * c);
#pragma omp parallel for schedule(static) num_threads(pt) if (pt > 1)
        for (int64_t p = 0; p < n * c; ++p) {
            const T s = a[p % c];
            const T* xi = x + p * plane;
            T* yi = y + p * plane;
            for (int64_t i = 0; i < plane; ++i) yi[i] = xi[i] > T(0) ? xi[i] : s * xi[i];
        }
    }
    if (tracked) {
        auto xn = input.node(), an = slope.node();
        auto on = out.node().get();
        out.node()->backprop = [xn, an, on, n, c, plane]() {
            const T* dy = on->grad.data();
            if (xn->requires_grad) {
                xn->ensure_grad();
                int pt = par_threads(n * c);
#pragma omp parallel for schedule(static) num_threads(pt) if (pt > 1)
                for (int64_t p = 0; p < n * c; ++p) {
                    const T s = an->values[p % c];
                    const T* xi = xn->values.data() + p * plane;
                    const T* g = dy + p * plane;
                    T* dx = xn->grad.data() + p * plane;
                    for (int64_t i = 0; i < plane; ++i) dx[i] += g[i] * (xi[i] > T(0) ? T(1) : s);
                }
            }
            if (an->requires_grad) {
                an->ensure_grad();
                int ct = par_threads(c);
#pragma omp parallel for schedule(static) num_threads(ct) if (ct > 1)
                for (int64_t ch = 0; ch < c; ++ch) {
                    double acc = 0.0;
                    for (int64_t b = 0; b < n; ++b) {
                        const T* xi = xn->values.data() + (b * c + ch) * plane;
                        const T* g = dy + (b * c + ch) * plane;
                        for (int64_t i = 0; i < plane; ++i)
                            if (xi[i] <= T(0)) acc += static_cast<double>(g[i]) * static_cast<double>(xi[i]);
                    }
                    an->grad[ch] += static_cast<T>(acc);
                }
            }
        };
    }
    return out;
}

// --- batchnorm2d --------------------------------------------------------------------

template <typename T>
Tensor<T> batchnorm2d(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                      Tensor<T>& running_mean, Tensor<T>& running_var, bool training, T momentum, T eps) {
    const Shape& xs = input.shape();
    if (xs.size() != 4) throw ValidationError("batchnorm2d: input must be NCHW, got " + shape_str(xs));
    int64_t n = xs[0], c = xs[1], plane = xs[2] * xs[3];
    if (gamma.size() != c || beta.size() != c || running_mean.size() != c || running_var.size() != c)
        throw ValidationError("batchnorm2d: parameter size mismatch for " + std::to_string(c) + " channels");
    if (training && n < 2)
        throw ValidationError("batchnorm2d: train mode requires batch size >= 2 (variance undefined), got " +
                              std::to_string(n));

    bool tracked = detail::track<T>({input, gamma, beta});
    Tensor<T> out = detail::make_result<T>(xs, tracked, {input.node(), gamma.node(), beta.node()});

    const T* x = input.data().data();
    T* y = out.data().data();
    const int64_t cnt = n * plane;

    std::vector<T> mean(c), var(c);
    if (training) {
        int ct = par_threads(c);
#pragma omp parallel for schedule(static) num_threads(ct) if (ct > 1)
        for (int64_t ch = 0; ch < c; ++ch) {
            double s = 0.0, s2 = 0.0;
            for (int64_t b = 0; b < n; ++b) {
                const T* xi = x + (b * c + ch) * plane;
                for (int64_t i = 0; i < plane; ++i) {
                    double v = static_cast<double>(xi[i]);
                    s += v;
                    s2 += v * v;
                }
            }
            double m = s / cnt;
            mean[ch] = static_cast<T>(m);
            var[ch] = static_cast<T>(std::max(0.0, s2 / cnt - m * m));
        }
        // running statistics use the unbiased variance estimate
        for (int64_t ch = 0; ch < c; ++ch) {
            T unbiased = cnt > 1 ? var[ch] * static_cast<T>(cnt) / static_cast<T>(cnt - 1) : var[ch];
            running_mean.data()[ch] = (T(1) - momentum) * running_mean.data()[ch] + momentum * mean[ch];
            running_var.data()[ch] = (T(1) - momentum) * running_var.data()[ch] + momentum * unbiased;
        }
    } else {
        for (int64_t ch = 0; ch < c; ++ch) {
            mean[ch] = running_mean.data()[ch];
            var[ch] = running_var.data()[ch];
        }
    }

    std::vector<T> inv_std(c);
    for (int64_t ch = 0; ch < c; ++ch) inv_std[ch] = T(1) / std::sqrt(var[ch] + eps);
    const T* g = gamma.data().data();
    const T* bta = beta.data().data();
    {
        int ct = par_threads(c);
#pragma omp parallel for schedule(static) num_threads(ct) if (ct > 1)
        for (int64_t ch = 0; ch < c; ++ch) {
            const T a = g[ch] * inv_std[ch];
            const T shift = bta[ch] - mean[ch] * a;
            for (int64_t b = 0; b < n; ++b) {
                const T* xi = x + (b * c + ch) * plane;
                T* yi = y + (b * c + ch) * plane;
                for (int64_t i = 0; i < plane; ++i) yi[i] = xi[i] * a + shift;
            }
        }
    }

    if (tracked) {
        auto xn = input.node(), gn = gamma.node(), bn = beta.node();
        auto on = out.node().get();
        out.node()->backprop = [xn, gn, bn, on, mean, inv_std, training, n, c, plane]() {
            const T* dy = on->grad.data();
            const int64_t cnt = n * plane;
            if (xn->requires_grad) xn->ensure_grad();
            if (gn->requires_grad) gn->ensure_grad();
            if (bn->requires_grad) bn->ensure_grad();
            int ct = par_threads(c);
#pragma omp parallel for schedule(static) num_threads(ct) if (ct > 1)
            for (int64_t ch = 0; ch < c; ++ch) {
                const T m = mean[ch], istd = inv_std[ch], gm = gn->values[ch];
                double sum_dy = 0.0, sum_dy_xhat = 0.0;
                for (int64_t b = 0; b < n; ++b) {
                    const T* xi = xn->values.data() + (b * c + ch) * plane;
                    const T* gi = dy + (b * c + ch) * plane;
                    for (int64_t i = 0; i < plane; ++i) {
                        double xhat = static_cast<double>(xi[i] - m) * istd;
                        sum_dy += gi[i];
                        sum_dy_xhat += static_cast<double>(gi[i]) * xhat;
                    }
                }
                if (gn->requires_grad) gn->grad[ch] += static_cast<T>(sum_dy_xhat);
                if (bn->requires_grad) bn->grad[ch] += static_cast<T>(sum_dy);
                if (xn->requires_grad) {
                    if (training) {
                        const double mdy = sum_dy / cnt, mdyx = sum_dy_xhat / cnt;
                        for (int64_t b = 0; b < n; ++b) {
                            const T* xi = xn->values.data() + (b * c + ch) * plane;
                            const T* gi = dy + (b * c + ch) * plane;
                            T* dx = xn->grad.data() + (b * c + ch) * plane;
                            for (int64_t i = 0; i < plane; ++i) {
                                double xhat = static_cast<double>(xi[i] - m) * istd;
                                dx[i] += static_cast<T>(gm * istd * (gi[i] - mdy - xhat * mdyx));
                            }
                        }
                    } else {
                        const T a = gm * istd;
                        for (int64_t b = 0; b < n; ++b) {
                            const T* gi = dy + (b * c + ch) * plane;
                            T* dx = xn->grad.data() + (b * c + ch) * plane;
                            for (int64_t i = 0; i < plane; ++i) dx[i] += gi[i] * a;
                        }
                    }
                }
            }
        };
    }
    return out;
}

// --- bilinear resize ---------------------------------------------------------------

namespace {

struct LerpAxis {
    std::vector<int64_t> i0, i1;
    std::vector<double> w1;  // weight of i1; weight of i0 is 1-w1
};

// align-corners-false source coordinates, clamped to the valid range
inline LerpAxis make_axis(int64_t in, int64_t out) {
    LerpAxis ax;
    ax.i0.resize(out);
    ax.i1.resize(out);
    ax.w1.resize(out);
    double scale = static_cast<double>(in) / static_cast<double>(out);
    for (int64_t o = 0; o < out; ++o) {
        double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
        src = std::min(std::max(src, 0.0), static_cast<double>(in - 1));
        int64_t lo = static_cast<int64_t>(std::floor(src));
        ax.i0[o] = lo;
        ax.i1[o] = std::min(lo + 1, in - 1);
        ax.w1[o] = src - static_cast<double>(lo);
    }
    return ax;
}

}  // namespace

template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& input, int64_t out_h, int64_t out_w) {
    const Shape& xs = input.shape();
    if (xs.size() != 4) throw ValidationError("bilinear_resize: input must be NCHW, got " + shape_str(xs));
    if (out_h < 1 || out_w < 1) throw ValidationError("bilinear_resize: bad target size");
    int64_t n = xs[0], c = xs[1], h = xs[2], w = xs[3];
    bool tracked = detail::track<T>({input});
    Tensor<T> out = detail::make_result<T>({n, c, out_h, out_w}, tracked, {input.node()});

    LerpAxis ay = make_axis(h, out_h);
    LerpAxis axx = make_axis(w, out_w);
    const T* x = input.data().data();
    T* y = out.data().data();
    int64_t planes = n * c;
    int pt = par_threads(planes);
#pragma omp parallel for schedule(static) num_threads(pt) if (pt > 1)
    for (int64_t p = 0; p < planes; ++p) {
        const T* xi = x + p * h * w;
        T* yi = y + p * out_h * out_w;
        for (int64_t oy = 0; oy < out_h; ++oy) {
            int64_t y0 = ay.i0[oy], y1 = ay.i1[oy];
            double wy = ay.w1[oy];
            for (int64_t ox = 0; ox < out_w; ++ox) {
                int64_t x0 = axx.i0[ox], x1 = axx.i1[ox];
                double wx = axx.w1[ox];
                double v = (1 - wy) * ((1 - wx) * xi[y0 * w + x0] + wx * xi[y0 * w + x1]) +
                           wy * ((1 - wx) * xi[y1 * w + x0] + wx * xi[y1 * w + x1]);
                yi[oy * out_w + ox] = static_cast<T>(v);
            }
        }
    }
    if (tracked) {
        auto xn = input.node();
        auto on = out.node().get();
        out.node()->backprop = [xn, on, ay, axx, h, w, out_h, out_w, planes]() {
            xn->ensure_grad();
            int pt2 = par_threads(planes);
#pragma omp parallel for schedule(static) num_threads(pt2) if (pt2 > 1)
            for (int64_t p = 0; p < planes; ++p) {
                const T* g = on->grad.data() + p * out_h * out_w;
                T* dx = xn->grad.data() + p * h * w;
                for (int64_t oy = 0; oy < out_h; ++oy) {
                    int64_t y0 = ay.i0[oy], y1 = ay.i1[oy];
                    double wy = ay.w1[oy];
                    for (int64_t ox = 0; ox < out_w; ++ox) {
                        int64_t x0 = axx.i0[ox], x1 = axx.i1[ox];
                        double wx = axx.w1[ox];
                        double gv = static_cast<double>(g[oy * out_w + ox]);
                        dx[y0 * w + x0] += static_cast<T>(gv * (1 - wy) * (1 - wx));
                        dx[y0 * w + x1] += static_cast<T>(gv * (1 - wy) * wx);
                        dx[y1 * w + x0] += static_cast<T>(gv * wy * (1 - wx));
                        dx[y1 * w + x1] += static_cast<T>(gv * wy * wx);
                    }
                }
            }
        };
    }
    return out;
}

template <typename T>
Tensor<T> bilinear_upsample(const Tensor<T>& input, int64_t factor) {
    if (factor < 1) throw ValidationError("bilinear_upsample: factor must be >= 1");
    const Shape& xs = input.shape();
    if (xs.size() != 4) throw ValidationError("bilinear_upsample: input must be NCHW, got " + shape_str(xs));
    return bilinear_resize(input, xs[2] * factor, xs[3] * factor);
}

// --- adaptive average pool ------------------------------------------------------------

template <typename T>
Tensor<T> adaptive_avg_pool(const Tensor<T>& input, int64_t bins) {
    const Shape& xs = input.shape();
    if (xs.size() != 4) throw ValidationError("adaptive_avg_pool: input must be NCHW, got " + shape_str(xs));
    int64_t n = xs[0], c = xs[1], h = xs[2], w = xs[3];
    if (bins < 1 || bins > h || bins > w)
        throw ValidationError("adaptive_avg_pool: bins " + std::to_string(bins) +
                              " exceed spatial size " + shape_str(xs));
    bool tracked = detail::track<T>({input});
    Tensor<T> out = detail::make_result<T>({n, c, bins, bins}, tracked, {input.node()});

    auto seg_start = [](int64_t i, int64_t size, int64_t b) { return i * size / b; };
    auto seg_end = [](int64_t i, int64_t size, int64_t b) { return (i * size + size + b - 1) / b; };

    const T* x = input.data().data();
    T* y = out.data().data();
    int64_t planes = n * c;
    for (int64_t p = 0; p < planes; ++p) {
        const T* xi = x + p * h * w;
        T* yi = y + p * bins * bins;
        for (int64_t by = 0; by < bins; ++by) {
            int64_t y0 = seg_start(by, h, bins), y1 = seg_end(by, h, bins);
            for (int64_t bx = 0; bx < bins; ++bx) {
                int64_t x0 = seg_start(bx, w, bins), x1 = seg_end(bx, w, bins);
                double acc = 0.0;
                for (int64_t iy = y0; iy < y1; ++iy)
                    for (int64_t ix = x0; ix < x1; ++ix) acc += xi[iy * w + ix];
                yi[by * bins + bx] = static_cast<T>(acc / static_cast<double>((y1 - y0) * (x1 - x0)));
            }
        }
    }
    if (tracked) {
        auto xn = input.node();
        auto on = out.node().get();
        out.node()->backprop = [xn, on, n, c, h, w, bins, seg_start, seg_end]() {
            xn->ensure_grad();
            int64_t planes = n * c;
            int pt = par_threads(planes);
#pragma omp parallel for schedule(static) num_threads(pt) if (pt > 1)
            for (int64_t p = 0; p < planes; ++p) {
                const T* g = on->grad.data() + p * bins * bins;
                T* dx = xn->grad.data() + p * h * w;
                for (int64_t by = 0; by < bins; ++by) {
                    int64_t y0 = seg_start(by, h, bins), y1 = seg_end(by, h, bins);
                    for (int64_t bx = 0; bx < bins; ++bx) {
                        int64_t x0 = seg_start(bx, w, bins), x1 = seg_end(bx, w, bins);
                        T share = g[by * bins + bx] / static_cast<T>((y1 - y0) * (x1 - x0));
                        for (int64_t iy = y0; iy < y1; ++iy)
                            for (int64_t ix = x0; ix < x1; ++ix) dx[iy * w + ix] += share;
                    }
                }
            }
        };
    }
    return out;
}

// --- softmax cross-entropy -------------------------------------------------------------

template <typename T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, const std::vector<int32_t>& target) {
    const Shape& ls = logits.shape();
    if (ls.size() != 4) throw ValidationError("softmax_cross_entropy: logits must be [N,K,H,W], got " + shape_str(ls));
    int64_t n = ls[0], k = ls[1], h = ls[2], w = ls[3];
    int64_t px = n * h * w;
    if (static_cast<int64_t>(target.size()) != px)
        throw ValidationError("softmax_cross_entropy: target length " + std::to_string(target.size()) +
                              " must be " + std::to_string(px));
    for (int32_t t : target)
        if (t < 0 || t >= k)
            throw ValidationError("softmax_cross_entropy: class index " + std::to_string(t) +
                                  " out of range [0," + std::to_string(k) + ")");

    bool tracked = detail::track<T>({logits});
    Tensor<T> out = detail::make_result<T>({1}, tracked, {logits.node()});
    const T* x = logits.data().data();
    int64_t plane = h * w;
    // per-pixel losses in parallel, then one serial sum so the reduction
    // order is fixed
    std::vector<double> px_loss(static_cast<size_t>(px));
    {
        int pt = par_threads(n);
#pragma omp parallel for schedule(static) num_threads(pt) if (pt > 1)
        for (int64_t b = 0; b < n; ++b)
            for (int64_t i = 0; i < plane; ++i) {
                double mx = -std::numeric_limits<double>::infinity();
                for (int64_t cls = 0; cls < k; ++cls)
                    mx = std::max(mx, static_cast<double>(x[(b * k + cls) * plane + i]));
                double se = 0.0;
                for (int64_t cls = 0; cls < k; ++cls)
                    se += std::exp(static_cast<double>(x[(b * k + cls) * plane + i]) - mx);
                double lse = mx + std::log(se);
                int32_t t = target[b * plane + i];
                px_loss[b * plane + i] = lse - static_cast<double>(x[(b * k + t) * plane + i]);
            }
    }
    double total = 0.0;
    for (double v : px_loss) total += v;
    out.data()[0] = static_cast<T>(total / static_cast<double>(px));

    if (tracked) {
        auto xn = logits.node();
        auto on = out.node().get();
        out.node()->backprop = [xn, on, target, n, k, plane, px]() {
            xn->ensure_grad();
            const T* x = xn->values.data();
            T* dx = xn->grad.data();
            const T g = on->grad[0] / static_cast<T>(px);
            int pt = par_threads(n);
#pragma omp parallel for schedule(static) num_threads(pt) if (pt > 1)
            for (int64_t b = 0; b < n; ++b)
                for (int64_t i = 0; i < plane; ++i) {
                    double mx = -std::numeric_limits<double>::infinity();
                    for (int64_t cls = 0; cls < k; ++cls)
                        mx = std::max(mx, static_cast<double>(x[(b * k + cls) * plane + i]));
                    double se = 0.0;
                    for (int64_t cls = 0; cls < k; ++cls)
                        se += std::exp(static_cast<double>(x[(b * k + cls) * plane + i]) - mx);
                    int32_t t = target[b * plane + i];
                    for (int64_t cls = 0; cls < k; ++cls) {
                        double p = std::exp(static_cast<double>(x[(b * k + cls) * plane + i]) - mx) / se;
                        dx[(b * k + cls) * plane + i] += g * static_cast<T>(p - (cls == t ? 1.0 : 0.0));
                    }
                }
        };
    }
    return out;
}

template <typename T>
std::vector<T> softmax_probs(const Tensor<T>& logits) {
    const Shape& ls = logits.shape();
    if (ls.size() != 4) throw ValidationError("softmax_probs: logits must be [N,K,H,W]");
    int64_t n = ls[0], k = ls[1], plane = ls[2] * ls[3];
    std::vector<T> probs(logits.data().size());
    const T* x = logits.data().data();
    for (int64_t b = 0; b < n; ++b)
        for (int64_t i = 0; i < plane; ++i) {
            double mx = -std::numeric_limits<double>::infinity();
            for (int64_t cls = 0; cls < k; ++cls) mx = std::max(mx, static_cast<double>(x[(b * k + cls) * plane + i]));
            double se = 0.0;
            for (int64_t cls = 0; cls < k; ++cls) se += std::exp(static_cast<double>(x[(b * k + cls) * plane + i]) - mx);
            for (int64_t cls = 0; cls < k; ++cls)
                probs[(b * k + cls) * plane + i] =
                    static_cast<T>(std::exp(static_cast<double>(x[(b * k + cls) * plane + i]) - mx) / se);
        }
    return probs;
}

// --- instantiations -------------------------------------------------------------------

template class Tensor<float>;
template class Tensor<double>;

#define M3NET_INSTANTIATE(T)                                                                              \
    template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                                        \
    template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                                        \
    template Tensor<T> sum<T>(const Tensor<T>&);                                                          \
    template Tensor<T> scale<T>(const Tensor<T>&, T);                                                     \
    template Tensor<T> concat_channels<T>(const std::vector<Tensor<T>>&);                                 \
    template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int64_t, int64_t,  \
                                 int64_t);                                                                \
    template Tensor<T> prelu<T>(const Tensor<T>&, const Tensor<T>&);                                      \
    template Tensor<T> batchnorm2d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Tensor<T>&,   \
                                      Tensor<T>&, bool, T, T);                                            \
    template Tensor<T> bilinear_resize<T>(const Tensor<T>&, int64_t, int64_t);                            \
    template Tensor<T> bilinear_upsample<T>(const Tensor<T>&, int64_t);                                   \
    template Tensor<T> adaptive_avg_pool<T>(const Tensor<T>&, int64_t);                                   \
    template Tensor<T> softmax_cross_entropy<T>(const Tensor<T>&, const std::vector<int32_t>&);           \
    template std::vector<T> softmax_probs<T>(const Tensor<T>&);

M3NET_INSTANTIATE(float)
M3NET_INSTANTIATE(double)

}  // namespace m3net
