#pragma once

// Independent reference implementations used as test oracles. These are
// deliberately written as plain nested loops / direct formula evaluations and
// must stay independent of the library code paths they check.

#include <cmath>
#include <complex>
#include <functional>
#include <vector>

#include "m3net/common.hpp"

namespace oracles {

// Direct nested-loop cross-correlation with dilation, zero padding.
// x [c_in,h,w], w [c_out,c_in,k,k], b [c_out] -> y [c_out,h_out,w_out]
inline std::vector<double> conv2d_ref(const std::vector<double>& x, int64_t c_in, int64_t h, int64_t w,
                                      const std::vector<double>& wt, int64_t c_out, int64_t k,
                                      const std::vector<double>& b, int64_t stride, int64_t dilation,
                                      int64_t pad, int64_t& h_out, int64_t& w_out) {
    h_out = (h + 2 * pad - dilation * (k - 1) - 1) / stride + 1;
    w_out = (w + 2 * pad - dilation * (k - 1) - 1) / stride + 1;
    std::vector<double> y(static_cast<size_t>(c_out * h_out * w_out), 0.0);
    for (int64_t co = 0; co < c_out; ++co)
        for (int64_t oy = 0; oy < h_out; ++oy)
            for (int64_t ox = 0; ox < w_out; ++ox) {
                double acc = b[co];
                for (int64_t ci = 0; ci < c_in; ++ci)
                    for (int64_t ky = 0; ky < k; ++ky)
                        for (int64_t kx = 0; kx < k; ++kx) {
                            int64_t iy = oy * stride - pad + ky * dilation;
                            int64_t ix = ox * stride - pad + kx * dilation;
                            if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                            acc += x[(ci * h + iy) * w + ix] * wt[((co * c_in + ci) * k + ky) * k + kx];
                        }
                y[(co * h_out + oy) * w_out + ox] = acc;
            }
    return y;
}

// Hand evaluation of align-corners-false bilinear interpolation.
inline double bilinear_ref(const std::vector<double>& img, int64_t h, int64_t w, int64_t out_h, int64_t out_w,
                           int64_t oy, int64_t ox) {
    auto sample = [&](double sy, double sx) {
        sy = std::min(std::max(sy, 0.0), static_cast<double>(h - 1));
        sx = std::min(std::max(sx, 0.0), static_cast<double>(w - 1));
        int64_t y0 = static_cast<int64_t>(std::floor(sy));
        int64_t x0 = static_cast<int64_t>(std::floor(sx));
        int64_t y1 = std::min(y0 + 1, h - 1);
        int64_t x1 = std::min(x0 + 1, w - 1);
        double fy = sy - y0, fx = sx - x0;
        return (1 - fy) * ((1 - fx) * img[y0 * w + x0] + fx * img[y0 * w + x1]) +
               fy * ((1 - fx) * img[y1 * w + x0] + fx * img[y1 * w + x1]);
    };
    double sy = (oy + 0.5) * static_cast<double>(h) / out_h - 0.5;
    double sx = (ox + 0.5) * static_cast<double>(w) / out_w - 0.5;
    return sample(sy, sx);
}

// Two-pass softmax cross-entropy, mean over pixels.
inline double softmax_ce_ref(const std::vector<double>& logits, int64_t n, int64_t k, int64_t h, int64_t w,
                             const std::vector<int32_t>& target) {
    double total = 0.0;
    int64_t plane = h * w;
    for (int64_t b = 0; b < n; ++b)
        for (int64_t i = 0; i < plane; ++i) {
            double mx = -1e300;
            for (int64_t c = 0; c < k; ++c) mx = std::max(mx, logits[(b * k + c) * plane + i]);
            double se = 0.0;
            for (int64_t c = 0; c < k; ++c) se += std::exp(logits[(b * k + c) * plane + i] - mx);
            double p = std::exp(logits[(b * k + target[b * plane + i]) * plane + i] - mx) / se;
            total += -std::log(p);
        }
    return total / static_cast<double>(n * plane);
}

// Central finite differences d f / d x_i at 64-bit.
inline double central_diff(const std::function<double()>& f, double& x, double step = 1e-5) {
    double saved = x;
    x = saved + step;
    double fp = f();
    x = saved - step;
    double fm = f();
    x = saved;
    return (fp - fm) / (2.0 * step);
}

// Relative error between an analytic and a finite-difference gradient.
inline double grad_rel_err(double analytic, double fd) {
    double denom = std::max(std::abs(analytic), std::abs(fd));
    if (denom < 1e-7) return std::abs(analytic - fd) < 1e-7 ? 0.0 : 1.0;
    return std::abs(analytic - fd) / denom;
}

// Boxcar mean with symmetric reflective borders, direct window loop.
inline std::vector<double> boxcar_ref(const std::vector<double>& img, int64_t h, int64_t w, int64_t win) {
    auto reflect = [](int64_t i, int64_t n) {
        while (i < 0 || i >= n) {
            if (i < 0) i = -i - 1;
            if (i >= n) i = 2 * n - i - 1;
        }
        return i;
    };
    std::vector<double> out(img.size());
    int64_t r = win / 2;
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int64_t dy = -r; dy <= r; ++dy)
                for (int64_t dx = -r; dx <= r; ++dx)
                    acc += img[reflect(y + dy, h) * w + reflect(x + dx, w)];
            out[y * w + x] = acc / (win * win);
        }
    return out;
}

// Direct per-pixel evaluation of the coherence ratio
// |E[z1 conj(z2)]| / sqrt(E[|z1|^2] E[|z2|^2]) with boxcar expectations.
inline std::vector<double> coherence_ref(const std::vector<std::complex<double>>& z1,
                                         const std::vector<std::complex<double>>& z2, int64_t h, int64_t w,
                                         int64_t win) {
    auto reflect = [](int64_t i, int64_t n) {
        while (i < 0 || i >= n) {
            if (i < 0) i = -i - 1;
            if (i >= n) i = 2 * n - i - 1;
        }
        return i;
    };
    std::vector<double> out(z1.size());
    int64_t r = win / 2;
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x) {
            std::complex<double> cross = 0.0;
            double p1 = 0.0, p2 = 0.0;
            for (int64_t dy = -r; dy <= r; ++dy)
                for (int64_t dx = -r; dx <= r; ++dx) {
                    int64_t iy = reflect(y + dy, h), ix = reflect(x + dx, w);
                    std::complex<double> a = z1[iy * w + ix], b = z2[iy * w + ix];
                    cross += a * std::conj(b);
                    p1 += std::norm(a);
                    p2 += std::norm(b);
                }
            double denom = std::sqrt(p1 * p2);
            out[y * w + x] = denom > 0.0 ? std::abs(cross) / denom : 0.0;
        }
    return out;
}

// Even-odd crossing-number point-in-polygon test over a set of rings.
inline bool point_in_rings(double px, double py,
                           const std::vector<std::vector<std::array<double, 2>>>& rings) {
    bool inside = false;
    for (const auto& ring : rings) {
        size_t m = ring.size();
        for (size_t i = 0, j = m - 1; i < m; j = i++) {
            double yi = ring[i][1], yj = ring[j][1];
            double xi = ring[i][0], xj = ring[j][0];
            if ((yi > py) != (yj > py)) {
                double t = (py - yi) / (yj - yi);
                if (px < xi + t * (xj - xi)) inside = !inside;
            }
        }
    }
    return inside;
}

}  // namespace oracles
