#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include <doctest.h>

#include "advleaf/rng.hpp"
#include "advleaf/tensor.hpp"

namespace testutil {

using advleaf::Rng;
using advleaf::Shape;
using advleaf::Tensor;

inline Tensor random_tensor(const Shape& shape, Rng& rng, float lo = -1.0f, float hi = 1.0f) {
    auto t = Tensor::zeros(shape);
    for (float& v : t.data()) v = rng.uniform(lo, hi);
    return t;
}

inline bool all_equal(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) return false;
    auto pa = a.data();
    auto pb = b.data();
    for (size_t i = 0; i < pa.size(); ++i)
        if (pa[i] != pb[i]) return false;
    return true;
}

inline float max_abs_diff(const Tensor& a, const Tensor& b) {
    REQUIRE(a.shape() == b.shape());
    auto pa = a.data();
    auto pb = b.data();
    float m = 0.0f;
    for (size_t i = 0; i < pa.size(); ++i)
        m = std::max(m, std::fabs(pa[i] - pb[i]));
    return m;
}

inline double rel_err(double got, double want) {
    const double denom = std::max(std::fabs(want), 1e-8);
    return std::fabs(got - want) / denom;
}

/// Float comparisons for quantities whose magnitude spans orders: pass when
/// either the absolute or the relative error is within tolerance.
inline bool close_abs_or_rel(double got, double want, double abs_tol, double rel_tol) {
    const double diff = std::fabs(got - want);
    if (diff <= abs_tol) return true;
    return diff <= rel_tol * std::max(std::fabs(got), std::fabs(want));
}

/// Central finite difference of a scalar functional at `coords` of `x`,
/// compared against `analytic` (same length as coords). Coordinates whose
/// |value| falls below `kink_guard` after perturbation checks are skipped by
/// the caller, not here.
struct FdCheck {
    double max_rel_err = 0.0;
    int compared = 0;
};

inline FdCheck finite_difference_check(Tensor& x, const std::function<double()>& eval,
                                       std::span<const float> analytic,
                                       const std::vector<int64_t>& coords,
                                       double h = 1e-3, double abs_floor = 1e-5) {
    FdCheck res;
    auto data = x.data();
    for (int64_t c : coords) {
        const float saved = data[static_cast<size_t>(c)];
        data[static_cast<size_t>(c)] = saved + static_cast<float>(h);
        const double up = eval();
        data[static_cast<size_t>(c)] = saved - static_cast<float>(h);
        const double down = eval();
        data[static_cast<size_t>(c)] = saved;
        const double fd = (up - down) / (2.0 * h);
        const double an = analytic[static_cast<size_t>(c)];
        if (std::fabs(fd) < abs_floor && std::fabs(an) < abs_floor) {
            ++res.compared;
            continue; // both effectively zero
        }
        res.max_rel_err = std::max(res.max_rel_err,
                                   std::fabs(fd - an) / std::max({std::fabs(fd), std::fabs(an), 1e-8}));
        ++res.compared;
    }
    return res;
}

// ---------------------------------------------------------------------------
// Naive nested-loop convolution oracle (normative reference for conv2d).
// Float accumulation in (ci, ky, kx) order, matching the documented layout.
// ---------------------------------------------------------------------------

struct ConvOracleResult {
    Tensor output;
    std::vector<float> d_input;
    std::vector<float> d_weight;
    std::vector<float> d_bias;
};

inline ConvOracleResult conv2d_oracle(const Tensor& input, const Tensor& weight,
                                      const Tensor& bias, int stride, int padding,
                                      const std::vector<float>* upstream = nullptr) {
    const int n = input.dim(0), cin = input.dim(1), h = input.dim(2), w = input.dim(3);
    const int cout = weight.dim(0), k = weight.dim(2);
    const int ho = (h + 2 * padding - k) / stride + 1;
    const int wo = (w + 2 * padding - k) / stride + 1;
    const float* pin = input.data().data();
    const float* pw = weight.data().data();
    const float* pb = bias.data().data();

    auto in_at = [&](int b, int c, int y, int x) -> float {
        if (y < 0 || y >= h || x < 0 || x >= w) return 0.0f;
        return pin[((static_cast<int64_t>(b) * cin + c) * h + y) * w + x];
    };
    auto w_at = [&](int co, int ci, int ky, int kx) -> float {
        return pw[((static_cast<int64_t>(co) * cin + ci) * k + ky) * k + kx];
    };

    ConvOracleResult res;
    res.output = Tensor::zeros({n, cout, ho, wo});
    float* pout = res.output.data().data();
    for (int b = 0; b < n; ++b)
        for (int co = 0; co < cout; ++co)
            for (int oy = 0; oy < ho; ++oy)
                for (int ox = 0; ox < wo; ++ox) {
                    float acc = pb[co];
                    for (int ci = 0; ci < cin; ++ci)
                        for (int ky = 0; ky < k; ++ky)
                            for (int kx = 0; kx < k; ++kx)
                                acc += in_at(b, ci, oy * stride + ky - padding,
                                             ox * stride + kx - padding) *
                                       w_at(co, ci, ky, kx);
                    pout[((static_cast<int64_t>(b) * cout + co) * ho + oy) * wo + ox] = acc;
                }

    if (upstream) {
        const std::vector<float>& gy = *upstream;
        res.d_input.assign(static_cast<size_t>(input.size()), 0.0f);
        res.d_weight.assign(static_cast<size_t>(weight.size()), 0.0f);
        res.d_bias.assign(static_cast<size_t>(bias.size()), 0.0f);
        for (int b = 0; b < n; ++b)
            for (int co = 0; co < cout; ++co)
                for (int oy = 0; oy < ho; ++oy)
                    for (int ox = 0; ox < wo; ++ox) {
                        const float g =
                            gy[((static_cast<size_t>(b) * cout + co) * ho + oy) * wo + ox];
                        res.d_bias[static_cast<size_t>(co)] += g;
                        for (int ci = 0; ci < cin; ++ci)
                            for (int ky = 0; ky < k; ++ky)
                                for (int kx = 0; kx < k; ++kx) {
                                    const int y = oy * stride + ky - padding;
                                    const int x = ox * stride + kx - padding;
                                    if (y < 0 || y >= h || x < 0 || x >= w) continue;
                                    const size_t in_idx =
                                        ((static_cast<size_t>(b) * cin + ci) * h + y) * w + x;
                                    const size_t w_idx =
                                        ((static_cast<size_t>(co) * cin + ci) * k + ky) * k + kx;
                                    res.d_weight[w_idx] += in_at(b, ci, y, x) * g;
                                    res.d_input[in_idx] += w_at(co, ci, ky, kx) * g;
                                }
                    }
    }
    return res;
}

/// Naive max-pool oracle.
inline Tensor maxpool_oracle(const Tensor& input, int k, int stride) {
    const int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    const int ho = (h - k) / stride + 1;
    const int wo = (w - k) / stride + 1;
    auto out = Tensor::zeros({n, c, ho, wo});
    const float* pi = input.data().data();
    float* po = out.data().data();
    for (int b = 0; b < n; ++b)
        for (int ch = 0; ch < c; ++ch)
            for (int oy = 0; oy < ho; ++oy)
                for (int ox = 0; ox < wo; ++ox) {
                    float best = -std::numeric_limits<float>::infinity();
                    for (int ky = 0; ky < k; ++ky)
                        for (int kx = 0; kx < k; ++kx)
                            best = std::max(
                                best,
                                pi[((static_cast<int64_t>(b) * c + ch) * h + oy * stride + ky) * w +
                                   ox * stride + kx]);
                    po[((static_cast<int64_t>(b) * c + ch) * ho + oy) * wo + ox] = best;
                }
    return out;
}

} // namespace testutil
