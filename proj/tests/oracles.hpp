#pragma once

// Independent double-precision reference implementations used as test oracles. They share
// no code with the library beyond plain shapes.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "vince/encoder.hpp"
#include "vince/rng.hpp"
#include "vince/tensor.hpp"

namespace oracle {

using Vec = std::vector<double>;

inline Vec to_double(const vince::Tensor& t) { return Vec(t.data().begin(), t.data().end()); }

inline vince::Tensor random_tensor(vince::Shape shape, vince::Rng& rng, double lo = -1.0, double hi = 1.0, bool grad = true) {
    std::vector<float> v(vince::numel(shape));
    for (auto& x : v) x = static_cast<float>(rng.uniform(lo, hi));
    return vince::Tensor(std::move(shape), std::move(v), grad);
}

/// Values bounded away from zero (for kinks and log).
inline vince::Tensor random_away_from_zero(vince::Shape shape, vince::Rng& rng, double margin = 0.05, bool grad = true) {
    std::vector<float> v(vince::numel(shape));
    for (auto& x : v) {
        const double mag = rng.uniform(margin, 1.0);
        x = static_cast<float>(rng.bernoulli(0.5) ? mag : -mag);
    }
    return vince::Tensor(std::move(shape), std::move(v), grad);
}

inline vince::Tensor unit_rows(std::size_t n, std::size_t d, vince::Rng& rng, bool grad = false) {
    std::vector<float> v(n * d);
    for (std::size_t i = 0; i < n; ++i) {
        double norm = 0.0;
        Vec row(d);
        for (auto& x : row) {
            x = rng.normal();
            norm += x * x;
        }
        norm = std::sqrt(norm);
        for (std::size_t j = 0; j < d; ++j) v[i * d + j] = static_cast<float>(row[j] / norm);
    }
    return vince::Tensor({n, d}, std::move(v), grad);
}

// ---------------------------------------------------------------------------
// Dense building blocks

inline Vec matmul(const Vec& a, const Vec& b, std::size_t p, std::size_t q, std::size_t r) {
    Vec c(p * r, 0.0);
    for (std::size_t i = 0; i < p; ++i)
        for (std::size_t j = 0; j < r; ++j) {
            double s = 0.0;
            for (std::size_t t = 0; t < q; ++t) s += a[i * q + t] * b[t * r + j];
            c[i * r + j] = s;
        }
    return c;
}

inline Vec conv2d(const Vec& in, std::size_t n, std::size_t c, std::size_t h, std::size_t w, const Vec& k, std::size_t o,
                  std::size_t kh, std::size_t kw, std::size_t stride, std::size_t pad, std::size_t* oh_out = nullptr,
                  std::size_t* ow_out = nullptr) {
    const std::size_t oh = (h + 2 * pad - kh) / stride + 1, ow = (w + 2 * pad - kw) / stride + 1;
    Vec out(n * o * oh * ow, 0.0);
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t oc = 0; oc < o; ++oc)
            for (std::size_t y = 0; y < oh; ++y)
                for (std::size_t x = 0; x < ow; ++x) {
                    double s = 0.0;
                    for (std::size_t ic = 0; ic < c; ++ic)
                        for (std::size_t dy = 0; dy < kh; ++dy)
                            for (std::size_t dx = 0; dx < kw; ++dx) {
                                const long iy = static_cast<long>(y * stride + dy) - static_cast<long>(pad);
                                const long ix = static_cast<long>(x * stride + dx) - static_cast<long>(pad);
                                if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(w)) continue;
                                s += in[((b * c + ic) * h + iy) * w + ix] * k[((oc * c + ic) * kh + dy) * kw + dx];
                            }
                    out[((b * o + oc) * oh + y) * ow + x] = s;
                }
    if (oh_out) *oh_out = oh;
    if (ow_out) *ow_out = ow;
    return out;
}

namespace detail {
// When set, every leaky() and branch() call appends which side it evaluated on.
inline thread_local std::vector<bool>* kink_log = nullptr;
}  // namespace detail

/// A comparison the finite-difference checker should know about (max selection and the like).
inline bool branch(bool taken) {
    if (detail::kink_log) detail::kink_log->push_back(taken);
    return taken;
}

inline double leaky(double x, double slope) {
    if (detail::kink_log) detail::kink_log->push_back(x > 0);
    return x > 0 ? x : slope * x;
}

inline Vec l2_normalize_rows(const Vec& x, std::size_t n, std::size_t d) {
    Vec out(x.size());
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < d; ++j) s += x[i * d + j] * x[i * d + j];
        const double norm = std::sqrt(s);
        for (std::size_t j = 0; j < d; ++j) out[i * d + j] = x[i * d + j] / norm;
    }
    return out;
}

/// Reference encoder: conv(pad k/2)+bias+leaky blocks, global average pool, FC, leaky, FC.
/// `params` holds the parameter tensors in library order.
inline Vec encode(const vince::EncoderConfig& cfg, const std::vector<Vec>& params, const Vec& images, std::size_t n,
                  bool pooled_only = false) {
    std::size_t c = cfg.input_channels, h = cfg.input_size, w = cfg.input_size;
    Vec x = images;
    for (std::size_t i = 0; i < cfg.trunk.size(); ++i) {
        const auto& b = cfg.trunk[i];
        std::size_t oh, ow;
        x = conv2d(x, n, c, h, w, params[2 * i], b.out_channels, b.kernel, b.kernel, b.stride, b.kernel / 2, &oh, &ow);
        for (std::size_t s = 0; s < n; ++s)
            for (std::size_t oc = 0; oc < b.out_channels; ++oc)
                for (std::size_t p = 0; p < oh * ow; ++p) {
                    double& v = x[(s * b.out_channels + oc) * oh * ow + p];
                    v = leaky(v + params[2 * i + 1][oc], cfg.leaky_slope);
                }
        c = b.out_channels;
        h = oh;
        w = ow;
    }
    Vec pooled(n * c, 0.0);
    for (std::size_t s = 0; s < n; ++s)
        for (std::size_t ch = 0; ch < c; ++ch) {
            double acc = 0.0;
            for (std::size_t p = 0; p < h * w; ++p) acc += x[(s * c + ch) * h * w + p];
            pooled[s * c + ch] = acc / static_cast<double>(h * w);
        }
    if (pooled_only) return pooled;
    const std::size_t base = 2 * cfg.trunk.size();
    Vec hidden = matmul(pooled, params[base], n, c, cfg.hidden_dim);
    for (std::size_t s = 0; s < n; ++s)
        for (std::size_t j = 0; j < cfg.hidden_dim; ++j) {
            double& v = hidden[s * cfg.hidden_dim + j];
            v = leaky(v + params[base + 1][j], cfg.leaky_slope);
        }
    Vec out = matmul(hidden, params[base + 2], n, cfg.hidden_dim, cfg.embed_dim);
    for (std::size_t s = 0; s < n; ++s)
        for (std::size_t j = 0; j < cfg.embed_dim; ++j) out[s * cfg.embed_dim + j] += params[base + 3][j];
    return out;
}

// ---------------------------------------------------------------------------
// Naive NCE loops

inline double dot(const Vec& a, std::size_t i, const Vec& b, std::size_t j, std::size_t d) {
    double s = 0.0;
    for (std::size_t t = 0; t < d; ++t) s += a[i * d + t] * b[j * d + t];
    return s;
}

/// Batch NCE: softmax over every positive in the batch.
inline double nce_loss(const Vec& A, const Vec& P, std::size_t n, std::size_t d, double tau) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double denom = 0.0;
        for (std::size_t j = 0; j < n; ++j) denom += std::exp(tau * dot(A, i, P, j, d));
        total += -std::log(std::exp(tau * dot(A, i, P, i, d)) / denom);
    }
    return total / static_cast<double>(n);
}

/// Memory NCE: own positive against the bank only.
inline double memory_nce_loss(const Vec& A, const Vec& P, const Vec& N, std::size_t n, std::size_t m, std::size_t d, double tau) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double pos = std::exp(tau * dot(A, i, P, i, d));
        double neg = 0.0;
        for (std::size_t j = 0; j < m; ++j) neg += std::exp(tau * dot(A, i, N, j, d));
        total += -std::log(pos / (pos + neg));
    }
    return total / static_cast<double>(n);
}

struct MultiPairTrace {
    double loss = 0.0;
    std::size_t positive_scores = 0;
    std::vector<std::size_t> competitors;  // per row
};

/// Multi-pair NCE by triple loop: every same-video (anchor, positive) entry is scored against
/// every entry of its row that is not a same-video positive.
inline MultiPairTrace multi_pair_nce_loss(const Vec& F, const Vec& G, const Vec& N, std::size_t v, std::size_t k, std::size_t m,
                                          std::size_t d, double tau) {
    const std::size_t n = v * k;
    MultiPairTrace trace;
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double neg = 0.0;
        std::size_t competitors = 0;
        for (std::size_t j = 0; j < n; ++j) {
            if (j / k == i / k) continue;
            neg += std::exp(tau * dot(F, i, G, j, d));
            ++competitors;
        }
        for (std::size_t j = 0; j < m; ++j) {
            neg += std::exp(tau * dot(F, i, N, j, d));
            ++competitors;
        }
        trace.competitors.push_back(competitors);
        for (std::size_t j = 0; j < n; ++j) {
            if (j / k != i / k) continue;
            const double pos = std::exp(tau * dot(F, i, G, j, d));
            total += -std::log(pos / (pos + neg));
            ++trace.positive_scores;
        }
    }
    trace.loss = total / static_cast<double>(trace.positive_scores);
    return trace;
}

// ---------------------------------------------------------------------------
// Finite differences

struct GradCheck {
    double max_rel_error = 0.0;
    double forward_abs_error = 0.0;
};

/// Compares analytic gradients of `library` (a scalar float graph over `inputs`) with central
/// differences (h = 1e-3) of the double-precision `reference`. Relative error per element is
/// |a - n| / max(|a|, |n|, 1e-2 * max|n| over that input, 1e-6). When x-h and x+h fall on
/// different sides of a leaky kink the step is divided by 10 (down to 1e-7) for that element.
inline GradCheck check_gradients(std::vector<vince::Tensor> inputs,
                                 const std::function<vince::Tensor(const std::vector<vince::Tensor>&)>& library,
                                 const std::function<double(const std::vector<Vec>&)>& reference, double h = 1e-3) {
    for (auto& t : inputs) t.zero_grad();
    const vince::Tensor out = library(inputs);
    out.backward();
    std::vector<Vec> x;
    for (const auto& t : inputs) x.push_back(to_double(t));
    GradCheck result;
    result.forward_abs_error = std::abs(reference(x) - out.item());
    for (std::size_t a = 0; a < inputs.size(); ++a) {
        if (!inputs[a].requires_grad()) continue;
        Vec numeric(x[a].size());
        double scale = 0.0;
        for (std::size_t i = 0; i < x[a].size(); ++i) {
            const double keep = x[a][i];
            double step = h, up = 0.0, down = 0.0;
            for (;;) {
                std::vector<bool> up_sides, down_sides;
                x[a][i] = keep + step;
                detail::kink_log = &up_sides;
                up = reference(x);
                x[a][i] = keep - step;
                detail::kink_log = &down_sides;
                down = reference(x);
                detail::kink_log = nullptr;
                if (up_sides == down_sides || step < 1e-7) break;
                step /= 10.0;
            }
            x[a][i] = keep;
            numeric[i] = (up - down) / (2.0 * step);
            scale = std::max(scale, std::abs(numeric[i]));
        }
        const auto analytic = inputs[a].has_grad() ? inputs[a].grad() : std::span<const float>();
        for (std::size_t i = 0; i < numeric.size(); ++i) {
            const double an = analytic.empty() ? 0.0 : analytic[i];
            const double denom = std::max({std::abs(an), std::abs(numeric[i]), 1e-2 * scale, 1e-6});
            result.max_rel_error = std::max(result.max_rel_error, std::abs(an - numeric[i]) / denom);
        }
    }
    return result;
}

/// Weighted sum with fixed weights, turning a tensor-valued op into a scalar.
inline double weighted(const Vec& values, const Vec& weights) {
    double s = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) s += values[i] * weights[i];
    return s;
}

}  // namespace oracle
