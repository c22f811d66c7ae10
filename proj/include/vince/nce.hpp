#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "vince/errors.hpp"
#include "vince/ops.hpp"
#include "vince/tensor.hpp"

namespace vince {

/// Temperature is stored as the multiplier on cosine similarity (1/0.07 by default).
struct NceConfig {
    float temperature = 1.0f / 0.07f;

    void validate() const {
        if (!(temperature > 0.0f)) throw PreconditionError("nce: temperature must be positive");
    }
};

/// v videos x k frames per video, plus m memory-bank rows.
struct BatchLayout {
    std::size_t videos = 1;
    std::size_t frames = 1;
    std::size_t memory = 0;

    std::size_t rows() const { return videos * frames; }
    std::size_t columns() const { return rows() + memory; }

    void validate() const {
        if (videos == 0 || frames == 0) throw PreconditionError("batch layout needs v >= 1 and k >= 1");
    }
};

/// Boolean n x (n+m) matrix; (i, j) is set iff anchor i and compare row j come from the same video.
struct PairMask {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<std::uint8_t> bits;

    bool operator()(std::size_t i, std::size_t j) const { return bits[i * cols + j] != 0; }
    std::size_t count() const { return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), 1)); }
};

inline PairMask build_pair_mask(const BatchLayout& layout) {
    layout.validate();
    PairMask mask{layout.rows(), layout.columns(), std::vector<std::uint8_t>(layout.rows() * layout.columns(), 0)};
    for (std::size_t i = 0; i < mask.rows; ++i) {
        const std::size_t block = i / layout.frames;
        for (std::size_t j = block * layout.frames; j < (block + 1) * layout.frames; ++j) mask.bits[i * mask.cols + j] = 1;
    }
    return mask;
}

namespace detail {

inline void require_unit_rows(const Tensor& t, const char* what) {
    require_rank(t, 2, what);
    const std::size_t d = t.dim(1);
    auto v = t.data();
    for (std::size_t r = 0; r < t.dim(0); ++r) {
        double acc = 0.0;
        for (std::size_t c = 0; c < d; ++c) acc += static_cast<double>(v[r * d + c]) * v[r * d + c];
        if (std::abs(std::sqrt(acc) - 1.0) > 1e-4) {
            throw PreconditionError(std::string(what) + ": row " + std::to_string(r) + " is not unit-normalized");
        }
    }
}

enum class Role : std::uint8_t { ignored = 0, positive = 1, negative = 2 };

/// Mean over every positive entry (i, p) of
///   -log( e^{s_ip} / (e^{s_ip} + sum_{j in negatives(i)} e^{s_ij}) ),
/// stabilized with the row max over positive and negative entries jointly.
inline Tensor contrastive_loss(const Tensor& sims, const std::vector<Role>& roles, const char* op) {
    const std::size_t rows = sims.dim(0), cols = sims.dim(1);
    auto s = sims.data();
    std::vector<double> row_max(rows, -std::numeric_limits<double>::infinity());
    std::vector<double> neg_sum(rows, 0.0);
    std::size_t positives = 0;
    for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < cols; ++j) {
            if (roles[i * cols + j] != Role::ignored) row_max[i] = std::max(row_max[i], static_cast<double>(s[i * cols + j]));
            if (roles[i * cols + j] == Role::positive) ++positives;
        }
        for (std::size_t j = 0; j < cols; ++j) {
            if (roles[i * cols + j] == Role::negative) neg_sum[i] += std::exp(s[i * cols + j] - row_max[i]);
        }
    }
    if (positives == 0) throw DegenerateInputError(std::string(op) + ": no positive pairs");
    double total = 0.0;
    for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < cols; ++j) {
            if (roles[i * cols + j] != Role::positive) continue;
            const double shifted = s[i * cols + j] - row_max[i];
            total += std::log(std::exp(shifted) + neg_sum[i]) - shifted;
        }
    }
    const double inv = 1.0 / static_cast<double>(positives);
    return Tensor::make_result(
        {}, {static_cast<float>(total * inv)}, {sims}, op,
        [sims, roles, rows, cols, row_max, neg_sum, inv](const Node& node) mutable {
            auto g = sims.grad_buffer();
            auto s = sims.data();
            const double upstream = node.grad[0] * inv;
            std::vector<double> row(cols);
            for (std::size_t i = 0; i < rows; ++i) {
                std::fill(row.begin(), row.end(), 0.0);
                double neg_weight = 0.0;
                for (std::size_t j = 0; j < cols; ++j) {
                    if (roles[i * cols + j] != Role::positive) continue;
                    const double e = std::exp(s[i * cols + j] - row_max[i]);
                    const double z = e + neg_sum[i];
                    row[j] += e / z - 1.0;
                    neg_weight += 1.0 / z;
                }
                for (std::size_t j = 0; j < cols; ++j) {
                    if (roles[i * cols + j] == Role::negative) row[j] += neg_weight * std::exp(s[i * cols + j] - row_max[i]);
                    g[i * cols + j] += static_cast<float>(upstream * row[j]);
                }
            }
        });
}

}  // namespace detail

/// Optional instrumentation filled in by the losses.
struct NceStats {
    std::size_t positive_scores = 0;
    std::size_t competitors_per_row = 0;
};

/// tau * f_out . compare^T. Both inputs must be row-normalized.
inline Tensor similarity_matrix(const Tensor& f_out, const Tensor& compare, const NceConfig& cfg) {
    cfg.validate();
    detail::require_unit_rows(f_out, "similarity_matrix (anchors)");
    detail::require_unit_rows(compare, "similarity_matrix (compare)");
    if (f_out.dim(1) != compare.dim(1)) {
        throw DimensionError("similarity_matrix: embedding widths differ, " + to_string(f_out.shape()) + " vs " +
                             to_string(compare.shape()));
    }
    return scale(matmul(f_out, transpose(compare)), cfg.temperature);
}

/// Batch NCE: row i's softmax runs over every positive P_j, its own included.
inline Tensor nce_loss(const Tensor& anchors, const Tensor& positives, const NceConfig& cfg) {
    detail::require_rank(anchors, 2, "nce_loss");
    if (anchors.dim(0) < 2) throw DegenerateInputError("nce_loss: need at least 2 rows");
    if (anchors.shape() != positives.shape()) throw DimensionError("nce_loss: anchors and positives differ in shape");
    const std::size_t n = anchors.dim(0);
    const Tensor sims = similarity_matrix(anchors, positives, cfg);
    std::vector<detail::Role> roles(n * n, detail::Role::negative);
    for (std::size_t i = 0; i < n; ++i) roles[i * n + i] = detail::Role::positive;
    return detail::contrastive_loss(sims, roles, "nce_loss");
}

/// NCE with the matched positive against memory-bank negatives only. Bank rows get no gradient.
inline Tensor memory_nce_loss(const Tensor& anchors, const Tensor& positives, const Tensor& bank, const NceConfig& cfg,
                              NceStats* stats = nullptr) {
    detail::require_rank(anchors, 2, "memory_nce_loss");
    if (anchors.dim(0) < 2) throw DegenerateInputError("memory_nce_loss: need at least 2 rows");
    if (anchors.shape() != positives.shape()) throw DimensionError("memory_nce_loss: anchors and positives differ in shape");
    const std::size_t n = anchors.dim(0);
    const std::size_t m = bank.defined() && bank.rank() == 2 ? bank.dim(0) : 0;
    const Tensor compare = m > 0 ? concat_rows(positives, bank.detach()) : positives;
    const Tensor sims = similarity_matrix(anchors, compare, cfg);
    const std::size_t cols = n + m;
    std::vector<detail::Role> roles(n * cols, detail::Role::ignored);
    for (std::size_t i = 0; i < n; ++i) {
        roles[i * cols + i] = detail::Role::positive;
        for (std::size_t j = n; j < cols; ++j) roles[i * cols + j] = detail::Role::negative;
    }
    if (stats) *stats = {n, m};
    return detail::contrastive_loss(sims, roles, "memory_nce_loss");
}

/// Multi-pair NCE over a video-major batch: every masked entry is a positive score whose
/// denominator holds itself plus the row's n+m-k unmasked entries. Gradients reach f_out only.
inline Tensor multi_pair_nce_loss(const Tensor& f_out, const Tensor& g_out, const Tensor& bank, const PairMask& mask,
                                  const NceConfig& cfg, NceStats* stats = nullptr) {
    detail::require_rank(f_out, 2, "multi_pair_nce_loss");
    if (f_out.shape() != g_out.shape()) throw DimensionError("multi_pair_nce_loss: f_out and g_out differ in shape");
    const std::size_t n = f_out.dim(0);
    const std::size_t m = bank.defined() && bank.rank() == 2 ? bank.dim(0) : 0;
    if (mask.rows != n || mask.cols != n + m) {
        throw DimensionError("multi_pair_nce_loss: mask " + std::to_string(mask.rows) + "x" + std::to_string(mask.cols) +
                             " does not match batch " + std::to_string(n) + " with " + std::to_string(m) + " bank rows");
    }
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = n; j < n + m; ++j)
            if (mask(i, j)) throw DimensionError("multi_pair_nce_loss: mask marks a memory-bank column as positive");
    const Tensor compare = m > 0 ? concat_rows(g_out.detach(), bank.detach()) : g_out.detach();
    const Tensor sims = similarity_matrix(f_out, compare, cfg);
    std::vector<detail::Role> roles(mask.bits.size());
    for (std::size_t i = 0; i < roles.size(); ++i) roles[i] = mask.bits[i] ? detail::Role::positive : detail::Role::negative;
    if (stats) {
        stats->positive_scores = mask.count();
        stats->competitors_per_row = n == 0 ? 0 : (n + m) - mask.count() / n;
    }
    return detail::contrastive_loss(sims, roles, "multi_pair_nce_loss");
}

}  // namespace vince
