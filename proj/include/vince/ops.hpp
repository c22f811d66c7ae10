#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "vince/errors.hpp"
#include "vince/parallel.hpp"
#include "vince/tensor.hpp"

namespace vince {

namespace detail {

using RowMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

inline void require_rank(const Tensor& t, std::size_t rank, const char* op) {
    if (t.rank() != rank) {
        throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                             to_string(t.shape()));
    }
}

inline bool is_scalar_like(const Tensor& t) { return t.size() == 1; }

// Splits `shape` around `axis` into (outer, length, inner) extents.
struct AxisSplit {
    std::size_t outer = 1, length = 1, inner = 1;
};

inline AxisSplit split_axis(const Shape& shape, std::size_t axis) {
    AxisSplit s;
    for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
    s.length = shape[axis];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
    return s;
}

template <typename Forward, typename Derivative>
Tensor unary(const Tensor& x, const char* op, Forward f, Derivative df) {
    std::vector<float> out(x.size());
    auto in = x.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(in[i]);
    return Tensor::make_result(x.shape(), std::move(out), {x}, op, [x, df](const Node& node) mutable {
        auto g = x.grad_buffer();
        auto in = x.data();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += node.grad[i] * df(in[i], node.data[i]);
    });
}

// Equal shapes, or one operand holding a single element.
template <typename Forward, typename DerivA, typename DerivB>
Tensor binary(const Tensor& a, const Tensor& b, const char* op, Forward f, DerivA da, DerivB db) {
    const bool same = a.shape() == b.shape();
    const bool a_scalar = !same && is_scalar_like(a);
    const bool b_scalar = !same && is_scalar_like(b);
    if (!same && !a_scalar && !b_scalar) {
        throw DimensionError(std::string(op) + ": incompatible shapes " + to_string(a.shape()) + " and " +
                             to_string(b.shape()));
    }
    const Shape shape = a_scalar ? b.shape() : a.shape();
    const std::size_t n = numel(shape);
    auto av = a.data();
    auto bv = b.data();
    auto ai = [&](std::size_t i) { return a_scalar ? av[0] : av[i]; };
    auto bi = [&](std::size_t i) { return b_scalar ? bv[0] : bv[i]; };
    std::vector<float> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = f(ai(i), bi(i));
    return Tensor::make_result(shape, std::move(out), {a, b}, op,
                               [a, b, a_scalar, b_scalar, da, db](const Node& node) mutable {
                                   auto av = a.data();
                                   auto bv = b.data();
                                   const std::size_t n = node.data.size();
                                   auto ai = [&](std::size_t i) { return a_scalar ? av[0] : av[i]; };
                                   auto bi = [&](std::size_t i) { return b_scalar ? bv[0] : bv[i]; };
                                   if (a.requires_grad()) {
                                       auto ga = a.grad_buffer();
                                       if (a_scalar) {
                                           double acc = 0.0;
                                           for (std::size_t i = 0; i < n; ++i) acc += node.grad[i] * da(ai(i), bi(i));
                                           ga[0] += static_cast<float>(acc);
                                       } else {
                                           for (std::size_t i = 0; i < n; ++i) ga[i] += node.grad[i] * da(ai(i), bi(i));
                                       }
                                   }
                                   if (b.requires_grad()) {
                                       auto gb = b.grad_buffer();
                                       if (b_scalar) {
                                           double acc = 0.0;
                                           for (std::size_t i = 0; i < n; ++i) acc += node.grad[i] * db(ai(i), bi(i));
                                           gb[0] += static_cast<float>(acc);
                                       } else {
                                           for (std::size_t i = 0; i < n; ++i) gb[i] += node.grad[i] * db(ai(i), bi(i));
                                       }
                                   }
                               });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

inline Tensor add(const Tensor& a, const Tensor& b) {
    return detail::binary(
        a, b, "add", [](float x, float y) { return x + y; }, [](float, float) { return 1.0f; },
        [](float, float) { return 1.0f; });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    return detail::binary(
        a, b, "sub", [](float x, float y) { return x - y; }, [](float, float) { return 1.0f; },
        [](float, float) { return -1.0f; });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    return detail::binary(
        a, b, "mul", [](float x, float y) { return x * y; }, [](float, float y) { return y; },
        [](float x, float) { return x; });
}

inline Tensor scale(const Tensor& t, float factor) {
    return detail::unary(
        t, "scale", [factor](float x) { return x * factor; }, [factor](float, float) { return factor; });
}

inline Tensor exp(const Tensor& t) {
    return detail::unary(
        t, "exp", [](float x) { return std::exp(x); }, [](float, float y) { return y; });
}

inline Tensor log(const Tensor& t) {
    for (float v : t.data()) {
        if (!(v > 0.0f)) throw DomainError("log of non-positive value " + std::to_string(v));
    }
    return detail::unary(
        t, "log", [](float x) { return std::log(x); }, [](float x, float) { return 1.0f / x; });
}

inline Tensor relu(const Tensor& t) {
    return detail::unary(
        t, "relu", [](float x) { return x > 0.0f ? x : 0.0f; }, [](float x, float) { return x > 0.0f ? 1.0f : 0.0f; });
}

inline Tensor leaky_relu(const Tensor& t, float slope) {
    return detail::unary(
        t, "leaky_relu", [slope](float x) { return x > 0.0f ? x : slope * x; },
        [slope](float x, float) { return x > 0.0f ? 1.0f : slope; });
}

// ---------------------------------------------------------------------------
// Shape plumbing

inline Tensor reshape(const Tensor& t, Shape shape) {
    if (numel(shape) != t.size()) {
        throw DimensionError("reshape " + to_string(t.shape()) + " -> " + to_string(shape));
    }
    return Tensor::make_result(std::move(shape), t.values(), {t}, "reshape", [t](const detail::Node& node) mutable {
        auto g = t.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += node.grad[i];
    });
}

inline Tensor transpose(const Tensor& t) {
    detail::require_rank(t, 2, "transpose");
    const std::size_t rows = t.dim(0), cols = t.dim(1);
    std::vector<float> out(t.size());
    auto in = t.data();
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = in[r * cols + c];
    return Tensor::make_result({cols, rows}, std::move(out), {t}, "transpose",
                               [t, rows, cols](const detail::Node& node) mutable {
                                   auto g = t.grad_buffer();
                                   for (std::size_t r = 0; r < rows; ++r)
                                       for (std::size_t c = 0; c < cols; ++c) g[r * cols + c] += node.grad[c * rows + r];
                               });
}

/// Stacks along axis 0; trailing dimensions must agree.
inline Tensor concat_rows(const Tensor& top, const Tensor& bottom) {
    if (top.rank() == 0 || top.rank() != bottom.rank() ||
        !std::equal(top.shape().begin() + 1, top.shape().end(), bottom.shape().begin() + 1)) {
        throw DimensionError("concat_rows: " + to_string(top.shape()) + " vs " + to_string(bottom.shape()));
    }
    Shape shape = top.shape();
    shape[0] += bottom.dim(0);
    std::vector<float> out;
    out.reserve(top.size() + bottom.size());
    out.insert(out.end(), top.data().begin(), top.data().end());
    out.insert(out.end(), bottom.data().begin(), bottom.data().end());
    const std::size_t split = top.size();
    return Tensor::make_result(std::move(shape), std::move(out), {top, bottom}, "concat_rows",
                               [top, bottom, split](const detail::Node& node) mutable {
                                   if (top.requires_grad()) {
                                       auto g = top.grad_buffer();
                                       for (std::size_t i = 0; i < g.size(); ++i) g[i] += node.grad[i];
                                   }
                                   if (bottom.requires_grad()) {
                                       auto g = bottom.grad_buffer();
                                       for (std::size_t i = 0; i < g.size(); ++i) g[i] += node.grad[split + i];
                                   }
                               });
}

// ---------------------------------------------------------------------------
// Linear algebra

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    detail::require_rank(a, 2, "matmul");
    detail::require_rank(b, 2, "matmul");
    const std::size_t p = a.dim(0), q = a.dim(1), r = b.dim(1);
    if (b.dim(0) != q) {
        throw DimensionError("matmul: inner dimensions differ, " + to_string(a.shape()) + " x " + to_string(b.shape()));
    }
    std::vector<float> out(p * r);
    {
        detail::ConstMatMap am(a.data().data(), p, q), bm(b.data().data(), q, r);
        detail::MatMap(out.data(), p, r).noalias() = am * bm;
    }
    return Tensor::make_result({p, r}, std::move(out), {a, b}, "matmul",
                               [a, b, p, q, r](const detail::Node& node) mutable {
                                   detail::ConstMatMap dc(node.grad.data(), p, r);
                                   if (a.requires_grad()) {
                                       detail::ConstMatMap bm(b.data().data(), q, r);
                                       detail::MatMap(a.grad_buffer().data(), p, q).noalias() += dc * bm.transpose();
                                   }
                                   if (b.requires_grad()) {
                                       detail::ConstMatMap am(a.data().data(), p, q);
                                       detail::MatMap(b.grad_buffer().data(), q, r).noalias() += am.transpose() * dc;
                                   }
                               });
}

/// Adds bias[c] to every element whose axis-1 index is c (matrix columns, image channels).
inline Tensor bias_add(const Tensor& t, const Tensor& bias) {
    if (t.rank() < 2 || bias.rank() != 1 || bias.dim(0) != t.dim(1)) {
        throw DimensionError("bias_add: " + to_string(t.shape()) + " with bias " + to_string(bias.shape()));
    }
    const auto split = detail::split_axis(t.shape(), 1);
    std::vector<float> out(t.values());
    auto bv = bias.data();
    for (std::size_t o = 0; o < split.outer; ++o)
        for (std::size_t c = 0; c < split.length; ++c) {
            float* row = out.data() + (o * split.length + c) * split.inner;
            for (std::size_t i = 0; i < split.inner; ++i) row[i] += bv[c];
        }
    return Tensor::make_result(t.shape(), std::move(out), {t, bias}, "bias_add",
                               [t, bias, split](const detail::Node& node) mutable {
                                   if (t.requires_grad()) {
                                       auto g = t.grad_buffer();
                                       for (std::size_t i = 0; i < g.size(); ++i) g[i] += node.grad[i];
                                   }
                                   if (bias.requires_grad()) {
                                       auto g = bias.grad_buffer();
                                       for (std::size_t c = 0; c < split.length; ++c) {
                                           double acc = 0.0;
                                           for (std::size_t o = 0; o < split.outer; ++o) {
                                               const float* row = node.grad.data() + (o * split.length + c) * split.inner;
                                               for (std::size_t i = 0; i < split.inner; ++i) acc += row[i];
                                           }
                                           g[c] += static_cast<float>(acc);
                                       }
                                   }
                               });
}

// ---------------------------------------------------------------------------
// Reductions (64-bit accumulation)

enum class Reduce { sum, mean, max };

inline Tensor reduce(Reduce kind, const Tensor& t, std::size_t axis) {
    if (axis >= t.rank()) {
        throw DimensionError("reduce: axis " + std::to_string(axis) + " invalid for " + to_string(t.shape()));
    }
    const auto split = detail::split_axis(t.shape(), axis);
    Shape shape = t.shape();
    shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
    std::vector<float> out(split.outer * split.inner);
    std::vector<std::size_t> argmax;
    if (kind == Reduce::max) argmax.resize(out.size());
    auto in = t.data();
    for (std::size_t o = 0; o < split.outer; ++o) {
        for (std::size_t i = 0; i < split.inner; ++i) {
            const std::size_t base = o * split.length * split.inner + i;
            const std::size_t slot = o * split.inner + i;
            if (kind == Reduce::max) {
                std::size_t best = base;
                for (std::size_t l = 1; l < split.length; ++l) {
                    const std::size_t idx = base + l * split.inner;
                    if (in[idx] > in[best]) best = idx;
                }
                argmax[slot] = best;
                out[slot] = in[best];
            } else {
                double acc = 0.0;
                for (std::size_t l = 0; l < split.length; ++l) acc += in[base + l * split.inner];
                if (kind == Reduce::mean) acc /= static_cast<double>(split.length);
                out[slot] = static_cast<float>(acc);
            }
        }
    }
    static constexpr const char* names[] = {"reduce_sum", "reduce_mean", "reduce_max"};
    return Tensor::make_result(
        std::move(shape), std::move(out), {t}, names[static_cast<int>(kind)],
        [t, kind, split, argmax = std::move(argmax)](const detail::Node& node) mutable {
            auto g = t.grad_buffer();
            const float w = kind == Reduce::mean ? 1.0f / static_cast<float>(split.length) : 1.0f;
            for (std::size_t o = 0; o < split.outer; ++o) {
                for (std::size_t i = 0; i < split.inner; ++i) {
                    const std::size_t slot = o * split.inner + i;
                    if (kind == Reduce::max) {
                        g[argmax[slot]] += node.grad[slot];
                        continue;
                    }
                    const std::size_t base = o * split.length * split.inner + i;
                    for (std::size_t l = 0; l < split.length; ++l) g[base + l * split.inner] += node.grad[slot] * w;
                }
            }
        });
}

inline Tensor sum(const Tensor& t, std::size_t axis) { return reduce(Reduce::sum, t, axis); }
inline Tensor mean(const Tensor& t, std::size_t axis) { return reduce(Reduce::mean, t, axis); }
inline Tensor max(const Tensor& t, std::size_t axis) { return reduce(Reduce::max, t, axis); }
inline Tensor sum_all(const Tensor& t) { return sum(reshape(t, {t.size()}), 0); }
inline Tensor mean_all(const Tensor& t) { return mean(reshape(t, {t.size()}), 0); }

// ---------------------------------------------------------------------------
// Normalization

/// Divides each row by its L2 norm. Rows with norm below `eps` are rejected.
inline Tensor l2_normalize_rows(const Tensor& t, float eps = 1e-8f) {
    detail::require_rank(t, 2, "l2_normalize_rows");
    const std::size_t n = t.dim(0), d = t.dim(1);
    if (n == 0 || d == 0) throw DimensionError("l2_normalize_rows: empty input " + to_string(t.shape()));
    std::vector<float> out(t.size());
    std::vector<float> norms(n);
    auto in = t.data();
    for (std::size_t r = 0; r < n; ++r) {
        double acc = 0.0;
        for (std::size_t c = 0; c < d; ++c) acc += static_cast<double>(in[r * d + c]) * in[r * d + c];
        const double norm = std::sqrt(acc);
        if (norm < eps) throw DegenerateInputError("l2_normalize_rows: row " + std::to_string(r) + " has near-zero norm");
        norms[r] = static_cast<float>(norm);
        for (std::size_t c = 0; c < d; ++c) out[r * d + c] = static_cast<float>(in[r * d + c] / norm);
    }
    return Tensor::make_result(t.shape(), std::move(out), {t}, "l2_normalize_rows",
                               [t, n, d, norms = std::move(norms)](const detail::Node& node) mutable {
                                   auto g = t.grad_buffer();
                                   for (std::size_t r = 0; r < n; ++r) {
                                       const float* y = node.data.data() + r * d;
                                       const float* dy = node.grad.data() + r * d;
                                       double dot = 0.0;
                                       for (std::size_t c = 0; c < d; ++c) dot += static_cast<double>(y[c]) * dy[c];
                                       for (std::size_t c = 0; c < d; ++c) {
                                           g[r * d + c] += static_cast<float>((dy[c] - y[c] * dot) / norms[r]);
                                       }
                                   }
                               });
}

// ---------------------------------------------------------------------------
// Convolution

struct Conv2dGeometry {
    std::size_t batch, channels, height, width;
    std::size_t out_channels, kernel_h, kernel_w;
    std::size_t stride, padding;
    std::size_t out_h, out_w;

    std::size_t patch() const { return channels * kernel_h * kernel_w; }
    std::size_t positions() const { return out_h * out_w; }
};

namespace detail {

inline void im2col(const float* image, const Conv2dGeometry& g, float* cols) {
    const std::size_t positions = g.positions();
    for (std::size_t c = 0; c < g.channels; ++c)
        for (std::size_t ky = 0; ky < g.kernel_h; ++ky)
            for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
                float* row = cols + ((c * g.kernel_h + ky) * g.kernel_w + kx) * positions;
                const float* plane = image + c * g.height * g.width;
                for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                    const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.padding);
                    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                        const auto ix =
                            static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.padding);
                        const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(g.height) &&
                                            ix < static_cast<std::ptrdiff_t>(g.width);
                        row[oy * g.out_w + ox] = inside ? plane[iy * static_cast<std::ptrdiff_t>(g.width) + ix] : 0.0f;
                    }
                }
            }
}

inline void col2im_add(const float* cols, const Conv2dGeometry& g, float* image) {
    const std::size_t positions = g.positions();
    for (std::size_t c = 0; c < g.channels; ++c)
        for (std::size_t ky = 0; ky < g.kernel_h; ++ky)
            for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
                const float* row = cols + ((c * g.kernel_h + ky) * g.kernel_w + kx) * positions;
                float* plane = image + c * g.height * g.width;
                for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                    const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.padding);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) continue;
                    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                        const auto ix =
                            static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.padding);
                        if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.width)) continue;
                        plane[iy * static_cast<std::ptrdiff_t>(g.width) + ix] += row[oy * g.out_w + ox];
                    }
                }
            }
}

}  // namespace detail

inline Conv2dGeometry conv2d_geometry(const Shape& input, const Shape& kernel, std::size_t stride, std::size_t padding) {
    if (input.size() != 4 || kernel.size() != 4) {
        throw DimensionError("conv2d: input " + to_string(input) + " and kernel " + to_string(kernel) + " must be rank 4");
    }
    if (input[1] != kernel[1]) {
        throw DimensionError("conv2d: input has " + std::to_string(input[1]) + " channels, kernel expects " +
                             std::to_string(kernel[1]));
    }
    if (stride == 0) throw DimensionError("conv2d: stride must be positive");
    Conv2dGeometry g{input[0], input[1], input[2], input[3], kernel[0], kernel[2], kernel[3], stride, padding, 0, 0};
    if (g.height + 2 * padding < g.kernel_h || g.width + 2 * padding < g.kernel_w) {
        throw DimensionError("conv2d: padded input " + to_string(input) + " smaller than kernel " + to_string(kernel));
    }
    g.out_h = (g.height + 2 * padding - g.kernel_h) / stride + 1;
    g.out_w = (g.width + 2 * padding - g.kernel_w) / stride + 1;
    return g;
}

/// Cross-correlation of an NCHW batch with an OCkhkw kernel.
inline Tensor conv2d(const Tensor& input, const Tensor& kernel, std::size_t stride = 1, std::size_t padding = 0) {
    const Conv2dGeometry g = conv2d_geometry(input.shape(), kernel.shape(), stride, padding);
    const std::size_t in_stride = g.channels * g.height * g.width;
    const std::size_t out_stride = g.out_channels * g.positions();
    std::vector<float> out(g.batch * out_stride);
    parallel_for(g.batch, [&](std::size_t n) {
        std::vector<float> cols(g.patch() * g.positions());
        detail::im2col(input.data().data() + n * in_stride, g, cols.data());
        detail::ConstMatMap w(kernel.data().data(), g.out_channels, g.patch());
        detail::ConstMatMap c(cols.data(), g.patch(), g.positions());
        detail::MatMap(out.data() + n * out_stride, g.out_channels, g.positions()).noalias() = w * c;
    });
    return Tensor::make_result(
        {g.batch, g.out_channels, g.out_h, g.out_w}, std::move(out), {input, kernel}, "conv2d",
        [input, kernel, g, in_stride, out_stride](const detail::Node& node) mutable {
            const bool want_input = input.requires_grad();
            const bool want_kernel = kernel.requires_grad();
            std::span<float> input_grad = want_input ? input.grad_buffer() : std::span<float>{};
            std::vector<float> kernel_parts(want_kernel ? g.batch * kernel.size() : 0);
            parallel_for(g.batch, [&](std::size_t n) {
                std::vector<float> cols(g.patch() * g.positions());
                detail::ConstMatMap dy(node.grad.data() + n * out_stride, g.out_channels, g.positions());
                if (want_kernel) {
                    detail::im2col(input.data().data() + n * in_stride, g, cols.data());
                    detail::ConstMatMap c(cols.data(), g.patch(), g.positions());
                    detail::MatMap(kernel_parts.data() + n * kernel.size(), g.out_channels, g.patch()).noalias() =
                        dy * c.transpose();
                }
                if (want_input) {
                    detail::ConstMatMap w(kernel.data().data(), g.out_channels, g.patch());
                    detail::MatMap(cols.data(), g.patch(), g.positions()).noalias() = w.transpose() * dy;
                    detail::col2im_add(cols.data(), g, input_grad.data() + n * in_stride);
                }
            });
            if (want_kernel) {
                auto kg = kernel.grad_buffer();
                for (std::size_t n = 0; n < g.batch; ++n) {
                    const float* part = kernel_parts.data() + n * kernel.size();
                    for (std::size_t i = 0; i < kg.size(); ++i) kg[i] += part[i];
                }
            }
        });
}

/// leaky_relu(conv2d(input, kernel) + bias) as one node. Same values and gradients as the
/// three-op composition, without materializing the intermediates.
inline Tensor conv2d_bias_leaky(const Tensor& input, const Tensor& kernel, const Tensor& bias, std::size_t stride,
                                std::size_t padding, float slope) {
    const Conv2dGeometry g = conv2d_geometry(input.shape(), kernel.shape(), stride, padding);
    if (bias.rank() != 1 || bias.dim(0) != g.out_channels) {
        throw DimensionError("conv2d_bias_leaky: bias " + to_string(bias.shape()) + " for " +
                             std::to_string(g.out_channels) + " output channels");
    }
    if (!(slope > 0.0f)) throw DomainError("conv2d_bias_leaky: slope must be positive");
    const std::size_t in_stride = g.channels * g.height * g.width;
    const std::size_t out_stride = g.out_channels * g.positions();
    std::vector<float> out(g.batch * out_stride);
    parallel_for(g.batch, [&](std::size_t n) {
        std::vector<float> cols(g.patch() * g.positions());
        detail::im2col(input.data().data() + n * in_stride, g, cols.data());
        detail::ConstMatMap w(kernel.data().data(), g.out_channels, g.patch());
        detail::ConstMatMap c(cols.data(), g.patch(), g.positions());
        float* y = out.data() + n * out_stride;
        detail::MatMap(y, g.out_channels, g.positions()).noalias() = w * c;
        auto b = bias.data();
        for (std::size_t o = 0; o < g.out_channels; ++o) {
            float* row = y + o * g.positions();
            for (std::size_t i = 0; i < g.positions(); ++i) {
                const float z = row[i] + b[o];
                row[i] = z > 0.0f ? z : slope * z;
            }
        }
    });
    return Tensor::make_result(
        {g.batch, g.out_channels, g.out_h, g.out_w}, std::move(out), {input, kernel, bias}, "conv2d_bias_leaky",
        [input, kernel, bias, g, in_stride, out_stride, slope](const detail::Node& node) mutable {
            const bool want_input = input.requires_grad();
            const bool want_kernel = kernel.requires_grad();
            const bool want_bias = bias.requires_grad();
            std::span<float> input_grad = want_input ? input.grad_buffer() : std::span<float>{};
            std::vector<float> kernel_parts(want_kernel ? g.batch * kernel.size() : 0);
            std::vector<double> bias_parts(want_bias ? g.batch * g.out_channels : 0);
            parallel_for(g.batch, [&](std::size_t n) {
                // Leaky slope is positive, so the output sign equals the pre-activation sign.
                std::vector<float> dz(out_stride);
                const float* y = node.data.data() + n * out_stride;
                const float* dy = node.grad.data() + n * out_stride;
                for (std::size_t i = 0; i < out_stride; ++i) dz[i] = y[i] > 0.0f ? dy[i] : slope * dy[i];
                if (want_bias) {
                    for (std::size_t o = 0; o < g.out_channels; ++o) {
                        double acc = 0.0;
                        for (std::size_t i = 0; i < g.positions(); ++i) acc += dz[o * g.positions() + i];
                        bias_parts[n * g.out_channels + o] = acc;
                    }
                }
                detail::ConstMatMap dzm(dz.data(), g.out_channels, g.positions());
                std::vector<float> cols(g.patch() * g.positions());
                if (want_kernel) {
                    detail::im2col(input.data().data() + n * in_stride, g, cols.data());
                    detail::ConstMatMap c(cols.data(), g.patch(), g.positions());
                    detail::MatMap(kernel_parts.data() + n * kernel.size(), g.out_channels, g.patch()).noalias() =
                        dzm * c.transpose();
                }
                if (want_input) {
                    detail::ConstMatMap w(kernel.data().data(), g.out_channels, g.patch());
                    detail::MatMap(cols.data(), g.patch(), g.positions()).noalias() = w.transpose() * dzm;
                    detail::col2im_add(cols.data(), g, input_grad.data() + n * in_stride);
                }
            });
            if (want_kernel) {
                auto kg = kernel.grad_buffer();
                for (std::size_t n = 0; n < g.batch; ++n) {
                    const float* part = kernel_parts.data() + n * kernel.size();
                    for (std::size_t i = 0; i < kg.size(); ++i) kg[i] += part[i];
                }
            }
            if (want_bias) {
                auto bg = bias.grad_buffer();
                for (std::size_t o = 0; o < g.out_channels; ++o) {
                    double acc = 0.0;
                    for (std::size_t n = 0; n < g.batch; ++n) acc += bias_parts[n * g.out_channels + o];
                    bg[o] += static_cast<float>(acc);
                }
            }
        });
}

/// NCHW -> NC by averaging over the spatial positions.
inline Tensor global_avg_pool(const Tensor& t) {
    detail::require_rank(t, 4, "global_avg_pool");
    return mean(reshape(t, {t.dim(0), t.dim(1), t.dim(2) * t.dim(3)}), 2);
}

/// Mean softmax cross-entropy of n x C logits against integer class labels.
inline Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<std::size_t>& labels) {
    detail::require_rank(logits, 2, "softmax_cross_entropy");
    const std::size_t n = logits.dim(0), c = logits.dim(1);
    if (labels.size() != n) throw DimensionError("softmax_cross_entropy: label count does not match rows");
    if (n == 0 || c == 0) throw DimensionError("softmax_cross_entropy: empty logits");
    auto z = logits.data();
    std::vector<float> probs(n * c);
    double total = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
        if (labels[r] >= c) throw DomainError("softmax_cross_entropy: label out of range");
        const float* row = z.data() + r * c;
        const float top = *std::max_element(row, row + c);
        double denom = 0.0;
        for (std::size_t j = 0; j < c; ++j) denom += std::exp(static_cast<double>(row[j]) - top);
        for (std::size_t j = 0; j < c; ++j) probs[r * c + j] = static_cast<float>(std::exp(static_cast<double>(row[j]) - top) / denom);
        total += std::log(denom) + top - row[labels[r]];
    }
    return Tensor::make_result({}, {static_cast<float>(total / static_cast<double>(n))}, {logits}, "softmax_cross_entropy",
                               [logits, labels, probs = std::move(probs), n, c](const detail::Node& node) {
                                   auto g = logits.grad_buffer();
                                   const float w = node.grad[0] / static_cast<float>(n);
                                   for (std::size_t r = 0; r < n; ++r) {
                                       for (std::size_t j = 0; j < c; ++j) {
                                           g[r * c + j] += w * (probs[r * c + j] - (j == labels[r] ? 1.0f : 0.0f));
                                       }
                                   }
                               });
}

}  // namespace vince
