#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "vince/errors.hpp"

namespace vince {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << ']';
    return os.str();
}

namespace detail {

inline bool& grad_mode() {
    thread_local bool enabled = true;
    return enabled;
}

struct Node;
using NodePtr = std::shared_ptr<Node>;

struct Node {
    Shape shape;
    std::vector<float> data;
    std::vector<float> grad;
    bool grad_ready = false;  // set once a gradient buffer has been allocated
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<NodePtr> parents;
    // Reads this node's grad and accumulates into the parents' grads.
    std::function<void(const Node&)> backward;

    bool is_leaf() const { return parents.empty(); }
    std::span<float> grad_buffer() {
        if (!grad_ready || grad.size() != data.size()) grad.assign(data.size(), 0.0f);
        grad_ready = true;
        return grad;
    }
};

inline void check_finite(std::span<const float> values, const char* what, const char* op) {
    // Branch-free so the scan vectorizes; NaN fails the comparison too.
    int bad = 0;
    for (float v : values) bad |= !(std::fabs(v) <= std::numeric_limits<float>::max());
    if (bad) throw NumericError(std::string("non-finite ") + what + " in " + op);
}

}  // namespace detail

/// Disables graph recording on the current thread while alive.
class NoGradGuard {
public:
    NoGradGuard() : previous_(detail::grad_mode()) { detail::grad_mode() = false; }
    ~NoGradGuard() { detail::grad_mode() = previous_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

inline bool grad_enabled() { return detail::grad_mode(); }

/// Dense row-major float tensor with reverse-mode autodiff.
///
/// A Tensor is a handle: copies share the same storage and graph node. Results of
/// differentiable ops record their inputs while grad mode is on and any input
/// requires grad; backward() on a scalar walks that graph once in reverse
/// topological order.
class Tensor {
public:
    Tensor() = default;

    Tensor(Shape shape, std::vector<float> values, bool requires_grad = false)
        : node_(std::make_shared<detail::Node>()) {
        if (numel(shape) != values.size()) {
            throw DimensionError("tensor shape " + to_string(shape) + " does not match " +
                                 std::to_string(values.size()) + " values");
        }
        node_->shape = std::move(shape);
        node_->data = std::move(values);
        node_->requires_grad = requires_grad;
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        auto n = numel(shape);
        return Tensor(std::move(shape), std::vector<float>(n, 0.0f), requires_grad);
    }
    static Tensor ones(Shape shape, bool requires_grad = false) { return full(std::move(shape), 1.0f, requires_grad); }
    static Tensor full(Shape shape, float value, bool requires_grad = false) {
        auto n = numel(shape);
        return Tensor(std::move(shape), std::vector<float>(n, value), requires_grad);
    }
    static Tensor scalar(float value, bool requires_grad = false) { return Tensor({}, {value}, requires_grad); }

    /// Builds an op result. `backward` is attached only when recording is on and some input
    /// requires grad; it receives the finished result node and must accumulate into inputs.
    static Tensor make_result(Shape shape, std::vector<float> values, const std::vector<Tensor>& inputs,
                              const char* op, std::function<void(const detail::Node&)> backward) {
        detail::check_finite(values, "value", op);
        Tensor out(std::move(shape), std::move(values));
        out.node_->op = op;
        bool needs = false;
        if (grad_enabled()) {
            for (const auto& in : inputs) needs = needs || in.requires_grad();
        }
        if (needs) {
            out.node_->requires_grad = true;
            for (const auto& in : inputs) {
                if (in.requires_grad()) out.node_->parents.push_back(in.node_);
            }
            out.node_->backward = std::move(backward);
        }
        return out;
    }

    bool defined() const { return node_ != nullptr; }
    const void* id() const { return node_.get(); }

    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t dim(std::size_t axis) const {
        if (axis >= rank()) throw DimensionError("axis " + std::to_string(axis) + " out of range for " + to_string(shape()));
        return node_->shape[axis];
    }
    std::size_t size() const { return node_->data.size(); }

    std::span<const float> data() const { return node_->data; }
    /// Direct write access for optimizers and loaders; never use on graph intermediates.
    std::span<float> mutable_data() { return node_->data; }
    const std::vector<float>& values() const { return node_->data; }

    float item() const {
        if (size() != 1) throw DimensionError("item() on tensor of shape " + to_string(shape()));
        return node_->data[0];
    }
    float operator[](std::size_t i) const { return node_->data[i]; }
    float at(std::size_t row, std::size_t col) const {
        if (rank() != 2) throw DimensionError("at(row, col) needs a matrix");
        return node_->data[row * node_->shape[1] + col];
    }

    bool requires_grad() const { return node_ && node_->requires_grad; }
    Tensor& set_requires_grad(bool on) {
        node_->requires_grad = on;
        return *this;
    }

    bool has_grad() const { return node_->grad_ready; }
    std::span<const float> grad() const { return node_->grad; }
    /// Allocates a zeroed gradient buffer on first use.
    std::span<float> grad_buffer() const { return node_->grad_buffer(); }
    void zero_grad() {
        if (has_grad()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0f);
    }

    /// Same values, fresh leaf, no history.
    Tensor detach() const { return Tensor(shape(), node_->data, false); }

    /// Deep copy keeping requires_grad but no history.
    Tensor clone() const { return Tensor(shape(), node_->data, requires_grad()); }

    /// Reverse-mode pass from a scalar. Leaf gradients accumulate across calls;
    /// intermediate gradients are recomputed from zero.
    void backward() const {
        if (size() != 1) throw DimensionError("backward() needs a scalar, got " + to_string(shape()));
        if (!requires_grad()) return;

        std::vector<detail::Node*> order;
        std::unordered_set<detail::Node*> seen;
        std::vector<std::pair<detail::Node*, std::size_t>> stack{{node_.get(), 0}};
        seen.insert(node_.get());
        while (!stack.empty()) {
            auto& [node, next] = stack.back();
            if (next < node->parents.size()) {
                detail::Node* parent = node->parents[next++].get();
                if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
            } else {
                order.push_back(node);
                stack.pop_back();
            }
        }

        for (auto* node : order) {
            if (!node->is_leaf()) {
                node->grad.assign(node->data.size(), 0.0f);
                node->grad_ready = true;
            }
        }
        node_->grad_buffer()[0] += 1.0f;
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            detail::Node* node = *it;
            if (node->backward) node->backward(*node);
        }
        for (auto* node : order) detail::check_finite(node->grad, "gradient", node->op);
    }

    const char* op() const { return node_->op; }

private:
    std::shared_ptr<detail::Node> node_;
};

}  // namespace vince
