#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <unordered_set>
#include <vector>

#include "vince/encoder.hpp"
#include "vince/errors.hpp"
#include "vince/tensor.hpp"

namespace vince {

/// Primary encoder f (trained by gradient) and momentum twin g (trained only by the momentum rule).
struct MocoState {
    EncoderParams f;
    EncoderParams g;
    float alpha = 0.999f;
};

/// g starts as an exact, gradient-free copy of f.
inline MocoState make_moco_state(EncoderParams f, float alpha) {
    if (!(alpha >= 0.0f && alpha <= 1.0f)) throw PreconditionError("moco: alpha must lie in [0, 1]");
    EncoderParams g = f.clone();
    for (auto& e : g.entries) e.value.set_requires_grad(false);
    return MocoState{std::move(f), std::move(g), alpha};
}

/// g <- alpha * g + (1 - alpha) * f, element-wise; f is untouched.
inline void momentum_update(MocoState& state) {
    if (state.f.entries.size() != state.g.entries.size()) throw DimensionError("moco: f and g layouts differ");
    const float a = state.alpha;
    for (std::size_t p = 0; p < state.f.entries.size(); ++p) {
        auto fv = state.f.entries[p].value.data();
        auto gv = state.g.entries[p].value.mutable_data();
        if (fv.size() != gv.size()) throw DimensionError("moco: parameter " + state.f.entries[p].name + " differs in size");
        for (std::size_t i = 0; i < gv.size(); ++i) gv[i] = a * gv[i] + (1.0f - a) * fv[i];
    }
}

/// FIFO ring of unit-norm embeddings, each tagged with the video it came from.
class MemoryBank {
public:
    MemoryBank() = default;
    MemoryBank(std::size_t capacity, std::size_t dim)
        : capacity_(capacity), dim_(dim), rows_(capacity * dim, 0.0f), tags_(capacity, -1) {}

    std::size_t capacity() const { return capacity_; }
    std::size_t dim() const { return dim_; }
    std::size_t filled() const { return filled_; }
    std::size_t cursor() const { return cursor_; }
    std::uint64_t total_enqueued() const { return total_; }

    /// Writes rows at the cursor, overwriting the oldest entries once full.
    void enqueue(const Tensor& rows, const std::vector<std::int64_t>& video_ids = {}) {
        if (rows.rank() != 2 || rows.dim(1) != dim_) {
            throw DimensionError("memory bank: rows " + to_string(rows.shape()) + " do not match width " + std::to_string(dim_));
        }
        const std::size_t b = rows.dim(0);
        if (b > capacity_) {
            throw CapacityError("memory bank: cannot enqueue " + std::to_string(b) + " rows into capacity " +
                                std::to_string(capacity_));
        }
        if (!video_ids.empty() && video_ids.size() != b) throw DimensionError("memory bank: one video id per row required");
        auto v = rows.data();
        for (std::size_t r = 0; r < b; ++r) {
            double norm = 0.0;
            for (std::size_t c = 0; c < dim_; ++c) norm += static_cast<double>(v[r * dim_ + c]) * v[r * dim_ + c];
            if (std::abs(std::sqrt(norm) - 1.0) > 1e-4) throw PreconditionError("memory bank: enqueued rows must be unit-norm");
        }
        for (std::size_t r = 0; r < b; ++r) {
            std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(r * dim_), dim_, rows_.begin() + static_cast<std::ptrdiff_t>(cursor_ * dim_));
            tags_[cursor_] = video_ids.empty() ? -1 : video_ids[r];
            cursor_ = (cursor_ + 1) % capacity_;
        }
        filled_ = std::min(capacity_, filled_ + b);
        total_ += b;
    }

    /// Detached copy of the filled rows, oldest first.
    Tensor negatives_view() const { return gather([](std::int64_t) { return true; }); }

    /// As negatives_view, dropping rows tagged with any of `videos`.
    Tensor negatives_excluding(const std::unordered_set<std::int64_t>& videos) const {
        return gather([&](std::int64_t tag) { return !videos.contains(tag); });
    }

    /// Video tags of the filled rows, oldest first.
    std::vector<std::int64_t> tags_in_age_order() const {
        std::vector<std::int64_t> out;
        for (std::size_t i = 0; i < filled_; ++i) out.push_back(tags_[slot(i)]);
        return out;
    }

    // Raw state for checkpointing.
    const std::vector<float>& raw_rows() const { return rows_; }
    const std::vector<std::int64_t>& raw_tags() const { return tags_; }
    void restore(std::vector<float> rows, std::vector<std::int64_t> tags, std::size_t cursor, std::size_t filled,
                 std::uint64_t total) {
        if (rows.size() != capacity_ * dim_ || tags.size() != capacity_ || (capacity_ > 0 && cursor >= capacity_) ||
            filled > capacity_) {
            throw FormatError("memory bank: inconsistent restored state");
        }
        rows_ = std::move(rows);
        tags_ = std::move(tags);
        cursor_ = cursor;
        filled_ = filled;
        total_ = total;
    }

private:
    // Storage slot of the i-th oldest filled row.
    std::size_t slot(std::size_t i) const {
        const std::size_t oldest = filled_ < capacity_ ? 0 : cursor_;
        return (oldest + i) % capacity_;
    }

    template <typename Keep>
    Tensor gather(Keep keep) const {
        std::vector<float> out;
        std::size_t count = 0;
        for (std::size_t i = 0; i < filled_; ++i) {
            const std::size_t s = slot(i);
            if (!keep(tags_[s])) continue;
            out.insert(out.end(), rows_.begin() + static_cast<std::ptrdiff_t>(s * dim_),
                       rows_.begin() + static_cast<std::ptrdiff_t>((s + 1) * dim_));
            ++count;
        }
        return Tensor({count, dim_}, std::move(out));
    }

    std::size_t capacity_ = 0;
    std::size_t dim_ = 0;
    std::vector<float> rows_;
    std::vector<std::int64_t> tags_;
    std::size_t cursor_ = 0;
    std::size_t filled_ = 0;
    std::uint64_t total_ = 0;
};

}  // namespace vince
