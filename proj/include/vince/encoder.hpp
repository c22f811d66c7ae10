#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "vince/errors.hpp"
#include "vince/ops.hpp"
#include "vince/rng.hpp"
#include "vince/tensor.hpp"

namespace vince {

struct ConvBlockSpec {
    std::size_t out_channels = 16;
    std::size_t kernel = 3;
    std::size_t stride = 2;

    bool operator==(const ConvBlockSpec&) const = default;
};

struct EncoderConfig {
    std::size_t input_channels = 3;
    std::size_t input_size = 64;
    std::vector<ConvBlockSpec> trunk{{16, 3, 2}, {32, 3, 2}, {64, 3, 2}};
    std::size_t hidden_dim = 128;
    std::size_t embed_dim = 32;
    float leaky_slope = 0.01f;

    bool operator==(const EncoderConfig&) const = default;

    /// Spatial side length of the trunk output for a square input of `size` pixels.
    std::size_t trunk_output_size(std::size_t size) const {
        for (const auto& block : trunk) {
            const std::size_t pad = block.kernel / 2;
            if (size + 2 * pad < block.kernel) return 0;
            size = (size + 2 * pad - block.kernel) / block.stride + 1;
        }
        return size;
    }

    std::size_t total_stride() const {
        std::size_t s = 1;
        for (const auto& block : trunk) s *= block.stride;
        return s;
    }

    std::size_t feature_channels() const { return trunk.empty() ? input_channels : trunk.back().out_channels; }

    void validate() const {
        if (embed_dim < 2) throw PreconditionError("encoder: embed_dim must be >= 2");
        if (input_channels == 0 || hidden_dim == 0) throw PreconditionError("encoder: zero-sized layer");
        for (const auto& block : trunk) {
            if (block.out_channels == 0 || block.kernel == 0 || block.stride == 0) {
                throw PreconditionError("encoder: zero-sized conv block");
            }
        }
        if (trunk_output_size(input_size) < 1) throw PreconditionError("encoder: trunk collapses the input below 1x1");
    }
};

struct NamedParam {
    std::string name;
    Tensor value;
};

/// Flat, ordered parameter list. Names and shapes depend only on the config.
struct EncoderParams {
    EncoderConfig config;
    std::vector<NamedParam> entries;

    const Tensor& get(const std::string& name) const {
        for (const auto& e : entries) {
            if (e.name == name) return e.value;
        }
        throw PreconditionError("encoder: no parameter named " + name);
    }

    std::size_t count() const {
        std::size_t n = 0;
        for (const auto& e : entries) n += e.value.size();
        return n;
    }

    /// Deep copy: fresh storage, same requires_grad flags.
    EncoderParams clone() const {
        EncoderParams out{config, {}};
        for (const auto& e : entries) out.entries.push_back({e.name, e.value.clone()});
        return out;
    }
};

/// FNV-1a over names, shapes and raw float bytes.
inline std::uint64_t hash_params(const EncoderParams& params) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto feed = [&](const void* bytes, std::size_t len) {
        const auto* p = static_cast<const unsigned char*>(bytes);
        for (std::size_t i = 0; i < len; ++i) {
            h ^= p[i];
            h *= 0x100000001b3ULL;
        }
    };
    for (const auto& e : params.entries) {
        feed(e.name.data(), e.name.size());
        for (auto d : e.value.shape()) feed(&d, sizeof d);
        feed(e.value.data().data(), e.value.size() * sizeof(float));
    }
    return h;
}

/// Fan-in scaled uniform weights (bound sqrt(1/fan_in)), zero biases.
inline EncoderParams init_params(const EncoderConfig& config, std::uint64_t seed) {
    config.validate();
    Rng rng = Rng(seed).split("encoder-init");
    EncoderParams params{config, {}};
    auto uniform_tensor = [&](Shape shape, std::size_t fan_in) {
        const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
        std::vector<float> values(numel(shape));
        for (auto& v : values) v = static_cast<float>(rng.uniform(-bound, bound));
        return Tensor(std::move(shape), std::move(values), true);
    };
    std::size_t channels = config.input_channels;
    for (std::size_t i = 0; i < config.trunk.size(); ++i) {
        const auto& b = config.trunk[i];
        const std::string prefix = "trunk." + std::to_string(i);
        params.entries.push_back({prefix + ".weight", uniform_tensor({b.out_channels, channels, b.kernel, b.kernel},
                                                                     channels * b.kernel * b.kernel)});
        params.entries.push_back({prefix + ".bias", Tensor::zeros({b.out_channels}, true)});
        channels = b.out_channels;
    }
    params.entries.push_back({"head.fc1.weight", uniform_tensor({channels, config.hidden_dim}, channels)});
    params.entries.push_back({"head.fc1.bias", Tensor::zeros({config.hidden_dim}, true)});
    params.entries.push_back({"head.fc2.weight", uniform_tensor({config.hidden_dim, config.embed_dim}, config.hidden_dim)});
    params.entries.push_back({"head.fc2.bias", Tensor::zeros({config.embed_dim}, true)});
    return params;
}

namespace detail {
inline void check_images(const EncoderConfig& config, const Tensor& images, bool fixed_size) {
    if (images.rank() != 4 || images.dim(1) != config.input_channels ||
        (fixed_size && (images.dim(2) != config.input_size || images.dim(3) != config.input_size))) {
        throw DimensionError("encoder: images " + to_string(images.shape()) + " do not match config");
    }
}
}  // namespace detail

/// Trunk output before pooling. Accepts any spatial size the trunk can reduce to >= 1x1,
/// so tracking can run the trunk on template and search crops of different sizes.
inline Tensor spatial_features(const EncoderParams& params, const Tensor& images) {
    const auto& config = params.config;
    detail::check_images(config, images, false);
    Tensor x = images;
    for (std::size_t i = 0; i < config.trunk.size(); ++i) {
        const auto& block = config.trunk[i];
        const auto& weight = params.entries[2 * i].value;
        const auto& bias = params.entries[2 * i + 1].value;
        x = conv2d_bias_leaky(x, weight, bias, block.stride, block.kernel / 2, config.leaky_slope);
    }
    return x;
}

/// Projection head: FC -> LeakyReLU -> FC on pooled features.
inline Tensor project(const EncoderParams& params, const Tensor& pooled) {
    const std::size_t base = 2 * params.config.trunk.size();
    Tensor h = bias_add(matmul(pooled, params.entries[base].value), params.entries[base + 1].value);
    h = leaky_relu(h, params.config.leaky_slope);
    return bias_add(matmul(h, params.entries[base + 2].value), params.entries[base + 3].value);
}

/// Raw (un-normalized) n x d embeddings.
inline Tensor encode(const EncoderParams& params, const Tensor& images) {
    detail::check_images(params.config, images, true);
    return project(params, global_avg_pool(spatial_features(params, images)));
}

}  // namespace vince
