#include <gtest/gtest.h>

#include "oracles.hpp"
#include "vince/encoder.hpp"
#include "vince/nce.hpp"

using namespace vince;
using oracle::Vec;

namespace {

EncoderConfig tiny_config() {
    EncoderConfig c;
    c.input_size = 16;
    c.trunk = {{4, 3, 2}, {6, 3, 2}};
    c.hidden_dim = 12;
    c.embed_dim = 5;
    return c;
}

std::vector<Vec> param_values(const EncoderParams& p) {
    std::vector<Vec> out;
    for (const auto& e : p.entries) out.push_back(oracle::to_double(e.value));
    return out;
}

}  // namespace

TEST(Encoder, InitIsDeterministicAndBounded) {
    const EncoderConfig cfg;
    const auto a = init_params(cfg, 42);
    const auto b = init_params(cfg, 42);
    const auto c = init_params(cfg, 43);
    ASSERT_EQ(a.entries.size(), b.entries.size());
    for (std::size_t i = 0; i < a.entries.size(); ++i) {
        EXPECT_EQ(a.entries[i].name, b.entries[i].name);
        EXPECT_EQ(a.entries[i].value.values(), b.entries[i].value.values());
    }
    EXPECT_NE(hash_params(a), hash_params(c));

    // fan-in 100: a 1x1 conv over 100 channels.
    EncoderConfig wide;
    wide.input_channels = 100;
    wide.trunk = {{8, 1, 1}};
    const auto p = init_params(wide, 3);
    const auto& w = p.get("trunk.0.weight");
    for (float v : w.data()) EXPECT_LE(std::abs(v), 0.1f);
    for (float v : p.get("trunk.0.bias").data()) EXPECT_EQ(v, 0.0f);
}

TEST(Encoder, NamesAndShapesDependOnlyOnConfig) {
    const auto a = init_params(EncoderConfig{}, 1);
    const auto b = init_params(EncoderConfig{}, 999);
    for (std::size_t i = 0; i < a.entries.size(); ++i) {
        EXPECT_EQ(a.entries[i].name, b.entries[i].name);
        EXPECT_EQ(a.entries[i].value.shape(), b.entries[i].value.shape());
    }
    EXPECT_EQ(a.get("head.fc2.weight").shape(), (Shape{128, 32}));
}

TEST(Encoder, ShapeContractsAndErrors) {
    const EncoderConfig cfg;
    const auto p = init_params(cfg, 1);
    Rng rng(2);
    const Tensor images = oracle::random_tensor({3, 3, 64, 64}, rng, -1, 1, false);
    EXPECT_EQ(encode(p, images).shape(), (Shape{3, 32}));
    const Tensor feats = spatial_features(p, images);
    EXPECT_EQ(feats.shape(), (Shape{3, 64, 8, 8}));
    EXPECT_THROW(encode(p, oracle::random_tensor({1, 3, 32, 32}, rng, -1, 1, false)), DimensionError);
    EXPECT_THROW(encode(p, oracle::random_tensor({1, 1, 64, 64}, rng, -1, 1, false)), DimensionError);
    EncoderConfig bad;
    bad.embed_dim = 1;
    EXPECT_THROW(init_params(bad, 0), PreconditionError);
}

TEST(Encoder, DuplicateImagesAndBatchIndependence) {
    const auto p = init_params(EncoderConfig{}, 7);
    Rng rng(8);
    const Tensor one = oracle::random_tensor({1, 3, 64, 64}, rng, -1, 1, false);
    const Tensor two = oracle::random_tensor({1, 3, 64, 64}, rng, -1, 1, false);
    std::vector<float> batch(one.values());
    batch.insert(batch.end(), two.values().begin(), two.values().end());
    batch.insert(batch.end(), one.values().begin(), one.values().end());
    const Tensor y = encode(p, Tensor({3, 3, 64, 64}, batch));
    const Tensor y1 = encode(p, one);
    const Tensor y2 = encode(p, two);
    for (std::size_t j = 0; j < 32; ++j) {
        EXPECT_EQ(y.at(0, j), y.at(2, j));
        EXPECT_NEAR(y.at(0, j), y1[j], 1e-6);
        EXPECT_NEAR(y.at(1, j), y2[j], 1e-6);
    }
}

TEST(Encoder, PermutationEquivariance) {
    const auto p = init_params(EncoderConfig{}, 9);
    Rng rng(10);
    const Tensor x = oracle::random_tensor({4, 3, 64, 64}, rng, -1, 1, false);
    const std::size_t per = 3 * 64 * 64;
    const std::size_t perm[4] = {2, 0, 3, 1};
    std::vector<float> shuffled(x.size());
    for (std::size_t i = 0; i < 4; ++i) std::copy_n(x.values().begin() + perm[i] * per, per, shuffled.begin() + i * per);
    const Tensor y = encode(p, x);
    const Tensor ys = encode(p, Tensor({4, 3, 64, 64}, shuffled));
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 32; ++j) EXPECT_NEAR(ys.at(i, j), y.at(perm[i], j), 1e-6);
}

TEST(Encoder, EncodeEqualsHeadOnPooledSpatialFeatures) {
    const auto p = init_params(EncoderConfig{}, 4);
    Rng rng(5);
    const Tensor x = oracle::random_tensor({2, 3, 64, 64}, rng, -1, 1, false);
    const Tensor direct = encode(p, x);
    const Tensor composed = project(p, global_avg_pool(spatial_features(p, x)));
    EXPECT_EQ(direct.values(), composed.values());
    // and against the independent reference implementation
    const Vec ref = oracle::encode(p.config, param_values(p), oracle::to_double(x), 2);
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(direct[i], ref[i], 1e-5);
}

TEST(Encoder, GradientOfSumMatchesFiniteDifferences) {
    const EncoderConfig cfg = tiny_config();
    for (int seed = 0; seed < 20; ++seed) {
        auto p = init_params(cfg, 100 + seed);
        Rng rng(200 + seed);
        // Non-zero biases so every parameter gets exercised.
        for (auto& e : p.entries) {
            if (e.name.find("bias") != std::string::npos) {
                for (auto& v : e.value.mutable_data()) v = static_cast<float>(rng.uniform(-0.2, 0.2));
            }
        }
        const Tensor images = oracle::random_tensor({2, 3, 16, 16}, rng, -1, 1, false);
        std::vector<Tensor> inputs;
        for (auto& e : p.entries) inputs.push_back(e.value);
        auto lib = [&](const std::vector<Tensor>& in) {
            EncoderParams q{cfg, {}};
            for (std::size_t i = 0; i < in.size(); ++i) q.entries.push_back({p.entries[i].name, in[i]});
            return sum_all(encode(q, images));
        };
        auto ref = [&](const std::vector<Vec>& x) {
            const Vec y = oracle::encode(cfg, x, oracle::to_double(images), 2);
            double s = 0;
            for (double v : y) s += v;
            return s;
        };
        const auto r = oracle::check_gradients(inputs, lib, ref);
        EXPECT_LT(r.max_rel_error, 1e-3) << "seed " << seed;
        EXPECT_LT(r.forward_abs_error, 1e-4);
    }
}

TEST(Encoder, EncoderPlusMultiPairLossGradientMatchesFiniteDifferences) {
    const EncoderConfig cfg = tiny_config();
    const std::size_t v = 2, k = 2, m = 3, n = v * k, d = cfg.embed_dim;
    const NceConfig nce;
    for (int seed = 0; seed < 20; ++seed) {
        auto p = init_params(cfg, 300 + seed);
        Rng rng(400 + seed);
        for (auto& e : p.entries)
            if (e.name.find("bias") != std::string::npos)
                for (auto& x : e.value.mutable_data()) x = static_cast<float>(rng.uniform(-0.2, 0.2));
        const Tensor images = oracle::random_tensor({n, 3, 16, 16}, rng, -1, 1, false);
        const Tensor g = oracle::unit_rows(n, d, rng);
        const Tensor bank = oracle::unit_rows(m, d, rng);
        const PairMask mask = build_pair_mask({v, k, m});
        std::vector<Tensor> inputs;
        for (auto& e : p.entries) inputs.push_back(e.value);
        auto lib = [&](const std::vector<Tensor>& in) {
            EncoderParams q{cfg, {}};
            for (std::size_t i = 0; i < in.size(); ++i) q.entries.push_back({p.entries[i].name, in[i]});
            return multi_pair_nce_loss(l2_normalize_rows(encode(q, images)), g, bank, mask, nce);
        };
        auto ref = [&](const std::vector<Vec>& x) {
            const Vec f = oracle::l2_normalize_rows(oracle::encode(cfg, x, oracle::to_double(images), n), n, d);
            return oracle::multi_pair_nce_loss(f, oracle::to_double(g), oracle::to_double(bank), v, k, m, d, nce.temperature).loss;
        };
        // temperature 1/0.07 sharpens the curvature, so a 1e-3 step leaves visible truncation error
        const auto r = oracle::check_gradients(inputs, lib, ref, 1e-4);
        EXPECT_LT(r.max_rel_error, 1e-3) << "seed " << seed;
        EXPECT_LT(r.forward_abs_error, 1e-4);
    }
}
