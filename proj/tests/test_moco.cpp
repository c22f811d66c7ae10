#include <gtest/gtest.h>

#include <deque>

#include "oracles.hpp"
#include "vince/moco.hpp"

using namespace vince;

namespace {

EncoderParams small_params(std::uint64_t seed) {
    EncoderConfig cfg;
    cfg.input_size = 16;
    cfg.trunk = {{4, 3, 2}};
    cfg.hidden_dim = 8;
    cfg.embed_dim = 4;
    return init_params(cfg, seed);
}

double max_abs_diff(const EncoderParams& a, const EncoderParams& b) {
    double m = 0;
    for (std::size_t p = 0; p < a.entries.size(); ++p)
        for (std::size_t i = 0; i < a.entries[p].value.size(); ++i)
            m = std::max(m, std::abs(static_cast<double>(a.entries[p].value[i]) - b.entries[p].value[i]));
    return m;
}

}  // namespace

TEST(Momentum, StartsEqualAndGradientFree) {
    auto state = make_moco_state(small_params(1), 0.9f);
    EXPECT_EQ(hash_params(state.f), hash_params(state.g));
    for (const auto& e : state.g.entries) EXPECT_FALSE(e.value.requires_grad());
    for (const auto& e : state.f.entries) EXPECT_TRUE(e.value.requires_grad());
    EXPECT_THROW(make_moco_state(small_params(1), 1.5f), PreconditionError);
}

TEST(Momentum, FixedPointsAndArithmetic) {
    auto state = make_moco_state(small_params(1), 1.0f);
    state.f = small_params(2);
    const auto g_before = hash_params(state.g);
    const auto f_before = hash_params(state.f);
    momentum_update(state);
    EXPECT_EQ(hash_params(state.g), g_before);
    EXPECT_EQ(hash_params(state.f), f_before);

    state.alpha = 0.0f;
    momentum_update(state);
    EXPECT_EQ(max_abs_diff(state.f, state.g), 0.0);

    EncoderParams f{small_params(0).config, {{"w", Tensor({1}, {1.0f}, true)}}};
    EncoderParams g{f.config, {{"w", Tensor({1}, {0.0f})}}};
    MocoState s{f, g, 0.999f};
    momentum_update(s);
    EXPECT_NEAR(s.g.entries[0].value[0], 0.001f, 1e-7);
}

TEST(Momentum, ConvergenceBound) {
    for (float alpha : {0.9f, 0.99f, 0.999f}) {
        auto state = make_moco_state(small_params(3), alpha);
        state.f = small_params(4);  // constant f, different from g0
        const double d0 = max_abs_diff(state.g, state.f);
        double bound = d0;
        for (int t = 1; t <= 300; ++t) {
            momentum_update(state);
            bound *= alpha;
            // float rounding allowance relative to the initial gap
            EXPECT_LE(max_abs_diff(state.g, state.f), bound + 1e-6 * d0) << "alpha " << alpha << " t " << t;
        }
    }
}

TEST(MemoryBank, FillAndFifoReplacement) {
    Rng rng(1);
    MemoryBank bank(8, 4);
    EXPECT_EQ(bank.negatives_view().shape(), (Shape{0, 4}));
    const Tensor first = oracle::unit_rows(3, 4, rng);
    bank.enqueue(first);
    EXPECT_EQ(bank.filled(), 3u);
    const Tensor view = bank.negatives_view();
    EXPECT_EQ(view.values(), first.values());
    EXPECT_FALSE(view.requires_grad());

    bank.enqueue(oracle::unit_rows(5, 4, rng));
    EXPECT_EQ(bank.filled(), 8u);
    const Tensor snapshot = bank.negatives_view();
    const auto before = snapshot.values();
    const Tensor fresh = oracle::unit_rows(2, 4, rng);
    bank.enqueue(fresh);
    EXPECT_EQ(snapshot.values(), before);  // snapshots do not alias the ring
    const Tensor after = bank.negatives_view();
    // the two oldest rows (first batch rows 0,1) are gone, the newest two are at the end
    for (std::size_t j = 0; j < 4; ++j) {
        EXPECT_EQ(after.at(0, j), first.at(2, j));
        EXPECT_EQ(after.at(6, j), fresh.at(0, j));
        EXPECT_EQ(after.at(7, j), fresh.at(1, j));
    }
    EXPECT_EQ(bank.cursor(), bank.total_enqueued() % bank.capacity());
}

TEST(MemoryBank, FirstBatchEvictedAfterCapacityRows) {
    Rng rng(2);
    const std::size_t m = 12, b = 4;
    MemoryBank bank(m, 3);
    const Tensor first = oracle::unit_rows(b, 3, rng);
    bank.enqueue(first);
    for (std::size_t i = 1; i < m / b; ++i) bank.enqueue(oracle::unit_rows(b, 3, rng));
    bank.enqueue(oracle::unit_rows(b, 3, rng));
    const Tensor view = bank.negatives_view();
    for (std::size_t r = 0; r < b; ++r)
        for (std::size_t s = 0; s < m; ++s) {
            bool same = true;
            for (std::size_t j = 0; j < 3; ++j) same = same && view.at(s, j) == first.at(r, j);
            EXPECT_FALSE(same);
        }
}

TEST(MemoryBank, Errors) {
    Rng rng(3);
    MemoryBank bank(4, 3);
    EXPECT_THROW(bank.enqueue(oracle::unit_rows(5, 3, rng)), CapacityError);
    EXPECT_THROW(bank.enqueue(Tensor({1, 3}, {1, 1, 0})), PreconditionError);
    EXPECT_THROW(bank.enqueue(oracle::unit_rows(1, 2, rng)), DimensionError);
}

TEST(MemoryBank, ReplayOracle) {
    for (int seed = 0; seed < 1000; ++seed) {
        Rng rng(1000 + seed);
        const std::size_t m = 1 + rng.below(20), d = 3;
        MemoryBank bank(m, d);
        std::deque<std::vector<float>> log;
        std::deque<std::int64_t> tags;
        const std::size_t steps = 1 + rng.below(30);
        for (std::size_t s = 0; s < steps; ++s) {
            const std::size_t b = 1 + rng.below(m);
            const Tensor rows = oracle::unit_rows(b, d, rng);
            std::vector<std::int64_t> ids(b);
            for (auto& id : ids) id = static_cast<std::int64_t>(rng.below(50));
            bank.enqueue(rows, ids);
            for (std::size_t r = 0; r < b; ++r) {
                log.emplace_back(rows.values().begin() + r * d, rows.values().begin() + (r + 1) * d);
                tags.push_back(ids[r]);
                if (log.size() > m) {
                    log.pop_front();
                    tags.pop_front();
                }
            }
            const Tensor view = bank.negatives_view();
            ASSERT_EQ(view.dim(0), log.size());
            for (std::size_t r = 0; r < log.size(); ++r)
                for (std::size_t j = 0; j < d; ++j) ASSERT_EQ(view.at(r, j), log[r][j]);
            const auto got_tags = bank.tags_in_age_order();
            ASSERT_EQ(std::vector<std::int64_t>(tags.begin(), tags.end()), got_tags);
        }
        // exclusion drops exactly the rows of the excluded videos, keeping age order
        const std::int64_t drop = tags.empty() ? 0 : tags.front();
        const Tensor kept = bank.negatives_excluding({drop});
        std::size_t expect = 0;
        for (auto t : tags) expect += t != drop;
        EXPECT_EQ(kept.dim(0), expect);
    }
}
