#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "stats.hpp"
#include "temp_dir.hpp"
#include "vince/data.hpp"

using namespace vince;

namespace {

RgbImage solid(std::size_t w, std::size_t h, std::uint8_t value) {
    RgbImage img(w, h);
    std::fill(img.pixels.begin(), img.pixels.end(), value);
    return img;
}

double mean_abs_diff(const RgbImage& a, const RgbImage& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.pixels.size(); ++i) s += std::abs(int(a.pixels[i]) - int(b.pixels[i]));
    return s / static_cast<double>(a.pixels.size());
}

FrameStore tiny_store(std::size_t videos, std::size_t frames) {
    FrameStore store;
    for (std::size_t v = 0; v < videos; ++v) {
        store.videos.emplace_back();
        for (std::size_t f = 0; f < frames; ++f) store.videos.back().push_back(solid(8, 8, static_cast<std::uint8_t>(10 * v + f)));
    }
    return store;
}

// Writes `videos` as a directory of per-video directories of numbered frames.
void write_source(const fs::path& dir, const std::vector<std::vector<RgbImage>>& videos) {
    for (std::size_t v = 0; v < videos.size(); ++v) {
        const fs::path vd = dir / ("video_" + std::to_string(v));
        fs::create_directories(vd);
        for (std::size_t f = 0; f < videos[v].size(); ++f) write_ppm(vd / ("img" + std::to_string(f) + ".ppm"), videos[v][f]);
    }
}

std::vector<RgbImage> moving_video(std::size_t length, std::uint64_t seed) {
    SyntheticWorldConfig w;
    w.num_classes = 1;
    w.videos_per_class = 1;
    w.frames_per_video = length;
    w.image_size = 16;
    return generate_synthetic(w, seed).frames.videos[0];
}

}  // namespace

TEST(FilterStatic, Examples) {
    const CurationConfig cfg;
    EXPECT_FALSE(filter_static({solid(8, 8, 0), solid(8, 8, 0)}, cfg));
    EXPECT_TRUE(filter_static({solid(8, 8, 0), solid(8, 8, 255)}, cfg));

    RgbImage half = solid(8, 8, 0);
    for (std::size_t y = 0; y < 4; ++y)
        for (std::size_t x = 0; x < 8; ++x) half.at(x, y, 1) = 200;
    CurationConfig boundary = cfg;
    boundary.static_threshold = 0.5;
    EXPECT_TRUE(filter_static({solid(8, 8, 0), half}, boundary));
    boundary.static_threshold = 0.51;
    EXPECT_FALSE(filter_static({solid(8, 8, 0), half}, boundary));

    EXPECT_THROW(filter_static({solid(8, 8, 0)}, cfg), DegenerateInputError);
    EXPECT_THROW(filter_static({solid(8, 8, 0), solid(4, 4, 0)}, cfg), DimensionError);
}

TEST(FilterStatic, ChangeMustExceedEpsilon) {
    CurationConfig cfg;
    cfg.change_epsilon = 10;
    EXPECT_FALSE(filter_static({solid(8, 8, 100), solid(8, 8, 110)}, cfg));
    EXPECT_TRUE(filter_static({solid(8, 8, 100), solid(8, 8, 111)}, cfg));
}

TEST(GapExtraction, Examples) {
    CurationConfig cfg;
    cfg.frames_per_video = 4;
    cfg.gap = 5;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        EXPECT_EQ(extract_gap_indices(16, cfg, seed), (std::vector<std::size_t>{0, 5, 10, 15}));
    }
    EXPECT_THROW(extract_gap_indices(15, cfg, 0), InsufficientDataError);

    cfg.frames_per_video = 1;
    std::set<std::size_t> seen;
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        const auto idx = extract_gap_indices(7, cfg, seed);
        ASSERT_EQ(idx.size(), 1u);
        EXPECT_LT(idx[0], 7u);
        seen.insert(idx[0]);
    }
    EXPECT_EQ(seen.size(), 7u);

    const std::vector<int> video{10, 11, 12, 13, 14, 15, 16, 17, 18, 19, 20};
    cfg.frames_per_video = 3;
    cfg.gap = 4;
    const auto frames = extract_gap_frames(video, cfg, 9);
    ASSERT_EQ(frames.size(), 3u);
    EXPECT_EQ(frames[1] - frames[0], 4);
    EXPECT_EQ(frames[2] - frames[1], 4);
    EXPECT_EQ(extract_gap_indices(50, cfg, 123), extract_gap_indices(50, cfg, 123));
}

TEST(GapExtraction, StartIsUniform) {
    CurationConfig cfg;
    cfg.frames_per_video = 4;
    cfg.gap = 10;
    std::vector<double> counts(70, 0.0);
    const int draws = 10000;
    for (int seed = 0; seed < draws; ++seed) {
        const auto idx = extract_gap_indices(100, cfg, static_cast<std::uint64_t>(seed));
        ASSERT_LT(idx[0], 70u);
        counts[idx[0]] += 1.0;
    }
    const double expected = draws / 70.0;
    double chi2 = 0;
    for (double c : counts) chi2 += (c - expected) * (c - expected) / expected;
    EXPECT_GT(chi_square_p_value(chi2, 69), 0.01) << "chi2 " << chi2;
}

TEST(GapExtraction, PValueHelperSanity) {
    EXPECT_NEAR(chi_square_p_value(69.0, 69), 0.475, 0.01);
    EXPECT_NEAR(chi_square_p_value(100.4, 69), 0.0080, 0.002);
}

TEST(Synthetic, DeterministicAndLabelled) {
    SyntheticWorldConfig w;
    w.num_classes = 3;
    w.videos_per_class = 2;
    w.image_size = 32;
    const auto a = generate_synthetic(w, 5);
    const auto b = generate_synthetic(w, 5);
    const auto c = generate_synthetic(w, 6);
    EXPECT_EQ(a.frames.videos, b.frames.videos);
    EXPECT_NE(a.frames.videos, c.frames.videos);
    ASSERT_EQ(a.manifest.records.size(), 6u);
    for (std::size_t v = 0; v < 6; ++v) {
        EXPECT_EQ(a.manifest.records[v].label, static_cast<int>(v / 2));
        EXPECT_EQ(a.manifest.records[v].frames.size(), 4u);
        EXPECT_EQ(a.frames.videos[v][0].width, 32u);
    }
    EXPECT_EQ(a.manifest.label_count(), 3u);

    w.frames_per_video = 1;
    EXPECT_EQ(generate_synthetic(w, 1).frames.videos[0].size(), 1u);
    w.num_classes = 0;
    EXPECT_THROW(generate_synthetic(w, 1), PreconditionError);
}

TEST(Synthetic, ConsecutiveFramesCloserThanOtherClasses) {
    SyntheticWorldConfig w;
    w.videos_per_class = 10;
    const auto corpus = generate_synthetic(w, 11);
    const auto& videos = corpus.frames.videos;
    double within = 0, between = 0;
    std::size_t nw = 0, nb = 0;
    for (std::size_t v = 0; v < videos.size(); ++v) {
        for (std::size_t t = 0; t + 1 < videos[v].size(); ++t) {
            const double d = mean_abs_diff(videos[v][t], videos[v][t + 1]);
            EXPECT_GT(d, 0.0);
            within += d;
            ++nw;
        }
        for (std::size_t u = 0; u < videos.size(); ++u) {
            if (corpus.manifest.records[u].label == corpus.manifest.records[v].label) continue;
            between += mean_abs_diff(videos[v][0], videos[u][0]);
            ++nb;
        }
    }
    EXPECT_LT(within / nw, between / nb);
}

TEST(Augment, IdentityIsResizeOnly) {
    const FloatImage img = to_float(moving_video(1, 3)[0]);
    const auto cfg = AugmentConfig::identity(16);
    EXPECT_EQ(augment(img, cfg, 1), img);
    EXPECT_EQ(augment(img, cfg, 2), img);
    EXPECT_EQ(augment(img, AugmentConfig::identity(8), 1), resize(img, 8, 8));
}

TEST(Augment, FlipIsAnInvolutionOnTheSameCrop) {
    const FloatImage img = to_float(moving_video(1, 4)[0]);
    AugmentConfig no_flip;
    no_flip.output_size = 16;
    no_flip.horizontal_flip_prob = 0.0;
    AugmentConfig flip = no_flip;
    flip.horizontal_flip_prob = 1.0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const FloatImage a = augment(img, no_flip, seed);
        const FloatImage b = augment(img, flip, seed);
        EXPECT_NE(a, b);
        EXPECT_EQ(hflip(b), a);
        EXPECT_EQ(hflip(hflip(a)), a);
    }
}

TEST(Augment, FlipFrequency) {
    AugmentConfig cfg;
    int flips = 0;
    for (std::uint64_t seed = 0; seed < 1000; ++seed) {
        Rng rng(seed);
        flips += draw_augment(64, 64, cfg, rng).flip;
    }
    EXPECT_GE(flips, 400);
    EXPECT_LE(flips, 600);
}

TEST(Augment, DeterministicSizedAndErrors) {
    const FloatImage img = to_float(moving_video(1, 5)[0]);
    AugmentConfig cfg;
    cfg.output_size = 12;
    const FloatImage a = augment(img, cfg, 77);
    EXPECT_EQ(a, augment(img, cfg, 77));
    EXPECT_EQ(a.width, 12u);
    EXPECT_EQ(a.height, 12u);
    for (float v : a.planes) {
        EXPECT_GE(v, 0.0f);
        EXPECT_LE(v, 1.0f);
    }
    AugmentConfig tiny;
    tiny.crop_scale_min = tiny.crop_scale_max = 1e-4;
    EXPECT_THROW(augment(to_float(solid(16, 16, 1)), tiny, 1), DimensionError);
    EXPECT_THROW(augment(FloatImage(), cfg, 1), DimensionError);
    AugmentConfig bad;
    bad.crop_scale_min = 0.0;
    EXPECT_THROW(augment(img, bad, 1), PreconditionError);
}

TEST(SampleBatch, SameFrameAndOrdering) {
    const FrameStore store = tiny_store(10, 4);
    const auto aug = AugmentConfig{0.5, 1.0, 0.5, 0.4, 0.4, 0.4, 8};
    const auto batch = sample_batch(store, 5, 3, SamplingRegime::same_frame, aug, BatchStreams::derive(Rng(1), 0));
    ASSERT_EQ(batch.anchors.size(), 15u);
    std::set<std::int64_t> videos;
    for (std::size_t i = 0; i < 15; ++i) {
        EXPECT_EQ(batch.anchor_frame[i], batch.positive_frame[i]);
        EXPECT_EQ(batch.video_index[i], batch.video_index[(i / 3) * 3]);
        videos.insert(batch.video_index[i]);
    }
    EXPECT_EQ(videos.size(), 5u);
    EXPECT_THROW(sample_batch(store, 11, 1, SamplingRegime::same_frame, aug, BatchStreams::derive(Rng(1), 0)),
                 InsufficientDataError);
}

TEST(SampleBatch, PairsNeverMixVideos) {
    const FrameStore store = tiny_store(6, 4);
    const auto aug = AugmentConfig::identity(8);
    const auto batch = sample_batch(store, 6, 4, SamplingRegime::multi_frame, aug, BatchStreams::derive(Rng(2), 3));
    for (std::size_t i = 0; i < batch.anchors.size(); ++i) {
        const auto v = static_cast<std::size_t>(batch.video_index[i]);
        // solid frames encode (video, frame) in their value
        EXPECT_FLOAT_EQ(batch.anchors[i].planes[0] * 255.0f, static_cast<float>(10 * v + batch.anchor_frame[i]));
        EXPECT_FLOAT_EQ(batch.positives[i].planes[0] * 255.0f, static_cast<float>(10 * v + batch.positive_frame[i]));
    }
}

TEST(SampleBatch, MultiFrameWithOneFrameMatchesSameFrame) {
    const FrameStore store = tiny_store(8, 1);
    const auto aug = AugmentConfig{0.5, 1.0, 0.5, 0.4, 0.4, 0.4, 8};
    const auto streams = BatchStreams::derive(Rng(3), 7);
    const auto a = sample_batch(store, 4, 2, SamplingRegime::multi_frame, aug, streams);
    const auto b = sample_batch(store, 4, 2, SamplingRegime::same_frame, aug, streams);
    EXPECT_EQ(a.video_index, b.video_index);
    EXPECT_EQ(a.anchor_frame, b.anchor_frame);
    EXPECT_EQ(a.positive_frame, b.positive_frame);
    EXPECT_EQ(a.anchors, b.anchors);
    EXPECT_EQ(a.positives, b.positives);
}

TEST(SampleBatch, CollisionRateIsOneOverT) {
    const FrameStore store = tiny_store(4, 4);
    const auto aug = AugmentConfig::identity(8);
    std::size_t same = 0, total = 0;
    for (std::uint64_t step = 0; step < 500; ++step) {
        const auto batch = sample_batch(store, 4, 5, SamplingRegime::multi_frame, aug, BatchStreams::derive(Rng(4), step));
        for (std::size_t i = 0; i < batch.anchor_frame.size(); ++i) same += batch.anchor_frame[i] == batch.positive_frame[i];
        total += batch.anchor_frame.size();
    }
    ASSERT_EQ(total, 10000u);
    const double rate = static_cast<double>(same) / static_cast<double>(total);
    EXPECT_NEAR(rate, 0.25, 4 * std::sqrt(0.25 * 0.75 / 10000.0));
}

TEST(Manifest, RoundTripAndErrors) {
    TempDir dir("manifest");
    VideoManifest m;
    m.root = dir.path();
    m.records = {{"a", {"frames/a/0.ppm", "frames/a/1.ppm"}, 2}, {"b", {"frames/b/0.ppm"}, std::nullopt}};
    write_manifest(dir / "m.jsonl", m);
    const auto back = read_manifest(dir / "m.jsonl", false);
    EXPECT_EQ(back.records, m.records);
    EXPECT_EQ(back.root, dir.path());
    EXPECT_THROW(read_manifest(dir / "m.jsonl", true), IoError);

    {
        std::ofstream out(dir / "dup.jsonl");
        out << R"({"video_id":"a","frames":[],"label":null})" << '\n' << R"({"video_id":"a","frames":[],"label":1})" << '\n';
    }
    EXPECT_THROW(read_manifest(dir / "dup.jsonl", false), FormatError);
    {
        std::ofstream out(dir / "bad.jsonl");
        out << "{not json\n";
    }
    EXPECT_THROW(read_manifest(dir / "bad.jsonl", false), FormatError);
    EXPECT_THROW(read_manifest(dir / "missing.jsonl", false), IoError);
}

TEST(Curation, StaticFilteringConservationAndIdempotence) {
    TempDir dir("curate");
    std::vector<std::vector<RgbImage>> videos;
    videos.push_back(moving_video(20, 1));
    videos.push_back(std::vector<RgbImage>(20, solid(16, 16, 90)));  // static
    videos.push_back(moving_video(16, 2));
    videos.push_back(moving_video(9, 3));  // too short for T=4, G=5
    write_source(dir / "src", videos);

    const CurationConfig cfg;
    const auto report = curate(dir / "src", dir / "out", cfg, 42);
    EXPECT_EQ(report.kept, 2u);
    EXPECT_EQ(report.dropped_static, 1u);
    EXPECT_EQ(report.dropped_short, 1u);
    EXPECT_EQ(report.kept + report.dropped(), videos.size());
    const auto curated = read_manifest(dir / "out" / "manifest.jsonl");
    ASSERT_EQ(curated.records.size(), 2u);
    for (const auto& r : curated.records) EXPECT_EQ(r.frames.size(), 4u);
    EXPECT_EQ(curated.records[0].video_id, "video_0");
    EXPECT_EQ(curated.records[1].video_id, "video_2");
    // video_2 has exactly (T-1)G+1 frames, so its frames are 0, 5, 10, 15
    EXPECT_EQ(read_ppm(dir / "out" / curated.records[1].frames[3]), videos[2][15]);

    const auto again = curate(dir / "out", dir / "out2", cfg, 42);
    EXPECT_EQ(again.kept, 2u);
    EXPECT_EQ(slurp(dir / "out" / "manifest.jsonl"), slurp(dir / "out2" / "manifest.jsonl"));
    for (const auto& r : curated.records)
        for (const auto& f : r.frames) EXPECT_EQ(slurp(dir / "out" / f), slurp(dir / "out2" / f));
}

TEST(Curation, AllStaticCorpusIsFullyFiltered) {
    TempDir dir("static");
    std::vector<std::vector<RgbImage>> videos;
    for (int v = 0; v < 5; ++v) videos.push_back(std::vector<RgbImage>(16, solid(8, 8, static_cast<std::uint8_t>(40 * v))));
    write_source(dir / "src", videos);
    const auto report = curate(dir / "src", dir / "out", CurationConfig{}, 1);
    EXPECT_EQ(report.kept, 0u);
    EXPECT_EQ(report.dropped_static, 5u);
    EXPECT_TRUE(read_manifest(dir / "out" / "manifest.jsonl").records.empty());
}

TEST(Curation, LabelsCarryOverFromManifestInput) {
    TempDir dir("labels");
    SyntheticWorldConfig w;
    w.num_classes = 2;
    w.videos_per_class = 2;
    w.image_size = 16;
    auto corpus = generate_synthetic(w, 8);
    write_corpus(dir / "syn", corpus);
    const auto report = curate(dir / "syn", dir / "out", CurationConfig{}, 3);
    EXPECT_EQ(report.kept + report.dropped(), 4u);
    for (const auto& r : report.manifest.records) EXPECT_EQ(r.label, std::stoi(r.video_id.substr(1, 2)));
    EXPECT_THROW(curate(dir / "nope", dir / "out3", CurationConfig{}, 3), IoError);
}
