#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "vince/data.hpp"
#include "vince/encoder.hpp"
#include "vince/errors.hpp"
#include "vince/image.hpp"
#include "vince/ops.hpp"
#include "vince/optim.hpp"
#include "vince/rng.hpp"

namespace vince {

// ---------------------------------------------------------------------------
// Frozen features

enum class FeatureKind {
    embedding,     // L2-normalized projection-head output (d columns)
    pooled_trunk,  // global-average-pooled trunk output (C columns)
};

/// One row per frame, in manifest order.
struct EmbeddingTable {
    Tensor rows;
    std::vector<std::string> video_id;
    std::vector<std::size_t> video;  // manifest record index
    std::vector<std::size_t> frame;

    std::size_t size() const { return video.size(); }
    std::size_t dim() const { return rows.defined() && rows.rank() == 2 ? rows.dim(1) : 0; }
};

inline FloatImage encoder_input(const RgbImage& frame, std::size_t size) {
    FloatImage f = to_float(frame);
    if (f.width == size && f.height == size) return f;
    return resize(f, size, size);
}

/// Encodes a list of frames in chunks under no-grad. Each row depends only on its own image.
inline Tensor embed_images(const EncoderParams& params, const std::vector<FloatImage>& images,
                           FeatureKind kind = FeatureKind::embedding, std::size_t chunk = 64) {
    NoGradGuard no_grad;
    const std::size_t width = kind == FeatureKind::embedding ? params.config.embed_dim : params.config.feature_channels();
    std::vector<float> out;
    out.reserve(images.size() * width);
    for (std::size_t start = 0; start < images.size(); start += chunk) {
        const std::size_t stop = std::min(images.size(), start + chunk);
        const std::vector<FloatImage> part(images.begin() + static_cast<std::ptrdiff_t>(start),
                                           images.begin() + static_cast<std::ptrdiff_t>(stop));
        const Tensor x = images_to_tensor(part);
        const Tensor y = kind == FeatureKind::embedding ? l2_normalize_rows(encode(params, x))
                                                        : global_avg_pool(spatial_features(params, x));
        out.insert(out.end(), y.data().begin(), y.data().end());
    }
    return Tensor({images.size(), width}, std::move(out));
}

inline EmbeddingTable embed_frames(const EncoderParams& params, const VideoManifest& manifest, const FrameStore& store,
                                   FeatureKind kind = FeatureKind::embedding) {
    if (store.videos.size() != manifest.records.size()) throw DimensionError("embed_frames: store does not match manifest");
    EmbeddingTable table;
    std::vector<FloatImage> images;
    for (std::size_t v = 0; v < store.videos.size(); ++v) {
        for (std::size_t f = 0; f < store.videos[v].size(); ++f) {
            images.push_back(encoder_input(store.videos[v][f], params.config.input_size));
            table.video_id.push_back(manifest.records[v].video_id);
            table.video.push_back(v);
            table.frame.push_back(f);
        }
    }
    const std::size_t width = kind == FeatureKind::embedding ? params.config.embed_dim : params.config.feature_channels();
    table.rows = images.empty() ? Tensor::zeros({0, width}) : embed_images(params, images, kind);
    return table;
}

// ---------------------------------------------------------------------------
// Linear probe

struct ProbeHead {
    Tensor weight;  // d' x C
    Tensor bias;    // C
    std::vector<float> feature_mean;
    std::vector<float> feature_scale;

    std::size_t predict(std::span<const float> feature) const {
        const std::size_t d = weight.dim(0), c = weight.dim(1);
        std::size_t best = 0;
        double best_score = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < c; ++j) {
            double s = bias[j];
            for (std::size_t i = 0; i < d; ++i) s += (feature[i] - feature_mean[i]) * feature_scale[i] * weight[i * c + j];
            if (s > best_score) {
                best_score = s;
                best = j;
            }
        }
        return best;
    }
};

struct ProbeOptions {
    std::size_t epochs = 60;
    float lr = 1e-3f;
    std::size_t batch_size = 64;
    std::uint64_t seed = 0;
    std::size_t holdout_divisor = 5;  // about 1/5 of each class's videos are held out
};

struct ProbeResult {
    ProbeHead head;
    double top1 = 0.0;
    std::size_t train_samples = 0;
    std::size_t test_samples = 0;
};

/// Deterministic split by video: within each class, the last max(1, count/divisor) videos in
/// manifest order are held out (classes with a single video are train-only).
inline std::vector<bool> holdout_videos(const std::vector<int>& labels, std::size_t divisor) {
    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
    std::vector<bool> test(labels.size(), false);
    for (const auto& [label, members] : by_class) {
        if (members.size() < 2) continue;
        const std::size_t hold = std::max<std::size_t>(1, members.size() / std::max<std::size_t>(divisor, 1));
        for (std::size_t i = members.size() - hold; i < members.size(); ++i) test[members[i]] = true;
    }
    return test;
}

/// Trains a linear softmax classifier on fixed features (standardized with training statistics)
/// and reports top-1 on the test rows.
inline ProbeResult train_probe_on_features(const Tensor& features, const std::vector<std::size_t>& labels,
                                           const std::vector<bool>& is_test, const ProbeOptions& opt) {
    if (features.rank() != 2 || features.dim(0) != labels.size() || is_test.size() != labels.size()) {
        throw DimensionError("probe: features, labels and split disagree");
    }
    const std::size_t n = labels.size(), d = features.dim(1);
    std::size_t classes = 0;
    for (auto l : labels) classes = std::max(classes, l + 1);
    std::vector<std::size_t> train_rows, test_rows;
    for (std::size_t i = 0; i < n; ++i) (is_test[i] ? test_rows : train_rows).push_back(i);
    {
        std::vector<std::size_t> seen;
        for (auto r : train_rows) {
            if (std::find(seen.begin(), seen.end(), labels[r]) == seen.end()) seen.push_back(labels[r]);
        }
        if (seen.size() < 2) throw DegenerateInputError("probe: training data covers fewer than two classes");
    }
    if (test_rows.empty()) throw InsufficientDataError("probe: no held-out samples");

    ProbeHead head;
    head.feature_mean.assign(d, 0.0f);
    head.feature_scale.assign(d, 1.0f);
    auto x = features.data();
    for (std::size_t i = 0; i < d; ++i) {
        double s = 0.0, s2 = 0.0;
        for (auto r : train_rows) s += x[r * d + i];
        const double mu = s / static_cast<double>(train_rows.size());
        for (auto r : train_rows) s2 += (x[r * d + i] - mu) * (x[r * d + i] - mu);
        const double sd = std::sqrt(s2 / static_cast<double>(train_rows.size()));
        head.feature_mean[i] = static_cast<float>(mu);
        head.feature_scale[i] = sd > 1e-8 ? static_cast<float>(1.0 / sd) : 1.0f;
    }
    auto standardized = [&](const std::vector<std::size_t>& rows) {
        std::vector<float> out(rows.size() * d);
        for (std::size_t r = 0; r < rows.size(); ++r) {
            for (std::size_t i = 0; i < d; ++i) {
                out[r * d + i] = (x[rows[r] * d + i] - head.feature_mean[i]) * head.feature_scale[i];
            }
        }
        return out;
    };
    const std::vector<float> train_x = standardized(train_rows);

    head.weight = Tensor::zeros({d, classes}, true);
    head.bias = Tensor::zeros({classes}, true);
    std::vector<Tensor> params{head.weight, head.bias};
    Adam adam(opt.lr);
    Rng rng = Rng(opt.seed).split("probe-order");
    std::vector<std::size_t> order(train_rows.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    const std::size_t batch = std::max<std::size_t>(1, opt.batch_size);
    for (std::size_t epoch = 0; epoch < opt.epochs; ++epoch) {
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
        for (std::size_t start = 0; start < order.size(); start += batch) {
            const std::size_t stop = std::min(order.size(), start + batch);
            std::vector<float> xb((stop - start) * d);
            std::vector<std::size_t> yb(stop - start);
            for (std::size_t r = start; r < stop; ++r) {
                std::copy_n(train_x.begin() + static_cast<std::ptrdiff_t>(order[r] * d), d,
                            xb.begin() + static_cast<std::ptrdiff_t>((r - start) * d));
                yb[r - start] = labels[train_rows[order[r]]];
            }
            const Tensor logits = bias_add(matmul(Tensor({stop - start, d}, std::move(xb)), head.weight), head.bias);
            const Tensor loss = softmax_cross_entropy(logits, yb);
            zero_grads(params);
            loss.backward();
            adam.step(params);
        }
    }
    head.weight = head.weight.detach();
    head.bias = head.bias.detach();

    std::size_t correct = 0;
    for (auto r : test_rows) {
        if (head.predict(x.subspan(r * d, d)) == labels[r]) ++correct;
    }
    return ProbeResult{head, static_cast<double>(correct) / static_cast<double>(test_rows.size()), train_rows.size(),
                       test_rows.size()};
}

namespace detail {
inline std::vector<int> record_labels(const VideoManifest& manifest) {
    std::vector<int> labels;
    for (const auto& r : manifest.records) {
        if (!r.label) throw PreconditionError("probe: video " + r.video_id + " has no label");
        if (*r.label < 0) throw PreconditionError("probe: negative label on " + r.video_id);
        labels.push_back(*r.label);
    }
    std::vector<int> distinct = labels;
    std::sort(distinct.begin(), distinct.end());
    if (std::unique(distinct.begin(), distinct.end()) - distinct.begin() < 2) {
        throw DegenerateInputError("probe: labels cover fewer than two classes");
    }
    return labels;
}
}  // namespace detail

/// Per-frame probe on the frozen encoder. Parameters are read-only.
inline ProbeResult train_linear_probe(const EncoderParams& params, const VideoManifest& manifest, const FrameStore& store,
                                      const ProbeOptions& opt = {}, FeatureKind kind = FeatureKind::embedding) {
    const auto labels = detail::record_labels(manifest);
    const auto test_video = holdout_videos(labels, opt.holdout_divisor);
    const EmbeddingTable table = embed_frames(params, manifest, store, kind);
    std::vector<std::size_t> y(table.size());
    std::vector<bool> is_test(table.size());
    for (std::size_t i = 0; i < table.size(); ++i) {
        y[i] = static_cast<std::size_t>(labels[table.video[i]]);
        is_test[i] = test_video[table.video[i]];
    }
    return train_probe_on_features(table.rows, y, is_test, opt);
}

/// Mean of a video's frame features; one sample per video.
inline Tensor mean_pool_videos(const EmbeddingTable& table, std::size_t videos) {
    const std::size_t d = table.dim();
    std::vector<double> acc(videos * d, 0.0);
    std::vector<std::size_t> count(videos, 0);
    auto x = table.rows.data();
    for (std::size_t i = 0; i < table.size(); ++i) {
        const std::size_t v = table.video[i];
        ++count[v];
        for (std::size_t j = 0; j < d; ++j) acc[v * d + j] += x[i * d + j];
    }
    std::vector<float> out(videos * d);
    for (std::size_t v = 0; v < videos; ++v) {
        if (count[v] == 0) throw InsufficientDataError("temporal probe: video without frames");
        for (std::size_t j = 0; j < d; ++j) out[v * d + j] = static_cast<float>(acc[v * d + j] / static_cast<double>(count[v]));
    }
    return Tensor({videos, d}, std::move(out));
}

inline ProbeResult temporal_probe(const EncoderParams& params, const VideoManifest& manifest, const FrameStore& store,
                                  const ProbeOptions& opt = {}, FeatureKind kind = FeatureKind::embedding) {
    const auto labels = detail::record_labels(manifest);
    const auto is_test = holdout_videos(labels, opt.holdout_divisor);
    const EmbeddingTable table = embed_frames(params, manifest, store, kind);
    std::vector<std::size_t> y(labels.begin(), labels.end());
    // One sample per video instead of one per frame: scale the epochs so both probes take
    // about the same number of optimizer steps.
    ProbeOptions scaled = opt;
    scaled.epochs = opt.epochs * std::max<std::size_t>(1, manifest.total_frames() / std::max<std::size_t>(1, manifest.records.size()));
    return train_probe_on_features(mean_pool_videos(table, manifest.records.size()), y, is_test, scaled);
}

// ---------------------------------------------------------------------------
// kNN retrieval

struct Neighbor {
    std::string video_id;
    std::size_t frame = 0;
    float similarity = 0.0f;
};

struct KnnResult {
    std::vector<Neighbor> neighbors;
    bool truncated = false;  // fewer than K distinct videos exist
};

/// Top-K by cosine similarity with at most one frame per video. Ties go to the lower
/// video_id, then the lower frame index.
inline KnnResult knn_retrieve(std::span<const float> query, const EmbeddingTable& corpus, std::size_t k) {
    const std::size_t d = corpus.dim();
    if (corpus.size() > 0 && query.size() != d) throw DimensionError("knn: query width does not match corpus");
    auto x = corpus.rows.data();
    std::map<std::string, Neighbor> best;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < d; ++j) s += static_cast<double>(query[j]) * x[i * d + j];
        const Neighbor cand{corpus.video_id[i], corpus.frame[i], static_cast<float>(s)};
        auto it = best.find(cand.video_id);
        if (it == best.end()) {
            best.emplace(cand.video_id, cand);
        } else if (cand.similarity > it->second.similarity ||
                   (cand.similarity == it->second.similarity && cand.frame < it->second.frame)) {
            it->second = cand;
        }
    }
    KnnResult result;
    for (auto& [id, n] : best) result.neighbors.push_back(n);
    std::sort(result.neighbors.begin(), result.neighbors.end(), [](const Neighbor& a, const Neighbor& b) {
        if (a.similarity != b.similarity) return a.similarity > b.similarity;
        if (a.video_id != b.video_id) return a.video_id < b.video_id;
        return a.frame < b.frame;
    });
    result.truncated = result.neighbors.size() < k;
    if (result.neighbors.size() > k) result.neighbors.resize(k);
    return result;
}

// ---------------------------------------------------------------------------
// Embedding export

inline std::string embedding_csv(const EmbeddingTable& table, std::size_t dim) {
    std::string out = "video_id,frame_index";
    for (std::size_t j = 0; j < dim; ++j) out += ",e" + std::to_string(j);
    out += '\n';
    auto x = table.rows.data();
    char cell[32];
    for (std::size_t i = 0; i < table.size(); ++i) {
        out += table.video_id[i] + ',' + std::to_string(table.frame[i]);
        for (std::size_t j = 0; j < dim; ++j) {
            std::snprintf(cell, sizeof cell, ",%.9g", static_cast<double>(x[i * dim + j]));
            out += cell;
        }
        out += '\n';
    }
    return out;
}

inline void export_embeddings(const EncoderParams& params, const VideoManifest& manifest, const FrameStore& store,
                              const std::filesystem::path& path) {
    const EmbeddingTable table = embed_frames(params, manifest, store);
    const std::string text = embedding_csv(table, params.config.embed_dim);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
    if (!out) throw IoError("short write to " + path.string());
}

// ---------------------------------------------------------------------------
// Tracking

struct BBox {
    double cx = 0.0, cy = 0.0;  // center, pixels
    double width = 0.0, height = 0.0;

    double x0() const { return cx - width / 2.0; }
    double y0() const { return cy - height / 2.0; }
    void validate(const char* what) const {
        if (!(width > 0.0) || !(height > 0.0) || !std::isfinite(cx) || !std::isfinite(cy)) {
            throw DimensionError(std::string(what) + ": degenerate box");
        }
    }
};

inline double iou(const BBox& a, const BBox& b) {
    const double ix = std::max(0.0, std::min(a.x0() + a.width, b.x0() + b.width) - std::max(a.x0(), b.x0()));
    const double iy = std::max(0.0, std::min(a.y0() + a.height, b.y0() + b.height) - std::max(a.y0(), b.y0()));
    const double inter = ix * iy;
    const double uni = a.width * a.height + b.width * b.height - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

inline double center_distance(const BBox& a, const BBox& b) { return std::hypot(a.cx - b.cx, a.cy - b.cy); }

struct TrackerConfig {
    std::size_t template_size = 32;
    std::size_t search_size = 64;
    double template_context = 2.0;  // template crop side = box side x 2
    double search_context = 4.0;    // search crop side = box side x 4
    std::array<double, 3> scales{0.96, 1.0, 1.04};
    double scale_penalty = 0.97;  // applied to non-unit scale responses
};

/// Valid 2D cross-correlation of a 1 x C x h x w template over 1 x C x H x W search features.
inline Tensor response_map(const Tensor& search_features, const Tensor& template_features) {
    return conv2d(search_features, template_features, 1, 0);
}

/// Bilinear upsampling of an R x R response by `factor`, returning the argmax offset from the
/// map center in upsampled cells (one cell = one search-crop pixel when factor = stride).
inline std::pair<double, double> upsampled_peak(std::span<const float> response, std::size_t rows, std::size_t cols,
                                                std::size_t factor, float* peak_value = nullptr) {
    const std::size_t up_rows = (rows - 1) * factor + 1, up_cols = (cols - 1) * factor + 1;
    double best = -std::numeric_limits<double>::infinity();
    std::size_t best_r = 0, best_c = 0;
    for (std::size_t r = 0; r < up_rows; ++r) {
        const double fy = static_cast<double>(r) / static_cast<double>(factor);
        const std::size_t y0 = std::min(static_cast<std::size_t>(fy), rows - 1), y1 = std::min(y0 + 1, rows - 1);
        const double wy = fy - static_cast<double>(y0);
        for (std::size_t c = 0; c < up_cols; ++c) {
            const double fx = static_cast<double>(c) / static_cast<double>(factor);
            const std::size_t x0 = std::min(static_cast<std::size_t>(fx), cols - 1), x1 = std::min(x0 + 1, cols - 1);
            const double wx = fx - static_cast<double>(x0);
            const double v = (1 - wy) * ((1 - wx) * response[y0 * cols + x0] + wx * response[y0 * cols + x1]) +
                             wy * ((1 - wx) * response[y1 * cols + x0] + wx * response[y1 * cols + x1]);
            if (v > best) {
                best = v;
                best_r = r;
                best_c = c;
            }
        }
    }
    if (peak_value) *peak_value = static_cast<float>(best);
    return {static_cast<double>(best_r) - static_cast<double>(up_rows - 1) / 2.0,
            static_cast<double>(best_c) - static_cast<double>(up_cols - 1) / 2.0};
}

namespace detail {
inline Tensor crop_features(const EncoderParams& params, const FloatImage& frame, double cx, double cy, double w, double h,
                            std::size_t out) {
    const FloatImage crop = crop_resize(frame, cx - w / 2.0, cy - h / 2.0, w, h, out, out);
    return spatial_features(params, images_to_tensor({crop}));
}

inline BBox clamp_box(BBox b, std::size_t width, std::size_t height) {
    b.width = std::min(b.width, static_cast<double>(width));
    b.height = std::min(b.height, static_cast<double>(height));
    b.cx = std::clamp(b.cx, b.width / 2.0, static_cast<double>(width) - b.width / 2.0);
    b.cy = std::clamp(b.cy, b.height / 2.0, static_cast<double>(height) - b.height / 2.0);
    return b;
}
}  // namespace detail

/// SiamFC-style tracking without a cosine window. Returns one box per frame; frame 0 is `init`.
inline std::vector<BBox> siamfc_track(const EncoderParams& params, const std::vector<RgbImage>& frames, const BBox& init,
                                      const TrackerConfig& cfg = {}) {
    init.validate("siamfc_track");
    if (frames.empty()) return {};
    const auto W = frames[0].width, H = frames[0].height;
    if (init.x0() < 0.0 || init.y0() < 0.0 || init.x0() + init.width > static_cast<double>(W) ||
        init.y0() + init.height > static_cast<double>(H)) {
        throw PreconditionError("siamfc_track: initial box lies outside frame 0");
    }
    NoGradGuard no_grad;
    const std::size_t stride = params.config.total_stride();
    const Tensor templ = detail::crop_features(params, to_float(frames[0]), init.cx, init.cy, init.width * cfg.template_context,
                                               init.height * cfg.template_context, cfg.template_size);
    std::vector<BBox> boxes{init};
    BBox box = init;
    for (std::size_t t = 1; t < frames.size(); ++t) {
        if (frames[t].width != W || frames[t].height != H) throw DimensionError("siamfc_track: frame size changed");
        const FloatImage frame = to_float(frames[t]);
        double best_score = -std::numeric_limits<double>::infinity();
        BBox best = box;
        for (double s : cfg.scales) {
            const double rw = box.width * cfg.search_context * s, rh = box.height * cfg.search_context * s;
            const Tensor feats = detail::crop_features(params, frame, box.cx, box.cy, rw, rh, cfg.search_size);
            const Tensor resp = response_map(feats, templ);
            float peak = 0.0f;
            const auto [dr, dc] = upsampled_peak(resp.data(), resp.dim(2), resp.dim(3), stride, &peak);
            double score = peak;
            if (s != 1.0) score = score > 0 ? score * cfg.scale_penalty : score / cfg.scale_penalty;
            if (score > best_score) {
                best_score = score;
                const double px_x = rw / static_cast<double>(cfg.search_size);
                const double px_y = rh / static_cast<double>(cfg.search_size);
                best = BBox{box.cx + dc * px_x, box.cy + dr * px_y, box.width * s, box.height * s};
            }
        }
        box = detail::clamp_box(best, W, H);
        boxes.push_back(box);
    }
    return boxes;
}

// ---------------------------------------------------------------------------
// OTB metrics

inline constexpr std::size_t kPrecisionThresholds = 51;  // 0..50 px
inline constexpr std::size_t kSuccessThresholds = 101;   // 0, 0.01, .., 1

struct TrackMetrics {
    double precision_auc = 0.0;
    double success_auc = 0.0;
    double raw_precision_auc = 0.0;
    std::vector<double> precision_curve;      // normalized center error (100-px diagonal reference)
    std::vector<double> raw_precision_curve;  // raw pixel center error
    std::vector<double> success_curve;
};

/// Curves from per-frame measurements. Center errors are compared with <=, IoU with >= and
/// IoU must also be positive.
inline TrackMetrics otb_from_measurements(const std::vector<double>& normalized_error, const std::vector<double>& raw_error,
                                          const std::vector<double>& overlaps) {
    const std::size_t n = overlaps.size();
    if (normalized_error.size() != n || raw_error.size() != n) throw DimensionError("otb: measurement lengths differ");
    if (n == 0) throw DegenerateInputError("otb: empty sequence");
    TrackMetrics m;
    m.precision_curve.resize(kPrecisionThresholds);
    m.raw_precision_curve.resize(kPrecisionThresholds);
    m.success_curve.resize(kSuccessThresholds);
    // Areas come from integer hit totals so that hand-integrated values are matched exactly.
    std::size_t total = 0, raw_total = 0, success_total = 0;
    for (std::size_t t = 0; t < kPrecisionThresholds; ++t) {
        std::size_t hit = 0, raw_hit = 0;
        for (std::size_t i = 0; i < n; ++i) {
            hit += normalized_error[i] <= static_cast<double>(t);
            raw_hit += raw_error[i] <= static_cast<double>(t);
        }
        m.precision_curve[t] = static_cast<double>(hit) / static_cast<double>(n);
        m.raw_precision_curve[t] = static_cast<double>(raw_hit) / static_cast<double>(n);
        total += hit;
        raw_total += raw_hit;
    }
    for (std::size_t t = 0; t < kSuccessThresholds; ++t) {
        const double threshold = static_cast<double>(t) / 100.0;
        std::size_t hit = 0;
        for (std::size_t i = 0; i < n; ++i) hit += overlaps[i] > 0.0 && overlaps[i] >= threshold;
        m.success_curve[t] = static_cast<double>(hit) / static_cast<double>(n);
        success_total += hit;
    }
    const auto cells = [n](std::size_t thresholds) { return static_cast<double>(n * thresholds); };
    m.precision_auc = static_cast<double>(total) / cells(kPrecisionThresholds);
    m.raw_precision_auc = static_cast<double>(raw_total) / cells(kPrecisionThresholds);
    m.success_auc = static_cast<double>(success_total) / cells(kSuccessThresholds);
    return m;
}

inline TrackMetrics otb_metrics(const std::vector<BBox>& predicted, const std::vector<BBox>& truth) {
    if (predicted.size() != truth.size()) {
        throw DimensionError("otb: " + std::to_string(predicted.size()) + " predictions for " + std::to_string(truth.size()) +
                             " ground-truth boxes");
    }
    std::vector<double> norm, raw, overlaps;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        truth[i].validate("otb ground truth");
        const double dist = center_distance(predicted[i], truth[i]);
        raw.push_back(dist);
        norm.push_back(dist / std::hypot(truth[i].width, truth[i].height) * 100.0);
        overlaps.push_back(iou(predicted[i], truth[i]));
    }
    return otb_from_measurements(norm, raw, overlaps);
}

// ---------------------------------------------------------------------------
// Scripted tracking sequences

enum class TrackMotion { static_target, translate };

struct TrackSequenceConfig {
    std::size_t frame_size = 128;
    std::size_t frames = 20;
    std::size_t object_size = 16;
    TrackMotion motion = TrackMotion::static_target;
    double dx = 3.0, dy = 2.0;  // per-frame displacement for translate
    double start_x = 40.0, start_y = 40.0;
};

struct TrackSequence {
    std::vector<RgbImage> frames;
    std::vector<BBox> groundtruth;
};

/// A textured square target on a plain gray background. Positions are whole pixels so the
/// ground truth is exact.
inline TrackSequence make_track_sequence(const TrackSequenceConfig& cfg, std::uint64_t seed) {
    if (cfg.frame_size == 0 || cfg.object_size == 0 || cfg.frames == 0) throw PreconditionError("track sequence: zero size");
    Rng rng = Rng(seed).split("track-texture");
    const std::size_t s = cfg.object_size;
    std::vector<std::array<std::uint8_t, 3>> texture(s * s);
    const std::size_t cell = std::max<std::size_t>(2, s / 4);
    std::vector<std::array<std::uint8_t, 3>> palette(16);
    for (auto& p : palette) {
        for (auto& ch : p) ch = static_cast<std::uint8_t>(30 + rng.below(200));
    }
    for (std::size_t y = 0; y < s; ++y) {
        for (std::size_t x = 0; x < s; ++x) texture[y * s + x] = palette[((y / cell) * 4 + x / cell) % palette.size()];
    }
    TrackSequence seq;
    for (std::size_t t = 0; t < cfg.frames; ++t) {
        const double step = cfg.motion == TrackMotion::translate ? static_cast<double>(t) : 0.0;
        const auto left = static_cast<long>(std::lround(cfg.start_x + cfg.dx * step - static_cast<double>(s) / 2.0));
        const auto top = static_cast<long>(std::lround(cfg.start_y + cfg.dy * step - static_cast<double>(s) / 2.0));
        if (left < 0 || top < 0 || left + static_cast<long>(s) > static_cast<long>(cfg.frame_size) ||
            top + static_cast<long>(s) > static_cast<long>(cfg.frame_size)) {
            throw PreconditionError("track sequence: target leaves the frame");
        }
        RgbImage frame(cfg.frame_size, cfg.frame_size);
        std::fill(frame.pixels.begin(), frame.pixels.end(), std::uint8_t{128});
        for (std::size_t y = 0; y < s; ++y) {
            for (std::size_t x = 0; x < s; ++x) {
                for (std::size_t c = 0; c < 3; ++c) {
                    frame.pixels[((static_cast<std::size_t>(top) + y) * cfg.frame_size + static_cast<std::size_t>(left) + x) * 3 + c] =
                        texture[y * s + x][c];
                }
            }
        }
        seq.frames.push_back(std::move(frame));
        seq.groundtruth.push_back({static_cast<double>(left) + static_cast<double>(s) / 2.0,
                                   static_cast<double>(top) + static_cast<double>(s) / 2.0, static_cast<double>(s),
                                   static_cast<double>(s)});
    }
    return seq;
}

inline nlohmann::json metrics_json(const TrackMetrics& m) {
    return {{"precision_auc", m.precision_auc},
            {"success_auc", m.success_auc},
            {"raw_precision_auc", m.raw_precision_auc},
            {"curves", {{"precision", m.precision_curve}, {"raw_precision", m.raw_precision_curve}, {"success", m.success_curve}}}};
}

}  // namespace vince
