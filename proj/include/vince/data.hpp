#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "vince/errors.hpp"
#include "vince/image.hpp"
#include "vince/parallel.hpp"
#include "vince/rng.hpp"

namespace vince {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Manifest

struct VideoRecord {
    std::string video_id;
    std::vector<std::string> frames;  // paths relative to the manifest's directory, or absolute
    std::optional<int> label;

    bool operator==(const VideoRecord&) const = default;
};

struct VideoManifest {
    std::vector<VideoRecord> records;
    fs::path root;  // directory that relative frame paths resolve against

    std::size_t total_frames() const {
        std::size_t n = 0;
        for (const auto& r : records) n += r.frames.size();
        return n;
    }

    fs::path frame_path(const VideoRecord& record, std::size_t frame) const {
        fs::path p(record.frames.at(frame));
        return p.is_absolute() ? p : root / p;
    }

    std::size_t label_count() const {
        int top = -1;
        for (const auto& r : records) {
            if (r.label) top = std::max(top, *r.label);
        }
        return static_cast<std::size_t>(top + 1);
    }
};

inline std::string manifest_line(const VideoRecord& record) {
    nlohmann::json j;
    j["video_id"] = record.video_id;
    j["frames"] = record.frames;
    j["label"] = record.label ? nlohmann::json(*record.label) : nlohmann::json(nullptr);
    return j.dump();
}

/// JSON-lines, one video per line, LF endings.
inline void write_manifest(const fs::path& path, const VideoManifest& manifest) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write manifest " + path.string());
    for (const auto& record : manifest.records) out << manifest_line(record) << '\n';
    if (!out) throw IoError("short write to manifest " + path.string());
}

/// Parses a manifest; duplicate ids, missing frame files and malformed lines are rejected.
inline VideoManifest read_manifest(const fs::path& path, bool check_files = true) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open manifest " + path.string());
    VideoManifest manifest;
    manifest.root = path.parent_path();
    std::unordered_map<std::string, std::size_t> seen;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        VideoRecord record;
        try {
            auto j = nlohmann::json::parse(line);
            record.video_id = j.at("video_id").get<std::string>();
            record.frames = j.at("frames").get<std::vector<std::string>>();
            if (j.contains("label") && !j["label"].is_null()) record.label = j["label"].get<int>();
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
        if (!seen.emplace(record.video_id, line_no).second) {
            throw FormatError(path.string() + ": duplicate video_id " + record.video_id);
        }
        manifest.records.push_back(std::move(record));
        if (check_files) {
            const auto& r = manifest.records.back();
            for (std::size_t f = 0; f < r.frames.size(); ++f) {
                if (!fs::exists(manifest.frame_path(r, f))) {
                    throw IoError("manifest references missing frame " + manifest.frame_path(r, f).string());
                }
            }
        }
    }
    return manifest;
}

/// All frames of a manifest, decoded once.
struct FrameStore {
    std::vector<std::vector<RgbImage>> videos;

    static FrameStore load(const VideoManifest& manifest) {
        FrameStore store;
        store.videos.resize(manifest.records.size());
        parallel_for(manifest.records.size(), [&](std::size_t v) {
            const auto& record = manifest.records[v];
            for (std::size_t f = 0; f < record.frames.size(); ++f) store.videos[v].push_back(read_ppm(manifest.frame_path(record, f)));
        });
        return store;
    }
};

// ---------------------------------------------------------------------------
// Curation

struct CurationConfig {
    std::size_t frames_per_video = 4;  // T
    std::size_t gap = 5;               // G, in source frames
    double static_threshold = 0.05;
    double change_epsilon = 10.0;      // 0-255 scale

    void validate() const {
        if (frames_per_video < 1) throw PreconditionError("curation: T must be >= 1");
        if (gap < 1) throw PreconditionError("curation: G must be >= 1");
        if (!(static_threshold >= 0.0 && static_threshold <= 1.0)) {
            throw PreconditionError("curation: static_threshold must lie in [0, 1]");
        }
    }
};

/// Fraction of pixels whose largest per-channel absolute difference exceeds `epsilon`.
inline double changed_fraction(const RgbImage& a, const RgbImage& b, double epsilon) {
    if (a.width != b.width || a.height != b.height) throw DimensionError("changed_fraction: frame sizes differ");
    std::size_t changed = 0;
    const std::size_t pixels = a.width * a.height;
    for (std::size_t p = 0; p < pixels; ++p) {
        int diff = 0;
        for (std::size_t c = 0; c < 3; ++c) diff = std::max(diff, std::abs(int(a.pixels[p * 3 + c]) - int(b.pixels[p * 3 + c])));
        if (diff > epsilon) ++changed;
    }
    return pixels == 0 ? 0.0 : static_cast<double>(changed) / static_cast<double>(pixels);
}

/// Keep decision for a frame sequence: compares its first and last frames and keeps
/// iff the changed-pixel fraction reaches static_threshold.
inline bool filter_static(const std::vector<RgbImage>& frames, const CurationConfig& cfg) {
    if (frames.size() < 2) throw DegenerateInputError("filter_static: need at least 2 frames");
    return changed_fraction(frames.front(), frames.back(), cfg.change_epsilon) >= cfg.static_threshold;
}

/// Indices start, start+G, ..., start+(T-1)G with start uniform over the valid range.
inline std::vector<std::size_t> extract_gap_indices(std::size_t video_length, const CurationConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    const std::size_t span = (cfg.frames_per_video - 1) * cfg.gap + 1;
    if (video_length < span) {
        throw InsufficientDataError("extract_gap_frames: video of " + std::to_string(video_length) + " frames, need " +
                                    std::to_string(span));
    }
    Rng rng = Rng(seed).split("gap-start");
    const std::size_t start = static_cast<std::size_t>(rng.below(video_length - span + 1));
    std::vector<std::size_t> out(cfg.frames_per_video);
    for (std::size_t t = 0; t < out.size(); ++t) out[t] = start + t * cfg.gap;
    return out;
}

template <typename Frame>
std::vector<Frame> extract_gap_frames(const std::vector<Frame>& video, const CurationConfig& cfg, std::uint64_t seed) {
    std::vector<Frame> out;
    for (std::size_t i : extract_gap_indices(video.size(), cfg, seed)) out.push_back(video[i]);
    return out;
}

namespace detail {

// Sorts by the last run of digits in the stem, then by name.
inline std::vector<fs::path> numbered_frames(const fs::path& dir) {
    std::vector<std::pair<long long, fs::path>> items;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file() || entry.path().extension() != ".ppm") continue;
        const std::string stem = entry.path().stem().string();
        long long number = -1;
        auto end = stem.find_last_of("0123456789");
        if (end != std::string::npos) {
            auto begin = stem.find_last_not_of("0123456789", end);
            begin = begin == std::string::npos ? 0 : begin + 1;
            number = std::stoll(stem.substr(begin, end - begin + 1));
        }
        items.emplace_back(number, entry.path());
    }
    std::sort(items.begin(), items.end());
    std::vector<fs::path> out;
    for (auto& [n, p] : items) out.push_back(std::move(p));
    return out;
}

}  // namespace detail

struct CurationReport {
    VideoManifest manifest;
    std::size_t kept = 0;
    std::size_t dropped_static = 0;
    std::size_t dropped_short = 0;

    std::size_t dropped() const { return dropped_static + dropped_short; }
};

/// Source videos for curation: either a manifest.jsonl (labels carried over) or a
/// directory of per-video directories holding numbered .ppm frames.
inline VideoManifest scan_source(const fs::path& input) {
    if (fs::is_regular_file(input)) return read_manifest(input);
    if (!fs::is_directory(input)) throw IoError("curation input " + input.string() + " does not exist");
    if (fs::exists(input / "manifest.jsonl")) return read_manifest(input / "manifest.jsonl");
    VideoManifest manifest;
    manifest.root = input;
    std::vector<fs::path> dirs;
    for (const auto& entry : fs::directory_iterator(input)) {
        if (entry.is_directory()) dirs.push_back(entry.path());
    }
    std::sort(dirs.begin(), dirs.end());
    for (const auto& dir : dirs) {
        VideoRecord record{dir.filename().string(), {}, std::nullopt};
        for (const auto& frame : detail::numbered_frames(dir)) record.frames.push_back(fs::relative(frame, input).string());
        if (!record.frames.empty()) manifest.records.push_back(std::move(record));
    }
    return manifest;
}

/// Gap extraction + static filtering over every source video; kept frames are copied to
/// <output>/frames/<video_id>/ and indexed in <output>/manifest.jsonl.
inline CurationReport curate(const fs::path& input, const fs::path& output, const CurationConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    const VideoManifest source = scan_source(input);
    CurationReport report;
    report.manifest.root = output;
    fs::create_directories(output / "frames");
    const Rng master(seed);
    for (const auto& record : source.records) {
        const std::size_t length = record.frames.size();
        // A video holding exactly T frames is taken as already extracted, which makes
        // curation idempotent on its own output.
        const bool extracted = length == cfg.frames_per_video;
        if (!extracted && length < (cfg.frames_per_video - 1) * cfg.gap + 1) {
            ++report.dropped_short;
            continue;
        }
        std::vector<std::size_t> picks(length);
        for (std::size_t i = 0; i < length; ++i) picks[i] = i;
        if (!extracted) picks = extract_gap_indices(length, cfg, master.split(record.video_id).key());
        std::vector<RgbImage> frames;
        for (auto i : picks) frames.push_back(read_ppm(source.frame_path(record, i)));
        // A single extracted frame gives nothing to compare, so fall back to the source's ends.
        const bool keep = frames.size() >= 2
                              ? filter_static(frames, cfg)
                              : filter_static({read_ppm(source.frame_path(record, 0)), read_ppm(source.frame_path(record, length - 1))}, cfg);
        if (!keep) {
            ++report.dropped_static;
            continue;
        }
        VideoRecord out{record.video_id, {}, record.label};
        const fs::path dir = output / "frames" / record.video_id;
        fs::create_directories(dir);
        for (std::size_t t = 0; t < frames.size(); ++t) {
            char name[32];
            std::snprintf(name, sizeof name, "frame_%03zu.ppm", t);
            write_ppm(dir / name, frames[t]);
            out.frames.push_back((fs::path("frames") / record.video_id / name).generic_string());
        }
        report.manifest.records.push_back(std::move(out));
        ++report.kept;
    }
    write_manifest(output / "manifest.jsonl", report.manifest);
    return report;
}

// ---------------------------------------------------------------------------
// Synthetic videos

struct SyntheticWorldConfig {
    std::size_t num_classes = 8;
    std::size_t videos_per_class = 50;
    std::size_t frames_per_video = 4;
    std::size_t image_size = 64;
    double motion_step = 3.0;      // object displacement per frame, pixels
    double pan_step = 3.0;         // background pan per frame, pixels
    double scale_drift = 0.04;     // per-frame relative object scale change
    double object_scale = 0.22;    // object radius as a fraction of the image side
    double background_change = 1.0;  // 0: one background per video, 1: a fresh background every frame

    void validate() const {
        if (num_classes < 1 || videos_per_class < 1 || frames_per_video < 1) {
            throw PreconditionError("synthetic: classes, videos and frames must be >= 1");
        }
        if (image_size < 8) throw PreconditionError("synthetic: image_size must be >= 8");
        if (!(background_change >= 0.0 && background_change <= 1.0)) {
            throw PreconditionError("synthetic: background_change must lie in [0, 1]");
        }
    }
};

struct SyntheticCorpus {
    VideoManifest manifest;
    FrameStore frames;
};

namespace detail {

inline void hsv_to_rgb(double h, double s, double v, double rgb[3]) {
    h = h - std::floor(h);
    const double i = std::floor(h * 6.0);
    const double f = h * 6.0 - i;
    const double p = v * (1 - s), q = v * (1 - f * s), t = v * (1 - (1 - f) * s);
    switch (static_cast<int>(i) % 6) {
        case 0: rgb[0] = v, rgb[1] = t, rgb[2] = p; break;
        case 1: rgb[0] = q, rgb[1] = v, rgb[2] = p; break;
        case 2: rgb[0] = p, rgb[1] = v, rgb[2] = t; break;
        case 3: rgb[0] = p, rgb[1] = q, rgb[2] = v; break;
        case 4: rgb[0] = t, rgb[1] = p, rgb[2] = v; break;
        default: rgb[0] = v, rgb[1] = p, rgb[2] = q; break;
    }
}

// Shape families on object-local coordinates (unit radius). True inside the shape.
inline bool shape_contains(std::size_t family, double u, double v) {
    const double r = std::hypot(u, v);
    switch (family % 8) {
        case 0: return r <= 1.0;                                                              // disc
        case 1: return std::max(std::abs(u), std::abs(v)) <= 0.8;                             // square
        case 2: return v <= 0.6 && v >= -0.9 + 1.7 * std::abs(u) / 1.0;                       // triangle
        case 3: return (std::abs(u) <= 0.3 && std::abs(v) <= 1.0) || (std::abs(v) <= 0.3 && std::abs(u) <= 1.0);  // cross
        case 4: return r <= 1.0 && r >= 0.55;                                                 // ring
        case 5: return std::abs(u) + std::abs(v) <= 1.0;                                      // diamond
        case 6: return std::abs(u) <= 1.0 && (std::abs(v - 0.5) <= 0.22 || std::abs(v + 0.5) <= 0.22);  // twin bars
        default: {                                                                            // crescent
            return r <= 1.0 && std::hypot(u - 0.45, v) > 0.75;
        }
    }
}

struct BackgroundStyle {
    double bg_a[3], bg_b[3];
    double freq1, angle1, freq2, angle2;
};

inline BackgroundStyle draw_background(Rng& rng) {
    BackgroundStyle b{};
    hsv_to_rgb(rng.uniform(), rng.uniform(0.1, 0.45), rng.uniform(0.25, 0.75), b.bg_a);
    hsv_to_rgb(rng.uniform(), rng.uniform(0.1, 0.45), rng.uniform(0.25, 0.75), b.bg_b);
    b.freq1 = rng.uniform(0.15, 0.6);
    b.angle1 = rng.uniform(0.0, std::numbers::pi);
    b.freq2 = rng.uniform(0.15, 0.6);
    b.angle2 = rng.uniform(0.0, std::numbers::pi);
    return b;
}

struct VideoNuisance {
    double bg_a[3], bg_b[3];
    double freq1, angle1, freq2, angle2;
    double pan_dx, pan_dy;
    double x, y, vx, vy;
    double scale, scale_rate;
    double rotation, spin;
    double obj_rgb[3];
};

}  // namespace detail

/// Renders one frame of a synthetic video; exposed for tests and tracking sequences.
inline RgbImage render_synthetic_frame(const detail::VideoNuisance& nz, std::size_t family, std::size_t size, std::size_t t,
                                       double illumination) {
    RgbImage image(size, size);
    const double side = static_cast<double>(size);
    const double pan_x = nz.pan_dx * static_cast<double>(t), pan_y = nz.pan_dy * static_cast<double>(t);
    const double c1 = std::cos(nz.angle1), s1 = std::sin(nz.angle1);
    const double c2 = std::cos(nz.angle2), s2 = std::sin(nz.angle2);
    const double cr = std::cos(nz.rotation + nz.spin * static_cast<double>(t));
    const double sr = std::sin(nz.rotation + nz.spin * static_cast<double>(t));
    const double scale = nz.scale * std::pow(nz.scale_rate, static_cast<double>(t));
    // Object centre bounces off the borders.
    auto bounce = [&](double start, double vel) {
        const double lo = 0.2 * side, hi = 0.8 * side, span = hi - lo;
        double p = start - lo + vel * static_cast<double>(t);
        p = std::fmod(p, 2.0 * span);
        if (p < 0) p += 2.0 * span;
        return lo + (p <= span ? p : 2.0 * span - p);
    };
    const double cx = bounce(nz.x, nz.vx), cy = bounce(nz.y, nz.vy);
    for (std::size_t py = 0; py < size; ++py) {
        for (std::size_t px = 0; px < size; ++px) {
            double acc[3] = {0, 0, 0};
            // 2x2 supersampling for anti-aliased edges.
            for (int sy = 0; sy < 2; ++sy) {
                for (int sx = 0; sx < 2; ++sx) {
                    const double fx = static_cast<double>(px) + 0.25 + 0.5 * sx;
                    const double fy = static_cast<double>(py) + 0.25 + 0.5 * sy;
                    const double u = ((fx - cx) * cr + (fy - cy) * sr) / scale;
                    const double v = (-(fx - cx) * sr + (fy - cy) * cr) / scale;
                    double rgb[3];
                    if (detail::shape_contains(family, u, v)) {
                        for (int c = 0; c < 3; ++c) rgb[c] = nz.obj_rgb[c];
                    } else {
                        const double bx = fx + pan_x, by = fy + pan_y;
                        const double w1 = 0.5 + 0.5 * std::sin(nz.freq1 * (bx * c1 + by * s1));
                        const double w2 = 0.5 + 0.5 * std::sin(nz.freq2 * (bx * c2 + by * s2));
                        const double mix = 0.6 * w1 + 0.4 * w2;
                        for (int c = 0; c < 3; ++c) rgb[c] = nz.bg_a[c] * (1 - mix) + nz.bg_b[c] * mix;
                    }
                    for (int c = 0; c < 3; ++c) acc[c] += rgb[c];
                }
            }
            for (std::size_t c = 0; c < 3; ++c) {
                const double value = std::clamp(acc[c] / 4.0 * illumination, 0.0, 1.0);
                image.at(px, py, c) = static_cast<std::uint8_t>(std::lround(value * 255.0));
            }
        }
    }
    return image;
}

/// Deterministic corpus: class = (shape family, hue); each video adds its own background
/// texture, trajectory, scale drift and rotation; frames move along the trajectory.
inline SyntheticCorpus generate_synthetic(const SyntheticWorldConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    SyntheticCorpus corpus;
    const std::size_t total = cfg.num_classes * cfg.videos_per_class;
    corpus.manifest.records.resize(total);
    corpus.frames.videos.resize(total);
    const Rng master = Rng(seed).split("synthetic");
    const double side = static_cast<double>(cfg.image_size);
    parallel_for(total, [&](std::size_t index) {
        const std::size_t cls = index / cfg.videos_per_class;
        const std::size_t local = index % cfg.videos_per_class;
        Rng rng = master.split(index);
        detail::VideoNuisance nz{};
        const detail::BackgroundStyle base = detail::draw_background(rng);
        const double pan_dir = rng.uniform(0.0, 2.0 * std::numbers::pi);
        nz.pan_dx = cfg.pan_step * std::cos(pan_dir);
        nz.pan_dy = cfg.pan_step * std::sin(pan_dir);
        nz.x = rng.uniform(0.3, 0.7) * side;
        nz.y = rng.uniform(0.3, 0.7) * side;
        const double dir = rng.uniform(0.0, 2.0 * std::numbers::pi);
        nz.vx = cfg.motion_step * std::cos(dir);
        nz.vy = cfg.motion_step * std::sin(dir);
        nz.scale = cfg.object_scale * side * rng.uniform(0.8, 1.2);
        nz.scale_rate = 1.0 + cfg.scale_drift * (rng.bernoulli(0.5) ? 1.0 : -1.0);
        nz.rotation = rng.uniform(-0.3, 0.3);
        nz.spin = rng.uniform(-0.08, 0.08);
        const double hue = static_cast<double>(cls) / static_cast<double>(cfg.num_classes) + rng.uniform(-0.02, 0.02);
        detail::hsv_to_rgb(hue, rng.uniform(0.75, 0.95), rng.uniform(0.8, 0.95), nz.obj_rgb);

        char id[48];
        std::snprintf(id, sizeof id, "c%02zu_v%04zu", cls, local);
        VideoRecord record{id, {}, static_cast<int>(cls)};
        auto& frames = corpus.frames.videos[index];
        for (std::size_t t = 0; t < cfg.frames_per_video; ++t) {
            const double illumination = 1.0 + rng.uniform(-0.06, 0.06);
            // Camera motion between frames reveals new scenery: blend towards a fresh background.
            Rng scene = rng.split("scene").split(t);
            const detail::BackgroundStyle fresh = detail::draw_background(scene);
            const double w = t == 0 ? 0.0 : cfg.background_change;
            auto lerp = [w](double a, double b) { return a + w * (b - a); };
            for (int c = 0; c < 3; ++c) {
                nz.bg_a[c] = lerp(base.bg_a[c], fresh.bg_a[c]);
                nz.bg_b[c] = lerp(base.bg_b[c], fresh.bg_b[c]);
            }
            nz.freq1 = lerp(base.freq1, fresh.freq1);
            nz.angle1 = lerp(base.angle1, fresh.angle1);
            nz.freq2 = lerp(base.freq2, fresh.freq2);
            nz.angle2 = lerp(base.angle2, fresh.angle2);
            frames.push_back(render_synthetic_frame(nz, cls, cfg.image_size, t, illumination));
            char name[32];
            std::snprintf(name, sizeof name, "frame_%03zu.ppm", t);
            record.frames.push_back((fs::path("frames") / id / name).generic_string());
        }
        corpus.manifest.records[index] = std::move(record);
    });
    return corpus;
}

/// Writes <dir>/frames/<id>/frame_###.ppm and <dir>/manifest.jsonl.
inline void write_corpus(const fs::path& dir, SyntheticCorpus& corpus) {
    corpus.manifest.root = dir;
    for (std::size_t v = 0; v < corpus.manifest.records.size(); ++v) {
        const auto& record = corpus.manifest.records[v];
        fs::create_directories(dir / "frames" / record.video_id);
        for (std::size_t f = 0; f < record.frames.size(); ++f) write_ppm(dir / record.frames[f], corpus.frames.videos[v][f]);
    }
    write_manifest(dir / "manifest.jsonl", corpus.manifest);
}

// ---------------------------------------------------------------------------
// Augmentation

struct AugmentConfig {
    double crop_scale_min = 0.3;  // fraction of the image area kept by the random crop
    double crop_scale_max = 1.0;
    double horizontal_flip_prob = 0.5;
    double brightness = 0.4;
    double contrast = 0.4;
    double saturation = 0.4;
    std::size_t output_size = 64;

    static AugmentConfig identity(std::size_t output_size) {
        return AugmentConfig{1.0, 1.0, 0.0, 0.0, 0.0, 0.0, output_size};
    }

    void validate() const {
        if (!(crop_scale_min > 0.0 && crop_scale_min <= crop_scale_max && crop_scale_max <= 1.0)) {
            throw PreconditionError("augment: crop scales must satisfy 0 < min <= max <= 1");
        }
        if (!(horizontal_flip_prob >= 0.0 && horizontal_flip_prob <= 1.0)) {
            throw PreconditionError("augment: flip probability must lie in [0, 1]");
        }
        if (brightness < 0 || contrast < 0 || saturation < 0) throw PreconditionError("augment: negative jitter range");
        if (output_size == 0) throw DimensionError("augment: output_size must be positive");
    }
};

/// Random crop placement and photometric factors; every field is drawn on every call so
/// the number of draws never depends on the outcome.
struct AugmentDraw {
    double crop_x = 0, crop_y = 0, crop_w = 0, crop_h = 0;
    bool flip = false;
    double brightness = 1, contrast = 1, saturation = 1;
};

inline AugmentDraw draw_augment(std::size_t width, std::size_t height, const AugmentConfig& cfg, Rng& rng) {
    cfg.validate();
    AugmentDraw d;
    const double area = rng.uniform(cfg.crop_scale_min, cfg.crop_scale_max);
    const double side = std::sqrt(area);
    d.crop_w = side * static_cast<double>(width);
    d.crop_h = side * static_cast<double>(height);
    if (d.crop_w < 1.0 || d.crop_h < 1.0) throw DimensionError("augment: crop smaller than one pixel");
    d.crop_x = rng.uniform() * (static_cast<double>(width) - d.crop_w);
    d.crop_y = rng.uniform() * (static_cast<double>(height) - d.crop_h);
    d.flip = rng.bernoulli(cfg.horizontal_flip_prob);
    d.brightness = 1.0 + rng.uniform(-cfg.brightness, cfg.brightness);
    d.contrast = 1.0 + rng.uniform(-cfg.contrast, cfg.contrast);
    d.saturation = 1.0 + rng.uniform(-cfg.saturation, cfg.saturation);
    return d;
}

inline FloatImage apply_augment(const FloatImage& image, const AugmentDraw& d, std::size_t output_size) {
    FloatImage out = crop_resize(image, d.crop_x, d.crop_y, d.crop_w, d.crop_h, output_size, output_size);
    if (d.flip) out = hflip(out);
    if (d.brightness == 1.0 && d.contrast == 1.0 && d.saturation == 1.0) return out;
    const std::size_t plane = output_size * output_size;
    double mean_gray = 0.0;
    for (std::size_t i = 0; i < plane; ++i) {
        mean_gray += 0.299 * out.planes[i] + 0.587 * out.planes[plane + i] + 0.114 * out.planes[2 * plane + i];
    }
    mean_gray /= static_cast<double>(plane);
    for (std::size_t i = 0; i < plane; ++i) {
        double rgb[3];
        for (std::size_t c = 0; c < 3; ++c) rgb[c] = out.planes[c * plane + i] * d.brightness;
        const double gray = 0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2];
        for (std::size_t c = 0; c < 3; ++c) {
            double v = gray + (rgb[c] - gray) * d.saturation;
            v = mean_gray * d.brightness + (v - mean_gray * d.brightness) * d.contrast;
            out.planes[c * plane + i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
    }
    return out;
}

/// Random resized crop -> optional horizontal flip -> brightness/saturation/contrast jitter.
inline FloatImage augment(const FloatImage& image, const AugmentConfig& cfg, std::uint64_t seed) {
    if (image.width == 0 || image.height == 0) throw DimensionError("augment: empty image");
    Rng rng(seed);
    return apply_augment(image, draw_augment(image.width, image.height, cfg, rng), cfg.output_size);
}

// ---------------------------------------------------------------------------
// Batch sampling

enum class SamplingRegime { same_frame, multi_frame };

struct SampledBatch {
    std::vector<FloatImage> anchors;
    std::vector<FloatImage> positives;
    std::vector<std::int64_t> video_index;  // manifest row of each batch row
    std::vector<std::size_t> anchor_frame;
    std::vector<std::size_t> positive_frame;
};

/// Independent streams for one batch draw.
struct BatchStreams {
    Rng videos;
    Rng frames;
    Rng augment_anchor;
    Rng augment_positive;

    static BatchStreams derive(const Rng& master, std::uint64_t step) {
        return {master.split("data").split(step), master.split("frames").split(step),
                master.split("augmentation-anchor").split(step), master.split("augmentation-positive").split(step)};
    }
};

/// v videos without replacement; k (anchor, positive) frame pairs per video, drawn with
/// replacement (multi_frame) or positive = anchor frame (same_frame). Rows are video-major.
/// Both regimes consume identical draws, so they see the same videos for the same streams.
inline SampledBatch sample_batch(const FrameStore& store, std::size_t videos, std::size_t frames_per_video,
                                 SamplingRegime regime, const AugmentConfig& aug, BatchStreams streams) {
    aug.validate();
    if (store.videos.size() < videos) {
        throw InsufficientDataError("sample_batch: need " + std::to_string(videos) + " videos, manifest has " +
                                    std::to_string(store.videos.size()));
    }
    if (frames_per_video == 0 || videos == 0) throw PreconditionError("sample_batch: v and k must be >= 1");
    std::vector<std::size_t> order(store.videos.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = 0; i < videos; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(streams.videos.below(order.size() - i));
        std::swap(order[i], order[j]);
    }
    const std::size_t n = videos * frames_per_video;
    SampledBatch batch;
    batch.video_index.resize(n);
    batch.anchor_frame.resize(n);
    batch.positive_frame.resize(n);
    for (std::size_t b = 0; b < videos; ++b) {
        const std::size_t v = order[b];
        const std::size_t length = store.videos[v].size();
        if (length == 0) throw InsufficientDataError("sample_batch: video without frames");
        for (std::size_t k = 0; k < frames_per_video; ++k) {
            const std::size_t row = b * frames_per_video + k;
            const auto a = static_cast<std::size_t>(streams.frames.below(length));
            const auto p = static_cast<std::size_t>(streams.frames.below(length));
            batch.video_index[row] = static_cast<std::int64_t>(v);
            batch.anchor_frame[row] = a;
            batch.positive_frame[row] = regime == SamplingRegime::same_frame ? a : p;
        }
    }
    batch.anchors.resize(n);
    batch.positives.resize(n);
    parallel_for(n, [&](std::size_t row) {
        const auto& video = store.videos[static_cast<std::size_t>(batch.video_index[row])];
        Rng ra = streams.augment_anchor.split(row);
        Rng rp = streams.augment_positive.split(row);
        const FloatImage anchor = to_float(video[batch.anchor_frame[row]]);
        const FloatImage positive = to_float(video[batch.positive_frame[row]]);
        batch.anchors[row] = apply_augment(anchor, draw_augment(anchor.width, anchor.height, aug, ra), aug.output_size);
        batch.positives[row] = apply_augment(positive, draw_augment(positive.width, positive.height, aug, rp), aug.output_size);
    });
    return batch;
}

}  // namespace vince
