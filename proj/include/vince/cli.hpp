#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "vince/data.hpp"
#include "vince/eval.hpp"
#include "vince/parallel.hpp"
#include "vince/train.hpp"

namespace vince::cli {

namespace fs = std::filesystem;
using nlohmann::json;

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

/// Raised for configuration problems detected after flag parsing; maps to exit code 2.
struct UsageError : Error {
    using Error::Error;
};

template <typename T>
void override_with(const std::optional<T>& flag, T& target) {
    if (flag) target = *flag;
}

inline json load_config_section(const std::optional<std::string>& path, const char* section) {
    if (!path) return json::object();
    std::ifstream in(*path, std::ios::binary);
    if (!in) throw UsageError("cannot open config file " + *path);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw UsageError("config file " + *path + " is not valid JSON: " + e.what());
    }
    if (!j.is_object()) throw UsageError("config file must hold a JSON object");
    return j.contains(section) ? j[section] : j;
}

inline void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
    if (!out) throw IoError("short write to " + path.string());
}

inline void echo_config(const fs::path& dir, const json& resolved) {
    fs::create_directories(dir);
    write_text(dir / "config.json", resolved.dump(2) + "\n");
}

inline fs::path manifest_file(const fs::path& p) {
    return fs::is_directory(p) ? p / "manifest.jsonl" : p;
}

inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

// ---------------------------------------------------------------------------
// Option bundles. Every field has a default; the config file overrides defaults and flags
// override the config file.

struct GenerateOptions {
    SyntheticWorldConfig world;
    std::uint64_t seed = 1;
    std::string track;  // empty: video corpus; "static" or "translate": one tracking sequence
    TrackSequenceConfig sequence;

    json to_json() const {
        return {{"classes", world.num_classes}, {"videos_per_class", world.videos_per_class}, {"frames", world.frames_per_video},
                {"image_size", world.image_size}, {"motion_step", world.motion_step},     {"pan_step", world.pan_step},
                {"scale_drift", world.scale_drift}, {"object_scale", world.object_scale},
                {"background_change", world.background_change}, {"seed", seed},
                {"track", track}, {"track_frames", sequence.frames}, {"track_frame_size", sequence.frame_size},
                {"track_object_size", sequence.object_size}, {"track_dx", sequence.dx}, {"track_dy", sequence.dy}};
    }
    void from_json(const json& j) {
        world.num_classes = j.value("classes", world.num_classes);
        world.videos_per_class = j.value("videos_per_class", world.videos_per_class);
        world.frames_per_video = j.value("frames", world.frames_per_video);
        world.image_size = j.value("image_size", world.image_size);
        world.motion_step = j.value("motion_step", world.motion_step);
        world.pan_step = j.value("pan_step", world.pan_step);
        world.scale_drift = j.value("scale_drift", world.scale_drift);
        world.object_scale = j.value("object_scale", world.object_scale);
        world.background_change = j.value("background_change", world.background_change);
        seed = j.value("seed", seed);
        track = j.value("track", track);
        sequence.frames = j.value("track_frames", sequence.frames);
        sequence.frame_size = j.value("track_frame_size", sequence.frame_size);
        sequence.object_size = j.value("track_object_size", sequence.object_size);
        sequence.dx = j.value("track_dx", sequence.dx);
        sequence.dy = j.value("track_dy", sequence.dy);
    }
};

struct CurateOptions {
    CurationConfig curation;
    std::uint64_t seed = 0;

    json to_json() const {
        return {{"frames_per_video", curation.frames_per_video}, {"gap", curation.gap},
                {"static_threshold", curation.static_threshold}, {"change_epsilon", curation.change_epsilon}, {"seed", seed}};
    }
    void from_json(const json& j) {
        curation.frames_per_video = j.value("frames_per_video", curation.frames_per_video);
        curation.gap = j.value("gap", curation.gap);
        curation.static_threshold = j.value("static_threshold", curation.static_threshold);
        curation.change_epsilon = j.value("change_epsilon", curation.change_epsilon);
        seed = j.value("seed", seed);
    }
};

struct EvalOptions {
    ProbeOptions probe;
    std::string features = "embedding";
    bool track = true;
    std::uint64_t track_seed = 0;

    json to_json() const {
        return {{"epochs", probe.epochs}, {"probe_lr", probe.lr}, {"probe_batch", probe.batch_size}, {"probe_seed", probe.seed},
                {"holdout_divisor", probe.holdout_divisor}, {"features", features}, {"track", track}, {"track_seed", track_seed}};
    }
    void from_json(const json& j) {
        probe.epochs = j.value("epochs", probe.epochs);
        probe.lr = j.value("probe_lr", probe.lr);
        probe.batch_size = j.value("probe_batch", probe.batch_size);
        probe.seed = j.value("probe_seed", probe.seed);
        probe.holdout_divisor = j.value("holdout_divisor", probe.holdout_divisor);
        features = j.value("features", features);
        track = j.value("track", track);
        track_seed = j.value("track_seed", track_seed);
    }
    FeatureKind kind() const {
        if (features == "embedding") return FeatureKind::embedding;
        if (features == "pooled") return FeatureKind::pooled_trunk;
        throw UsageError("features must be 'embedding' or 'pooled'");
    }
};

// ---------------------------------------------------------------------------
// Tracking sequences on disk: frames/frame_###.ppm plus groundtruth.txt with one
// "x,y,w,h" (top-left corner) line per frame.

inline void write_track_sequence(const fs::path& dir, const TrackSequence& seq) {
    fs::create_directories(dir / "frames");
    std::string gt;
    char line[128];
    for (std::size_t t = 0; t < seq.frames.size(); ++t) {
        std::snprintf(line, sizeof line, "frame_%03zu.ppm", t);
        write_ppm(dir / "frames" / line, seq.frames[t]);
        const auto& b = seq.groundtruth[t];
        std::snprintf(line, sizeof line, "%.17g,%.17g,%.17g,%.17g\n", b.x0(), b.y0(), b.width, b.height);
        gt += line;
    }
    write_text(dir / "groundtruth.txt", gt);
}

inline TrackSequence read_track_sequence(const fs::path& dir) {
    if (!fs::is_directory(dir / "frames")) throw IoError("tracking sequence " + dir.string() + " has no frames/ directory");
    TrackSequence seq;
    for (const auto& p : detail::numbered_frames(dir / "frames")) seq.frames.push_back(read_ppm(p));
    std::ifstream in(dir / "groundtruth.txt");
    if (!in) throw IoError("tracking sequence " + dir.string() + " has no groundtruth.txt");
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        for (auto& c : line) {
            if (c == ',') c = ' ';
        }
        std::istringstream ss(line);
        double x, y, w, h;
        if (!(ss >> x >> y >> w >> h)) throw FormatError("groundtruth.txt: malformed line '" + line + "'");
        seq.groundtruth.push_back({x + w / 2.0, y + h / 2.0, w, h});
    }
    if (seq.groundtruth.size() != seq.frames.size()) throw FormatError("groundtruth.txt does not match frame count");
    return seq;
}

inline json boxes_json(const std::vector<BBox>& boxes) {
    json out = json::array();
    for (const auto& b : boxes) out.push_back({b.cx, b.cy, b.width, b.height});
    return out;
}

// ---------------------------------------------------------------------------
// Commands

inline int cmd_generate(const GenerateOptions& opt, const fs::path& out) {
    if (!opt.track.empty()) {
        TrackSequenceConfig seq = opt.sequence;
        if (opt.track == "static") {
            seq.motion = TrackMotion::static_target;
        } else if (opt.track == "translate") {
            seq.motion = TrackMotion::translate;
        } else {
            throw UsageError("--track must be 'static' or 'translate'");
        }
        const auto sequence = make_track_sequence(seq, opt.seed);
        write_track_sequence(out, sequence);
        echo_config(out, {{"command", "generate"}, {"generate", opt.to_json()}});
        std::printf("wrote %zu-frame %s tracking sequence to %s\n", sequence.frames.size(), opt.track.c_str(), out.string().c_str());
        return kExitOk;
    }
    try {
        opt.world.validate();
    } catch (const PreconditionError& e) {
        throw UsageError(e.what());
    }
    auto corpus = generate_synthetic(opt.world, opt.seed);
    fs::create_directories(out);
    write_corpus(out, corpus);
    echo_config(out, {{"command", "generate"}, {"generate", opt.to_json()}});
    std::printf("wrote %zu videos (%zu frames) to %s\n", corpus.manifest.records.size(), corpus.manifest.total_frames(),
                out.string().c_str());
    return kExitOk;
}

inline int cmd_curate(const CurateOptions& opt, const fs::path& input, const fs::path& out) {
    try {
        opt.curation.validate();
    } catch (const PreconditionError& e) {
        throw UsageError(e.what());
    }
    const VideoManifest source = scan_source(input);
    if (source.records.empty()) throw InsufficientDataError("curate: input " + input.string() + " holds no videos");
    const CurationReport report = curate(input, out, opt.curation, opt.seed);
    echo_config(out, {{"command", "curate"}, {"input", input.string()}, {"curate", opt.to_json()}});
    std::printf("kept %zu dropped %zu (static %zu, too short %zu) of %zu\n", report.kept, report.dropped(), report.dropped_static,
                report.dropped_short, source.records.size());
    if (report.kept == 0) std::fprintf(stderr, "warning: every video was dropped\n");
    return kExitOk;
}

/// Keeps only data rows with iteration < `iteration` so a resumed run appends seamlessly.
inline std::string truncate_metrics(const fs::path& path, std::uint64_t iteration) {
    std::string kept = "iteration,lr,loss,wall_ms\n";
    std::ifstream in(path);
    if (!in) return kept;
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (std::stoull(line.substr(0, line.find(','))) < iteration) kept += line + '\n';
    }
    return kept;
}

inline int cmd_train(TrainState state, const fs::path& manifest_path, const fs::path& out, bool wall_clock) {
    const VideoManifest manifest = read_manifest(manifest_file(manifest_path));
    if (manifest.records.empty()) throw InsufficientDataError("train: manifest has no videos");
    const FrameStore store = FrameStore::load(manifest);
    fs::create_directories(out);
    echo_config(out, {{"command", "train"}, {"manifest", manifest_path.string()}, {"train", state.config}, {"wall_clock", wall_clock}});

    const fs::path metrics_path = out / "metrics.csv";
    std::string log = truncate_metrics(metrics_path, state.iteration);
    std::ofstream metrics(metrics_path, std::ios::binary | std::ios::trunc);
    if (!metrics) throw IoError("cannot write " + metrics_path.string());
    metrics << log;

    TrainHooks hooks;
    hooks.record_wall_time = wall_clock;
    hooks.on_step = [&](const TrainLogRow& row) {
        metrics << format_log_row(row) << '\n';
        if (!metrics) throw IoError("short write to " + metrics_path.string());
    };
    hooks.on_checkpoint = [&](const TrainState& s) {
        metrics.flush();
        char name[48];
        std::snprintf(name, sizeof name, "checkpoint_%06llu.bin", static_cast<unsigned long long>(s.iteration));
        save_checkpoint(out / name, s);
        save_checkpoint(out / "checkpoint.bin", s);
    };
    try {
        run_training(state, store, hooks);
    } catch (const NumericError&) {
        metrics.flush();
        throw;  // the last periodic checkpoint stays on disk untouched
    }
    metrics.flush();
    save_checkpoint(out / "checkpoint.bin", state);
    std::printf("trained to iteration %llu; checkpoint %s (f hash %s)\n", static_cast<unsigned long long>(state.iteration),
                (out / "checkpoint.bin").string().c_str(), hex64(hash_params(state.moco.f)).c_str());
    return kExitOk;
}

inline json eval_metrics(const EncoderParams& f, const VideoManifest& manifest, const FrameStore& store, const EvalOptions& opt) {
    json j;
    const auto probe = train_linear_probe(f, manifest, store, opt.probe, opt.kind());
    const auto temporal = temporal_probe(f, manifest, store, opt.probe, opt.kind());
    j["probe_top1"] = probe.top1;
    j["temporal_top1"] = temporal.top1;
    j["probe_test_samples"] = probe.test_samples;
    j["temporal_test_samples"] = temporal.test_samples;
    j["chance"] = 1.0 / static_cast<double>(manifest.label_count());
    if (opt.track) {
        std::vector<BBox> all_pred, all_truth;
        for (auto motion : {TrackMotion::static_target, TrackMotion::translate}) {
            TrackSequenceConfig tc;
            tc.motion = motion;
            const auto seq = make_track_sequence(tc, opt.track_seed);
            const auto boxes = siamfc_track(f, seq.frames, seq.groundtruth.front());
            all_pred.insert(all_pred.end(), boxes.begin(), boxes.end());
            all_truth.insert(all_truth.end(), seq.groundtruth.begin(), seq.groundtruth.end());
        }
        const TrackMetrics m = otb_metrics(all_pred, all_truth);
        j["precision_auc"] = m.precision_auc;
        j["success_auc"] = m.success_auc;
        j["curves"] = metrics_json(m)["curves"];
    } else {
        j["precision_auc"] = nullptr;
        j["success_auc"] = nullptr;
        j["curves"] = json::object();
    }
    return j;
}

// ---------------------------------------------------------------------------
// Entry point

inline int run(int argc, const char* const* argv) {
    CLI::App app{"vince: multi-frame multi-pair contrastive video representation learning"};
    app.require_subcommand(1);
    std::optional<std::string> config_path;
    std::optional<std::size_t> threads;
    app.add_option("--config", config_path, "JSON config file (whole file or the section named after the command)");
    app.add_option("--threads", threads, "worker threads (default: VINCE_THREADS or logical cores)")->check(CLI::PositiveNumber);

    // generate
    auto* gen = app.add_subcommand("generate", "write a synthetic labeled video corpus or a tracking sequence");
    std::string gen_out;
    std::optional<std::size_t> g_classes, g_vpc, g_frames, g_size, g_track_frames;
    std::optional<std::uint64_t> g_seed;
    std::optional<std::string> g_track;
    gen->add_option("--out", gen_out, "output directory")->required();
    gen->add_option("--classes", g_classes)->check(CLI::PositiveNumber);
    gen->add_option("--videos-per-class", g_vpc)->check(CLI::PositiveNumber);
    gen->add_option("--frames", g_frames, "frames per video")->check(CLI::PositiveNumber);
    gen->add_option("--image-size", g_size)->check(CLI::Range(8, 4096));
    gen->add_option("--seed", g_seed);
    gen->add_option("--track", g_track, "write one tracking sequence instead: static | translate")
        ->check(CLI::IsMember({"static", "translate"}));
    gen->add_option("--track-frames", g_track_frames)->check(CLI::PositiveNumber);

    // curate
    auto* cur = app.add_subcommand("curate", "gap-extract frames and drop static videos");
    std::string cur_in, cur_out;
    std::optional<std::size_t> c_T, c_gap;
    std::optional<double> c_thr;
    std::optional<std::uint64_t> c_seed;
    cur->add_option("--input", cur_in, "manifest file, corpus directory, or directory of frame directories")->required();
    cur->add_option("--out", cur_out, "output directory")->required();
    cur->add_option("--frames-per-video", c_T, "T")->check(CLI::PositiveNumber);
    cur->add_option("--gap", c_gap, "G")->check(CLI::PositiveNumber);
    cur->add_option("--static-threshold", c_thr)->check(CLI::Range(0.0, 1.0));
    cur->add_option("--seed", c_seed);

    // train
    auto* trn = app.add_subcommand("train", "contrastive training with a momentum encoder and memory bank");
    std::string trn_manifest, trn_out;
    std::optional<std::string> t_regime, t_schedule, t_resume;
    std::optional<std::size_t> t_iters, t_videos, t_frames, t_memory, t_ckpt;
    std::optional<float> t_lr, t_alpha, t_temp;
    std::optional<std::uint64_t> t_seed;
    std::optional<bool> t_exclude;
    bool wall_clock = false;
    trn->add_option("--manifest", trn_manifest, "manifest file or corpus directory")->required();
    trn->add_option("--out", trn_out, "output directory")->required();
    trn->add_option("--regime", t_regime)->check(CLI::IsMember({"same_frame", "multi_frame", "multi_pair"}));
    trn->add_option("--iterations", t_iters);
    trn->add_option("--videos", t_videos, "v")->check(CLI::PositiveNumber);
    trn->add_option("--frames", t_frames, "k")->check(CLI::PositiveNumber);
    trn->add_option("--memory", t_memory, "m");
    trn->add_option("--lr", t_lr)->check(CLI::NonNegativeNumber);
    trn->add_option("--lr-schedule", t_schedule)->check(CLI::IsMember({"constant", "cosine"}));
    trn->add_option("--alpha", t_alpha)->check(CLI::Range(0.0, 1.0));
    trn->add_option("--temperature", t_temp, "multiplier applied to cosine similarities")->check(CLI::PositiveNumber);
    trn->add_option("--seed", t_seed);
    trn->add_option("--checkpoint-every", t_ckpt);
    trn->add_option("--exclude-same-video", t_exclude, "drop bank rows from videos in the current batch");
    trn->add_option("--resume", t_resume, "checkpoint to continue from");
    trn->add_flag("--wall-clock", wall_clock, "record per-step wall time (makes metrics.csv non-reproducible)");

    // eval
    auto* evl = app.add_subcommand("eval", "linear probe, temporal probe and scripted tracking on a checkpoint");
    std::string ev_ckpt, ev_manifest, ev_out;
    std::optional<std::size_t> e_epochs;
    std::optional<float> e_lr;
    std::optional<std::string> e_features;
    std::optional<bool> e_track;
    evl->add_option("--checkpoint", ev_ckpt)->required();
    evl->add_option("--manifest", ev_manifest, "labeled manifest file or corpus directory")->required();
    evl->add_option("--out", ev_out, "output directory")->required();
    evl->add_option("--epochs", e_epochs)->check(CLI::PositiveNumber);
    evl->add_option("--probe-lr", e_lr)->check(CLI::PositiveNumber);
    evl->add_option("--features", e_features)->check(CLI::IsMember({"embedding", "pooled"}));
    evl->add_option("--track", e_track, "also run the scripted tracking sequences");

    // knn
    auto* knn = app.add_subcommand("knn", "nearest videos to a query frame, at most one frame per video");
    std::string kn_ckpt, kn_manifest, kn_out, kn_video;
    std::size_t kn_frame = 0, kn_k = 5;
    knn->add_option("--checkpoint", kn_ckpt)->required();
    knn->add_option("--manifest", kn_manifest)->required();
    knn->add_option("--out", kn_out, "output directory")->required();
    knn->add_option("--query-video", kn_video, "video_id of the query frame")->required();
    knn->add_option("--query-frame", kn_frame);
    knn->add_option("-k,--k", kn_k)->check(CLI::PositiveNumber);

    // track
    auto* trk = app.add_subcommand("track", "template tracking on a sequence directory");
    std::string tr_ckpt, tr_seq, tr_out;
    trk->add_option("--checkpoint", tr_ckpt)->required();
    trk->add_option("--sequence", tr_seq, "directory with frames/ and groundtruth.txt")->required();
    trk->add_option("--out", tr_out, "output directory")->required();

    // export
    auto* exp = app.add_subcommand("export", "per-frame embeddings as CSV");
    std::string ex_ckpt, ex_manifest, ex_out;
    exp->add_option("--checkpoint", ex_ckpt)->required();
    exp->add_option("--manifest", ex_manifest)->required();
    exp->add_option("--out", ex_out, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (threads) set_max_threads(*threads);

        if (gen->parsed()) {
            GenerateOptions opt;
            opt.from_json(load_config_section(config_path, "generate"));
            override_with(g_classes, opt.world.num_classes);
            override_with(g_vpc, opt.world.videos_per_class);
            override_with(g_frames, opt.world.frames_per_video);
            override_with(g_size, opt.world.image_size);
            override_with(g_seed, opt.seed);
            override_with(g_track, opt.track);
            override_with(g_track_frames, opt.sequence.frames);
            return cmd_generate(opt, gen_out);
        }
        if (cur->parsed()) {
            CurateOptions opt;
            opt.from_json(load_config_section(config_path, "curate"));
            override_with(c_T, opt.curation.frames_per_video);
            override_with(c_gap, opt.curation.gap);
            override_with(c_thr, opt.curation.static_threshold);
            override_with(c_seed, opt.seed);
            return cmd_curate(opt, cur_in, cur_out);
        }
        if (trn->parsed()) {
            if (t_resume) {
                TrainState state = load_checkpoint(*t_resume);
                if (t_iters) state.config.iterations = *t_iters;
                return cmd_train(std::move(state), trn_manifest, trn_out, wall_clock);
            }
            TrainConfig cfg;
            json section = load_config_section(config_path, "train");
            if (t_regime) section["regime"] = *t_regime;  // regime picks the v/k defaults first
            try {
                cfg = section.get<TrainConfig>();
            } catch (const json::exception& e) {
                throw UsageError(std::string("train config: ") + e.what());
            }
            override_with(t_iters, cfg.iterations);
            override_with(t_videos, cfg.videos);
            override_with(t_frames, cfg.frames);
            override_with(t_memory, cfg.memory);
            override_with(t_lr, cfg.lr);
            if (t_schedule) cfg.schedule = parse_schedule(*t_schedule);
            override_with(t_alpha, cfg.alpha);
            override_with(t_temp, cfg.temperature);
            override_with(t_seed, cfg.seed);
            override_with(t_ckpt, cfg.checkpoint_every);
            if (t_exclude) cfg.exclude_same_video = *t_exclude;
            try {
                cfg.validate();
            } catch (const PreconditionError& e) {
                throw UsageError(e.what());
            }
            return cmd_train(init_train_state(cfg), trn_manifest, trn_out, wall_clock);
        }
        if (evl->parsed()) {
            EvalOptions opt;
            opt.from_json(load_config_section(config_path, "eval"));
            override_with(e_epochs, opt.probe.epochs);
            override_with(e_lr, opt.probe.lr);
            override_with(e_features, opt.features);
            override_with(e_track, opt.track);
            const TrainState state = load_checkpoint(ev_ckpt);
            const VideoManifest manifest = read_manifest(manifest_file(ev_manifest));
            const FrameStore store = FrameStore::load(manifest);
            const std::string hash = hex64(hash_params(state.moco.f));
            json metrics = eval_metrics(state.moco.f, manifest, store, opt);
            metrics["checkpoint_hash"] = hash;
            metrics["checkpoint_iteration"] = state.iteration;
            echo_config(ev_out, {{"command", "eval"}, {"checkpoint", ev_ckpt}, {"checkpoint_hash", hash},
                                 {"manifest", ev_manifest}, {"eval", opt.to_json()}});
            write_text(fs::path(ev_out) / "metrics.json", metrics.dump(2) + "\n");
            std::printf("probe_top1 %.4f temporal_top1 %.4f chance %.4f checkpoint %s\n", metrics["probe_top1"].get<double>(),
                        metrics["temporal_top1"].get<double>(), metrics["chance"].get<double>(), hash.c_str());
            return kExitOk;
        }
        if (knn->parsed()) {
            const TrainState state = load_checkpoint(kn_ckpt);
            const VideoManifest manifest = read_manifest(manifest_file(kn_manifest));
            const FrameStore store = FrameStore::load(manifest);
            const EmbeddingTable table = embed_frames(state.moco.f, manifest, store);
            std::optional<std::size_t> row;
            for (std::size_t i = 0; i < table.size(); ++i) {
                if (table.video_id[i] == kn_video && table.frame[i] == kn_frame) row = i;
            }
            if (!row) throw UsageError("query frame " + kn_video + "/" + std::to_string(kn_frame) + " not in manifest");
            const std::size_t d = table.dim();
            const auto result = knn_retrieve(table.rows.data().subspan(*row * d, d), table, kn_k);
            const std::string hash = hex64(hash_params(state.moco.f));
            json neighbors = json::array();
            std::string csv = "rank,video_id,frame_index,similarity\n";
            for (std::size_t r = 0; r < result.neighbors.size(); ++r) {
                const auto& n = result.neighbors[r];
                neighbors.push_back({{"video_id", n.video_id}, {"frame_index", n.frame}, {"similarity", n.similarity}});
                char line[256];
                std::snprintf(line, sizeof line, "%zu,%s,%zu,%.9g\n", r + 1, n.video_id.c_str(), n.frame, static_cast<double>(n.similarity));
                csv += line;
            }
            echo_config(kn_out, {{"command", "knn"}, {"checkpoint", kn_ckpt}, {"checkpoint_hash", hash}, {"manifest", kn_manifest},
                                 {"query_video", kn_video}, {"query_frame", kn_frame}, {"k", kn_k}});
            write_text(fs::path(kn_out) / "neighbors.csv", csv);
            write_text(fs::path(kn_out) / "neighbors.json",
                       json{{"checkpoint_hash", hash}, {"truncated", result.truncated}, {"neighbors", neighbors}}.dump(2) + "\n");
            std::fputs(csv.c_str(), stdout);
            if (result.truncated) std::fprintf(stderr, "note: fewer than %zu distinct videos available\n", kn_k);
            return kExitOk;
        }
        if (trk->parsed()) {
            const TrainState state = load_checkpoint(tr_ckpt);
            const TrackSequence seq = read_track_sequence(tr_seq);
            if (seq.frames.empty()) throw InsufficientDataError("track: sequence has no frames");
            const auto boxes = siamfc_track(state.moco.f, seq.frames, seq.groundtruth.front());
            const TrackMetrics m = otb_metrics(boxes, seq.groundtruth);
            const std::string hash = hex64(hash_params(state.moco.f));
            json out = metrics_json(m);
            out["checkpoint_hash"] = hash;
            out["boxes"] = boxes_json(boxes);
            echo_config(tr_out, {{"command", "track"}, {"checkpoint", tr_ckpt}, {"checkpoint_hash", hash}, {"sequence", tr_seq}});
            write_text(fs::path(tr_out) / "track.json", out.dump(2) + "\n");
            std::printf("precision_auc %.4f success_auc %.4f\n", m.precision_auc, m.success_auc);
            return kExitOk;
        }
        if (exp->parsed()) {
            const TrainState state = load_checkpoint(ex_ckpt);
            const VideoManifest manifest = read_manifest(manifest_file(ex_manifest));
            const FrameStore store = FrameStore::load(manifest);
            const std::string hash = hex64(hash_params(state.moco.f));
            echo_config(ex_out, {{"command", "export"}, {"checkpoint", ex_ckpt}, {"checkpoint_hash", hash}, {"manifest", ex_manifest}});
            export_embeddings(state.moco.f, manifest, store, fs::path(ex_out) / "embeddings.csv");
            std::printf("exported %zu rows\n", manifest.total_frames());
            return kExitOk;
        }
    } catch (const UsageError& e) {
        std::fprintf(stderr, "usage error: %s\n", e.what());
        return kExitUsage;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitRuntime;
    }
    return kExitUsage;
}

}  // namespace vince::cli
