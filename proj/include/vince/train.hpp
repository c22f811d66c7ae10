#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "json.hpp"
#include "vince/data.hpp"
#include "vince/encoder.hpp"
#include "vince/errors.hpp"
#include "vince/moco.hpp"
#include "vince/nce.hpp"
#include "vince/optim.hpp"
#include "vince/rng.hpp"

namespace vince {

enum class Regime { same_frame, multi_frame, multi_pair };
enum class LrSchedule { constant, cosine };

inline const char* to_string(Regime r) {
    switch (r) {
        case Regime::same_frame: return "same_frame";
        case Regime::multi_frame: return "multi_frame";
        default: return "multi_pair";
    }
}

inline Regime parse_regime(const std::string& s) {
    if (s == "same_frame") return Regime::same_frame;
    if (s == "multi_frame") return Regime::multi_frame;
    if (s == "multi_pair") return Regime::multi_pair;
    throw PreconditionError("unknown regime '" + s + "'");
}

inline const char* to_string(LrSchedule s) { return s == LrSchedule::cosine ? "cosine" : "constant"; }

inline LrSchedule parse_schedule(const std::string& s) {
    if (s == "constant") return LrSchedule::constant;
    if (s == "cosine") return LrSchedule::cosine;
    throw PreconditionError("unknown lr schedule '" + s + "'");
}

struct TrainConfig {
    Regime regime = Regime::multi_pair;
    std::size_t videos = 16;  // v
    std::size_t frames = 4;   // k
    std::size_t iterations = 20000;
    float lr = 0.03f;
    float sgd_momentum = 0.9f;
    float weight_decay = 1e-4f;
    float alpha = 0.999f;
    float temperature = 1.0f / 0.07f;
    std::size_t memory = 4096;
    LrSchedule schedule = LrSchedule::constant;
    std::uint64_t seed = 0;
    std::size_t checkpoint_every = 0;
    std::size_t eval_every = 0;
    // Drop bank rows from any video in the current batch. Unset: on for same_frame only.
    std::optional<bool> exclude_same_video;
    EncoderConfig encoder;
    AugmentConfig augment;

    /// Desk defaults: v=16, k=4 for multi_pair; v=64, k=1 otherwise (n = 64 either way).
    static TrainConfig for_regime(Regime regime) {
        TrainConfig cfg;
        cfg.regime = regime;
        if (regime != Regime::multi_pair) {
            cfg.videos = 64;
            cfg.frames = 1;
        }
        return cfg;
    }

    std::size_t batch_rows() const { return videos * frames; }
    bool excludes_same_video() const { return exclude_same_video.value_or(regime == Regime::same_frame); }

    void validate() const {
        if (videos == 0 || frames == 0) throw PreconditionError("train: v and k must be >= 1");
        if (regime == Regime::multi_pair && frames < 2) throw PreconditionError("train: multi_pair needs k >= 2");
        if (batch_rows() < 2) throw PreconditionError("train: batch needs at least 2 rows");
        if (memory != 0 && memory < batch_rows()) {
            throw PreconditionError("train: memory bank must be 0 or hold at least one batch");
        }
        if (!(alpha >= 0.0f && alpha <= 1.0f)) throw PreconditionError("train: alpha must lie in [0, 1]");
        if (!(temperature > 0.0f)) throw PreconditionError("train: temperature must be positive");
        if (lr < 0.0f) throw PreconditionError("train: negative learning rate");
        encoder.validate();
        augment.validate();
        if (augment.output_size != encoder.input_size) {
            throw PreconditionError("train: augment output_size must equal encoder input_size");
        }
    }
};

// ---------------------------------------------------------------------------
// JSON conversions; missing keys keep their defaults.

inline void to_json(nlohmann::json& j, const EncoderConfig& c) {
    nlohmann::json trunk = nlohmann::json::array();
    for (const auto& b : c.trunk) trunk.push_back({{"out_channels", b.out_channels}, {"kernel", b.kernel}, {"stride", b.stride}});
    j = {{"input_channels", c.input_channels}, {"input_size", c.input_size}, {"trunk", trunk},
         {"hidden_dim", c.hidden_dim},         {"embed_dim", c.embed_dim},   {"leaky_slope", c.leaky_slope}};
}

inline void from_json(const nlohmann::json& j, EncoderConfig& c) {
    c.input_channels = j.value("input_channels", c.input_channels);
    c.input_size = j.value("input_size", c.input_size);
    c.hidden_dim = j.value("hidden_dim", c.hidden_dim);
    c.embed_dim = j.value("embed_dim", c.embed_dim);
    c.leaky_slope = j.value("leaky_slope", c.leaky_slope);
    if (j.contains("trunk")) {
        c.trunk.clear();
        for (const auto& b : j["trunk"]) {
            c.trunk.push_back({b.value("out_channels", std::size_t{16}), b.value("kernel", std::size_t{3}),
                               b.value("stride", std::size_t{2})});
        }
    }
}

inline void to_json(nlohmann::json& j, const AugmentConfig& c) {
    j = {{"crop_scale_min", c.crop_scale_min}, {"crop_scale_max", c.crop_scale_max},
         {"horizontal_flip_prob", c.horizontal_flip_prob}, {"brightness", c.brightness},
         {"contrast", c.contrast}, {"saturation", c.saturation}, {"output_size", c.output_size}};
}

inline void from_json(const nlohmann::json& j, AugmentConfig& c) {
    c.crop_scale_min = j.value("crop_scale_min", c.crop_scale_min);
    c.crop_scale_max = j.value("crop_scale_max", c.crop_scale_max);
    c.horizontal_flip_prob = j.value("horizontal_flip_prob", c.horizontal_flip_prob);
    c.brightness = j.value("brightness", c.brightness);
    c.contrast = j.value("contrast", c.contrast);
    c.saturation = j.value("saturation", c.saturation);
    c.output_size = j.value("output_size", c.output_size);
}

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = {{"regime", to_string(c.regime)},
         {"videos", c.videos},
         {"frames", c.frames},
         {"iterations", c.iterations},
         {"lr", c.lr},
         {"sgd_momentum", c.sgd_momentum},
         {"weight_decay", c.weight_decay},
         {"alpha", c.alpha},
         {"temperature", c.temperature},
         {"memory", c.memory},
         {"lr_schedule", to_string(c.schedule)},
         {"seed", c.seed},
         {"checkpoint_every", c.checkpoint_every},
         {"eval_every", c.eval_every},
         {"exclude_same_video", c.exclude_same_video ? nlohmann::json(*c.exclude_same_video) : nlohmann::json(nullptr)},
         {"encoder", c.encoder},
         {"augment", c.augment}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
    if (j.contains("regime")) {
        c = TrainConfig::for_regime(parse_regime(j["regime"].get<std::string>()));
    }
    c.videos = j.value("videos", c.videos);
    c.frames = j.value("frames", c.frames);
    c.iterations = j.value("iterations", c.iterations);
    c.lr = j.value("lr", c.lr);
    c.sgd_momentum = j.value("sgd_momentum", c.sgd_momentum);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.alpha = j.value("alpha", c.alpha);
    c.temperature = j.value("temperature", c.temperature);
    c.memory = j.value("memory", c.memory);
    if (j.contains("lr_schedule")) c.schedule = parse_schedule(j["lr_schedule"].get<std::string>());
    c.seed = j.value("seed", c.seed);
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
    c.eval_every = j.value("eval_every", c.eval_every);
    if (j.contains("exclude_same_video") && !j["exclude_same_video"].is_null()) {
        c.exclude_same_video = j["exclude_same_video"].get<bool>();
    }
    if (j.contains("encoder")) from_json(j["encoder"], c.encoder);
    if (j.contains("augment")) from_json(j["augment"], c.augment);
}

// ---------------------------------------------------------------------------
// Schedule

inline float lr_at(std::size_t iteration, const TrainConfig& cfg) {
    if (iteration >= cfg.iterations) {
        throw RangeError("lr_at: iteration " + std::to_string(iteration) + " outside [0, " + std::to_string(cfg.iterations) + ")");
    }
    if (cfg.schedule == LrSchedule::constant) return cfg.lr;
    const double progress = static_cast<double>(iteration) / static_cast<double>(cfg.iterations);
    return static_cast<float>(cfg.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress)));
}

// ---------------------------------------------------------------------------
// State and step

struct TrainState {
    TrainConfig config;
    MocoState moco;
    MemoryBank bank;
    SgdMomentum optimizer;
    std::uint64_t iteration = 0;
    Rng master;

    std::vector<Tensor> trainable() const {
        std::vector<Tensor> out;
        for (const auto& e : moco.f.entries) out.push_back(e.value);
        return out;
    }
};

inline TrainState init_train_state(const TrainConfig& cfg) {
    cfg.validate();
    const Rng master(cfg.seed);
    EncoderParams f = init_params(cfg.encoder, master.split("init").key());
    return TrainState{cfg, make_moco_state(std::move(f), cfg.alpha), MemoryBank(cfg.memory, cfg.encoder.embed_dim),
                      SgdMomentum(cfg.sgd_momentum, cfg.weight_decay), 0, master};
}

struct StepResult {
    float loss = 0.0f;
    float lr = 0.0f;
    NceStats stats;
    std::size_t negatives = 0;
    Tensor f_out;  // normalized anchor embeddings (detached)
    Tensor g_out;  // normalized positive embeddings
    Tensor bank_used;
};

inline SamplingRegime sampling_for(Regime r) {
    return r == Regime::same_frame ? SamplingRegime::same_frame : SamplingRegime::multi_frame;
}

/// Draws the batch for `step` from the state's master seed.
inline SampledBatch batch_for_step(const TrainState& state, const FrameStore& store, std::uint64_t step) {
    const auto& cfg = state.config;
    return sample_batch(store, cfg.videos, cfg.frames, sampling_for(cfg.regime), cfg.augment,
                        BatchStreams::derive(state.master, step));
}

/// One optimization step: f encodes anchors, g encodes positives without a graph, loss per
/// regime, SGD on f, momentum update of g, then the g outputs enter the bank.
inline StepResult train_step(TrainState& state, const SampledBatch& batch) {
    const auto& cfg = state.config;
    const std::size_t n = cfg.batch_rows();
    if (batch.anchors.size() != n || batch.positives.size() != n) {
        throw DimensionError("train_step: batch of " + std::to_string(batch.anchors.size()) + " rows, layout needs " +
                             std::to_string(n));
    }
    StepResult result;
    result.lr = lr_at(state.iteration, cfg);
    try {
        Tensor g_out;
        {
            NoGradGuard no_grad;
            g_out = l2_normalize_rows(encode(state.moco.g, images_to_tensor(batch.positives)));
        }
        Tensor negatives;
        if (cfg.excludes_same_video()) {
            negatives = state.bank.negatives_excluding({batch.video_index.begin(), batch.video_index.end()});
        } else {
            negatives = state.bank.negatives_view();
        }
        const Tensor f_out = l2_normalize_rows(encode(state.moco.f, images_to_tensor(batch.anchors)));
        const NceConfig nce{cfg.temperature};
        Tensor loss;
        if (cfg.regime == Regime::multi_pair) {
            const PairMask mask = build_pair_mask({cfg.videos, cfg.frames, negatives.dim(0)});
            loss = multi_pair_nce_loss(f_out, g_out, negatives, mask, nce, &result.stats);
        } else if (cfg.memory == 0) {
            // Without a bank the other positives of the batch serve as negatives.
            loss = nce_loss(f_out, g_out, nce);
        } else {
            loss = memory_nce_loss(f_out, g_out, negatives, nce, &result.stats);
        }
        auto params = state.trainable();
        zero_grads(params);
        loss.backward();
        state.optimizer.step(params, result.lr);
        result.loss = loss.item();
        result.negatives = negatives.dim(0);
        result.f_out = f_out.detach();
        result.g_out = g_out;
        result.bank_used = negatives;
    } catch (const NumericError& e) {
        throw NumericError("numeric failure at iteration " + std::to_string(state.iteration) + ": " + e.what());
    }
    momentum_update(state.moco);
    if (state.bank.capacity() > 0) state.bank.enqueue(result.g_out, batch.video_index);
    ++state.iteration;
    return result;
}

// ---------------------------------------------------------------------------
// Checkpoints: "VINCECKP", u32 version, u64 header length, JSON header, f32 blobs.

inline constexpr char kCheckpointMagic[8] = {'V', 'I', 'N', 'C', 'E', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 2;

namespace detail {

inline void put_le(std::string& out, std::uint64_t value, int bytes) {
    for (int i = 0; i < bytes; ++i) out.push_back(static_cast<char>((value >> (8 * i)) & 0xff));
}

inline std::uint64_t get_le(const std::string& in, std::size_t offset, int bytes) {
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[offset + i])) << (8 * i);
    return v;
}

inline void put_floats(std::string& out, std::span<const float> values) {
    for (float f : values) {
        std::uint32_t bits;
        std::memcpy(&bits, &f, sizeof bits);
        put_le(out, bits, 4);
    }
}

}  // namespace detail

inline std::string serialize_checkpoint(const TrainState& state) {
    nlohmann::json header;
    header["config"] = state.config;
    header["iteration"] = state.iteration;
    header["rng"] = {{"key", state.master.key()}, {"counter", state.master.counter()}};
    nlohmann::json tensors = nlohmann::json::array();
    auto describe = [&](const std::string& prefix, const EncoderParams& p) {
        for (const auto& e : p.entries) tensors.push_back({{"name", prefix + e.name}, {"shape", e.value.shape()}});
    };
    describe("f/", state.moco.f);
    describe("g/", state.moco.g);
    const auto& velocity = state.optimizer.velocity();
    for (std::size_t i = 0; i < velocity.size(); ++i) {
        tensors.push_back({{"name", "momentum/" + state.moco.f.entries[i].name}, {"shape", state.moco.f.entries[i].value.shape()}});
    }
    tensors.push_back({{"name", "bank/rows"}, {"shape", {state.bank.capacity(), state.bank.dim()}}});
    header["tensors"] = tensors;
    header["bank"] = {{"capacity", state.bank.capacity()}, {"dim", state.bank.dim()},       {"cursor", state.bank.cursor()},
                      {"filled", state.bank.filled()},     {"total", state.bank.total_enqueued()}, {"tags", state.bank.raw_tags()}};
    const std::string text = header.dump();

    std::string out(kCheckpointMagic, sizeof kCheckpointMagic);
    detail::put_le(out, kCheckpointVersion, 4);
    detail::put_le(out, text.size(), 8);
    out += text;
    for (const auto& e : state.moco.f.entries) detail::put_floats(out, e.value.data());
    for (const auto& e : state.moco.g.entries) detail::put_floats(out, e.value.data());
    for (const auto& v : velocity) detail::put_floats(out, v);
    detail::put_floats(out, state.bank.raw_rows());
    detail::put_le(out, fnv1a(out), 8);  // trailing checksum over everything before it
    return out;
}

inline void save_checkpoint(const std::filesystem::path& path, const TrainState& state) {
    const std::string bytes = serialize_checkpoint(state);
    const auto tmp = std::filesystem::path(path).concat(".tmp");
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw IoError("cannot write checkpoint " + path.string());
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw IoError("short write to checkpoint " + path.string());
    }
    std::filesystem::rename(tmp, path);
}

/// Rebuilds a complete TrainState; throws FormatError on any inconsistency, never a partial state.
inline TrainState deserialize_checkpoint(const std::string& stored) {
    if (stored.size() < 28) throw FormatError("checkpoint: truncated file");
    const std::string bytes = stored.substr(0, stored.size() - 8);
    if (detail::get_le(stored, bytes.size(), 8) != fnv1a(bytes)) throw FormatError("checkpoint: checksum mismatch");
    if ( std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0) throw FormatError("checkpoint: bad magic");
    if (detail::get_le(bytes, 8, 4) != kCheckpointVersion) throw FormatError("checkpoint: unsupported version");
    const std::uint64_t header_len = detail::get_le(bytes, 12, 8);
    if (header_len > bytes.size() - 20) throw FormatError("checkpoint: truncated header");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.substr(20, header_len));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint: corrupt header: ") + e.what());
    }
    std::size_t offset = 20 + header_len;
    auto read_floats = [&](std::size_t count) {
        if (count > (bytes.size() - offset) / 4) throw FormatError("checkpoint: truncated tensor data");
        std::vector<float> values(count);
        for (std::size_t i = 0; i < count; ++i) {
            const auto bits = static_cast<std::uint32_t>(detail::get_le(bytes, offset + 4 * i, 4));
            std::memcpy(&values[i], &bits, sizeof bits);
        }
        offset += 4 * count;
        return values;
    };
    try {
        TrainConfig cfg = header.at("config").get<TrainConfig>();
        TrainState state = init_train_state(cfg);
        state.iteration = header.at("iteration").get<std::uint64_t>();
        state.master = Rng::from_state(header.at("rng").at("key").get<std::uint64_t>(),
                                       header.at("rng").at("counter").get<std::uint64_t>());
        const auto& tensors = header.at("tensors");
        std::size_t t = 0;
        auto fill = [&](EncoderParams& p, const std::string& prefix) {
            for (auto& e : p.entries) {
                const auto& desc = tensors.at(t++);
                if (desc.at("name").get<std::string>() != prefix + e.name || desc.at("shape").get<Shape>() != e.value.shape()) {
                    throw FormatError("checkpoint: tensor table does not match config at " + prefix + e.name);
                }
                auto values = read_floats(e.value.size());
                std::copy(values.begin(), values.end(), e.value.mutable_data().begin());
            }
        };
        fill(state.moco.f, "f/");
        fill(state.moco.g, "g/");
        std::vector<std::vector<float>> velocity;
        while (t < tensors.size() && tensors[t].at("name").get<std::string>().rfind("momentum/", 0) == 0) {
            velocity.push_back(read_floats(numel(tensors[t].at("shape").get<Shape>())));
            ++t;
        }
        if (!velocity.empty() && velocity.size() != state.moco.f.entries.size()) {
            throw FormatError("checkpoint: optimizer state does not match parameters");
        }
        state.optimizer.set_velocity(std::move(velocity));
        const auto& bank = header.at("bank");
        if (bank.at("capacity").get<std::size_t>() != cfg.memory || bank.at("dim").get<std::size_t>() != cfg.encoder.embed_dim) {
            throw FormatError("checkpoint: memory bank shape does not match config");
        }
        auto rows = read_floats(cfg.memory * cfg.encoder.embed_dim);
        state.bank.restore(std::move(rows), bank.at("tags").get<std::vector<std::int64_t>>(), bank.at("cursor").get<std::size_t>(),
                           bank.at("filled").get<std::size_t>(), bank.at("total").get<std::uint64_t>());
        if (offset != bytes.size()) throw FormatError("checkpoint: trailing bytes");
        return state;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint: malformed header: ") + e.what());
    } catch (const PreconditionError& e) {
        throw FormatError(std::string("checkpoint: invalid config: ") + e.what());
    }
}

inline TrainState load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint " + path.string());
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return deserialize_checkpoint(buffer.str());
}

// ---------------------------------------------------------------------------
// Loop

struct TrainLogRow {
    std::uint64_t iteration;
    float lr;
    float loss;
    double wall_ms;
};

inline std::string format_log_row(const TrainLogRow& row) {
    char line[128];
    std::snprintf(line, sizeof line, "%llu,%.9g,%.9g,%.3f", static_cast<unsigned long long>(row.iteration),
                  static_cast<double>(row.lr), static_cast<double>(row.loss), row.wall_ms);
    return line;
}

struct TrainHooks {
    std::function<void(const TrainLogRow&)> on_step;
    std::function<void(const TrainState&)> on_checkpoint;
    std::function<void(const TrainState&)> on_eval;
    bool record_wall_time = false;  // off keeps logs bit-reproducible
};

/// Runs from state.iteration up to config.iterations (or `until`, if smaller).
inline void run_training(TrainState& state, const FrameStore& store, const TrainHooks& hooks = {},
                         std::optional<std::uint64_t> until = std::nullopt) {
    const std::uint64_t stop = std::min<std::uint64_t>(state.config.iterations, until.value_or(state.config.iterations));
    while (state.iteration < stop) {
        const auto started = std::chrono::steady_clock::now();
        const SampledBatch batch = batch_for_step(state, store, state.iteration);
        const std::uint64_t it = state.iteration;
        const StepResult r = train_step(state, batch);
        const double ms = hooks.record_wall_time
                              ? std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count()
                              : 0.0;
        if (hooks.on_step) hooks.on_step({it, r.lr, r.loss, ms});
        if (hooks.on_checkpoint && state.config.checkpoint_every > 0 && state.iteration % state.config.checkpoint_every == 0) {
            hooks.on_checkpoint(state);
        }
        if (hooks.on_eval && state.config.eval_every > 0 && state.iteration % state.config.eval_every == 0) hooks.on_eval(state);
    }
}

}  // namespace vince
