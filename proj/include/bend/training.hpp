#pragma once

#include "bend/bending.hpp"
#include "bend/generator.hpp"
#include "bend/objectives.hpp"

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace bend {

// Latents ----------------------------------------------------------------------

/// Standard-normal [batch, latent_dim] draws from the counter stream keyed by
/// `seed`. Row r of a larger batch equals row r of a smaller one.
LatentBatch sample_latents(std::uint64_t seed, std::size_t batch, std::size_t latent_dim);

/// Latents for one training iteration: a stream disjoint from sample_latents.
LatentBatch training_latents(std::uint64_t seed, std::uint64_t iteration, std::size_t batch, std::size_t latent_dim);

// Optimizer --------------------------------------------------------------------

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;

    friend bool operator==(const AdamConfig&, const AdamConfig&) = default;
};

/// Adaptive-moment update with bias correction, one moment pair per slot.
class Adam {
public:
    Adam(double learning_rate, AdamConfig cfg = {});

    void step(std::vector<Parameter>& params, const std::vector<std::vector<double>>& grads);
    void step(std::span<double> values, std::span<const double> grad);

    std::int64_t steps() const noexcept { return t_; }

private:
    void update(std::size_t slot, std::span<double> values, std::span<const double> grad);

    double lr_;
    AdamConfig cfg_;
    std::int64_t t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

// Training ---------------------------------------------------------------------

struct TrainConfig {
    std::int64_t iterations = 1000;
    std::size_t batch_size = 16;
    double learning_rate = 1e-3;
    AdamConfig adam;
    LossConfig loss;
    int layer_index = 1;
    std::uint64_t seed = 0;
    std::int64_t log_every = 10;

    void validate() const;

    friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct LossRecord {
    std::int64_t iteration;  // first iteration of the logging window
    double loss;             // mean loss over the window

    friend bool operator==(const LossRecord&, const LossRecord&) = default;
};

struct TrainResult {
    BendingModule final_bm;
    std::vector<LossRecord> loss_history;  // ceil(iterations / log_every) entries
    double wall_time_seconds = 0.0;
    TrainConfig config;
    std::vector<std::string> warnings;
};

using ProgressFn = std::function<void(const LossRecord&)>;

/// Optimizes a copy of `bm`; nothing else is touched. Throws TrainingDiverged
/// on the first non-finite loss, Shape/InvalidLayer on a bad injection point.
TrainResult train_bm(const Generator& g, const BendingModule& bm, const Embedder& e, std::string_view prompt,
                     const TrainConfig& cfg, const ProgressFn& progress = {});

void write_loss_history_csv(const std::vector<LossRecord>& history, const std::filesystem::path& path);

// Checkpoints ------------------------------------------------------------------

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct LoadedCheckpoint {
    BendingModule bm;
    TrainConfig config;
    nlohmann::json context;  // run provenance (generator/embedder source, prompt)
};

/// Writes a "BENDCKPT" archive: header with bending config, training config,
/// context and the parameter list, then every parameter as little-endian f64.
void save_checkpoint(const BendingModule& bm, const TrainConfig& cfg, const std::filesystem::path& path,
                     const nlohmann::json& context = nlohmann::json::object());

/// Throws Io, Parse or Version.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

bool is_checkpoint_file(const std::filesystem::path& path);

// JSON forms shared by checkpoints and run configs -----------------------------

nlohmann::json to_json(const BendingConfig& c);
nlohmann::json to_json(const LossConfig& c);
nlohmann::json to_json(const TrainConfig& c);
/// Parsers throw InvalidConfig naming the offending field. Missing fields keep
/// their defaults; `channels` may be omitted and filled in by the caller.
BendingConfig bending_config_from_json(const nlohmann::json& j);
LossConfig loss_config_from_json(const nlohmann::json& j);
TrainConfig train_config_from_json(const nlohmann::json& j);

}  // namespace bend
