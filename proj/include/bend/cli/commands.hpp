#pragma once

#include "bend/cli/config.hpp"
#include "bend/cli/manifest.hpp"

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace bend::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitRuntime = 3;

/// Makes `dir` ready for output. Refuses (UsageError) when it already holds
/// files and `force` is false.
void prepare_output_dir(const std::filesystem::path& dir, bool force);

struct TrainOutcome {
    std::filesystem::path run_dir;
    std::filesystem::path checkpoint;
    TrainResult result;
};

/// config.json, bm.ckpt, loss_history.csv and manifest.json in run_dir.
TrainOutcome train_run(RunConfig cfg, const std::filesystem::path& run_dir, bool force, std::ostream& log);

/// A trained module with the generator and embedder it was trained against.
struct LoadedRun {
    BendingModule bm;
    TrainConfig training;
    Generator generator;
    EmbedderSource embedder;
    std::string prompt;
};

LoadedRun load_run(const std::filesystem::path& checkpoint);

/// One latent row per seed: row i is row 0 of sample_latents(seeds[i], 1, dim).
LatentBatch seed_latents(const std::vector<std::uint64_t>& seeds, std::size_t latent_dim);

/// Images for `z` with the module injected at its training layer.
ImageBatch render(const LoadedRun& run, const LatentBatch& z);

/// sample_<seed>.png per seed, grid.png, manifest.json.
std::vector<std::filesystem::path> generate_images(const std::filesystem::path& checkpoint,
                                                   const std::vector<std::uint64_t>& seeds,
                                                   const std::filesystem::path& out_dir, bool force);

struct CompareVariant {
    std::string label;
    std::filesystem::path checkpoint;
    LatentBatch latents;  // exactly what was fed to the generator
    ImageBatch images;
    Matrix embeddings;
    double mean_pairwise_cosine = 0.0;
    double mean_prompt_cosine = 0.0;
};

struct CompareResult {
    CompareVariant a;
    CompareVariant b;
    std::vector<std::uint64_t> seeds;
};

/// Throws UsageError when the configs differ outside loss kind, BM family and include_r.
void check_comparable(const RunConfig& a, const RunConfig& b);

/// Trains (or loads, when given a checkpoint) both variants under out_dir/a and
/// out_dir/b, renders them from the same latents and writes compare.png
/// (A on top), similarity.csv, summary.csv and manifest.json.
CompareResult compare_runs(const std::filesystem::path& source_a, const std::filesystem::path& source_b,
                           const std::vector<std::uint64_t>& seeds, const std::filesystem::path& out_dir, bool force,
                           std::ostream& log);

void print_layers(const Generator& g, std::ostream& out);

/// Full command-line entry point; returns the process exit code.
int run_cli(int argc, char** argv, std::ostream& out, std::ostream& err);
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace bend::cli
