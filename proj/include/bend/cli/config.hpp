#pragma once

// Run configuration file (JSON):
//
//   {
//     "prompt": "a watercolor butterfly",
//     "output_dir": "runs/butterfly",
//     "generator": {"source": "toy", "seed": 7, "layers": [32, 16], "latent_dim": 64},
//     "embedder":  {"source": "toy", "seed": 0, "dim": 64},
//     "bending":   {"family": "coord_conv", "activation": "relu", "include_r": true, "seed": 0},
//     "training":  {"iterations": 1000, "batch_size": 16, "learning_rate": 0.001,
//                   "loss": {"kind": "infonce", "temperature": 0.001}, "layer_index": 1, "seed": 0}
//   }
//
// An external generator is {"source": "external", "path": "...", "adapter": "butterflygan"}.
// bending.channels may be omitted; it is then taken from the injection layer.

#include "bend/bending.hpp"
#include "bend/generator.hpp"
#include "bend/objectives.hpp"
#include "bend/training.hpp"

#include "json.hpp"

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace bend::cli {

/// A problem with what the user asked for. Maps to exit code 2.
class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct GeneratorSource {
    enum class Kind { toy, external } kind = Kind::toy;
    std::uint64_t seed = 7;
    std::vector<std::size_t> layers{32, 16};
    std::size_t latent_dim = 64;
    std::filesystem::path path;
    std::string adapter = "butterflygan";

    friend bool operator==(const GeneratorSource&, const GeneratorSource&) = default;
};

struct EmbedderSource {
    std::uint64_t seed = 0;
    std::size_t dim = 64;

    friend bool operator==(const EmbedderSource&, const EmbedderSource&) = default;
};

struct RunConfig {
    std::string prompt;
    std::filesystem::path output_dir;
    GeneratorSource generator;
    EmbedderSource embedder;
    BendingConfig bending;  // channels == 0 until resolved against the generator
    std::uint64_t bending_seed = 0;
    TrainConfig training;
};

/// Parses and validates everything that does not need the generator.
/// Throws UsageError naming the problem.
RunConfig parse_run_config(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);

nlohmann::json to_json(const RunConfig& c);
nlohmann::json to_json(const GeneratorSource& g);
nlohmann::json to_json(const EmbedderSource& e);
GeneratorSource generator_source_from_json(const nlohmann::json& j);
EmbedderSource embedder_source_from_json(const nlohmann::json& j);

Generator build_generator(const GeneratorSource& src);
ToyEmbedder build_embedder(const EmbedderSource& src);

/// Fills bending.channels from the injection layer, or checks it against the
/// layer. Throws UsageError on a mismatch or an out-of-range layer.
void resolve_against(RunConfig& c, const Generator& g);

/// Parses "a..b" (inclusive) or a comma-separated list.
std::vector<std::uint64_t> parse_seed_list(const std::string& text);

}  // namespace bend::cli
