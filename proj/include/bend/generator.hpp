#pragma once

// Feed-forward image generator viewed as an indexed stack of tappable layers.
//
//   latent [B, L] --dense--> base map [B, C0, 4, 4]
//   layer k (1-based): upsample x2 -> conv3x3 -> leaky ReLU(0.2)
//   to-RGB: conv3x3 to 3 channels -> tanh
//
// Taps are post-nonlinearity block outputs. Generator parameters are never
// part of any optimizer's parameter set.

#include "bend/bending.hpp"
#include "bend/tensor.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace bend {

/// Generator input noise, [batch, latent_dim].
struct LatentBatch {
    Matrix values;
    std::uint64_t seed = 0;
};

struct LayerDescriptor {
    int index = 0;  // 1-based
    std::size_t channels = 0;
    std::size_t height = 0;
    std::size_t width = 0;

    friend bool operator==(const LayerDescriptor&, const LayerDescriptor&) = default;
};

struct GeneratorConv {
    std::size_t in_channels = 0;
    std::size_t out_channels = 0;
    std::vector<double> weight;  // [out, in, 3, 3]
    std::vector<double> bias;    // [out]
};

class Generator {
public:
    static constexpr std::size_t kBaseSize = 4;
    static constexpr double kLeakySlope = 0.2;

    Generator(std::string name, std::size_t latent_dim, std::size_t base_channels, std::vector<double> dense_weight,
              std::vector<double> dense_bias, std::vector<GeneratorConv> blocks, GeneratorConv to_rgb);

    const std::string& name() const noexcept { return name_; }
    std::size_t latent_dim() const noexcept { return latent_dim_; }
    std::size_t base_channels() const noexcept { return base_channels_; }
    std::size_t layer_count() const noexcept { return blocks_.size(); }
    /// [3, H_out, W_out]
    std::array<std::size_t, 3> output_shape() const noexcept;
    constexpr bool frozen() const noexcept { return true; }

    std::vector<LayerDescriptor> layers() const;
    LayerDescriptor layer(int index) const;

    /// Plain forward pass.
    ImageBatch forward(const LatentBatch& z) const;

    /// Every parameter value in a fixed order, for bitwise freeze checks.
    std::vector<double> parameter_snapshot() const;

    const std::vector<double>& dense_weight() const noexcept { return dense_weight_; }
    const std::vector<double>& dense_bias() const noexcept { return dense_bias_; }
    const std::vector<GeneratorConv>& blocks() const noexcept { return blocks_; }
    const GeneratorConv& to_rgb() const noexcept { return to_rgb_; }

private:
    std::string name_;
    std::size_t latent_dim_;
    std::size_t base_channels_;
    std::vector<double> dense_weight_;  // [C0 * 16, latent_dim]
    std::vector<double> dense_bias_;
    std::vector<GeneratorConv> blocks_;
    GeneratorConv to_rgb_;
};

/// Deterministic desk-scale generator; one block per entry of layer_channels.
/// Weights are uniform in +-sqrt(6 / fan_in) from a counter stream keyed by seed.
Generator build_toy_generator(std::uint64_t seed, const std::vector<std::size_t>& layer_channels,
                              std::size_t latent_dim);

std::vector<LayerDescriptor> list_layers(const Generator& g);

/// Result of one instrumented pass, including what the backward pass needs.
struct InjectionPass {
    ImageBatch images;
    ActivationMap tapped;  // post-BM map at the injection layer
    int layer_index = 0;
    std::optional<BmTrace> bm_trace;
    // Per tail block (layers after the tap): upsampled conv input and pre-activation.
    std::vector<Tensor4> tail_inputs;
    std::vector<Tensor4> tail_pre;
    Tensor4 rgb_input;
};

/// Runs layers 1..layer_index, applies `bm` (identity when null) and feeds
/// the result through the remaining layers. Throws InvalidLayer for an index
/// outside [1, layer_count] and Shape when the BM channel count differs.
InjectionPass forward_with_injection(const Generator& g, const LatentBatch& z, int layer_index,
                                     const BendingModule* bm);

/// Gradient of the images w.r.t. the tapped (post-BM) map.
ActivationMap backprop_to_tap(const Generator& g, const InjectionPass& pass, const ImageBatch& d_images);

// External checkpoints -------------------------------------------------------

/// Generator archive ("BENDGEN\0"), version 1. Header fields: adapter,
/// latent_dim, base_channels, blocks (per-layer channel counts), dtype
/// ("f32" or "f64"), tensors [{name, shape}] in payload order:
/// dense.weight, dense.bias, block{k}.weight, block{k}.bias, to_rgb.weight, to_rgb.bias.
inline constexpr std::uint32_t kGeneratorArchiveVersion = 1;

std::vector<std::string> registered_adapters();

/// Throws Io for a missing file, UnknownAdapter for an unregistered name and
/// Parse when the archive is malformed or does not match the adapter layout.
Generator load_external_generator(const std::filesystem::path& checkpoint, std::string_view adapter_name);

/// Writes `g` as a generator archive tagged with `adapter_name`.
void save_generator_archive(const Generator& g, const std::filesystem::path& path, std::string_view adapter_name,
                            bool single_precision = true);

/// Per-layer channel table of the ButterflyGAN layout (7 layers, 8x8 to 512x512).
const std::vector<std::size_t>& butterflygan_layer_channels();

}  // namespace bend
