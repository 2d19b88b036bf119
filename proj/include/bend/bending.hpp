#pragma once

// Bending modules: small trainable same-shape transforms injected between
// generator layers. All three families end in the same two-conv stack
//   conv3x3 -> activation -> conv3x3   ('same' padding, no skip path)
// and differ only in what they feed it:
//   conv        the activation map as is
//   coord_conv  the map with x, y (and optionally r) channels appended
//   sort_conv   the map reordered along one spatial axis by a soft permutation

#include "bend/diffsort.hpp"
#include "bend/tensor.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace bend {

enum class BmFamily { conv, coord_conv, sort_conv };
enum class BmActivation { relu, sin };
using diffsort::SortAxis;

struct BendingConfig {
    BmFamily family = BmFamily::conv;
    std::size_t channels = 0;
    BmActivation activation = BmActivation::relu;
    bool include_r = false;               // coord_conv only
    std::optional<SortAxis> sort_axis;    // sort_conv only, required there
    double steepness = 50.0;              // sort_conv only
    double sin_frequency = 1.0;           // sin activation only

    /// Throws InvalidConfig on a bad value or an inconsistent combination.
    void validate() const;

    /// Channels entering the first conv: channels, +2 for x/y, +1 for r.
    std::size_t first_conv_inputs() const;

    friend bool operator==(const BendingConfig&, const BendingConfig&) = default;
};

std::string_view to_string(BmFamily f);
std::string_view to_string(BmActivation a);
std::string_view to_string(SortAxis a);
BmFamily parse_family(std::string_view s);
BmActivation parse_activation(std::string_view s);
SortAxis parse_sort_axis(std::string_view s);

/// A named trainable array.
struct Parameter {
    std::string name;
    std::vector<std::size_t> shape;
    std::vector<double> values;

    friend bool operator==(const Parameter&, const Parameter&) = default;
};

class BendingModule {
public:
    BendingModule() = default;
    BendingModule(BendingConfig config, std::vector<Parameter> params);

    const BendingConfig& config() const noexcept { return config_; }
    const std::vector<Parameter>& parameters() const noexcept { return params_; }
    std::vector<Parameter>& parameters() noexcept { return params_; }

    const Parameter& param(std::string_view name) const;
    std::size_t param_index(std::string_view name) const;

    friend bool operator==(const BendingModule&, const BendingModule&) = default;

private:
    BendingConfig config_;
    std::vector<Parameter> params_;
};

/// Parameters are "conv1.weight" [C, Cin, 3, 3], "conv1.bias" [C],
/// "conv2.weight" [C, C, 3, 3], "conv2.bias" [C], and for sort_conv also
/// "score.weight" [1, C, 3, 3], "score.bias" [1]. Each is drawn uniform in
/// +-1/sqrt(fan_in) from a counter stream keyed by `seed`.
BendingModule make_bm(const BendingConfig& config, std::uint64_t seed);

struct CoordinateGrid {
    std::size_t height = 0;
    std::size_t width = 0;
    Matrix x;                 // j / (W-1), varies along width
    Matrix y;                 // i / (H-1), varies along height
    std::optional<Matrix> r;  // distance from (0.5, 0.5)
};

CoordinateGrid coordinate_grid(std::size_t height, std::size_t width, bool include_r);

/// Everything the backward pass needs from one apply_bm call.
struct BmTrace {
    ActivationMap input;       // original map
    ActivationMap conv_input;  // after coordinate concat or axis permutation
    ActivationMap hidden;      // first conv output, pre-activation
    ActivationMap activated;   // after the activation
    diffsort::ScoreTrace scores;
    diffsort::SortTrace sort;
    diffsort::SoftPermutation perm;
};

/// Same-shape transform of `a`. Throws Shape when a.channels() differs from
/// the module's channel count.
ActivationMap apply_bm(const BendingModule& bm, const ActivationMap& a, BmTrace* trace = nullptr);

struct BmGradients {
    std::vector<std::vector<double>> params;  // parallel to bm.parameters()
    ActivationMap input;                      // d loss / d a
};

BmGradients apply_bm_backward(const BendingModule& bm, const BmTrace& trace, const ActivationMap& d_out);

}  // namespace bend
