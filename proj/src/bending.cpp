#include "bend/bending.hpp"

#include "bend/error.hpp"
#include "bend/kernels.hpp"
#include "bend/rng.hpp"

#include <cmath>
#include <cstdint>

namespace bend {

namespace {

constexpr std::uint64_t kBmStreamBase = 0xB3D0'0000ull;

kernels::ConvWeights conv_view(const BendingModule& bm, std::size_t w_idx) {
    const Parameter& w = bm.parameters()[w_idx];
    const Parameter& b = bm.parameters()[w_idx + 1];
    return {w.values, b.values, w.shape[0], w.shape[1]};
}

kernels::ConvGradients grad_view(BmGradients& g, std::size_t w_idx) {
    return {g.params[w_idx], g.params[w_idx + 1]};
}

Parameter init_param(std::string name, std::vector<std::size_t> shape, std::size_t fan_in, std::uint64_t seed,
                     std::uint64_t stream) {
    std::size_t count = 1;
    for (std::size_t d : shape) count *= d;
    Parameter p{std::move(name), std::move(shape), std::vector<double>(count)};
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    rng::CounterStream(seed, kBmStreamBase + stream).fill_uniform(p.values, -bound, bound);
    return p;
}

void append_coordinates(const ActivationMap& a, const CoordinateGrid& grid, ActivationMap& out) {
    const std::size_t C = a.channels(), extra = grid.r ? 3 : 2;
    out = ActivationMap(a.batch(), C + extra, a.height(), a.width());
    for (std::size_t b = 0; b < a.batch(); ++b) {
        for (std::size_t c = 0; c < C; ++c)
            std::copy(a.plane_ptr(b, c), a.plane_ptr(b, c) + a.plane(), out.plane_ptr(b, c));
        std::copy(grid.x.data(), grid.x.data() + a.plane(), out.plane_ptr(b, C));
        std::copy(grid.y.data(), grid.y.data() + a.plane(), out.plane_ptr(b, C + 1));
        if (grid.r) std::copy(grid.r->data(), grid.r->data() + a.plane(), out.plane_ptr(b, C + 2));
    }
}

}  // namespace

std::string_view to_string(BmFamily f) {
    switch (f) {
        case BmFamily::conv: return "conv";
        case BmFamily::coord_conv: return "coord_conv";
        case BmFamily::sort_conv: return "sort_conv";
    }
    return "?";
}

std::string_view to_string(BmActivation a) { return a == BmActivation::relu ? "relu" : "sin"; }
std::string_view to_string(SortAxis a) { return a == SortAxis::height ? "height" : "width"; }

BmFamily parse_family(std::string_view s) {
    if (s == "conv") return BmFamily::conv;
    if (s == "coord_conv") return BmFamily::coord_conv;
    if (s == "sort_conv") return BmFamily::sort_conv;
    throw Error(ErrorKind::InvalidConfig, "unknown bending family '" + std::string(s) + "'");
}

BmActivation parse_activation(std::string_view s) {
    if (s == "relu") return BmActivation::relu;
    if (s == "sin") return BmActivation::sin;
    throw Error(ErrorKind::InvalidConfig, "unknown activation '" + std::string(s) + "'");
}

SortAxis parse_sort_axis(std::string_view s) {
    if (s == "height") return SortAxis::height;
    if (s == "width") return SortAxis::width;
    throw Error(ErrorKind::InvalidConfig, "unknown sort axis '" + std::string(s) + "'");
}

void BendingConfig::validate() const {
    if (channels < 1) throw Error(ErrorKind::InvalidConfig, "bending module needs at least one channel");
    if (include_r && family != BmFamily::coord_conv)
        throw Error(ErrorKind::InvalidConfig, "include_r is only valid for coord_conv");
    if (family == BmFamily::sort_conv) {
        if (!sort_axis) throw Error(ErrorKind::InvalidConfig, "sort_conv needs a sort axis (height or width)");
        if (!(steepness > 0.0) || !std::isfinite(steepness))
            throw Error(ErrorKind::InvalidConfig, "steepness must be positive and finite");
    } else if (sort_axis) {
        throw Error(ErrorKind::InvalidConfig, "sort_axis is only valid for sort_conv");
    }
    if (!std::isfinite(sin_frequency) || sin_frequency == 0.0)
        throw Error(ErrorKind::InvalidConfig, "sin frequency must be finite and nonzero");
}

std::size_t BendingConfig::first_conv_inputs() const {
    if (family != BmFamily::coord_conv) return channels;
    return channels + (include_r ? 3 : 2);
}

BendingModule::BendingModule(BendingConfig config, std::vector<Parameter> params)
    : config_(config), params_(std::move(params)) {}

std::size_t BendingModule::param_index(std::string_view name) const {
    for (std::size_t i = 0; i < params_.size(); ++i)
        if (params_[i].name == name) return i;
    throw Error(ErrorKind::InvalidConfig, "bending module has no parameter '" + std::string(name) + "'");
}

const Parameter& BendingModule::param(std::string_view name) const { return params_[param_index(name)]; }

BendingModule make_bm(const BendingConfig& config, std::uint64_t seed) {
    config.validate();
    const std::size_t C = config.channels, Cin = config.first_conv_inputs();
    std::vector<Parameter> params;
    params.push_back(init_param("conv1.weight", {C, Cin, 3, 3}, Cin * 9, seed, 0));
    params.push_back(init_param("conv1.bias", {C}, Cin * 9, seed, 1));
    params.push_back(init_param("conv2.weight", {C, C, 3, 3}, C * 9, seed, 2));
    params.push_back(init_param("conv2.bias", {C}, C * 9, seed, 3));
    if (config.family == BmFamily::sort_conv) {
        params.push_back(init_param("score.weight", {1, C, 3, 3}, C * 9, seed, 4));
        params.push_back(init_param("score.bias", {1}, C * 9, seed, 5));
    }
    return BendingModule(config, std::move(params));
}

CoordinateGrid coordinate_grid(std::size_t height, std::size_t width, bool include_r) {
    if (height < 1 || width < 1) throw Error(ErrorKind::Shape, "coordinate grid needs positive extents");
    CoordinateGrid g{height, width, Matrix(height, width), Matrix(height, width), std::nullopt};
    const auto axis = [](std::size_t k, std::size_t len) {
        return len == 1 ? 0.0 : static_cast<double>(k) / static_cast<double>(len - 1);
    };
    for (std::size_t i = 0; i < height; ++i)
        for (std::size_t j = 0; j < width; ++j) {
            g.x(i, j) = axis(j, width);
            g.y(i, j) = axis(i, height);
        }
    if (include_r) {
        g.r = Matrix(height, width);
        for (std::size_t i = 0; i < height; ++i)
            for (std::size_t j = 0; j < width; ++j) {
                const double dx = g.x(i, j) - 0.5, dy = g.y(i, j) - 0.5;
                (*g.r)(i, j) = std::sqrt(dx * dx + dy * dy);
            }
    }
    return g;
}

ActivationMap apply_bm(const BendingModule& bm, const ActivationMap& a, BmTrace* trace) {
    const BendingConfig& cfg = bm.config();
    if (a.channels() != cfg.channels)
        throw Error(ErrorKind::Shape, "bending module expects " + std::to_string(cfg.channels) +
                                          " channels, got map " + a.shape_string());
    BmTrace local;
    BmTrace& t = trace ? *trace : local;
    t.input = a;

    switch (cfg.family) {
        case BmFamily::conv:
            t.conv_input = a;
            break;
        case BmFamily::coord_conv:
            append_coordinates(a, coordinate_grid(a.height(), a.width(), cfg.include_r), t.conv_input);
            break;
        case BmFamily::sort_conv: {
            const SortAxis axis = *cfg.sort_axis;
            const auto scores = diffsort::row_scores(a, conv_view(bm, 4), axis, &t.scores);
            auto sorted = diffsort::soft_sort(scores, cfg.steepness, &t.sort);
            t.perm = std::move(sorted.perm);
            t.conv_input = diffsort::permute_axis(a, t.perm, axis);
            break;
        }
    }

    kernels::conv3x3_forward(t.conv_input, conv_view(bm, 0), t.hidden);
    t.activated = t.hidden;
    for (double& v : t.activated.values()) {
        if (cfg.activation == BmActivation::relu)
            v = v > 0.0 ? v : 0.0;
        else
            v = std::sin(cfg.sin_frequency * v);
    }
    ActivationMap out;
    kernels::conv3x3_forward(t.activated, conv_view(bm, 2), out);
    return out;
}

BmGradients apply_bm_backward(const BendingModule& bm, const BmTrace& t, const ActivationMap& d_out) {
    const BendingConfig& cfg = bm.config();
    if (!d_out.same_shape(t.input)) throw Error(ErrorKind::Shape, "bending backward: gradient shape mismatch");
    BmGradients g;
    for (const Parameter& p : bm.parameters()) g.params.emplace_back(p.values.size(), 0.0);

    ActivationMap d_act;
    const auto conv2_grads = grad_view(g, 2);
    kernels::conv3x3_backward(t.activated, conv_view(bm, 2), d_out, &d_act, &conv2_grads);

    ActivationMap& d_hidden = d_act;
    const double* h = t.hidden.data();
    double* dh = d_hidden.data();
    for (std::size_t k = 0; k < d_hidden.size(); ++k) {
        if (cfg.activation == BmActivation::relu)
            dh[k] = h[k] > 0.0 ? dh[k] : 0.0;
        else
            dh[k] *= cfg.sin_frequency * std::cos(cfg.sin_frequency * h[k]);
    }

    ActivationMap d_conv_input;
    const auto conv1_grads = grad_view(g, 0);
    kernels::conv3x3_backward(t.conv_input, conv_view(bm, 0), d_hidden, &d_conv_input, &conv1_grads);

    switch (cfg.family) {
        case BmFamily::conv:
            g.input = std::move(d_conv_input);
            break;
        case BmFamily::coord_conv: {
            const std::size_t C = cfg.channels;
            g.input = ActivationMap(t.input.batch(), C, t.input.height(), t.input.width());
            for (std::size_t b = 0; b < t.input.batch(); ++b)
                for (std::size_t c = 0; c < C; ++c)
                    std::copy(d_conv_input.plane_ptr(b, c), d_conv_input.plane_ptr(b, c) + t.input.plane(),
                              g.input.plane_ptr(b, c));
            break;
        }
        case BmFamily::sort_conv: {
            const SortAxis axis = *cfg.sort_axis;
            ActivationMap d_direct;
            diffsort::SoftPermutation d_perm;
            diffsort::permute_axis_backward(t.input, t.perm, axis, d_conv_input, &d_direct, &d_perm);
            const Matrix d_scores = diffsort::soft_sort_backward(t.sort, nullptr, &d_perm);
            ActivationMap d_via_scores;
            const auto score_grads = grad_view(g, 4);
            diffsort::row_scores_backward(t.input, conv_view(bm, 4), axis, d_scores, score_grads, &d_via_scores);
            for (std::size_t k = 0; k < d_direct.size(); ++k) d_direct.data()[k] += d_via_scores.data()[k];
            g.input = std::move(d_direct);
            break;
        }
    }
    return g;
}

}  // namespace bend
