#include "bend/generator.hpp"

#include "bend/archive.hpp"
#include "bend/error.hpp"
#include "bend/kernels.hpp"
#include "bend/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>

namespace bend {

namespace {

constexpr archive::Magic kGeneratorMagic{'B', 'E', 'N', 'D', 'G', 'E', 'N', '\0'};
constexpr std::uint64_t kGeneratorStreamBase = 0x6E4E'0000ull;

kernels::ConvWeights view(const GeneratorConv& c) { return {c.weight, c.bias, c.out_channels, c.in_channels}; }

void leaky_inplace(Tensor4& t) {
    for (double& v : t.values()) v = v > 0.0 ? v : Generator::kLeakySlope * v;
}

ActivationMap base_map(const Generator& g, const LatentBatch& z) {
    if (z.values.cols() != g.latent_dim() || z.values.rows() < 1)
        throw Error(ErrorKind::Shape, "latent batch has dim " + std::to_string(z.values.cols()) + ", generator expects " +
                                          std::to_string(g.latent_dim()));
    Matrix dense;
    kernels::dense_forward(z.values, g.dense_weight(), g.dense_bias(), dense);
    const std::size_t S = Generator::kBaseSize;
    ActivationMap base(z.values.rows(), g.base_channels(), S, S);
    std::copy(dense.data(), dense.data() + dense.size(), base.data());
    return base;
}

// One block forward; records the upsampled input and pre-activation when asked.
ActivationMap run_block(const GeneratorConv& block, const ActivationMap& in, Tensor4* up_out, Tensor4* pre_out) {
    Tensor4 up;
    kernels::upsample2x_forward(in, up);
    Tensor4 pre;
    kernels::conv3x3_forward(up, view(block), pre);
    ActivationMap act = pre;
    leaky_inplace(act);
    if (up_out) *up_out = std::move(up);
    if (pre_out) *pre_out = std::move(pre);
    return act;
}

ImageBatch run_to_rgb(const GeneratorConv& to_rgb, const ActivationMap& in) {
    ImageBatch img;
    kernels::conv3x3_forward(in, view(to_rgb), img);
    for (double& v : img.values()) v = std::tanh(v);
    return img;
}

GeneratorConv random_conv(std::size_t in, std::size_t out, std::uint64_t seed, std::uint64_t stream) {
    GeneratorConv c{in, out, std::vector<double>(out * in * 9), std::vector<double>(out)};
    const double bound = std::sqrt(6.0 / static_cast<double>(in * 9));
    rng::CounterStream(seed, kGeneratorStreamBase + 2 * stream).fill_uniform(c.weight, -bound, bound);
    rng::CounterStream(seed, kGeneratorStreamBase + 2 * stream + 1).fill_uniform(c.bias, -bound, bound);
    return c;
}

}  // namespace

Generator::Generator(std::string name, std::size_t latent_dim, std::size_t base_channels,
                     std::vector<double> dense_weight, std::vector<double> dense_bias,
                     std::vector<GeneratorConv> blocks, GeneratorConv to_rgb)
    : name_(std::move(name)), latent_dim_(latent_dim), base_channels_(base_channels),
      dense_weight_(std::move(dense_weight)), dense_bias_(std::move(dense_bias)), blocks_(std::move(blocks)),
      to_rgb_(std::move(to_rgb)) {
    const std::size_t base_size = base_channels_ * kBaseSize * kBaseSize;
    if (latent_dim_ < 1 || base_channels_ < 1 || blocks_.empty())
        throw Error(ErrorKind::InvalidConfig, "generator needs latent_dim, base channels and at least one layer");
    if (dense_weight_.size() != base_size * latent_dim_ || dense_bias_.size() != base_size)
        throw Error(ErrorKind::Shape, "generator dense layer has the wrong size");
    std::size_t in = base_channels_;
    for (const GeneratorConv& b : blocks_) {
        if (b.in_channels != in || b.out_channels < 1 || b.weight.size() != b.out_channels * b.in_channels * 9 ||
            b.bias.size() != b.out_channels)
            throw Error(ErrorKind::Shape, "generator block has inconsistent channel counts");
        in = b.out_channels;
    }
    if (to_rgb_.in_channels != in || to_rgb_.out_channels != 3 || to_rgb_.weight.size() != 3 * in * 9 ||
        to_rgb_.bias.size() != 3)
        throw Error(ErrorKind::Shape, "generator to-RGB layer has inconsistent channel counts");
}

std::array<std::size_t, 3> Generator::output_shape() const noexcept {
    const std::size_t side = kBaseSize << blocks_.size();
    return {3, side, side};
}

std::vector<LayerDescriptor> Generator::layers() const {
    std::vector<LayerDescriptor> out;
    std::size_t side = kBaseSize;
    for (std::size_t k = 0; k < blocks_.size(); ++k) {
        side *= 2;
        out.push_back({static_cast<int>(k + 1), blocks_[k].out_channels, side, side});
    }
    return out;
}

LayerDescriptor Generator::layer(int index) const {
    if (index < 1 || static_cast<std::size_t>(index) > blocks_.size())
        throw Error(ErrorKind::InvalidLayer, "layer index " + std::to_string(index) + " outside [1, " +
                                                 std::to_string(blocks_.size()) + "]");
    return layers()[static_cast<std::size_t>(index - 1)];
}

ImageBatch Generator::forward(const LatentBatch& z) const {
    ActivationMap a = base_map(*this, z);
    for (const GeneratorConv& b : blocks_) a = run_block(b, a, nullptr, nullptr);
    return run_to_rgb(to_rgb_, a);
}

std::vector<double> Generator::parameter_snapshot() const {
    std::vector<double> out(dense_weight_);
    out.insert(out.end(), dense_bias_.begin(), dense_bias_.end());
    for (const GeneratorConv& b : blocks_) {
        out.insert(out.end(), b.weight.begin(), b.weight.end());
        out.insert(out.end(), b.bias.begin(), b.bias.end());
    }
    out.insert(out.end(), to_rgb_.weight.begin(), to_rgb_.weight.end());
    out.insert(out.end(), to_rgb_.bias.begin(), to_rgb_.bias.end());
    return out;
}

Generator build_toy_generator(std::uint64_t seed, const std::vector<std::size_t>& layer_channels,
                              std::size_t latent_dim) {
    if (layer_channels.empty()) throw Error(ErrorKind::InvalidConfig, "toy generator needs at least one layer");
    if (latent_dim < 1) throw Error(ErrorKind::InvalidConfig, "latent_dim must be at least 1");
    for (std::size_t c : layer_channels)
        if (c < 1) throw Error(ErrorKind::InvalidConfig, "layer channel counts must be positive");

    const std::size_t C0 = layer_channels.front();
    const std::size_t base = C0 * Generator::kBaseSize * Generator::kBaseSize;
    std::vector<double> dense_w(base * latent_dim), dense_b(base);
    const double bound = std::sqrt(6.0 / static_cast<double>(latent_dim));
    rng::CounterStream(seed, kGeneratorStreamBase - 2).fill_uniform(dense_w, -bound, bound);
    rng::CounterStream(seed, kGeneratorStreamBase - 1).fill_uniform(dense_b, -bound, bound);

    std::vector<GeneratorConv> blocks;
    std::size_t in = C0;
    for (std::size_t k = 0; k < layer_channels.size(); ++k) {
        blocks.push_back(random_conv(in, layer_channels[k], seed, k));
        in = layer_channels[k];
    }
    GeneratorConv rgb = random_conv(in, 3, seed, layer_channels.size());
    return Generator("toy", latent_dim, C0, std::move(dense_w), std::move(dense_b), std::move(blocks), std::move(rgb));
}

std::vector<LayerDescriptor> list_layers(const Generator& g) { return g.layers(); }

InjectionPass forward_with_injection(const Generator& g, const LatentBatch& z, int layer_index,
                                     const BendingModule* bm) {
    const LayerDescriptor desc = g.layer(layer_index);
    if (bm && bm->config().channels != desc.channels)
        throw Error(ErrorKind::Shape, "bending module has " + std::to_string(bm->config().channels) +
                                          " channels, layer " + std::to_string(layer_index) + " has " +
                                          std::to_string(desc.channels));
    InjectionPass pass;
    pass.layer_index = layer_index;
    const auto& blocks = g.blocks();
    const auto tap = static_cast<std::size_t>(layer_index);

    ActivationMap a = base_map(g, z);
    for (std::size_t k = 0; k < tap; ++k) a = run_block(blocks[k], a, nullptr, nullptr);
    if (bm) {
        pass.bm_trace.emplace();
        a = apply_bm(*bm, a, &*pass.bm_trace);
    }
    pass.tapped = a;
    for (std::size_t k = tap; k < blocks.size(); ++k) {
        pass.tail_inputs.emplace_back();
        pass.tail_pre.emplace_back();
        a = run_block(blocks[k], a, &pass.tail_inputs.back(), &pass.tail_pre.back());
    }
    pass.images = run_to_rgb(g.to_rgb(), a);
    pass.rgb_input = std::move(a);
    return pass;
}

ActivationMap backprop_to_tap(const Generator& g, const InjectionPass& pass, const ImageBatch& d_images) {
    if (!d_images.same_shape(pass.images)) throw Error(ErrorKind::Shape, "image gradient shape mismatch");
    Tensor4 d_pre = d_images;
    for (std::size_t k = 0; k < d_pre.size(); ++k) {
        const double t = pass.images.data()[k];
        d_pre.data()[k] *= 1.0 - t * t;
    }
    ActivationMap d_act;
    kernels::conv3x3_backward(pass.rgb_input, view(g.to_rgb()), d_pre, &d_act, nullptr);

    const auto& blocks = g.blocks();
    const auto tap = static_cast<std::size_t>(pass.layer_index);
    for (std::size_t k = blocks.size(); k-- > tap;) {
        const std::size_t t = k - tap;
        const Tensor4& pre = pass.tail_pre[t];
        for (std::size_t i = 0; i < d_act.size(); ++i)
            if (pre.data()[i] <= 0.0) d_act.data()[i] *= Generator::kLeakySlope;
        Tensor4 d_up;
        kernels::conv3x3_backward(pass.tail_inputs[t], view(blocks[k]), d_act, &d_up, nullptr);
        kernels::upsample2x_backward(d_up, d_act);
    }
    return d_act;
}

// External checkpoints -------------------------------------------------------

const std::vector<std::size_t>& butterflygan_layer_channels() {
    static const std::vector<std::size_t> table{512, 512, 256, 256, 128, 64, 32};
    return table;
}

std::vector<std::string> registered_adapters() { return {"butterflygan"}; }

Generator load_external_generator(const std::filesystem::path& checkpoint, std::string_view adapter_name) {
    const auto adapters = registered_adapters();
    if (std::find(adapters.begin(), adapters.end(), adapter_name) == adapters.end())
        throw Error(ErrorKind::UnknownAdapter, "no generator adapter named '" + std::string(adapter_name) + "'");

    const archive::Contents c = archive::read(checkpoint, kGeneratorMagic);
    if (c.version != kGeneratorArchiveVersion)
        throw Error(ErrorKind::Version, "generator archive version " + std::to_string(c.version) + " is not supported");
    const nlohmann::json& h = c.header;
    try {
        if (h.at("adapter").get<std::string>() != adapter_name)
            throw Error(ErrorKind::Parse, "archive was written for adapter '" + h.at("adapter").get<std::string>() + "'");
        const auto latent_dim = h.at("latent_dim").get<std::size_t>();
        const auto base_channels = h.at("base_channels").get<std::size_t>();
        const auto block_channels = h.at("blocks").get<std::vector<std::size_t>>();
        const std::string dtype = h.at("dtype").get<std::string>();
        if (dtype != "f32" && dtype != "f64") throw Error(ErrorKind::Parse, "unknown dtype '" + dtype + "'");
        if (adapter_name == "butterflygan" && block_channels != butterflygan_layer_channels())
            throw Error(ErrorKind::Parse, "layer table does not match the ButterflyGAN layout");
        if (block_channels.empty()) throw Error(ErrorKind::Parse, "archive lists no layers");

        const std::size_t width = dtype == "f32" ? 4 : 8;
        std::size_t offset = 0;
        const auto& tensors = h.at("tensors");
        std::size_t tensor_idx = 0;
        const auto next = [&](const std::string& name, std::size_t expected) {
            if (tensor_idx >= tensors.size()) throw Error(ErrorKind::Parse, "archive is missing tensor " + name);
            const auto& t = tensors[tensor_idx++];
            if (t.at("name").get<std::string>() != name)
                throw Error(ErrorKind::Parse, "expected tensor " + name + ", found " + t.at("name").get<std::string>());
            std::size_t count = 1;
            for (std::size_t d : t.at("shape").get<std::vector<std::size_t>>()) count *= d;
            if (count != expected) throw Error(ErrorKind::Parse, "tensor " + name + " has the wrong size");
            auto v = width == 4 ? archive::read_f32(c.payload, offset, count) : archive::read_f64(c.payload, offset, count);
            offset += count * width;
            return v;
        };

        const std::size_t base = base_channels * Generator::kBaseSize * Generator::kBaseSize;
        auto dense_w = next("dense.weight", base * latent_dim);
        auto dense_b = next("dense.bias", base);
        std::vector<GeneratorConv> blocks;
        std::size_t in = base_channels;
        for (std::size_t k = 0; k < block_channels.size(); ++k) {
            const std::size_t out = block_channels[k];
            const std::string prefix = "block" + std::to_string(k + 1);
            GeneratorConv b{in, out, next(prefix + ".weight", out * in * 9), next(prefix + ".bias", out)};
            blocks.push_back(std::move(b));
            in = out;
        }
        GeneratorConv rgb{in, 3, next("to_rgb.weight", 3 * in * 9), next("to_rgb.bias", 3)};
        if (offset != c.payload.size()) throw Error(ErrorKind::Parse, "archive has trailing payload bytes");
        return Generator(std::string(adapter_name), latent_dim, base_channels, std::move(dense_w), std::move(dense_b),
                         std::move(blocks), std::move(rgb));
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::Parse, "malformed generator archive header: " + std::string(e.what()));
    }
}

void save_generator_archive(const Generator& g, const std::filesystem::path& path, std::string_view adapter_name,
                            bool single_precision) {
    nlohmann::json h;
    h["adapter"] = adapter_name;
    h["latent_dim"] = g.latent_dim();
    h["base_channels"] = g.base_channels();
    std::vector<std::size_t> channels;
    for (const auto& b : g.blocks()) channels.push_back(b.out_channels);
    h["blocks"] = channels;
    h["dtype"] = single_precision ? "f32" : "f64";
    nlohmann::json tensors = nlohmann::json::array();
    std::vector<unsigned char> payload;
    const auto put = [&](const std::string& name, std::vector<std::size_t> shape, const std::vector<double>& v) {
        tensors.push_back({{"name", name}, {"shape", shape}});
        for (double x : v) {
            if (single_precision)
                archive::append_f32(payload, static_cast<float>(x));
            else
                archive::append_f64(payload, x);
        }
    };
    const std::size_t S = Generator::kBaseSize;
    put("dense.weight", {g.base_channels() * S * S, g.latent_dim()}, g.dense_weight());
    put("dense.bias", {g.base_channels() * S * S}, g.dense_bias());
    for (std::size_t k = 0; k < g.blocks().size(); ++k) {
        const auto& b = g.blocks()[k];
        const std::string prefix = "block" + std::to_string(k + 1);
        put(prefix + ".weight", {b.out_channels, b.in_channels, 3, 3}, b.weight);
        put(prefix + ".bias", {b.out_channels}, b.bias);
    }
    put("to_rgb.weight", {3, g.to_rgb().in_channels, 3, 3}, g.to_rgb().weight);
    put("to_rgb.bias", {3}, g.to_rgb().bias);
    h["tensors"] = std::move(tensors);
    archive::write(path, kGeneratorMagic, kGeneratorArchiveVersion, h, payload);
}

}  // namespace bend
