#include "bend/training.hpp"

#include "bend/archive.hpp"
#include "bend/error.hpp"
#include "bend/rng.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

namespace bend {

namespace {

constexpr archive::Magic kCheckpointMagic{'B', 'E', 'N', 'D', 'C', 'K', 'P', 'T'};
constexpr std::uint64_t kTrainingStreamBase = 0x7A1E'0000'0000ull;

void reject_unknown_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed, const char* where) {
    if (!j.is_object()) throw Error(ErrorKind::InvalidConfig, std::string(where) + " must be a JSON object");
    const std::set<std::string> keys(allowed.begin(), allowed.end());
    for (const auto& [k, _] : j.items())
        if (!keys.contains(k)) throw Error(ErrorKind::InvalidConfig, "unknown field '" + k + "' in " + where);
}

template <class T>
void read_field(const nlohmann::json& j, const char* key, T& out, const char* where) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw Error(ErrorKind::InvalidConfig, std::string(where) + "." + key + " has the wrong type");
    }
}

LatentBatch normal_batch(std::uint64_t seed, std::uint64_t stream, std::size_t batch, std::size_t latent_dim) {
    if (batch < 1 || latent_dim < 1) throw Error(ErrorKind::InvalidConfig, "latent batch and dim must be positive");
    LatentBatch z{Matrix(batch, latent_dim), seed};
    rng::CounterStream(seed, stream).fill_normal(z.values.values());
    return z;
}

}  // namespace

LatentBatch sample_latents(std::uint64_t seed, std::size_t batch, std::size_t latent_dim) {
    return normal_batch(seed, 0, batch, latent_dim);
}

LatentBatch training_latents(std::uint64_t seed, std::uint64_t iteration, std::size_t batch, std::size_t latent_dim) {
    return normal_batch(seed, kTrainingStreamBase + iteration, batch, latent_dim);
}

// Adam -------------------------------------------------------------------------

Adam::Adam(double learning_rate, AdamConfig cfg) : lr_(learning_rate), cfg_(cfg) {
    if (!(learning_rate > 0.0)) throw Error(ErrorKind::InvalidConfig, "learning rate must be positive");
    if (!(cfg.beta1 >= 0.0 && cfg.beta1 < 1.0 && cfg.beta2 >= 0.0 && cfg.beta2 < 1.0 && cfg.epsilon > 0.0))
        throw Error(ErrorKind::InvalidConfig, "moment coefficients must lie in [0, 1) and epsilon be positive");
}

void Adam::update(std::size_t slot, std::span<double> values, std::span<const double> grad) {
    if (grad.size() != values.size()) throw Error(ErrorKind::Shape, "gradient and parameter sizes differ");
    if (m_.size() <= slot) {
        m_.resize(slot + 1);
        v_.resize(slot + 1);
    }
    if (m_[slot].empty()) {
        m_[slot].assign(values.size(), 0.0);
        v_[slot].assign(values.size(), 0.0);
    }
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    auto& m = m_[slot];
    auto& v = v_[slot];
    for (std::size_t k = 0; k < values.size(); ++k) {
        m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * grad[k];
        v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * grad[k] * grad[k];
        values[k] -= lr_ * (m[k] / c1) / (std::sqrt(v[k] / c2) + cfg_.epsilon);
    }
}

void Adam::step(std::vector<Parameter>& params, const std::vector<std::vector<double>>& grads) {
    if (grads.size() != params.size()) throw Error(ErrorKind::Shape, "one gradient per parameter expected");
    ++t_;
    for (std::size_t i = 0; i < params.size(); ++i) update(i, params[i].values, grads[i]);
}

void Adam::step(std::span<double> values, std::span<const double> grad) {
    ++t_;
    update(0, values, grad);
}

// Training ---------------------------------------------------------------------

void TrainConfig::validate() const {
    if (iterations < 0) throw Error(ErrorKind::InvalidConfig, "iterations must be >= 0");
    if (batch_size < 1) throw Error(ErrorKind::InvalidConfig, "batch_size must be >= 1");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
        throw Error(ErrorKind::InvalidConfig, "learning_rate must be positive");
    if (log_every < 1) throw Error(ErrorKind::InvalidConfig, "log_every must be >= 1");
    if (layer_index < 1) throw Error(ErrorKind::InvalidLayer, "layer_index must be >= 1");
    loss.validate();
    Adam(learning_rate, adam);
}

TrainResult train_bm(const Generator& g, const BendingModule& bm, const Embedder& e, std::string_view prompt,
                     const TrainConfig& cfg, const ProgressFn& progress) {
    cfg.validate();
    const LayerDescriptor desc = g.layer(cfg.layer_index);
    if (bm.config().channels != desc.channels)
        throw Error(ErrorKind::Shape, "bending module has " + std::to_string(bm.config().channels) +
                                          " channels, layer " + std::to_string(cfg.layer_index) + " has " +
                                          std::to_string(desc.channels));
    if (prompt.empty()) throw Error(ErrorKind::InvalidConfig, "prompt must not be empty");

    const auto start = std::chrono::steady_clock::now();
    TrainResult result{bm, {}, 0.0, cfg, {}};
    if (cfg.loss.kind == LossKind::infonce && cfg.batch_size < 2)
        result.warnings.push_back("InfoNCE with batch_size 1 has no negatives; the loss is identically zero");

    const Embedding target = e.embed_text(prompt);
    Adam optimizer(cfg.learning_rate, cfg.adam);
    BendingModule& current = result.final_bm;

    double window_sum = 0.0;
    std::int64_t window_start = 0;
    for (std::int64_t it = 0; it < cfg.iterations; ++it) {
        const LatentBatch z = training_latents(cfg.seed, static_cast<std::uint64_t>(it), cfg.batch_size, g.latent_dim());
        const InjectionPass pass = forward_with_injection(g, z, cfg.layer_index, &current);
        // Blown-up module parameters show up as non-finite pixels before any loss exists.
        for (double v : pass.images.values())
            if (!std::isfinite(v)) throw TrainingDiverged(it, v);
        const Matrix embeddings = e.embed_images(pass.images);
        Matrix d_embeddings;
        const double loss = evaluate_loss(cfg.loss, embeddings, target.vector, &d_embeddings);
        if (!std::isfinite(loss)) throw TrainingDiverged(it, loss);

        const ImageBatch d_images = e.embed_images_backward(pass.images, d_embeddings);
        const ActivationMap d_tap = backprop_to_tap(g, pass, d_images);
        const BmGradients grads = apply_bm_backward(current, *pass.bm_trace, d_tap);
        optimizer.step(current.parameters(), grads.params);

        window_sum += loss;
        if ((it + 1) % cfg.log_every == 0 || it + 1 == cfg.iterations) {
            const LossRecord rec{window_start, window_sum / static_cast<double>(it + 1 - window_start)};
            result.loss_history.push_back(rec);
            if (progress) progress(rec);
            window_sum = 0.0;
            window_start = it + 1;
        }
    }
    result.wall_time_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return result;
}

void write_loss_history_csv(const std::vector<LossRecord>& history, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
    out << "iteration,loss\n";
    char buf[64];
    for (const LossRecord& r : history) {
        std::snprintf(buf, sizeof buf, "%.17g", r.loss);
        out << r.iteration << ',' << buf << '\n';
    }
    if (!out) throw Error(ErrorKind::Io, "write failed for " + path.string());
}

// JSON -------------------------------------------------------------------------

nlohmann::json to_json(const BendingConfig& c) {
    nlohmann::json j{{"family", to_string(c.family)},
                     {"channels", c.channels},
                     {"activation", to_string(c.activation)},
                     {"sin_frequency", c.sin_frequency}};
    if (c.family == BmFamily::coord_conv) j["include_r"] = c.include_r;
    if (c.family == BmFamily::sort_conv) {
        if (c.sort_axis) j["sort_axis"] = to_string(*c.sort_axis);
        j["steepness"] = c.steepness;
    }
    return j;
}

nlohmann::json to_json(const LossConfig& c) {
    nlohmann::json j{{"kind", to_string(c.kind)}};
    if (c.kind == LossKind::infonce) j["temperature"] = c.temperature;
    return j;
}

nlohmann::json to_json(const TrainConfig& c) {
    return {{"iterations", c.iterations},
            {"batch_size", c.batch_size},
            {"learning_rate", c.learning_rate},
            {"adam", {{"beta1", c.adam.beta1}, {"beta2", c.adam.beta2}, {"epsilon", c.adam.epsilon}}},
            {"loss", to_json(c.loss)},
            {"layer_index", c.layer_index},
            {"seed", c.seed},
            {"log_every", c.log_every}};
}

BendingConfig bending_config_from_json(const nlohmann::json& j) {
    reject_unknown_keys(j, {"family", "channels", "activation", "include_r", "sort_axis", "steepness", "sin_frequency", "seed"},
                        "bending");
    BendingConfig c;
    std::string family = "conv", activation = "relu", axis;
    read_field(j, "family", family, "bending");
    read_field(j, "activation", activation, "bending");
    read_field(j, "channels", c.channels, "bending");
    read_field(j, "include_r", c.include_r, "bending");
    read_field(j, "steepness", c.steepness, "bending");
    read_field(j, "sin_frequency", c.sin_frequency, "bending");
    read_field(j, "sort_axis", axis, "bending");
    c.family = parse_family(family);
    c.activation = parse_activation(activation);
    if (!axis.empty()) c.sort_axis = parse_sort_axis(axis);
    return c;
}

LossConfig loss_config_from_json(const nlohmann::json& j) {
    reject_unknown_keys(j, {"kind", "temperature"}, "loss");
    LossConfig c;
    std::string kind = "great_circle";
    read_field(j, "kind", kind, "loss");
    read_field(j, "temperature", c.temperature, "loss");
    c.kind = parse_loss_kind(kind);
    return c;
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
    reject_unknown_keys(j, {"iterations", "batch_size", "learning_rate", "adam", "loss", "layer_index", "seed", "log_every"},
                        "training");
    TrainConfig c;
    read_field(j, "iterations", c.iterations, "training");
    read_field(j, "batch_size", c.batch_size, "training");
    read_field(j, "learning_rate", c.learning_rate, "training");
    read_field(j, "layer_index", c.layer_index, "training");
    read_field(j, "seed", c.seed, "training");
    read_field(j, "log_every", c.log_every, "training");
    if (j.contains("adam")) {
        const auto& a = j.at("adam");
        reject_unknown_keys(a, {"beta1", "beta2", "epsilon"}, "training.adam");
        read_field(a, "beta1", c.adam.beta1, "training.adam");
        read_field(a, "beta2", c.adam.beta2, "training.adam");
        read_field(a, "epsilon", c.adam.epsilon, "training.adam");
    }
    if (j.contains("loss")) c.loss = loss_config_from_json(j.at("loss"));
    return c;
}

// Checkpoints ------------------------------------------------------------------

void save_checkpoint(const BendingModule& bm, const TrainConfig& cfg, const std::filesystem::path& path,
                     const nlohmann::json& context) {
    nlohmann::json params = nlohmann::json::array();
    std::vector<unsigned char> payload;
    for (const Parameter& p : bm.parameters()) {
        params.push_back({{"name", p.name}, {"shape", p.shape}});
        for (double v : p.values) archive::append_f64(payload, v);
    }
    const nlohmann::json header{{"format", "bend-checkpoint"},
                                {"bending", to_json(bm.config())},
                                {"training", to_json(cfg)},
                                {"context", context},
                                {"parameters", params}};
    archive::write(path, kCheckpointMagic, kCheckpointVersion, header, payload);
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
    const archive::Contents c = archive::read(path, kCheckpointMagic);
    if (c.version != kCheckpointVersion)
        throw Error(ErrorKind::Version, "checkpoint version " + std::to_string(c.version) + " is not supported (expected " +
                                            std::to_string(kCheckpointVersion) + ")");
    try {
        const nlohmann::json& h = c.header;
        if (h.at("format").get<std::string>() != "bend-checkpoint")
            throw Error(ErrorKind::Parse, "not a bending-module checkpoint");
        BendingConfig bc = bending_config_from_json(h.at("bending"));
        TrainConfig tc = train_config_from_json(h.at("training"));
        bc.validate();

        const BendingModule shape_ref = make_bm(bc, 0);
        const auto& listed = h.at("parameters");
        if (listed.size() != shape_ref.parameters().size())
            throw Error(ErrorKind::Parse, "checkpoint lists " + std::to_string(listed.size()) + " parameters, expected " +
                                              std::to_string(shape_ref.parameters().size()));
        std::vector<Parameter> params;
        std::size_t offset = 0;
        for (std::size_t i = 0; i < listed.size(); ++i) {
            Parameter p{listed[i].at("name").get<std::string>(), listed[i].at("shape").get<std::vector<std::size_t>>(), {}};
            const Parameter& ref = shape_ref.parameters()[i];
            if (p.name != ref.name || p.shape != ref.shape)
                throw Error(ErrorKind::Parse, "parameter " + p.name + " does not match the bending config");
            p.values = archive::read_f64(c.payload, offset, ref.values.size());
            offset += ref.values.size() * 8;
            params.push_back(std::move(p));
        }
        if (offset != c.payload.size()) throw Error(ErrorKind::Parse, "checkpoint has trailing bytes");
        return {BendingModule(bc, std::move(params)), tc, h.value("context", nlohmann::json::object())};
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::Parse, "malformed checkpoint header: " + std::string(e.what()));
    } catch (const Error& e) {
        if (e.kind() == ErrorKind::InvalidConfig) throw Error(ErrorKind::Parse, e.what());
        throw;
    }
}

bool is_checkpoint_file(const std::filesystem::path& path) { return archive::has_magic(path, kCheckpointMagic); }

}  // namespace bend
