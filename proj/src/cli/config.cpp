#include "bend/cli/config.hpp"

#include "bend/error.hpp"

#include <charconv>
#include <fstream>
#include <set>

namespace bend::cli {

namespace {

void only_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed, const std::string& where) {
    if (!j.is_object()) throw UsageError(where + " must be a JSON object");
    const std::set<std::string> keys(allowed.begin(), allowed.end());
    for (const auto& [k, _] : j.items())
        if (!keys.contains(k)) throw UsageError("unknown field '" + k + "' in " + where);
}

template <class T>
T field_or(const nlohmann::json& j, const char* key, T fallback, const std::string& where) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw UsageError(where + "." + key + " has the wrong type");
    }
}

std::uint64_t parse_u64(std::string_view s) {
    std::uint64_t v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || s.empty())
        throw UsageError("'" + std::string(s) + "' is not a non-negative integer");
    return v;
}

}  // namespace

GeneratorSource generator_source_from_json(const nlohmann::json& j) {
    only_keys(j, {"source", "seed", "layers", "latent_dim", "path", "adapter"}, "generator");
    GeneratorSource g;
    const auto source = field_or<std::string>(j, "source", "toy", "generator");
    if (source == "toy") {
        g.kind = GeneratorSource::Kind::toy;
        g.seed = field_or(j, "seed", g.seed, "generator");
        g.layers = field_or(j, "layers", g.layers, "generator");
        g.latent_dim = field_or(j, "latent_dim", g.latent_dim, "generator");
        if (g.layers.empty()) throw UsageError("generator.layers must list at least one layer");
        if (g.latent_dim < 1) throw UsageError("generator.latent_dim must be positive");
    } else if (source == "external") {
        g.kind = GeneratorSource::Kind::external;
        g.path = field_or<std::string>(j, "path", "", "generator");
        g.adapter = field_or(j, "adapter", g.adapter, "generator");
        if (g.path.empty()) throw UsageError("generator.path is required for an external generator");
    } else {
        throw UsageError("generator.source must be 'toy' or 'external', got '" + source + "'");
    }
    return g;
}

EmbedderSource embedder_source_from_json(const nlohmann::json& j) {
    only_keys(j, {"source", "seed", "dim"}, "embedder");
    const auto source = field_or<std::string>(j, "source", "toy", "embedder");
    if (source != "toy") throw UsageError("embedder.source must be 'toy' (no external embedders are bundled)");
    EmbedderSource e;
    e.seed = field_or(j, "seed", e.seed, "embedder");
    e.dim = field_or(j, "dim", e.dim, "embedder");
    if (e.dim < 2) throw UsageError("embedder.dim must be at least 2");
    return e;
}

RunConfig parse_run_config(const nlohmann::json& j) {
    only_keys(j, {"prompt", "output_dir", "generator", "embedder", "bending", "training"}, "config");
    RunConfig c;
    c.prompt = field_or<std::string>(j, "prompt", "", "config");
    if (c.prompt.empty()) throw UsageError("config.prompt is required");
    c.output_dir = field_or<std::string>(j, "output_dir", "", "config");
    if (j.contains("generator")) c.generator = generator_source_from_json(j.at("generator"));
    if (j.contains("embedder")) c.embedder = embedder_source_from_json(j.at("embedder"));
    try {
        if (j.contains("bending")) {
            c.bending = bending_config_from_json(j.at("bending"));
            c.bending_seed = field_or<std::uint64_t>(j.at("bending"), "seed", 0, "bending");
        }
        if (j.contains("training")) c.training = train_config_from_json(j.at("training"));
        c.training.validate();
        c.training.loss.validate();
        BendingConfig probe = c.bending;
        if (probe.channels == 0) probe.channels = 1;
        probe.validate();
    } catch (const Error& e) {
        throw UsageError(e.what());
    }
    return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open config file " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw UsageError("config file " + path.string() + " is not valid JSON: " + e.what());
    }
    return parse_run_config(j);
}

nlohmann::json to_json(const GeneratorSource& g) {
    if (g.kind == GeneratorSource::Kind::toy)
        return {{"source", "toy"}, {"seed", g.seed}, {"layers", g.layers}, {"latent_dim", g.latent_dim}};
    return {{"source", "external"}, {"path", g.path.string()}, {"adapter", g.adapter}};
}

nlohmann::json to_json(const EmbedderSource& e) { return {{"source", "toy"}, {"seed", e.seed}, {"dim", e.dim}}; }

nlohmann::json to_json(const RunConfig& c) {
    nlohmann::json bending = bend::to_json(c.bending);
    bending["seed"] = c.bending_seed;
    return {{"prompt", c.prompt},
            {"output_dir", c.output_dir.string()},
            {"generator", to_json(c.generator)},
            {"embedder", to_json(c.embedder)},
            {"bending", bending},
            {"training", bend::to_json(c.training)}};
}

Generator build_generator(const GeneratorSource& src) {
    if (src.kind == GeneratorSource::Kind::toy) return build_toy_generator(src.seed, src.layers, src.latent_dim);
    return load_external_generator(src.path, src.adapter);
}

ToyEmbedder build_embedder(const EmbedderSource& src) { return toy_embedder(src.seed, src.dim); }

void resolve_against(RunConfig& c, const Generator& g) {
    LayerDescriptor layer;
    try {
        layer = g.layer(c.training.layer_index);
    } catch (const Error& e) {
        throw UsageError(e.what());
    }
    if (c.bending.channels == 0) {
        c.bending.channels = layer.channels;
    } else if (c.bending.channels != layer.channels) {
        throw UsageError("bending.channels is " + std::to_string(c.bending.channels) + " but layer " +
                         std::to_string(layer.index) + " has " + std::to_string(layer.channels) + " channels");
    }
}

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
    std::vector<std::uint64_t> seeds;
    if (const auto dots = text.find(".."); dots != std::string::npos) {
        const auto lo = parse_u64(std::string_view(text).substr(0, dots));
        const auto hi = parse_u64(std::string_view(text).substr(dots + 2));
        if (hi < lo) throw UsageError("seed range '" + text + "' is empty");
        if (hi - lo >= 4096) throw UsageError("seed range '" + text + "' is too long");
        for (std::uint64_t s = lo; s <= hi; ++s) seeds.push_back(s);
    } else {
        std::size_t start = 0;
        while (start <= text.size()) {
            const auto comma = text.find(',', start);
            const auto end = comma == std::string::npos ? text.size() : comma;
            seeds.push_back(parse_u64(std::string_view(text).substr(start, end - start)));
            start = end + 1;
        }
    }
    return seeds;
}

}  // namespace bend::cli
