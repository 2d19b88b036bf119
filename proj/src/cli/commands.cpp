#include "bend/cli/commands.hpp"

#include "bend/error.hpp"
#include "bend/image_io.hpp"

#include "CLI11.hpp"

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <ostream>

namespace bend::cli {

namespace fs = std::filesystem;

namespace {

nlohmann::json run_context(const RunConfig& c) {
    GeneratorSource gen = c.generator;
    if (gen.kind == GeneratorSource::Kind::external) gen.path = fs::absolute(gen.path);
    return {{"prompt", c.prompt},
            {"generator", to_json(gen)},
            {"embedder", to_json(c.embedder)},
            {"bending_seed", c.bending_seed}};
}

RunConfig run_config_from_checkpoint(const LoadedCheckpoint& ck) {
    RunConfig c;
    try {
        const auto& ctx = ck.context;
        c.prompt = ctx.at("prompt").get<std::string>();
        c.generator = generator_source_from_json(ctx.at("generator"));
        c.embedder = embedder_source_from_json(ctx.at("embedder"));
        c.bending_seed = ctx.value("bending_seed", std::uint64_t{0});
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::Parse, "checkpoint carries no usable run context: " + std::string(e.what()));
    } catch (const UsageError& e) {
        throw Error(ErrorKind::Parse, std::string("checkpoint run context: ") + e.what());
    }
    c.bending = ck.bm.config();
    c.training = ck.config;
    return c;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    out << text;
    if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string variant_label(const RunConfig& c) {
    std::string label(to_string(c.bending.family));
    if (c.bending.include_r) label += "+r";
    label += "/";
    label += to_string(c.training.loss.kind);
    return label;
}

double row_dot(const Matrix& m, std::size_t i, std::span<const double> v) {
    double acc = 0.0;
    for (std::size_t d = 0; d < m.cols(); ++d) acc += m(i, d) * v[d];
    return acc;
}

}  // namespace

void prepare_output_dir(const fs::path& dir, bool force) {
    if (dir.empty()) throw UsageError("no output directory given (set output_dir or pass --out)");
    if (fs::exists(dir)) {
        if (!fs::is_directory(dir)) throw UsageError(dir.string() + " exists and is not a directory");
        if (!fs::is_empty(dir) && !force)
            throw UsageError(dir.string() + " already contains files; pass --force to overwrite");
    }
    fs::create_directories(dir);
}

TrainOutcome train_run(RunConfig cfg, const fs::path& run_dir, bool force, std::ostream& log) {
    prepare_output_dir(run_dir, force);
    const Generator g = build_generator(cfg.generator);
    resolve_against(cfg, g);
    const ToyEmbedder e = build_embedder(cfg.embedder);
    cfg.output_dir = run_dir;

    write_text(run_dir / "config.json", to_json(cfg).dump(2) + "\n");
    const BendingModule bm = make_bm(cfg.bending, cfg.bending_seed);
    TrainOutcome out{run_dir, run_dir / "bm.ckpt", {}};
    const std::int64_t records = (cfg.training.iterations + cfg.training.log_every - 1) / cfg.training.log_every;
    std::int64_t seen = 0;
    out.result = train_bm(g, bm, e, cfg.prompt, cfg.training, [&](const LossRecord& r) {
        if (seen % 10 == 0 || seen + 1 == records)
            log << "iter " << std::setw(6) << r.iteration << "  loss " << fmt(r.loss) << '\n';
        ++seen;
    });
    for (const auto& w : out.result.warnings) log << "warning: " << w << '\n';

    save_checkpoint(out.result.final_bm, cfg.training, out.checkpoint, run_context(cfg));
    write_loss_history_csv(out.result.loss_history, run_dir / "loss_history.csv");
    write_manifest(run_dir, "train", to_json(cfg), {cfg.training.seed},
                   {"config.json", "bm.ckpt", "loss_history.csv"});
    log << "trained " << variant_label(cfg) << " in " << std::fixed << std::setprecision(2)
        << out.result.wall_time_seconds << " s -> " << run_dir.string() << '\n';
    log.unsetf(std::ios::floatfield);
    return out;
}

LoadedRun load_run(const fs::path& checkpoint) {
    LoadedCheckpoint ck = load_checkpoint(checkpoint);
    const RunConfig c = run_config_from_checkpoint(ck);
    Generator g = build_generator(c.generator);
    return {std::move(ck.bm), ck.config, std::move(g), c.embedder, c.prompt};
}

LatentBatch seed_latents(const std::vector<std::uint64_t>& seeds, std::size_t latent_dim) {
    if (seeds.empty()) throw UsageError("at least one seed is required");
    LatentBatch z{Matrix(seeds.size(), latent_dim), seeds.front()};
    for (std::size_t i = 0; i < seeds.size(); ++i) {
        const LatentBatch one = sample_latents(seeds[i], 1, latent_dim);
        std::copy(one.values.data(), one.values.data() + latent_dim, z.values.row(i).begin());
    }
    return z;
}

ImageBatch render(const LoadedRun& run, const LatentBatch& z) {
    return forward_with_injection(run.generator, z, run.training.layer_index, &run.bm).images;
}

std::vector<fs::path> generate_images(const fs::path& checkpoint, const std::vector<std::uint64_t>& seeds,
                                      const fs::path& out_dir, bool force) {
    if (seeds.empty()) throw UsageError("--count must be at least 1");
    const LoadedRun run = load_run(checkpoint);
    prepare_output_dir(out_dir, force);
    const ImageBatch images = render(run, seed_latents(seeds, run.generator.latent_dim()));

    std::vector<fs::path> written;
    std::vector<std::string> names;
    for (std::size_t i = 0; i < seeds.size(); ++i) {
        const std::string name = "sample_" + std::to_string(seeds[i]) + ".png";
        write_png(to_rgb(images, i), out_dir / name);
        written.push_back(out_dir / name);
        names.push_back(name);
    }
    export_grid(images, square_columns(seeds.size()), out_dir / "grid.png");
    written.push_back(out_dir / "grid.png");
    names.push_back("grid.png");

    const nlohmann::json config{{"checkpoint", fs::absolute(checkpoint).string()},
                                {"checkpoint_sha256", sha256_file(checkpoint)},
                                {"count", seeds.size()},
                                {"first_seed", seeds.front()}};
    write_manifest(out_dir, "generate", config, seeds, names);
    return written;
}

void check_comparable(const RunConfig& a, const RunConfig& b) {
    nlohmann::json ja = to_json(a), jb = to_json(b);
    for (auto* j : {&ja, &jb}) {
        j->erase("output_dir");
        auto& bend = (*j)["bending"];
        if (a.bending.family != b.bending.family)
            for (const char* k : {"sort_axis", "steepness"}) bend.erase(k);
        bend.erase("family");
        bend.erase("include_r");
        auto& loss = (*j)["training"]["loss"];
        if (a.training.loss.kind != b.training.loss.kind) loss.erase("temperature");
        loss.erase("kind");
    }
    if (ja != jb) {
        const auto patch = nlohmann::json::diff(ja, jb);
        throw UsageError("configs may differ only in loss kind, bending family and include_r; they also differ at " +
                         patch.front().at("path").get<std::string>());
    }
}

CompareResult compare_runs(const fs::path& source_a, const fs::path& source_b, const std::vector<std::uint64_t>& seeds,
                           const fs::path& out_dir, bool force, std::ostream& log) {
    if (seeds.empty()) throw UsageError("at least one seed is required");
    struct Source {
        fs::path path;
        bool is_checkpoint;
        RunConfig config;
    };
    std::vector<Source> sources;
    for (const fs::path& p : {source_a, source_b}) {
        if (!fs::exists(p)) throw UsageError("no such config or checkpoint: " + p.string());
        if (is_checkpoint_file(p)) {
            sources.push_back({p, true, run_config_from_checkpoint(load_checkpoint(p))});
        } else {
            sources.push_back({p, false, load_run_config(p)});
            const Generator g = build_generator(sources.back().config.generator);
            resolve_against(sources.back().config, g);
        }
    }
    check_comparable(sources[0].config, sources[1].config);
    prepare_output_dir(out_dir, force);

    CompareResult result;
    result.seeds = seeds;
    const char* names[2] = {"a", "b"};
    CompareVariant* variants[2] = {&result.a, &result.b};
    for (int k = 0; k < 2; ++k) {
        CompareVariant& v = *variants[k];
        v.label = variant_label(sources[k].config);
        if (sources[k].is_checkpoint) {
            v.checkpoint = sources[k].path;
        } else {
            log << "training variant " << names[k] << " (" << v.label << ")\n";
            v.checkpoint = train_run(sources[k].config, out_dir / names[k], force, log).checkpoint;
        }
    }

    // One latent batch, shared by both variants.
    const LoadedRun run_a = load_run(result.a.checkpoint), run_b = load_run(result.b.checkpoint);
    const LatentBatch z = seed_latents(seeds, run_a.generator.latent_dim());
    const ToyEmbedder embedder = build_embedder(run_a.embedder);
    const Embedding prompt = embedder.embed_text(run_a.prompt);
    const LoadedRun* runs[2] = {&run_a, &run_b};
    for (int k = 0; k < 2; ++k) {
        CompareVariant& v = *variants[k];
        v.latents = z;
        v.images = render(*runs[k], v.latents);
        v.embeddings = embedder.embed_images(v.images);
        v.mean_pairwise_cosine = mean_pairwise_cosine(v.embeddings);
        double acc = 0.0;
        for (std::size_t i = 0; i < seeds.size(); ++i) acc += row_dot(v.embeddings, i, prompt.vector);
        v.mean_prompt_cosine = acc / static_cast<double>(seeds.size());
    }

    write_png(stack_rows({tile_grid(result.a.images, seeds.size()), tile_grid(result.b.images, seeds.size())}),
              out_dir / "compare.png");

    std::string sim = "seed,variant,prompt_cosine,mean_cosine_to_others\n";
    for (std::size_t i = 0; i < seeds.size(); ++i)
        for (int k = 0; k < 2; ++k) {
            const CompareVariant& v = *variants[k];
            double others = 0.0;
            for (std::size_t j = 0; j < seeds.size(); ++j)
                if (j != i) others += row_dot(v.embeddings, i, v.embeddings.row(j));
            const double mean_others = seeds.size() > 1 ? others / static_cast<double>(seeds.size() - 1) : 0.0;
            sim += std::to_string(seeds[i]) + "," + names[k] + "," + fmt(row_dot(v.embeddings, i, prompt.vector)) +
                   "," + fmt(mean_others) + "\n";
        }
    write_text(out_dir / "similarity.csv", sim);

    std::string summary = "variant,label,mean_pairwise_cosine,mean_prompt_cosine\n";
    for (int k = 0; k < 2; ++k)
        summary += std::string(names[k]) + "," + variants[k]->label + "," + fmt(variants[k]->mean_pairwise_cosine) +
                   "," + fmt(variants[k]->mean_prompt_cosine) + "\n";
    write_text(out_dir / "summary.csv", summary);

    const nlohmann::json config{{"a", {{"source", fs::absolute(source_a).string()}, {"label", result.a.label}}},
                                {"b", {{"source", fs::absolute(source_b).string()}, {"label", result.b.label}}}};
    write_manifest(out_dir, "compare", config, seeds, {"compare.png", "similarity.csv", "summary.csv"});
    log << "mean pairwise cosine: a (" << result.a.label << ") " << fmt(result.a.mean_pairwise_cosine) << ", b ("
        << result.b.label << ") " << fmt(result.b.mean_pairwise_cosine) << '\n';
    return result;
}

void print_layers(const Generator& g, std::ostream& out) {
    const auto shape = g.output_shape();
    out << "generator: " << g.name() << " (latent_dim " << g.latent_dim() << ", output " << shape[0] << "x"
        << shape[1] << "x" << shape[2] << ")\n";
    out << "index  channels  height  width\n";
    for (const auto& d : list_layers(g))
        out << std::setw(5) << d.index << std::setw(10) << d.channels << std::setw(8) << d.height << std::setw(7)
            << d.width << '\n';
}

int run_cli(int argc, char** argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Train and sample bending modules for frozen image generators", "bend"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kToolVersion);

    std::string config_path, out_path, checkpoint_path, config_a, config_b, seeds_text = "0..15", adapter = "butterflygan";
    std::uint64_t seed = 0, first_seed = 0;
    std::int64_t iterations = 0;
    std::size_t count = 16;
    bool force = false, toy = false;

    auto* train = app.add_subcommand("train", "Train a bending module from a run config");
    train->add_option("--config", config_path, "Run config (JSON)")->required();
    auto* seed_opt = train->add_option("--seed", seed, "Override training.seed");
    auto* iter_opt = train->add_option("--iterations", iterations, "Override training.iterations");
    auto* out_opt = train->add_option("--out", out_path, "Override output_dir");
    train->add_flag("--force", force, "Write into a non-empty output directory");

    auto* generate = app.add_subcommand("generate", "Render one image per seed from a checkpoint");
    generate->add_option("--checkpoint", checkpoint_path, "Checkpoint written by 'bend train'")->required();
    generate->add_option("--count", count, "Number of images")->capture_default_str();
    generate->add_option("--first-seed", first_seed, "Seed of the first image")->capture_default_str();
    generate->add_option("--out", out_path, "Output directory")->required();
    generate->add_flag("--force", force, "Write into a non-empty output directory");

    auto* compare = app.add_subcommand("compare", "Train two variants and render them from shared seeds");
    compare->add_option("--config-a", config_a, "Variant A: run config or checkpoint")->required();
    compare->add_option("--config-b", config_b, "Variant B: run config or checkpoint")->required();
    compare->add_option("--seeds", seeds_text, "Seeds as a..b or a comma list")->capture_default_str();
    compare->add_option("--out", out_path, "Output directory")->required();
    compare->add_flag("--force", force, "Write into a non-empty output directory");

    auto* inspect = app.add_subcommand("inspect-layers", "List the tappable layers of a generator");
    auto* toy_flag = inspect->add_flag("--toy", toy, "The default toy generator");
    auto* ck_opt = inspect->add_option("--checkpoint", checkpoint_path, "BM checkpoint or generator archive");
    auto* cfg_opt = inspect->add_option("--config", config_path, "Run config");
    inspect->add_option("--adapter", adapter, "Adapter for a generator archive")->capture_default_str();
    toy_flag->excludes(ck_opt)->excludes(cfg_opt);
    ck_opt->excludes(cfg_opt);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (*train) {
            RunConfig cfg = load_run_config(config_path);
            if (*seed_opt) cfg.training.seed = seed;
            if (*iter_opt) {
                cfg.training.iterations = iterations;
                try {
                    cfg.training.validate();
                } catch (const Error& e) {
                    throw UsageError(e.what());
                }
            }
            if (*out_opt) cfg.output_dir = out_path;
            const fs::path dir = cfg.output_dir;
            train_run(std::move(cfg), dir, force, out);
        } else if (*generate) {
            if (count < 1) throw UsageError("--count must be at least 1");
            std::vector<std::uint64_t> seeds(count);
            for (std::size_t i = 0; i < count; ++i) seeds[i] = first_seed + i;
            const auto files = generate_images(checkpoint_path, seeds, out_path, force);
            out << "wrote " << files.size() - 1 << " images and grid.png to " << out_path << '\n';
        } else if (*compare) {
            compare_runs(config_a, config_b, parse_seed_list(seeds_text), out_path, force, out);
        } else if (*inspect) {
            if (toy) {
                print_layers(build_generator(GeneratorSource{}), out);
            } else if (*cfg_opt) {
                print_layers(build_generator(load_run_config(config_path).generator), out);
            } else if (*ck_opt) {
                if (is_checkpoint_file(checkpoint_path))
                    print_layers(load_run(checkpoint_path).generator, out);
                else
                    print_layers(load_external_generator(checkpoint_path, adapter), out);
            } else {
                throw UsageError("inspect-layers needs --toy, --config or --checkpoint");
            }
        }
    } catch (const UsageError& e) {
        err << "bend: " << e.what() << '\n';
        return kExitUsage;
    } catch (const TrainingDiverged& e) {
        err << "bend: training diverged at iteration " << e.iteration() << " (loss " << e.loss() << ")\n";
        return kExitRuntime;
    } catch (const std::exception& e) {
        err << "bend: " << e.what() << '\n';
        return kExitRuntime;
    }
    return kExitOk;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    std::vector<std::string> storage{"bend"};
    storage.insert(storage.end(), args.begin(), args.end());
    std::vector<char*> argv;
    for (auto& s : storage) argv.push_back(s.data());
    return run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace bend::cli
