#include "doctest.h"

#include "bend/archive.hpp"
#include "bend/error.hpp"
#include "bend/training.hpp"
#include "oracles.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

using namespace bend;
namespace fs = std::filesystem;

namespace {

constexpr const char* kPrompt = "a watercolor butterfly";

struct Stack {
    Generator g = build_toy_generator(7, {16, 8}, 32);
    ToyEmbedder e = toy_embedder(0, 32);
};

BendingConfig conv_config(std::size_t channels) {
    BendingConfig c;
    c.channels = channels;
    return c;
}

TrainConfig short_config(std::int64_t iterations) {
    TrainConfig c;
    c.iterations = iterations;
    c.batch_size = 4;
    c.log_every = 5;
    return c;
}

fs::path scratch_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("bend_test_training_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

ErrorKind kind_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.kind();
    }
    FAIL("expected an error");
    return ErrorKind::InvalidConfig;
}

// Embeds every image as NaN; used to force divergence.
class PoisonEmbedder final : public Embedder {
public:
    std::size_t dim() const override { return 4; }
    Matrix embed_images(const ImageBatch& images) const override {
        return Matrix(images.batch(), 4, std::numeric_limits<double>::quiet_NaN());
    }
    ImageBatch embed_images_backward(const ImageBatch& images, const Matrix&) const override {
        return ImageBatch(images.batch(), images.channels(), images.height(), images.width());
    }
    Embedding embed_text(std::string_view) const override { return {{1.0, 0.0, 0.0, 0.0}, EmbeddingKind::text}; }
    std::vector<double> parameter_snapshot() const override { return {}; }
};

}  // namespace

TEST_CASE("latent sampling") {
    const auto a = sample_latents(3, 4, 16), b = sample_latents(3, 4, 16), c = sample_latents(4, 4, 16);
    CHECK(a.values == b.values);
    CHECK_FALSE(a.values == c.values);
    const auto big = sample_latents(3, 9, 16);
    for (std::size_t r = 0; r < 4; ++r)
        for (std::size_t d = 0; d < 16; ++d) CHECK(big.values(r, d) == a.values(r, d));
    CHECK_FALSE(training_latents(3, 0, 4, 16).values == a.values);
    CHECK_FALSE(training_latents(3, 0, 4, 16).values == training_latents(3, 1, 4, 16).values);
}

TEST_CASE("config defaults") {
    const TrainConfig c;
    CHECK(c.iterations == 1000);
    CHECK(c.batch_size == 16);
    CHECK(c.learning_rate == 1e-3);
    CHECK(c.adam.beta1 == 0.9);
    CHECK(c.adam.beta2 == 0.999);
    CHECK(c.adam.epsilon == 1e-8);
    CHECK(c.loss.temperature == 0.001);
}

TEST_CASE("Adam converges on the quadratic probe") {
    const auto target = oracle::uniform(1, 10, -0.5, 0.5);
    std::vector<double> w(10, 0.0), grad(10);
    Adam opt(1e-3);
    int steps = 0;
    double err = 1.0;
    while (steps < 2000) {
        for (std::size_t k = 0; k < w.size(); ++k) grad[k] = 2.0 * (w[k] - target[k]);
        opt.step(w, grad);
        ++steps;
        err = 0.0;
        for (std::size_t k = 0; k < w.size(); ++k) err = std::max(err, std::abs(w[k] - target[k]));
        if (err < 1e-4) break;
    }
    CAPTURE(steps);
    CHECK(err < 1e-4);
}

TEST_CASE("Adam first step moves each coordinate by the learning rate") {
    std::vector<double> w{1.0, -2.0, 3.0};
    const std::vector<double> g{0.5, -7.0, 1e-3};
    Adam opt(0.01);
    opt.step(w, g);
    CHECK(w[0] == doctest::Approx(1.0 - 0.01));
    CHECK(w[1] == doctest::Approx(-2.0 + 0.01));
    CHECK(w[2] == doctest::Approx(3.0 - 0.01).epsilon(1e-6));
}

TEST_CASE("zero iterations leave the module untouched") {
    const Stack s;
    const auto bm = make_bm(conv_config(16), 2);
    const auto r = train_bm(s.g, bm, s.e, kPrompt, short_config(0));
    CHECK(r.final_bm == bm);
    CHECK(r.loss_history.empty());
}

TEST_CASE("history length is ceil(iterations / log_every)") {
    const Stack s;
    const auto bm = make_bm(conv_config(16), 2);
    for (std::int64_t n : {1, 4, 5, 6, 11}) {
        auto cfg = short_config(n);
        cfg.batch_size = 2;
        std::vector<LossRecord> seen;
        const auto r = train_bm(s.g, bm, s.e, kPrompt, cfg, [&](const LossRecord& rec) { seen.push_back(rec); });
        CHECK(r.loss_history.size() == static_cast<std::size_t>((n + 4) / 5));
        CHECK(seen == r.loss_history);
        for (std::size_t k = 0; k < r.loss_history.size(); ++k) CHECK(r.loss_history[k].iteration == 5 * std::int64_t(k));
    }
}

TEST_CASE("training is deterministic and touches only the module") {
    const Stack s;
    const auto g0 = s.g.parameter_snapshot();
    const auto e0 = s.e.parameter_snapshot();
    const auto bm = make_bm(conv_config(16), 2);
    for (auto kind : {LossKind::great_circle, LossKind::infonce}) {
        auto cfg = short_config(10);
        cfg.loss.kind = kind;
        const auto a = train_bm(s.g, bm, s.e, kPrompt, cfg);
        const auto b = train_bm(s.g, bm, s.e, kPrompt, cfg);
        CHECK(a.final_bm == b.final_bm);
        CHECK(a.loss_history == b.loss_history);
        CHECK_FALSE(a.final_bm == bm);
    }
    CHECK(s.g.parameter_snapshot() == g0);
    CHECK(s.e.parameter_snapshot() == e0);
}

TEST_CASE("training error paths") {
    const Stack s;
    auto cfg = short_config(3);
    CHECK(kind_of([&] { train_bm(s.g, make_bm(conv_config(8), 0), s.e, kPrompt, cfg); }) == ErrorKind::Shape);
    cfg.layer_index = 3;
    CHECK(kind_of([&] { train_bm(s.g, make_bm(conv_config(16), 0), s.e, kPrompt, cfg); }) == ErrorKind::InvalidLayer);
    cfg.layer_index = 1;
    CHECK(kind_of([&] { train_bm(s.g, make_bm(conv_config(16), 0), s.e, "", cfg); }) == ErrorKind::InvalidConfig);

    try {
        train_bm(s.g, make_bm(conv_config(16), 0), PoisonEmbedder{}, kPrompt, cfg);
        FAIL("expected divergence");
    } catch (const TrainingDiverged& d) {
        CHECK(d.kind() == ErrorKind::TrainingDiverged);
        CHECK(d.iteration() == 0);
        CHECK(std::isnan(d.loss()));
    }

    auto single = short_config(1);
    single.batch_size = 1;
    single.loss.kind = LossKind::infonce;
    const auto r = train_bm(s.g, make_bm(conv_config(16), 0), s.e, kPrompt, single);
    CHECK(r.warnings.size() == 1);
    CHECK(r.loss_history.front().loss == 0.0);
}

TEST_CASE("regression fixture: conv, great-circle, 200 iterations, seed 0") {
    const Stack s;
    TrainConfig cfg;
    cfg.iterations = 200;
    const auto r = train_bm(s.g, make_bm(conv_config(16), 0), s.e, kPrompt, cfg);
    REQUIRE(r.loss_history.size() == 20);
    const double first = r.loss_history.front().loss, last = r.loss_history.back().loss;
    CHECK(last < first);
    CHECK(first == doctest::Approx(2.3717427058301128).epsilon(1e-9));
    CHECK(last == doctest::Approx(0.14798563039972318).epsilon(1e-9));
}

TEST_CASE("loss history CSV") {
    const fs::path dir = scratch_dir("csv");
    write_loss_history_csv({{0, 1.5}, {10, 0.25}}, dir / "h.csv");
    std::ifstream in(dir / "h.csv");
    std::stringstream ss;
    ss << in.rdbuf();
    CHECK(ss.str() == "iteration,loss\n0,1.5\n10,0.25\n");
    fs::remove_all(dir);
}

TEST_CASE("checkpoint round trip for every family") {
    const fs::path dir = scratch_dir("ckpt");
    const Tensor4 a = oracle::random_tensor(9, 2, 8, 8, 8);
    for (auto f : {BmFamily::conv, BmFamily::coord_conv, BmFamily::sort_conv}) {
        auto cfg = conv_config(8);
        cfg.family = f;
        if (f == BmFamily::coord_conv) cfg.include_r = true;
        if (f == BmFamily::sort_conv) cfg.sort_axis = SortAxis::height;
        cfg.activation = BmActivation::sin;
        cfg.sin_frequency = 2.5;
        const auto bm = make_bm(cfg, 5);
        TrainConfig tc = short_config(17);
        tc.loss.kind = LossKind::infonce;
        tc.seed = 99;
        const fs::path p = dir / (std::string(to_string(f)) + ".ckpt");
        save_checkpoint(bm, tc, p, {{"prompt", kPrompt}});
        CHECK(is_checkpoint_file(p));
        const auto back = load_checkpoint(p);
        CHECK(back.bm == bm);
        CHECK(back.config == tc);
        CHECK(back.context.at("prompt") == kPrompt);
        CHECK(apply_bm(back.bm, a) == apply_bm(bm, a));
        CHECK_FALSE(fs::exists(p.string() + ".tmp"));
    }
    fs::remove_all(dir);
}

TEST_CASE("checkpoint load errors") {
    const fs::path dir = scratch_dir("ckpt_err");
    CHECK(kind_of([&] { load_checkpoint(dir / "nope.ckpt"); }) == ErrorKind::Io);

    const auto bm = make_bm(conv_config(4), 0);
    save_checkpoint(bm, TrainConfig{}, dir / "good.ckpt");

    // Version field sits right after the 8-byte magic.
    fs::copy_file(dir / "good.ckpt", dir / "v2.ckpt");
    {
        std::fstream f(dir / "v2.ckpt", std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(8);
        const char v2[4] = {2, 0, 0, 0};
        f.write(v2, 4);
    }
    CHECK(kind_of([&] { load_checkpoint(dir / "v2.ckpt"); }) == ErrorKind::Version);

    fs::copy_file(dir / "good.ckpt", dir / "cut.ckpt");
    fs::resize_file(dir / "cut.ckpt", fs::file_size(dir / "good.ckpt") - 8);
    CHECK(kind_of([&] { load_checkpoint(dir / "cut.ckpt"); }) == ErrorKind::Parse);

    fs::copy_file(dir / "good.ckpt", dir / "head.ckpt");
    fs::resize_file(dir / "head.ckpt", 16);
    CHECK(kind_of([&] { load_checkpoint(dir / "head.ckpt"); }) == ErrorKind::Parse);

    {
        std::ofstream junk(dir / "junk.ckpt", std::ios::binary);
        junk << "BENDGEN";
    }
    CHECK(kind_of([&] { load_checkpoint(dir / "junk.ckpt"); }) == ErrorKind::Parse);
    CHECK_FALSE(is_checkpoint_file(dir / "junk.ckpt"));
    fs::remove_all(dir);
}

TEST_CASE("checkpointed module must match the injection layer") {
    const Stack s;
    const fs::path dir = scratch_dir("mismatch");
    save_checkpoint(make_bm(conv_config(8), 0), TrainConfig{}, dir / "c8.ckpt");
    const auto back = load_checkpoint(dir / "c8.ckpt");
    CHECK(kind_of([&] { forward_with_injection(s.g, sample_latents(0, 1, 32), 1, &back.bm); }) == ErrorKind::Shape);
    fs::remove_all(dir);
}

TEST_CASE("config JSON round trip and unknown keys") {
    TrainConfig c;
    c.iterations = 7;
    c.loss.kind = LossKind::infonce;
    c.loss.temperature = 0.5;
    c.layer_index = 2;
    CHECK(train_config_from_json(to_json(c)) == c);

    BendingConfig b;
    b.family = BmFamily::sort_conv;
    b.channels = 4;
    b.sort_axis = SortAxis::width;
    CHECK(bending_config_from_json(to_json(b)) == b);

    CHECK(kind_of([] { train_config_from_json({{"iterationz", 3}}); }) == ErrorKind::InvalidConfig);
    CHECK(kind_of([] { train_config_from_json({{"iterations", "many"}}); }) == ErrorKind::InvalidConfig);
    CHECK(kind_of([] { bending_config_from_json({{"family", "dense"}}); }) == ErrorKind::InvalidConfig);
}
