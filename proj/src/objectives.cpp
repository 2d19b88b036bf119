#include "bend/objectives.hpp"

#include "bend/error.hpp"
#include "bend/rng.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace bend {

namespace {

constexpr std::uint64_t kProjectionStream = 0xE3BE'0000ull;

double dot(std::span<const double> a, std::span<const double> b) {
    double acc = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) acc += a[k] * b[k];
    return acc;
}

void check_dims(const Matrix& images, std::span<const double> prompt) {
    if (images.cols() != prompt.size())
        throw Error(ErrorKind::Shape, "image embeddings have dim " + std::to_string(images.cols()) +
                                          ", prompt has dim " + std::to_string(prompt.size()));
    if (images.rows() < 1) throw Error(ErrorKind::Shape, "empty embedding batch");
}

std::uint32_t fnv1a(std::string_view bytes) {
    std::uint32_t h = 2166136261u;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 16777619u;
    }
    return h;
}

}  // namespace

Embedding normalize(std::span<const double> v, EmbeddingKind kind) {
    const double norm = std::sqrt(dot(v, v));
    if (!(norm > 0.0) || !std::isfinite(norm))
        throw Error(ErrorKind::DegenerateEmbedding, "cannot normalize a vector with norm " + std::to_string(norm));
    Embedding e{std::vector<double>(v.size()), kind};
    for (std::size_t k = 0; k < v.size(); ++k) e.vector[k] = v[k] / norm;
    return e;
}

std::vector<double> normalize_backward(std::span<const double> raw, std::span<const double> unit,
                                       std::span<const double> d_unit) {
    const double norm = std::sqrt(dot(raw, raw));
    const double proj = dot(unit, d_unit);
    std::vector<double> out(raw.size());
    for (std::size_t k = 0; k < raw.size(); ++k) out[k] = (d_unit[k] - unit[k] * proj) / norm;
    return out;
}

// Toy embedder -----------------------------------------------------------------

ToyEmbedder::ToyEmbedder(std::uint64_t seed, std::size_t dim) : dim_(dim), projection_(kFeatures, dim) {
    if (dim < 2) throw Error(ErrorKind::InvalidConfig, "embedding dim must be at least 2");
    rng::CounterStream(seed, kProjectionStream).fill_normal(projection_.values());
}

ToyEmbedder toy_embedder(std::uint64_t seed, std::size_t dim) { return ToyEmbedder(seed, dim); }

Matrix ToyEmbedder::pooled_features(const ImageBatch& images) const {
    const std::size_t H = images.height(), W = images.width();
    if (images.channels() != 3 || H < kPool || W < kPool || H % kPool != 0 || W % kPool != 0)
        throw Error(ErrorKind::Shape, "toy embedder needs [B, 3, 8k, 8m] images, got " + images.shape_string());
    const std::size_t fy = H / kPool, fx = W / kPool;
    const double inv = 1.0 / static_cast<double>(fy * fx);
    Matrix f(images.batch(), kFeatures);
    for (std::size_t b = 0; b < images.batch(); ++b)
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t py = 0; py < kPool; ++py)
                for (std::size_t px = 0; px < kPool; ++px) {
                    double acc = 0.0;
                    for (std::size_t y = py * fy; y < (py + 1) * fy; ++y)
                        for (std::size_t x = px * fx; x < (px + 1) * fx; ++x) acc += images(b, c, y, x);
                    f(b, (c * kPool + py) * kPool + px) = acc * inv;
                }
    return f;
}

Matrix ToyEmbedder::project(const Matrix& features) const {
    Matrix out(features.rows(), dim_);
    for (std::size_t b = 0; b < features.rows(); ++b)
        for (std::size_t k = 0; k < kFeatures; ++k) {
            const double f = features(b, k);
            for (std::size_t d = 0; d < dim_; ++d) out(b, d) += f * projection_(k, d);
        }
    return out;
}

Matrix ToyEmbedder::embed_images(const ImageBatch& images) const {
    Matrix raw = project(pooled_features(images));
    for (std::size_t b = 0; b < raw.rows(); ++b) {
        const Embedding e = normalize(raw.row(b));
        std::copy(e.vector.begin(), e.vector.end(), raw.row(b).begin());
    }
    return raw;
}

ImageBatch ToyEmbedder::embed_images_backward(const ImageBatch& images, const Matrix& d_embeddings) const {
    const Matrix raw = project(pooled_features(images));
    if (d_embeddings.rows() != raw.rows() || d_embeddings.cols() != dim_)
        throw Error(ErrorKind::Shape, "embedding gradient shape mismatch");
    const std::size_t H = images.height(), W = images.width(), fy = H / kPool, fx = W / kPool;
    const double inv = 1.0 / static_cast<double>(fy * fx);
    ImageBatch d_images(images.batch(), 3, H, W);
    std::vector<double> d_features(kFeatures);
    for (std::size_t b = 0; b < raw.rows(); ++b) {
        const Embedding unit = normalize(raw.row(b));
        const auto d_raw = normalize_backward(raw.row(b), unit.vector, d_embeddings.row(b));
        for (std::size_t k = 0; k < kFeatures; ++k) d_features[k] = dot(projection_.row(k), d_raw);
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t y = 0; y < H; ++y)
                for (std::size_t x = 0; x < W; ++x)
                    d_images(b, c, y, x) = d_features[(c * kPool + y / fy) * kPool + x / fx] * inv;
    }
    return d_images;
}

std::vector<double> ToyEmbedder::text_features(std::string_view prompt) {
    std::vector<double> bag(kFeatures, 0.0);
    if (prompt.size() < 3) {
        bag[fnv1a(prompt) % kFeatures] += 1.0;
        return bag;
    }
    for (std::size_t i = 0; i + 3 <= prompt.size(); ++i) bag[fnv1a(prompt.substr(i, 3)) % kFeatures] += 1.0;
    return bag;
}

Embedding ToyEmbedder::embed_text(std::string_view prompt) const {
    if (prompt.empty()) throw Error(ErrorKind::InvalidConfig, "prompt must not be empty");
    Matrix f(1, kFeatures);
    const auto bag = text_features(prompt);
    std::copy(bag.begin(), bag.end(), f.data());
    return normalize(project(f).row(0), EmbeddingKind::text);
}

// Losses -----------------------------------------------------------------------

void LossConfig::validate() const {
    if (kind == LossKind::infonce && !(temperature > 0.0 && std::isfinite(temperature)))
        throw Error(ErrorKind::InvalidConfig, "InfoNCE temperature must be positive");
}

std::string_view to_string(LossKind k) { return k == LossKind::great_circle ? "great_circle" : "infonce"; }

LossKind parse_loss_kind(std::string_view s) {
    if (s == "great_circle") return LossKind::great_circle;
    if (s == "infonce") return LossKind::infonce;
    throw Error(ErrorKind::InvalidConfig, "unknown loss kind '" + std::string(s) + "'");
}

double great_circle_loss(const Matrix& images, std::span<const double> prompt, Matrix* d_images) {
    check_dims(images, prompt);
    const std::size_t B = images.rows();
    const double inv_b = 1.0 / static_cast<double>(B);
    if (d_images) *d_images = Matrix(B, images.cols());
    double total = 0.0;
    for (std::size_t i = 0; i < B; ++i) {
        const double raw = dot(images.row(i), prompt);
        const double s = std::clamp(raw, -1.0 + kArccosClamp, 1.0 - kArccosClamp);
        const double angle = std::acos(s);
        total += angle * angle;
        if (d_images && raw == s) {
            const double g = -2.0 * angle / std::sqrt(1.0 - s * s) * inv_b;
            for (std::size_t d = 0; d < prompt.size(); ++d) (*d_images)(i, d) = g * prompt[d];
        }
    }
    return total * inv_b;
}

double infonce_loss(const Matrix& images, std::span<const double> prompt, double temperature, Matrix* d_images) {
    if (!(temperature > 0.0)) throw Error(ErrorKind::InvalidConfig, "InfoNCE temperature must be positive");
    check_dims(images, prompt);
    const std::size_t B = images.rows(), D = images.cols();
    const double inv_b = 1.0 / static_cast<double>(B);
    const double inv_t = 1.0 / temperature;
    if (d_images) *d_images = Matrix(B, D);

    // logits[0] is the positive; logits[j + 1] pairs image i with image j.
    std::vector<double> logits(B + 1), probs(B + 1);
    double total = 0.0;
    for (std::size_t i = 0; i < B; ++i) {
        const auto qi = images.row(i);
        logits[0] = dot(qi, prompt) * inv_t;
        std::size_t arg = 0;
        for (std::size_t j = 0; j < B; ++j) {
            logits[j + 1] = j == i ? -INFINITY : dot(qi, images.row(j)) * inv_t;
            if (logits[j + 1] > logits[arg]) arg = j + 1;
        }
        const double m = logits[arg];
        double rest = 0.0;
        for (std::size_t k = 0; k <= B; ++k)
            if (k != arg) rest += std::exp(logits[k] - m);
        const double lse_shift = std::log1p(rest);
        total += (m - logits[0]) + lse_shift;

        if (d_images) {
            for (std::size_t k = 0; k <= B; ++k) probs[k] = std::exp(logits[k] - m - lse_shift);
            const double g_pos = (probs[0] - 1.0) * inv_t * inv_b;
            for (std::size_t d = 0; d < D; ++d) (*d_images)(i, d) += g_pos * prompt[d];
            for (std::size_t j = 0; j < B; ++j) {
                if (j == i) continue;
                const double g = probs[j + 1] * inv_t * inv_b;
                if (g == 0.0) continue;
                const auto qj = images.row(j);
                for (std::size_t d = 0; d < D; ++d) {
                    (*d_images)(i, d) += g * qj[d];
                    (*d_images)(j, d) += g * qi[d];
                }
            }
        }
    }
    return total * inv_b;
}

double evaluate_loss(const LossConfig& cfg, const Matrix& images, std::span<const double> prompt, Matrix* d_images) {
    cfg.validate();
    return cfg.kind == LossKind::great_circle ? great_circle_loss(images, prompt, d_images)
                                              : infonce_loss(images, prompt, cfg.temperature, d_images);
}

double mean_pairwise_cosine(const Matrix& embeddings) {
    const std::size_t B = embeddings.rows();
    if (B < 2) return 0.0;
    double acc = 0.0;
    for (std::size_t i = 0; i < B; ++i)
        for (std::size_t j = i + 1; j < B; ++j) acc += dot(embeddings.row(i), embeddings.row(j));
    return acc / static_cast<double>(B * (B - 1) / 2);
}

}  // namespace bend
