#pragma once

#include "bend/tensor.hpp"

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace bend {

enum class EmbeddingKind { image, text };

/// Unit-norm vector in the shared image/text space.
struct Embedding {
    std::vector<double> vector;
    EmbeddingKind kind = EmbeddingKind::image;
};

/// v / |v|. Throws DegenerateEmbedding for a zero (or non-finite) norm.
Embedding normalize(std::span<const double> v, EmbeddingKind kind = EmbeddingKind::image);

/// Gradient through normalization: given raw v, its normalization u and
/// d/du, returns d/dv = (d_u - u (u . d_u)) / |v|.
std::vector<double> normalize_backward(std::span<const double> raw, std::span<const double> unit,
                                       std::span<const double> d_unit);

/// Image/text embedding model. Implementations are immutable and deterministic.
class Embedder {
public:
    virtual ~Embedder() = default;

    virtual std::size_t dim() const = 0;
    /// One unit-norm row per image.
    virtual Matrix embed_images(const ImageBatch& images) const = 0;
    /// Pulls d loss / d embeddings back to the pixels.
    virtual ImageBatch embed_images_backward(const ImageBatch& images, const Matrix& d_embeddings) const = 0;
    virtual Embedding embed_text(std::string_view prompt) const = 0;
    /// Every parameter value, for bitwise freeze checks.
    virtual std::vector<double> parameter_snapshot() const = 0;
};

/// Linear stand-in for a CLIP-style model. Images are average-pooled to
/// 8x8x3 and flattened (c, y, x); prompts become a 192-bin bag of hashed byte
/// trigrams. Both go through the same seeded 192 x dim Gaussian projection and
/// are then normalized.
class ToyEmbedder final : public Embedder {
public:
    static constexpr std::size_t kPool = 8;
    static constexpr std::size_t kFeatures = 3 * kPool * kPool;

    ToyEmbedder(std::uint64_t seed, std::size_t dim);

    std::size_t dim() const override { return dim_; }
    Matrix embed_images(const ImageBatch& images) const override;
    ImageBatch embed_images_backward(const ImageBatch& images, const Matrix& d_embeddings) const override;
    Embedding embed_text(std::string_view prompt) const override;
    std::vector<double> parameter_snapshot() const override { return {projection_.values().begin(), projection_.values().end()}; }

    /// Unnormalized 192-bin bag for `prompt`.
    static std::vector<double> text_features(std::string_view prompt);

private:
    Matrix pooled_features(const ImageBatch& images) const;  // [B, 192]
    Matrix project(const Matrix& features) const;           // [B, dim]

    std::size_t dim_;
    Matrix projection_;  // [192, dim]
};

ToyEmbedder toy_embedder(std::uint64_t seed, std::size_t dim);

enum class LossKind { great_circle, infonce };

struct LossConfig {
    LossKind kind = LossKind::great_circle;
    double temperature = 0.001;  // infonce only

    void validate() const;

    friend bool operator==(const LossConfig&, const LossConfig&) = default;
};

std::string_view to_string(LossKind k);
LossKind parse_loss_kind(std::string_view s);

/// Clamp applied to cosine similarities before arccos.
inline constexpr double kArccosClamp = 1e-7;

/// Mean over rows of arccos(clamp(q_i . k))^2. `images` rows and `prompt`
/// should be unit norm. When d_images is given it receives d loss / d q.
double great_circle_loss(const Matrix& images, std::span<const double> prompt, Matrix* d_images = nullptr);

/// Mean over rows of
///   -log( e^{q_i.k/t} / (e^{q_i.k/t} + sum_{j != i} e^{q_i.q_j/t}) ),
/// the other images in the batch serving as negatives. Evaluated in shifted
/// log-sum-exp form, so finite for any temperature > 0 and unit-norm inputs.
double infonce_loss(const Matrix& images, std::span<const double> prompt, double temperature,
                    Matrix* d_images = nullptr);

double evaluate_loss(const LossConfig& cfg, const Matrix& images, std::span<const double> prompt,
                     Matrix* d_images = nullptr);

/// Mean of q_i . q_j over unordered pairs i < j (0 for a single row).
double mean_pairwise_cosine(const Matrix& embeddings);

}  // namespace bend
