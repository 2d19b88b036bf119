#pragma once

// Relaxed bitonic sorting network. Every compare-exchange is replaced by a
// sigmoid-weighted mix of its two inputs; composing the per-layer mixing
// matrices yields a doubly stochastic "soft permutation" per sample that
// tends to the hard sorting permutation as the steepness grows.

#include "bend/kernels.hpp"
#include "bend/tensor.hpp"

#include <cstddef>
#include <vector>

namespace bend::diffsort {

enum class SortAxis { height, width };

/// One score per sortable slice per sample: [batch, n].
struct ScoreVector {
    Matrix values;
};

/// Per-sample n x n matrices; sorted = matrix * scores.
class SoftPermutation {
public:
    SoftPermutation() = default;
    SoftPermutation(std::size_t batch, std::size_t n, double steepness)
        : batch_(batch), n_(n), steepness_(steepness), data_(batch * n * n, 0.0) {}

    std::size_t batch() const noexcept { return batch_; }
    std::size_t n() const noexcept { return n_; }
    double steepness() const noexcept { return steepness_; }

    double& operator()(std::size_t b, std::size_t i, std::size_t k) { return data_[(b * n_ + i) * n_ + k]; }
    double operator()(std::size_t b, std::size_t i, std::size_t k) const { return data_[(b * n_ + i) * n_ + k]; }
    double* sample(std::size_t b) noexcept { return data_.data() + b * n_ * n_; }
    const double* sample(std::size_t b) const noexcept { return data_.data() + b * n_ * n_; }

    /// Builds a hard permutation batch from target indices: row i selects column index[b][i].
    static SoftPermutation from_indices(const std::vector<std::vector<std::size_t>>& index);

private:
    std::size_t batch_ = 0, n_ = 0;
    double steepness_ = 0.0;
    std::vector<double> data_;
};

/// Monotone relaxation of the step function used by every comparator.
struct Relaxation {
    double (*value)(double);
    double (*derivative)(double);
};

/// Logistic sigmoid, the default relaxation.
const Relaxation& logistic();

/// A compare-exchange: after it, position `lo` holds the (soft) minimum.
struct Comparator {
    std::size_t lo;
    std::size_t hi;
};

/// Bitonic schedule for n = 2^k, grouped into layers of disjoint comparators.
/// The network sorts ascending (position 0 receives the minimum).
std::vector<std::vector<Comparator>> bitonic_schedule(std::size_t n);

/// Intermediate values kept for the backward pass.
struct SortTrace {
    Matrix scores;
    double steepness = 0.0;
    const Relaxation* relaxation = nullptr;
    std::vector<std::vector<Comparator>> schedule;
    // Per sample, per layer: running values and permutation before the layer;
    // perms additionally ends with the final permutation.
    std::vector<std::vector<std::vector<double>>> values;
    std::vector<std::vector<std::vector<double>>> perms;
    // Per sample, flattened per comparator in schedule order: weight and its slope.
    std::vector<std::vector<double>> weights;
    std::vector<std::vector<double>> slopes;
};

struct SortResult {
    Matrix sorted;
    SoftPermutation perm;
};

/// Sorts each row of `scores` ascending through the relaxed network.
/// Throws Size if n is not a power of two, InvalidConfig if steepness <= 0.
SortResult soft_sort(const ScoreVector& scores, double steepness, SortTrace* trace = nullptr,
                     const Relaxation& relaxation = logistic());

/// Gradient w.r.t. the scores given gradients on the sorted output and/or
/// on the permutation matrices (either may be null).
Matrix soft_sort_backward(const SortTrace& trace, const Matrix* d_sorted, const SoftPermutation* d_perm);

struct HardDecode {
    std::size_t batch = 0;
    std::size_t n = 0;
    std::vector<std::size_t> indices;  // [batch, n], row-wise argmax
    bool valid = true;                 // false if any sample has duplicate indices

    std::size_t operator()(std::size_t b, std::size_t i) const { return indices[b * n + i]; }
};

HardDecode hard_decode(const SoftPermutation& perm);

/// Reorders `a` along `axis`: for height, out[b,c,i,w] = sum_k P[b,i,k] a[b,c,k,w].
ActivationMap permute_axis(const ActivationMap& a, const SoftPermutation& perm, SortAxis axis);

/// Adjoint of permute_axis; either output may be null.
void permute_axis_backward(const ActivationMap& a, const SoftPermutation& perm, SortAxis axis,
                           const ActivationMap& d_out, ActivationMap* d_a, SoftPermutation* d_perm);

struct ScoreTrace {
    Tensor4 score_map;  // [B, 1, H, W] conv output
};

/// One 3x3 'same' conv to a single channel, then the mean over the axis that
/// is not being sorted: n = H for height, n = W for width.
ScoreVector row_scores(const ActivationMap& a, const kernels::ConvWeights& head, SortAxis axis,
                       ScoreTrace* trace = nullptr);

/// Gradients of row_scores: head parameter grads accumulate, d_a (optional) is overwritten.
void row_scores_backward(const ActivationMap& a, const kernels::ConvWeights& head, SortAxis axis,
                         const Matrix& d_scores, const kernels::ConvGradients& d_head, ActivationMap* d_a);

}  // namespace bend::diffsort
