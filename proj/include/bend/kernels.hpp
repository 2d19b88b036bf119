#pragma once

// Hot loops of the pipeline. Each kernel exists twice: a naive serial
// reference in bend::kernels::serial, and the tiled OpenMP version in
// bend::kernels that the library calls. The parallel versions split work only
// over independent outputs and accumulate every output in the same order as
// the reference, so the two agree bitwise for any thread count.

#include "bend/tensor.hpp"

#include <span>

namespace bend::kernels {

/// 3x3 'same'-padded convolution: weight [out, in, 3, 3], bias [out].
struct ConvWeights {
    std::span<const double> weight;
    std::span<const double> bias;
    std::size_t out_channels = 0;
    std::size_t in_channels = 0;
};

/// Parameter gradient buffers, accumulated into (never cleared by a kernel).
struct ConvGradients {
    std::span<double> weight;
    std::span<double> bias;
};

// out is resized to [B, out_channels, H, W] and overwritten.
void conv3x3_forward(const Tensor4& in, const ConvWeights& w, Tensor4& out);
// d_in, when given, is resized and overwritten; parameter grads accumulate.
void conv3x3_backward(const Tensor4& in, const ConvWeights& w, const Tensor4& d_out, Tensor4* d_in,
                      const ConvGradients* d_w);
void upsample2x_forward(const Tensor4& in, Tensor4& out);
void upsample2x_backward(const Tensor4& d_out, Tensor4& d_in);
// out[b, :] = weight[out_dim, in_dim] * in[b, :] + bias
void dense_forward(const Matrix& in, std::span<const double> weight, std::span<const double> bias,
                   Matrix& out);

namespace serial {

void conv3x3_forward(const Tensor4& in, const ConvWeights& w, Tensor4& out);
void conv3x3_backward(const Tensor4& in, const ConvWeights& w, const Tensor4& d_out, Tensor4* d_in,
                      const ConvGradients* d_w);
void upsample2x_forward(const Tensor4& in, Tensor4& out);
void upsample2x_backward(const Tensor4& d_out, Tensor4& d_in);
void dense_forward(const Matrix& in, std::span<const double> weight, std::span<const double> bias,
                   Matrix& out);

}  // namespace serial

/// Threads the parallel kernels use; 1 when built without OpenMP.
int thread_count();

}  // namespace bend::kernels
