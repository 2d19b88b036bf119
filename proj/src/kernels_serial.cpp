// Reference kernels: one output element at a time, no tiling, no threads.

#include "bend/error.hpp"
#include "bend/kernels.hpp"

namespace bend::kernels::serial {

namespace {

inline double weight_at(const ConvWeights& w, std::size_t o, std::size_t i, int ky, int kx) {
    return w.weight[((o * w.in_channels + i) * 3 + static_cast<std::size_t>(ky)) * 3 + static_cast<std::size_t>(kx)];
}

void check_conv(const Tensor4& in, const ConvWeights& w) {
    if (in.channels() != w.in_channels || w.weight.size() != w.out_channels * w.in_channels * 9 ||
        w.bias.size() != w.out_channels)
        throw Error(ErrorKind::Shape, "conv3x3: input " + in.shape_string() + " does not match weights");
}

}  // namespace

void conv3x3_forward(const Tensor4& in, const ConvWeights& w, Tensor4& out) {
    check_conv(in, w);
    const int H = static_cast<int>(in.height()), W = static_cast<int>(in.width());
    out = Tensor4(in.batch(), w.out_channels, in.height(), in.width());
    for (std::size_t b = 0; b < in.batch(); ++b)
        for (std::size_t o = 0; o < w.out_channels; ++o)
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x) {
                    double acc = w.bias[o];
                    for (std::size_t i = 0; i < w.in_channels; ++i)
                        for (int ky = 0; ky < 3; ++ky)
                            for (int kx = 0; kx < 3; ++kx) {
                                const int iy = y + ky - 1, ix = x + kx - 1;
                                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                                acc += weight_at(w, o, i, ky, kx) * in(b, i, iy, ix);
                            }
                    out(b, o, y, x) = acc;
                }
}

void conv3x3_backward(const Tensor4& in, const ConvWeights& w, const Tensor4& d_out, Tensor4* d_in,
                      const ConvGradients* d_w) {
    check_conv(in, w);
    const int H = static_cast<int>(in.height()), W = static_cast<int>(in.width());
    if (d_in) {
        *d_in = Tensor4(in.batch(), in.channels(), in.height(), in.width());
        for (std::size_t b = 0; b < in.batch(); ++b)
            for (std::size_t i = 0; i < w.in_channels; ++i)
                for (int iy = 0; iy < H; ++iy)
                    for (int ix = 0; ix < W; ++ix) {
                        double acc = 0.0;
                        for (std::size_t o = 0; o < w.out_channels; ++o)
                            for (int ky = 0; ky < 3; ++ky)
                                for (int kx = 0; kx < 3; ++kx) {
                                    const int y = iy - ky + 1, x = ix - kx + 1;
                                    if (y < 0 || y >= H || x < 0 || x >= W) continue;
                                    acc += weight_at(w, o, i, ky, kx) * d_out(b, o, y, x);
                                }
                        (*d_in)(b, i, iy, ix) = acc;
                    }
    }
    if (d_w) {
        for (std::size_t o = 0; o < w.out_channels; ++o) {
            for (std::size_t i = 0; i < w.in_channels; ++i)
                for (int ky = 0; ky < 3; ++ky)
                    for (int kx = 0; kx < 3; ++kx) {
                        double acc = 0.0;
                        for (std::size_t b = 0; b < in.batch(); ++b)
                            for (int y = 0; y < H; ++y)
                                for (int x = 0; x < W; ++x) {
                                    const int iy = y + ky - 1, ix = x + kx - 1;
                                    if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                                    acc += d_out(b, o, y, x) * in(b, i, iy, ix);
                                }
                        d_w->weight[((o * w.in_channels + i) * 3 + ky) * 3 + kx] += acc;
                    }
            double acc = 0.0;
            for (std::size_t b = 0; b < in.batch(); ++b)
                for (int y = 0; y < H; ++y)
                    for (int x = 0; x < W; ++x) acc += d_out(b, o, y, x);
            d_w->bias[o] += acc;
        }
    }
}

void upsample2x_forward(const Tensor4& in, Tensor4& out) {
    out = Tensor4(in.batch(), in.channels(), in.height() * 2, in.width() * 2);
    for (std::size_t b = 0; b < in.batch(); ++b)
        for (std::size_t c = 0; c < in.channels(); ++c)
            for (std::size_t y = 0; y < out.height(); ++y)
                for (std::size_t x = 0; x < out.width(); ++x) out(b, c, y, x) = in(b, c, y / 2, x / 2);
}

void upsample2x_backward(const Tensor4& d_out, Tensor4& d_in) {
    d_in = Tensor4(d_out.batch(), d_out.channels(), d_out.height() / 2, d_out.width() / 2);
    for (std::size_t b = 0; b < d_in.batch(); ++b)
        for (std::size_t c = 0; c < d_in.channels(); ++c)
            for (std::size_t y = 0; y < d_in.height(); ++y)
                for (std::size_t x = 0; x < d_in.width(); ++x) {
                    double acc = 0.0;
                    for (std::size_t dy = 0; dy < 2; ++dy)
                        for (std::size_t dx = 0; dx < 2; ++dx) acc += d_out(b, c, 2 * y + dy, 2 * x + dx);
                    d_in(b, c, y, x) = acc;
                }
}

void dense_forward(const Matrix& in, std::span<const double> weight, std::span<const double> bias, Matrix& out) {
    const std::size_t out_dim = bias.size(), in_dim = in.cols();
    if (weight.size() != out_dim * in_dim) throw Error(ErrorKind::Shape, "dense: weight size mismatch");
    out = Matrix(in.rows(), out_dim);
    for (std::size_t b = 0; b < in.rows(); ++b)
        for (std::size_t r = 0; r < out_dim; ++r) {
            double acc = bias[r];
            for (std::size_t k = 0; k < in_dim; ++k) acc += weight[r * in_dim + k] * in(b, k);
            out(b, r) = acc;
        }
}

}  // namespace bend::kernels::serial
