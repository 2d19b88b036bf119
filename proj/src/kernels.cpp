#include "bend/error.hpp"
#include "bend/kernels.hpp"

#include <algorithm>
#include <cstdint>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace bend::kernels {

namespace {

void check_conv(const Tensor4& in, const ConvWeights& w) {
    if (in.channels() != w.in_channels || w.weight.size() != w.out_channels * w.in_channels * 9 ||
        w.bias.size() != w.out_channels)
        throw Error(ErrorKind::Shape, "conv3x3: input " + in.shape_string() + " does not match weights");
}

// Valid output range [lo, hi) for a tap at offset k-1 on an axis of length n.
inline void tap_range(int k, int n, int& lo, int& hi) {
    lo = std::max(0, 1 - k);
    hi = std::min(n, n + 1 - k);
}

}  // namespace

int thread_count() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

void conv3x3_forward(const Tensor4& in, const ConvWeights& w, Tensor4& out) {
    check_conv(in, w);
    const int H = static_cast<int>(in.height()), W = static_cast<int>(in.width());
    const auto B = static_cast<std::int64_t>(in.batch());
    const auto O = static_cast<std::int64_t>(w.out_channels);
    const std::size_t C = w.in_channels;
    out = Tensor4(in.batch(), w.out_channels, in.height(), in.width());

#pragma omp parallel for collapse(2) schedule(static)
    for (std::int64_t b = 0; b < B; ++b) {
        for (std::int64_t o = 0; o < O; ++o) {
            double* dst = out.plane_ptr(b, o);
            std::fill(dst, dst + out.plane(), w.bias[o]);
            const double* wo = w.weight.data() + o * C * 9;
            for (std::size_t i = 0; i < C; ++i) {
                const double* src = in.plane_ptr(b, i);
                for (int ky = 0; ky < 3; ++ky) {
                    int y0, y1;
                    tap_range(ky, H, y0, y1);
                    for (int kx = 0; kx < 3; ++kx) {
                        int x0, x1;
                        tap_range(kx, W, x0, x1);
                        const double wv = wo[i * 9 + ky * 3 + kx];
                        for (int y = y0; y < y1; ++y) {
                            double* drow = dst + y * W;
                            const double* srow = src + (y + ky - 1) * W + (kx - 1);
                            for (int x = x0; x < x1; ++x) drow[x] += wv * srow[x];
                        }
                    }
                }
            }
        }
    }
}

void conv3x3_backward(const Tensor4& in, const ConvWeights& w, const Tensor4& d_out, Tensor4* d_in,
                      const ConvGradients* d_w) {
    check_conv(in, w);
    if (d_out.batch() != in.batch() || d_out.channels() != w.out_channels || d_out.height() != in.height() ||
        d_out.width() != in.width())
        throw Error(ErrorKind::Shape, "conv3x3 backward: gradient " + d_out.shape_string() + " mismatched");
    const int H = static_cast<int>(in.height()), W = static_cast<int>(in.width());
    const auto B = static_cast<std::int64_t>(in.batch());
    const std::size_t O = w.out_channels, C = w.in_channels;

    if (d_in) {
        *d_in = Tensor4(in.batch(), in.channels(), in.height(), in.width());
        const auto Ci = static_cast<std::int64_t>(C);
#pragma omp parallel for collapse(2) schedule(static)
        for (std::int64_t b = 0; b < B; ++b) {
            for (std::int64_t i = 0; i < Ci; ++i) {
                double* dst = d_in->plane_ptr(b, i);
                for (std::size_t o = 0; o < O; ++o) {
                    const double* g = d_out.plane_ptr(b, o);
                    const double* wo = w.weight.data() + (o * C + i) * 9;
                    for (int ky = 0; ky < 3; ++ky) {
                        // Input rows iy whose source output row iy-ky+1 is in range.
                        int y0, y1;
                        tap_range(2 - ky, H, y0, y1);
                        for (int kx = 0; kx < 3; ++kx) {
                            int x0, x1;
                            tap_range(2 - kx, W, x0, x1);
                            const double wv = wo[ky * 3 + kx];
                            for (int iy = y0; iy < y1; ++iy) {
                                double* drow = dst + iy * W;
                                const double* grow = g + (iy - ky + 1) * W - (kx - 1);
                                for (int ix = x0; ix < x1; ++ix) drow[ix] += wv * grow[ix];
                            }
                        }
                    }
                }
            }
        }
    }

    if (d_w) {
        const auto Oi = static_cast<std::int64_t>(O);
#pragma omp parallel for schedule(static)
        for (std::int64_t o = 0; o < Oi; ++o) {
            for (std::size_t i = 0; i < C; ++i) {
                for (int ky = 0; ky < 3; ++ky) {
                    int y0, y1;
                    tap_range(ky, H, y0, y1);
                    for (int kx = 0; kx < 3; ++kx) {
                        int x0, x1;
                        tap_range(kx, W, x0, x1);
                        double acc = 0.0;
                        for (std::int64_t b = 0; b < B; ++b) {
                            const double* g = d_out.plane_ptr(b, o);
                            const double* src = in.plane_ptr(b, i);
                            for (int y = y0; y < y1; ++y) {
                                const double* grow = g + y * W;
                                const double* srow = src + (y + ky - 1) * W + (kx - 1);
                                for (int x = x0; x < x1; ++x) acc += grow[x] * srow[x];
                            }
                        }
                        d_w->weight[((o * C + i) * 3 + ky) * 3 + kx] += acc;
                    }
                }
            }
            double acc = 0.0;
            for (std::int64_t b = 0; b < B; ++b) {
                const double* g = d_out.plane_ptr(b, o);
                for (std::size_t p = 0; p < d_out.plane(); ++p) acc += g[p];
            }
            d_w->bias[o] += acc;
        }
    }
}

void upsample2x_forward(const Tensor4& in, Tensor4& out) {
    out = Tensor4(in.batch(), in.channels(), in.height() * 2, in.width() * 2);
    const auto planes = static_cast<std::int64_t>(in.batch() * in.channels());
    const std::size_t h = in.height(), w = in.width(), W = out.width();
#pragma omp parallel for schedule(static)
    for (std::int64_t p = 0; p < planes; ++p) {
        const double* src = in.data() + p * h * w;
        double* dst = out.data() + p * 4 * h * w;
        for (std::size_t y = 0; y < 2 * h; ++y)
            for (std::size_t x = 0; x < W; ++x) dst[y * W + x] = src[(y / 2) * w + x / 2];
    }
}

void upsample2x_backward(const Tensor4& d_out, Tensor4& d_in) {
    d_in = Tensor4(d_out.batch(), d_out.channels(), d_out.height() / 2, d_out.width() / 2);
    const auto planes = static_cast<std::int64_t>(d_in.batch() * d_in.channels());
    const std::size_t h = d_in.height(), w = d_in.width(), W = d_out.width();
#pragma omp parallel for schedule(static)
    for (std::int64_t p = 0; p < planes; ++p) {
        const double* src = d_out.data() + p * 4 * h * w;
        double* dst = d_in.data() + p * h * w;
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) {
                const double* top = src + 2 * y * W + 2 * x;
                double acc = 0.0;
                acc += top[0];
                acc += top[1];
                acc += top[W];
                acc += top[W + 1];
                dst[y * w + x] = acc;
            }
    }
}

void dense_forward(const Matrix& in, std::span<const double> weight, std::span<const double> bias, Matrix& out) {
    const std::size_t out_dim = bias.size(), in_dim = in.cols();
    if (weight.size() != out_dim * in_dim) throw Error(ErrorKind::Shape, "dense: weight size mismatch");
    out = Matrix(in.rows(), out_dim);
    const auto rows = static_cast<std::int64_t>(in.rows());
    const auto outs = static_cast<std::int64_t>(out_dim);
#pragma omp parallel for collapse(2) schedule(static)
    for (std::int64_t b = 0; b < rows; ++b)
        for (std::int64_t r = 0; r < outs; ++r) {
            const double* wr = weight.data() + r * in_dim;
            const double* x = in.data() + b * in_dim;
            double acc = bias[r];
            for (std::size_t k = 0; k < in_dim; ++k) acc += wr[k] * x[k];
            out(b, r) = acc;
        }
}

}  // namespace bend::kernels
