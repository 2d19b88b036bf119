#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace bend {

/// Dense [batch, channels, height, width] array of doubles, row-major.
class Tensor4 {
public:
    Tensor4() = default;
    Tensor4(std::size_t batch, std::size_t channels, std::size_t height, std::size_t width,
            double fill = 0.0)
        : b_(batch), c_(channels), h_(height), w_(width),
          data_(batch * channels * height * width, fill) {}

    std::size_t batch() const noexcept { return b_; }
    std::size_t channels() const noexcept { return c_; }
    std::size_t height() const noexcept { return h_; }
    std::size_t width() const noexcept { return w_; }
    std::size_t size() const noexcept { return data_.size(); }
    std::size_t plane() const noexcept { return h_ * w_; }

    double& operator()(std::size_t b, std::size_t c, std::size_t y, std::size_t x) {
        return data_[((b * c_ + c) * h_ + y) * w_ + x];
    }
    double operator()(std::size_t b, std::size_t c, std::size_t y, std::size_t x) const {
        return data_[((b * c_ + c) * h_ + y) * w_ + x];
    }

    double* data() noexcept { return data_.data(); }
    const double* data() const noexcept { return data_.data(); }
    std::span<double> values() noexcept { return data_; }
    std::span<const double> values() const noexcept { return data_; }

    /// Pointer to the [b, c] plane of h*w values.
    double* plane_ptr(std::size_t b, std::size_t c) noexcept { return data_.data() + (b * c_ + c) * plane(); }
    const double* plane_ptr(std::size_t b, std::size_t c) const noexcept {
        return data_.data() + (b * c_ + c) * plane();
    }

    bool same_shape(const Tensor4& o) const noexcept {
        return b_ == o.b_ && c_ == o.c_ && h_ == o.h_ && w_ == o.w_;
    }
    std::string shape_string() const;

    friend bool operator==(const Tensor4&, const Tensor4&) = default;

private:
    std::size_t b_ = 0, c_ = 0, h_ = 0, w_ = 0;
    std::vector<double> data_;
};

/// An intermediate generator activation.
using ActivationMap = Tensor4;
/// Generator output, [batch, 3, H, W] with values nominally in [-1, 1].
using ImageBatch = Tensor4;

/// Dense row-major [rows, cols] matrix of doubles.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    double* data() noexcept { return data_.data(); }
    const double* data() const noexcept { return data_.data(); }
    std::span<double> values() noexcept { return data_; }
    std::span<const double> values() const noexcept { return data_; }

    friend bool operator==(const Matrix&, const Matrix&) = default;

private:
    std::size_t rows_ = 0, cols_ = 0;
    std::vector<double> data_;
};

}  // namespace bend
