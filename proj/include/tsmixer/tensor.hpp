#pragma once

#include <array>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace tsmixer {

/// Extents of a tensor of rank 0..3. Rank 0 is a scalar.
class Shape {
public:
    static constexpr std::size_t max_rank = 3;

    Shape() = default;
    Shape(std::initializer_list<std::size_t> dims);
    explicit Shape(std::span<const std::size_t> dims);

    std::size_t rank() const noexcept { return rank_; }
    std::size_t operator[](std::size_t axis) const noexcept { return dims_[axis]; }
    std::size_t numel() const noexcept;
    std::span<const std::size_t> dims() const noexcept { return {dims_.data(), rank_}; }

    /// Extents left-padded with ones to rank 3.
    std::array<std::size_t, 3> padded() const noexcept;

    std::string str() const;

    friend bool operator==(const Shape& a, const Shape& b) noexcept {
        return a.rank_ == b.rank_ && a.dims_ == b.dims_;
    }

private:
    std::array<std::size_t, max_rank> dims_{};
    std::size_t rank_ = 0;
};

/// Dense row-major float64 array with value semantics.
class Tensor {
public:
    Tensor() : data_(1, 0.0) {}
    Tensor(Shape shape, std::vector<double> data);
    explicit Tensor(Shape shape, double fill = 0.0);

    static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }
    static Tensor zeros(Shape shape) { return Tensor(shape, 0.0); }
    static Tensor ones(Shape shape) { return Tensor(shape, 1.0); }
    static Tensor vector(std::vector<double> values);
    static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
    static Tensor identity(std::size_t n);

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.rank(); }
    std::size_t size() const noexcept { return data_.size(); }
    std::size_t dim(std::size_t axis) const noexcept { return shape_[axis]; }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }
    double* raw() noexcept { return data_.data(); }
    const double* raw() const noexcept { return data_.data(); }

    double& operator[](std::size_t i) noexcept { return data_[i]; }
    double operator[](std::size_t i) const noexcept { return data_[i]; }

    double& operator()(std::size_t i, std::size_t j) noexcept { return data_[i * shape_[1] + j]; }
    double operator()(std::size_t i, std::size_t j) const noexcept { return data_[i * shape_[1] + j]; }
    double& operator()(std::size_t b, std::size_t i, std::size_t j) noexcept {
        return data_[(b * shape_[1] + i) * shape_[2] + j];
    }
    double operator()(std::size_t b, std::size_t i, std::size_t j) const noexcept {
        return data_[(b * shape_[1] + i) * shape_[2] + j];
    }

    /// Value of a single-element tensor.
    double item() const;

    /// Same data viewed with a new shape of equal element count.
    Tensor reshaped(Shape shape) const;

    bool all_finite() const noexcept;

    friend bool operator==(const Tensor& a, const Tensor& b) noexcept {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

private:
    Shape shape_;
    std::vector<double> data_;
};

/// Largest absolute elementwise difference; shapes must match.
double max_abs_diff(const Tensor& a, const Tensor& b);

/// Columns [begin, end) of the last axis.
Tensor slice_last(const Tensor& t, std::size_t begin, std::size_t end);

/// Concatenation along the last axis; leading extents must match.
Tensor concat_last(const Tensor& a, const Tensor& b);

/// Rows [begin, end) of the first axis of a rank-2 tensor.
Tensor slice_rows(const Tensor& t, std::size_t begin, std::size_t end);

/// Stack equally-shaped rank-2 tensors into a rank-3 batch.
Tensor stack(std::span<const Tensor> items);

/// Item `b` of a rank-3 batch as a rank-2 tensor.
Tensor unstack(const Tensor& batch, std::size_t b);

}  // namespace tsmixer
