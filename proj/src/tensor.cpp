#include "tsmixer/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "tsmixer/errors.hpp"

namespace tsmixer {

Shape::Shape(std::initializer_list<std::size_t> dims)
    : Shape(std::span<const std::size_t>(dims.begin(), dims.size())) {}

Shape::Shape(std::span<const std::size_t> dims) {
    if (dims.size() > max_rank) {
        throw Error(ErrorKind::rank, fmt::format("rank {} exceeds the maximum of 3", dims.size()));
    }
    for (std::size_t d : dims) {
        if (d == 0) throw Error(ErrorKind::dimension, "tensor extents must be positive");
    }
    std::copy(dims.begin(), dims.end(), dims_.begin());
    rank_ = dims.size();
}

std::size_t Shape::numel() const noexcept {
    std::size_t n = 1;
    for (std::size_t i = 0; i < rank_; ++i) n *= dims_[i];
    return n;
}

std::array<std::size_t, 3> Shape::padded() const noexcept {
    std::array<std::size_t, 3> out{1, 1, 1};
    for (std::size_t i = 0; i < rank_; ++i) out[3 - rank_ + i] = dims_[i];
    return out;
}

std::string Shape::str() const {
    return fmt::format("[{}]", fmt::join(dims(), "x"));
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape_.numel()) {
        throw Error(ErrorKind::dimension,
                    fmt::format("shape {} needs {} values, got {}", shape_.str(), shape_.numel(), data_.size()));
    }
}

Tensor::Tensor(Shape shape, double fill) : shape_(shape), data_(shape.numel(), fill) {}

Tensor Tensor::vector(std::vector<double> values) {
    const std::size_t n = values.size();
    return Tensor(Shape{n}, std::move(values));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t m = rows.size();
    const std::size_t n = m ? rows.begin()->size() : 0;
    std::vector<double> data;
    data.reserve(m * n);
    for (const auto& row : rows) {
        if (row.size() != n) throw Error(ErrorKind::dimension, "ragged matrix literal");
        data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor(Shape{m, n}, std::move(data));
}

Tensor Tensor::identity(std::size_t n) {
    Tensor t(Shape{n, n});
    for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
    return t;
}

double Tensor::item() const {
    if (data_.size() != 1) {
        throw Error(ErrorKind::contract, fmt::format("item() on tensor of shape {}", shape_.str()));
    }
    return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
    if (shape.numel() != data_.size()) {
        throw Error(ErrorKind::dimension, fmt::format("cannot reshape {} to {}", shape_.str(), shape.str()));
    }
    return Tensor(shape, data_);
}

bool Tensor::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    if (!(a.shape() == b.shape())) {
        throw Error(ErrorKind::dimension, fmt::format("compare {} with {}", a.shape().str(), b.shape().str()));
    }
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

Tensor slice_last(const Tensor& t, std::size_t begin, std::size_t end) {
    if (t.rank() == 0 || begin >= end || end > t.shape()[t.rank() - 1]) {
        throw Error(ErrorKind::dimension, fmt::format("slice [{}, {}) of {}", begin, end, t.shape().str()));
    }
    const std::size_t cols = t.shape()[t.rank() - 1];
    const std::size_t rows = t.size() / cols;
    std::array<std::size_t, 3> dims{};
    for (std::size_t i = 0; i < t.rank(); ++i) dims[i] = t.shape()[i];
    dims[t.rank() - 1] = end - begin;
    Shape out_shape(std::span<const std::size_t>(dims.data(), t.rank()));
    std::vector<double> out;
    out.reserve(rows * (end - begin));
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = t.raw() + r * cols;
        out.insert(out.end(), row + begin, row + end);
    }
    return Tensor(out_shape, std::move(out));
}

Tensor concat_last(const Tensor& a, const Tensor& b) {
    const std::size_t r = a.rank();
    bool ok = r > 0 && r == b.rank();
    for (std::size_t i = 0; ok && i + 1 < r; ++i) ok = a.shape()[i] == b.shape()[i];
    if (!ok) throw Error(ErrorKind::dimension, fmt::format("concat {} with {}", a.shape().str(), b.shape().str()));
    const std::size_t ca = a.shape()[r - 1];
    const std::size_t cb = b.shape()[r - 1];
    const std::size_t rows = a.size() / ca;
    std::array<std::size_t, 3> dims{};
    for (std::size_t i = 0; i < r; ++i) dims[i] = a.shape()[i];
    dims[r - 1] = ca + cb;
    std::vector<double> out;
    out.reserve(rows * (ca + cb));
    for (std::size_t row = 0; row < rows; ++row) {
        out.insert(out.end(), a.raw() + row * ca, a.raw() + (row + 1) * ca);
        out.insert(out.end(), b.raw() + row * cb, b.raw() + (row + 1) * cb);
    }
    return Tensor(Shape(std::span<const std::size_t>(dims.data(), r)), std::move(out));
}

Tensor slice_rows(const Tensor& t, std::size_t begin, std::size_t end) {
    if (t.rank() != 2 || begin >= end || end > t.dim(0)) {
        throw Error(ErrorKind::dimension, fmt::format("row slice [{}, {}) of {}", begin, end, t.shape().str()));
    }
    const std::size_t cols = t.dim(1);
    std::vector<double> out(t.raw() + begin * cols, t.raw() + end * cols);
    return Tensor(Shape{end - begin, cols}, std::move(out));
}

Tensor stack(std::span<const Tensor> items) {
    if (items.empty()) throw Error(ErrorKind::dimension, "cannot stack an empty list");
    const Shape& s = items.front().shape();
    if (s.rank() != 2) throw Error(ErrorKind::rank, "stack expects rank-2 items");
    std::vector<double> out;
    out.reserve(items.size() * s.numel());
    for (const Tensor& t : items) {
        if (!(t.shape() == s)) {
            throw Error(ErrorKind::dimension, fmt::format("stack {} with {}", s.str(), t.shape().str()));
        }
        out.insert(out.end(), t.data().begin(), t.data().end());
    }
    return Tensor(Shape{items.size(), s[0], s[1]}, std::move(out));
}

Tensor unstack(const Tensor& batch, std::size_t b) {
    if (batch.rank() != 3 || b >= batch.dim(0)) {
        throw Error(ErrorKind::dimension, fmt::format("unstack item {} of {}", b, batch.shape().str()));
    }
    const std::size_t n = batch.dim(1) * batch.dim(2);
    return Tensor(Shape{batch.dim(1), batch.dim(2)},
                  std::vector<double>(batch.raw() + b * n, batch.raw() + (b + 1) * n));
}

}  // namespace tsmixer
