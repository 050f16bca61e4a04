#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "polypseg/errors.hpp"

namespace polypseg {

/// Dense 4-axis shape (batch, channels, rows, cols). All axes are >= 1.
struct Shape {
    int n = 1;
    int c = 1;
    int h = 1;
    int w = 1;

    std::int64_t numel() const {
        return static_cast<std::int64_t>(n) * c * h * w;
    }

    bool operator==(const Shape& o) const {
        return n == o.n && c == o.c && h == o.h && w == o.w;
    }
    bool operator!=(const Shape& o) const { return !(*this == o); }

    std::string str() const {
        return "(" + std::to_string(n) + "," + std::to_string(c) + "," +
               std::to_string(h) + "," + std::to_string(w) + ")";
    }
};

/// Dense row-major tensor over (batch, channel, row, col).
///
/// The shape of a constructed tensor never changes; reshaped() returns a new
/// value with the same element count. Used for activations, kernels,
/// gradients, and (with T = uint8_t) label maps.
template <class T = double>
class Tensor {
public:
    using value_type = T;

    Tensor() : shape_{1, 1, 1, 1}, data_(1, T(0)) {}

    explicit Tensor(Shape s, T fill = T(0)) : shape_(s) {
        validate_shape(s);
        data_.assign(static_cast<std::size_t>(s.numel()), fill);
    }

    Tensor(Shape s, std::vector<T> values) : shape_(s), data_(std::move(values)) {
        validate_shape(s);
        if (static_cast<std::int64_t>(data_.size()) != s.numel())
            throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                                 " does not match shape " + s.str());
    }

    static Tensor zeros(Shape s) { return Tensor(s, T(0)); }
    static Tensor full(Shape s, T v) { return Tensor(s, v); }

    const Shape& shape() const { return shape_; }
    int n() const { return shape_.n; }
    int c() const { return shape_.c; }
    int h() const { return shape_.h; }
    int w() const { return shape_.w; }
    std::int64_t size() const { return shape_.numel(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::vector<T>& vec() { return data_; }
    const std::vector<T>& vec() const { return data_; }

    std::int64_t index(int n, int c, int y, int x) const {
        return ((static_cast<std::int64_t>(n) * shape_.c + c) * shape_.h + y) * shape_.w + x;
    }

    T& at(int n, int c, int y, int x) { return data_[index(n, c, y, x)]; }
    const T& at(int n, int c, int y, int x) const { return data_[index(n, c, y, x)]; }

    T& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
    const T& operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

    /// New tensor with the same elements laid out under a different shape.
    Tensor reshaped(Shape s) const {
        if (s.numel() != shape_.numel())
            throw DimensionError("reshape from " + shape_.str() + " to " + s.str() +
                                 " changes element count");
        return Tensor(s, data_);
    }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

private:
    static void validate_shape(const Shape& s) {
        if (s.n < 1) throw DimensionError("batch axis must be >= 1, got " + std::to_string(s.n));
        if (s.c < 1) throw DimensionError("channel axis must be >= 1, got " + std::to_string(s.c));
        if (s.h < 1) throw DimensionError("row axis must be >= 1, got " + std::to_string(s.h));
        if (s.w < 1) throw DimensionError("col axis must be >= 1, got " + std::to_string(s.w));
    }

    Shape shape_;
    std::vector<T> data_;
};

/// 2-D grid, the carrier for images, masks, and depth fields.
template <class T>
struct Grid {
    int rows = 0;
    int cols = 0;
    std::vector<T> data;

    Grid() = default;
    Grid(int r, int c, T fill = T(0))
        : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, fill) {}

    T& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
    const T& at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }
    std::int64_t size() const { return static_cast<std::int64_t>(rows) * cols; }
    bool same_shape(const Grid& o) const { return rows == o.rows && cols == o.cols; }
};

}  // namespace polypseg
