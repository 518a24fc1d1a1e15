#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "rae/error.hpp"

namespace rae {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_numel(const Shape& shape) {
    std::int64_t n = 1;
    for (auto e : shape) {
        if (e < 0) throw DimensionError("negative extent in shape");
        n *= e;
    }
    return n;
}

std::string shape_string(const Shape& shape);

// Dense row-major n-dimensional array. Plain value type: copies are deep,
// gradients live on the autodiff node that owns a tensor, not here.
template <typename T>
class BasicTensor {
   public:
    using value_type = T;

    BasicTensor() = default;

    explicit BasicTensor(Shape shape, T fill = T(0))
        : shape_(std::move(shape)), data_(static_cast<std::size_t>(shape_numel(shape_)), fill) {}

    BasicTensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (static_cast<std::int64_t>(data_.size()) != shape_numel(shape_)) {
            throw DimensionError("data length " + std::to_string(data_.size()) + " does not match shape " +
                                 shape_string(shape_));
        }
    }

    static BasicTensor zeros(Shape shape) { return BasicTensor(std::move(shape), T(0)); }
    static BasicTensor ones(Shape shape) { return BasicTensor(std::move(shape), T(1)); }

    static BasicTensor matrix(std::int64_t rows, std::int64_t cols, std::initializer_list<T> values) {
        return BasicTensor({rows, cols}, std::vector<T>(values));
    }
    static BasicTensor vector(std::initializer_list<T> values) {
        return BasicTensor({static_cast<std::int64_t>(values.size())}, std::vector<T>(values));
    }

    template <typename U>
    BasicTensor<U> cast() const {
        std::vector<U> out(data_.size());
        std::transform(data_.begin(), data_.end(), out.begin(), [](T v) { return static_cast<U>(v); });
        return BasicTensor<U>(shape_, std::move(out));
    }

    const Shape& shape() const { return shape_; }
    std::int64_t rank() const { return static_cast<std::int64_t>(shape_.size()); }
    std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }
    std::int64_t dim(std::int64_t axis) const {
        if (axis < 0) axis += rank();
        if (axis < 0 || axis >= rank()) throw DimensionError("axis out of range");
        return shape_[static_cast<std::size_t>(axis)];
    }
    bool empty() const { return data_.empty(); }

    // Last extent; leading extents are folded into rows. Scalars are 1x1.
    std::int64_t cols() const { return shape_.empty() ? 1 : shape_.back(); }
    std::int64_t rows() const { return cols() == 0 ? 0 : numel() / cols(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::span<T> span() { return data_; }
    std::span<const T> span() const { return data_; }
    std::vector<T>& storage() { return data_; }
    const std::vector<T>& storage() const { return data_; }

    T& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
    T operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

    T& at(std::int64_t r, std::int64_t c) { return data_[static_cast<std::size_t>(r * cols() + c)]; }
    T at(std::int64_t r, std::int64_t c) const { return data_[static_cast<std::size_t>(r * cols() + c)]; }

    T item() const {
        if (data_.size() != 1) throw ContractError("item() on tensor with " + std::to_string(data_.size()) + " elements");
        return data_[0];
    }

    BasicTensor reshaped(Shape shape) const {
        if (shape_numel(shape) != numel()) {
            throw DimensionError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
        }
        return BasicTensor(std::move(shape), data_);
    }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    bool same_shape(const BasicTensor& other) const { return shape_ == other.shape_; }

    friend bool operator==(const BasicTensor& a, const BasicTensor& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

   private:
    Shape shape_;
    std::vector<T> data_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

// Sequential left-to-right sum in double; fixed order keeps results bit-reproducible.
template <typename T>
double sum_sequential(std::span<const T> values) {
    double acc = 0.0;
    for (T v : values) acc += static_cast<double>(v);
    return acc;
}

template <typename T>
double l2_norm(std::span<const T> values) {
    double acc = 0.0;
    for (T v : values) acc += static_cast<double>(v) * static_cast<double>(v);
    return std::sqrt(acc);
}

template <typename T>
bool all_finite(std::span<const T> values) {
    return std::all_of(values.begin(), values.end(), [](T v) { return std::isfinite(v); });
}

}  // namespace rae
