// Copyright 2026 The oodcert Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "oodcert/error.hpp"

namespace oodcert {

using Shape = std::vector<std::size_t>;

/// Over-aligned storage: Eigen kernels split work by pointer alignment, so a
/// fixed alignment keeps results bit-identical between calls.
template<class T>
using AlignedVector = std::vector<T, Eigen::aligned_allocator<T>>;

inline std::size_t shape_size(const Shape& s)
{
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s)
{
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ']';
    return os.str();
}

//---------------------------------------------------------------------------//
/*!
 * Dense row-major tensor.
 *
 * A rank-0 tensor (empty shape) holds one scalar.
 */
template<class T>
class Tensor {
  public:
    using value_type = T;

    Tensor() : data_(1, T{0}) {}

    explicit Tensor(Shape shape, T fill = T{0})
        : shape_(std::move(shape)), data_(shape_size(shape_), fill)
    {
    }

    Tensor(Shape shape, std::initializer_list<T> data) : Tensor(std::move(shape), AlignedVector<T>(data)) {}

    Tensor(Shape shape, const std::vector<T>& data) : Tensor(std::move(shape), AlignedVector<T>(data.begin(), data.end()))
    {
    }

    Tensor(Shape shape, AlignedVector<T> data) : shape_(std::move(shape)), data_(std::move(data))
    {
        if (shape_size(shape_) != data_.size()) {
            throw ShapeError("tensor data length " + std::to_string(data_.size())
                             + " does not match shape " + shape_str(shape_));
        }
    }

    static Tensor scalar(T v) { return Tensor(Shape{}, AlignedVector<T>{v}); }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }

    std::span<T> data() { return data_; }
    std::span<const T> data() const { return data_; }
    T* ptr() { return data_.data(); }
    const T* ptr() const { return data_.data(); }
    std::vector<T> vec() const { return {data_.begin(), data_.end()}; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    T item() const
    {
        if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape_));
        return data_[0];
    }

    [[nodiscard]] Tensor reshaped(Shape s) const
    {
        if (shape_size(s) != data_.size()) {
            throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(s));
        }
        return Tensor(std::move(s), data_);
    }

    template<class U>
    [[nodiscard]] Tensor<U> cast() const
    {
        AlignedVector<U> out(data_.begin(), data_.end());
        return Tensor<U>(shape_, std::move(out));
    }

    /// Slice along the leading axis: rows [begin, end).
    [[nodiscard]] Tensor rows(std::size_t begin, std::size_t end) const
    {
        if (rank() == 0 || end > shape_[0] || begin > end) throw ShapeError("row slice out of range");
        std::size_t stride = data_.size() / shape_[0];
        Shape s = shape_;
        s[0] = end - begin;
        return Tensor(s, AlignedVector<T>(data_.begin() + begin * stride, data_.begin() + end * stride));
    }

    /// One element of the leading axis with that axis removed.
    [[nodiscard]] Tensor row(std::size_t i) const
    {
        Tensor r = rows(i, i + 1);
        Shape s(shape_.begin() + 1, shape_.end());
        return r.reshaped(s);
    }

    bool all_finite() const
    {
        return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
    }

    friend bool operator==(const Tensor& a, const Tensor& b)
    {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

  private:
    Shape shape_;
    AlignedVector<T> data_;
};

/// Stack equally shaped tensors along a new leading axis.
template<class T>
Tensor<T> stack(std::span<const Tensor<T>> items)
{
    if (items.empty()) throw ShapeError("stack of zero tensors");
    Shape s = items[0].shape();
    AlignedVector<T> data;
    data.reserve(items.size() * items[0].size());
    for (const auto& t : items) {
        if (t.shape() != s) throw ShapeError("stack: shape mismatch");
        data.insert(data.end(), t.data().begin(), t.data().end());
    }
    s.insert(s.begin(), items.size());
    return Tensor<T>(s, std::move(data));
}

/// Concatenate along axis 0 (the channel axis of a single field).
template<class T>
Tensor<T> concat0(const Tensor<T>& a, const Tensor<T>& b)
{
    if (a.rank() == 0 || a.rank() != b.rank()
        || !std::equal(a.shape().begin() + 1, a.shape().end(), b.shape().begin() + 1)) {
        throw ShapeError("concat0: incompatible shapes " + shape_str(a.shape()) + " and "
                         + shape_str(b.shape()));
    }
    Shape s = a.shape();
    s[0] += b.shape()[0];
    AlignedVector<T> data(a.data().begin(), a.data().end());
    data.insert(data.end(), b.data().begin(), b.data().end());
    return Tensor<T>(s, std::move(data));
}

template<class T>
T max_abs(const Tensor<T>& t)
{
    T m{0};
    for (T v : t.data()) m = std::max(m, std::abs(v));
    return m;
}

template<class T>
T dot(const Tensor<T>& a, const Tensor<T>& b)
{
    if (a.size() != b.size()) throw ShapeError("dot: size mismatch");
    return std::inner_product(a.data().begin(), a.data().end(), b.data().begin(), T{0});
}

template<class T>
T squared_norm(const Tensor<T>& t)
{
    return dot(t, t);
}

}  // namespace oodcert
