// Minimal dense row-major tensor, templated on scalar type so the same
// kernels run in float for training and double for numerical checks.
#pragma once

#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <vector>

#include "spikebench/common.hpp"

namespace sb {

template <typename T>
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> shape) : shape_(std::move(shape)) {
        data_.assign(numel_of(shape_), T(0));
    }
    Tensor(std::initializer_list<std::size_t> shape) : Tensor(std::vector<std::size_t>(shape)) {}

    static std::size_t numel_of(const std::vector<std::size_t>& s) {
        std::size_t n = 1;
        for (auto d : s) n *= d;
        return s.empty() ? 0 : n;
    }

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_[i]; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::vector<T>& vec() { return data_; }
    const std::vector<T>& vec() const { return data_; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    // 2D / 4D accessors for the shapes the layers use: (rows, cols) and (n, h, w, c)
    T& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
    const T& at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }

    T& at(std::size_t n, std::size_t y, std::size_t x, std::size_t c) {
        return data_[((n * shape_[1] + y) * shape_[2] + x) * shape_[3] + c];
    }
    const T& at(std::size_t n, std::size_t y, std::size_t x, std::size_t c) const {
        return data_[((n * shape_[1] + y) * shape_[2] + x) * shape_[3] + c];
    }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    void reshape(std::vector<std::size_t> shape) {
        if (numel_of(shape) != data_.size()) throw ArgumentError("Tensor::reshape: element count mismatch");
        shape_ = std::move(shape);
    }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out(shape_);
        for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
        return out;
    }

    bool operator==(const Tensor& o) const { return shape_ == o.shape_ && data_ == o.data_; }

private:
    std::vector<std::size_t> shape_;
    std::vector<T> data_;
};

} // namespace sb
