#pragma once

#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace prostlab {

// Dense row-major (C-order) n-dimensional array. The last axis is
// contiguous; volumes are stored slices-major as (S, H, W).
template <typename T>
class TensorND {
public:
    TensorND() = default;

    explicit TensorND(std::vector<std::size_t> dims, T fill = T{})
        : dims_(std::move(dims)), data_(count(dims_), fill) {}

    TensorND(std::initializer_list<std::size_t> dims, T fill = T{})
        : TensorND(std::vector<std::size_t>(dims), fill) {}

    static std::size_t count(const std::vector<std::size_t>& dims) {
        std::size_t n = 1;
        for (std::size_t d : dims) n *= d;
        return n;
    }

    const std::vector<std::size_t>& dims() const { return dims_; }
    std::size_t dim(std::size_t i) const { return dims_.at(i); }
    std::size_t rank() const { return dims_.size(); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::vector<T>& raw() { return data_; }
    const std::vector<T>& raw() const { return data_; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    T& at3(std::size_t a, std::size_t b, std::size_t c) {
        return data_[(a * dims_[1] + b) * dims_[2] + c];
    }
    const T& at3(std::size_t a, std::size_t b, std::size_t c) const {
        return data_[(a * dims_[1] + b) * dims_[2] + c];
    }
    T& at2(std::size_t a, std::size_t b) { return data_[a * dims_[1] + b]; }
    const T& at2(std::size_t a, std::size_t b) const { return data_[a * dims_[1] + b]; }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    // Reinterpret the same buffer under new extents (element count must match).
    TensorND<T> reshaped(std::vector<std::size_t> new_dims) const {
        if (count(new_dims) != size()) throw std::invalid_argument("reshape: element count mismatch");
        TensorND<T> out;
        out.dims_ = std::move(new_dims);
        out.data_ = data_;
        return out;
    }
    void reshape_inplace(std::vector<std::size_t> new_dims) {
        if (count(new_dims) != size()) throw std::invalid_argument("reshape: element count mismatch");
        dims_ = std::move(new_dims);
    }

    bool same_dims(const TensorND<T>& other) const { return dims_ == other.dims_; }

    static std::string dims_str(const std::vector<std::size_t>& d) {
        std::string s = "(";
        for (std::size_t i = 0; i < d.size(); ++i) {
            if (i) s += ",";
            s += std::to_string(d[i]);
        }
        return s + ")";
    }

private:
    std::vector<std::size_t> dims_;
    std::vector<T> data_;
};

using TensorF = TensorND<float>;
using TensorD = TensorND<double>;
using TensorU8 = TensorND<std::uint8_t>;

}  // namespace prostlab
