#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace catnet {

/// Storage with 64-byte aligned start, so vectorized reductions see the same
/// alignment (and hence the same summation order) on every run.
template <class S>
using Buffer = std::vector<S, Eigen::aligned_allocator<S>>;

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? " x " : "") << s[i];
    os << ']';
    return os.str();
}

/// Dense row-major array with a runtime shape. Rank 0 is a scalar.
template <class S>
struct Tensor {
    Shape shape;
    Buffer<S> data;

    Tensor() = default;
    explicit Tensor(Shape s, S fill = S(0)) : shape(std::move(s)), data(shape_size(shape), fill) {}
    Tensor(Shape s, Buffer<S> d) : shape(std::move(s)), data(std::move(d)) { check(); }
    Tensor(Shape s, const std::vector<S>& d) : shape(std::move(s)), data(d.begin(), d.end()) { check(); }
    Tensor(Shape s, std::initializer_list<S> d) : shape(std::move(s)), data(d) { check(); }

    static Tensor scalar(S v) { return Tensor(Shape{}, {v}); }

    /// Copy of the values as a plain vector.
    std::vector<S> values() const { return {data.begin(), data.end()}; }

    std::size_t size() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }
    std::size_t dim(std::size_t i) const { return shape.at(i); }
    /// Size of the last axis; 1 for scalars.
    std::size_t last() const { return shape.empty() ? 1 : shape.back(); }
    /// Number of rows when viewed as [size/last x last].
    std::size_t rows() const { return shape.empty() ? 1 : size() / last(); }

    S& operator[](std::size_t i) { return data[i]; }
    const S& operator[](std::size_t i) const { return data[i]; }
    S& at2(std::size_t r, std::size_t c) { return data[r * shape[1] + c]; }
    const S& at2(std::size_t r, std::size_t c) const { return data[r * shape[1] + c]; }

    bool all_finite() const {
        for (S v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }

    void check() const {
        if (data.size() != shape_size(shape))
            throw std::invalid_argument("tensor data size " + std::to_string(data.size()) +
                                        " does not match shape " + shape_str(shape));
    }

    template <class T>
    Tensor<T> cast() const {
        Tensor<T> out(shape);
        for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<T>(data[i]);
        return out;
    }
};

template <class S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S>
using MatMap = Eigen::Map<RowMat<S>>;
template <class S>
using ConstMatMap = Eigen::Map<const RowMat<S>>;

/// View a tensor (or a raw buffer) as a row-major [rows x cols] matrix.
template <class S>
MatMap<S> as_mat(S* p, std::size_t rows, std::size_t cols) {
    return MatMap<S>(p, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}
template <class S>
ConstMatMap<S> as_mat(const S* p, std::size_t rows, std::size_t cols) {
    return ConstMatMap<S>(p, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

}  // namespace catnet
