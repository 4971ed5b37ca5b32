#ifndef EXPOTION_MAT_HPP
#define EXPOTION_MAT_HPP

#include <cmath>
#include <cstddef>
#include <vector>

#include "expotion/errors.hpp"

namespace expotion {

// Dense row-major matrix. The one value type all numeric modules share.
template <typename S>
struct Mat {
    int rows = 0;
    int cols = 0;
    std::vector<S> data;

    Mat() = default;
    Mat(int r, int c) : rows(r), cols(c), data(static_cast<size_t>(r) * static_cast<size_t>(c), S(0)) {}

    S* row(int i) { return data.data() + static_cast<size_t>(i) * cols; }
    const S* row(int i) const { return data.data() + static_cast<size_t>(i) * cols; }

    S& operator()(int i, int j) { return data[static_cast<size_t>(i) * cols + j]; }
    S operator()(int i, int j) const { return data[static_cast<size_t>(i) * cols + j]; }

    size_t size() const { return data.size(); }
    bool empty() const { return data.empty(); }

    void set_zero() { std::fill(data.begin(), data.end(), S(0)); }

    bool all_finite() const {
        for (S v : data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }

    template <typename T>
    Mat<T> cast() const {
        Mat<T> out(rows, cols);
        for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<T>(data[i]);
        return out;
    }
};

// Rank-3 tensor, row-major over (d0, d1, d2). Used for windowed context
// stacks (T x C x D) and optical-flow fields (H x W x 2).
template <typename S>
struct Tensor3 {
    int d0 = 0, d1 = 0, d2 = 0;
    std::vector<S> data;

    Tensor3() = default;
    Tensor3(int a, int b, int c)
        : d0(a), d1(b), d2(c), data(static_cast<size_t>(a) * b * c, S(0)) {}

    S& at(int i, int j, int k) {
        return data[(static_cast<size_t>(i) * d1 + j) * d2 + k];
    }
    const S& at(int i, int j, int k) const {
        return data[(static_cast<size_t>(i) * d1 + j) * d2 + k];
    }
    size_t size() const { return data.size(); }
};

template <typename S>
inline void check_same_shape(const Mat<S>& a, const Mat<S>& b, const char* what) {
    if (!a.same_shape(b))
        throw shape_error(std::string(what) + ": shape mismatch " + std::to_string(a.rows) + "x" +
                          std::to_string(a.cols) + " vs " + std::to_string(b.rows) + "x" +
                          std::to_string(b.cols));
}

} // namespace expotion

#endif
