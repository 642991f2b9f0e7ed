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
#include <utility>
#include <vector>

#include "rrnn/errors.hpp"

namespace rrnn {

using Shape = std::vector<std::size_t>;

inline std::string to_string(const Shape& shape) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ')';
    return os.str();
}

inline std::size_t element_count(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

// Dense row-major array of doubles. A rank-0 tensor (empty shape) is a scalar.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape, double fill = 0.0) : shape_(std::move(shape)) {
        check_extents();
        data_.assign(element_count(shape_), fill);
    }

    Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
        check_extents();
        if (data_.size() != element_count(shape_)) {
            throw shape_error("tensor data length " + std::to_string(data_.size()) +
                              " does not match shape " + rrnn::to_string(shape_));
        }
    }

    static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }

    static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0) {
        return Tensor(Shape{rows, cols}, fill);
    }

    // Row-major nested initializer: Tensor::matrix({{1, 2}, {3, 4}}).
    static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows) {
        const std::size_t r = rows.size();
        const std::size_t c = r ? rows.begin()->size() : 0;
        std::vector<double> data;
        data.reserve(r * c);
        for (const auto& row : rows) {
            if (row.size() != c) throw shape_error("ragged matrix initializer");
            data.insert(data.end(), row.begin(), row.end());
        }
        return Tensor(Shape{r, c}, std::move(data));
    }

    static Tensor vector(std::vector<double> values) {
        const std::size_t n = values.size();
        return Tensor(Shape{n}, std::move(values));
    }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::size_t rows() const { return shape_.empty() ? 1 : shape_[0]; }
    std::size_t cols() const {
        if (shape_.size() < 2) return 1;
        return shape_[1];
    }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }
    std::vector<double>& values() noexcept { return data_; }
    const std::vector<double>& values() const noexcept { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

    double item() const {
        if (data_.size() != 1) throw shape_error("item() on tensor of shape " + rrnn::to_string(shape_));
        return data_[0];
    }

    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

    bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
    }

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    void check_extents() const {
        for (auto e : shape_) {
            if (e == 0) throw shape_error("tensor extents must be positive, got " + rrnn::to_string(shape_));
        }
    }

    Shape shape_;
    std::vector<double> data_;
};

namespace blas {

// C (p x r) += op(A) * op(B), plain loops ordered for contiguous inner access.
inline void gemm_acc(const Tensor& a, bool trans_a, const Tensor& b, bool trans_b, Tensor& c) {
    const std::size_t p = trans_a ? a.cols() : a.rows();
    const std::size_t q = trans_a ? a.rows() : a.cols();
    const std::size_t r = trans_b ? b.rows() : b.cols();
    const double* A = a.data().data();
    const double* B = b.data().data();
    double* C = c.data().data();
    const std::size_t lda = a.cols();
    const std::size_t ldb = b.cols();

    if (!trans_b) {
        for (std::size_t i = 0; i < p; ++i) {
            double* crow = C + i * r;
            for (std::size_t k = 0; k < q; ++k) {
                const double aik = trans_a ? A[k * lda + i] : A[i * lda + k];
                if (aik == 0.0) continue;
                const double* brow = B + k * ldb;
                for (std::size_t j = 0; j < r; ++j) crow[j] += aik * brow[j];
            }
        }
    } else {
        for (std::size_t i = 0; i < p; ++i) {
            double* crow = C + i * r;
            for (std::size_t j = 0; j < r; ++j) {
                const double* brow = B + j * ldb;
                double acc = 0.0;
                if (!trans_a) {
                    const double* arow = A + i * lda;
                    for (std::size_t k = 0; k < q; ++k) acc += arow[k] * brow[k];
                } else {
                    for (std::size_t k = 0; k < q; ++k) acc += A[k * lda + i] * brow[k];
                }
                crow[j] += acc;
            }
        }
    }
}

}  // namespace blas

}  // namespace rrnn
