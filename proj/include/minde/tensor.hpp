#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace minde {

// Dense row-major tensor of 64-bit floats. The autodiff graph and the
// networks only ever use rank-2 tensors (rows x cols); rank-1 data is stored
// as a single row.
class Tensor {
public:
    Tensor() = default;

    Tensor(std::size_t rows, std::size_t cols, double fill = 0.0)
        : shape_{rows, cols}, data_(rows * cols, fill) {}

    Tensor(std::vector<std::size_t> shape, std::vector<double> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (numel_from_shape(shape_) != data_.size())
            throw std::invalid_argument("tensor: data length does not match shape");
    }

    static Tensor row(std::vector<double> values) {
        const std::size_t n = values.size();
        return Tensor({1, n}, std::move(values));
    }

    static Tensor zeros_like(const Tensor& t) { return Tensor(t.rows(), t.cols()); }

    std::size_t rows() const { return shape_.empty() ? 0 : shape_[0]; }
    std::size_t cols() const { return shape_.size() < 2 ? (shape_.empty() ? 0 : 1) : shape_[1]; }
    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t size() const { return data_.size(); }
    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    double* row_ptr(std::size_t r) { return data_.data() + r * cols(); }
    const double* row_ptr(std::size_t r) const { return data_.data() + r * cols(); }

    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

    bool all_finite() const {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    void require_finite(const std::string& where) const {
        if (!all_finite())
            throw std::runtime_error("non-finite value in " + where);
    }

private:
    static std::size_t numel_from_shape(const std::vector<std::size_t>& s) {
        return std::accumulate(s.begin(), s.end(), std::size_t{1},
                               [](std::size_t a, std::size_t b) { return a * b; });
    }

    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

// C += A * B, all row-major. saxpy-ordered inner loops so B and C rows stream.
inline void matmul_accum(const Tensor& a, const Tensor& b, Tensor& c) {
    const std::size_t r = a.rows(), k = a.cols(), n = b.cols();
    for (std::size_t i = 0; i < r; ++i) {
        const double* arow = a.row_ptr(i);
        double* crow = c.row_ptr(i);
        for (std::size_t l = 0; l < k; ++l) {
            const double av = arow[l];
            const double* brow = b.row_ptr(l);
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.rows())
        throw std::invalid_argument("matmul: inner dimensions disagree");
    Tensor c(a.rows(), b.cols());
    matmul_accum(a, b, c);
    return c;
}

// dA += dC * B^T  (dot products over contiguous rows)
inline void matmul_bt_accum(const Tensor& dc, const Tensor& b, Tensor& da) {
    const std::size_t r = dc.rows(), n = dc.cols(), k = b.rows();
    for (std::size_t i = 0; i < r; ++i) {
        const double* drow = dc.row_ptr(i);
        double* arow = da.row_ptr(i);
        for (std::size_t l = 0; l < k; ++l) {
            const double* brow = b.row_ptr(l);
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) acc += drow[j] * brow[j];
            arow[l] += acc;
        }
    }
}

// dB += A^T * dC
inline void matmul_at_accum(const Tensor& a, const Tensor& dc, Tensor& db) {
    const std::size_t r = a.rows(), k = a.cols(), n = dc.cols();
    for (std::size_t i = 0; i < r; ++i) {
        const double* arow = a.row_ptr(i);
        const double* drow = dc.row_ptr(i);
        for (std::size_t l = 0; l < k; ++l) {
            const double av = arow[l];
            double* brow = db.row_ptr(l);
            for (std::size_t j = 0; j < n; ++j) brow[j] += av * drow[j];
        }
    }
}

}  // namespace minde
