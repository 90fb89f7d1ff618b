#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "minde/tensor.hpp"

namespace minde {

// Paired samples (x_i, y_i), one row per draw.
struct Dataset {
    Tensor x;
    Tensor y;

    std::size_t size() const { return x.rows(); }
    std::size_t dim_x() const { return x.cols(); }
    std::size_t dim_y() const { return y.cols(); }

    Dataset head(std::size_t n) const {
        Dataset d{Tensor(n, x.cols()), Tensor(n, y.cols())};
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < x.cols(); ++j) d.x(i, j) = x(i, j);
            for (std::size_t j = 0; j < y.cols(); ++j) d.y(i, j) = y(i, j);
        }
        return d;
    }
};

// Per-coordinate affine map fitted on training data and reused verbatim on
// test data.
struct Standardizer {
    std::vector<double> mean_x, std_x, mean_y, std_y;

    void apply(Dataset& d) const {
        transform(d.x, mean_x, std_x);
        transform(d.y, mean_y, std_y);
    }

private:
    static void transform(Tensor& t, const std::vector<double>& mean,
                          const std::vector<double>& sd) {
        for (std::size_t i = 0; i < t.rows(); ++i)
            for (std::size_t j = 0; j < t.cols(); ++j) t(i, j) = (t(i, j) - mean[j]) / sd[j];
    }
};

inline Standardizer fit_standardizer(const Dataset& d) {
    if (d.size() < 2) throw std::invalid_argument("standardize: need at least 2 samples");
    Standardizer s;
    auto fit = [&](const Tensor& t, std::vector<double>& mean, std::vector<double>& sd) {
        mean.assign(t.cols(), 0.0);
        sd.assign(t.cols(), 0.0);
        const double n = static_cast<double>(t.rows());
        for (std::size_t i = 0; i < t.rows(); ++i)
            for (std::size_t j = 0; j < t.cols(); ++j) mean[j] += t(i, j);
        for (double& m : mean) m /= n;
        for (std::size_t i = 0; i < t.rows(); ++i)
            for (std::size_t j = 0; j < t.cols(); ++j) {
                const double c = t(i, j) - mean[j];
                sd[j] += c * c;
            }
        for (double& v : sd) {
            v = std::sqrt(v / n);
            if (v <= 0.0) throw std::runtime_error("standardize: zero-variance coordinate");
        }
    };
    fit(d.x, s.mean_x, s.std_x);
    fit(d.y, s.mean_y, s.std_y);
    return s;
}

}  // namespace minde
