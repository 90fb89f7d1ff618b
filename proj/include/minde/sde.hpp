#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include "minde/rng.hpp"

namespace minde {

struct DiffusionKernel {
    double k;  // mean contraction, k_0 = 1, strictly decreasing
    double v;  // marginal perturbation variance, v = 1 - k^2
};

// Variance-preserving forward SDE
//   dX = -beta(t)/2 X dt + sqrt(beta(t)) dW,   beta(t) = bmin + (t/T)(bmax - bmin)
// with closed-form perturbation kernel X_t | X_0 ~ N(k_t X_0, v_t I).
struct VpSchedule {
    double beta_min = 0.1;
    double beta_max = 20.0;
    double horizon = 1.0;   // T
    double t_eps = 1e-5;    // lower integration cutoff

    double beta(double t) const { return beta_min + (t / horizon) * (beta_max - beta_min); }
    double drift(double t) const { return -0.5 * beta(t); }  // f_t <= 0
    double g2(double t) const { return beta(t); }
    double g(double t) const { return std::sqrt(beta(t)); }

    DiffusionKernel kernel(double t) const {
        if (t < 0.0 || t > horizon) throw std::invalid_argument("kernel: t outside [0, T]");
        const double log_k = -0.25 * t * t * (beta_max - beta_min) / horizon - 0.5 * t * beta_min;
        const double k = std::exp(log_k);
        return {k, 1.0 - k * k};
    }

    // chi_t = k_t^2 sigma^2 + v_t, the diffused variance of N(0, sigma^2 I)
    double chi(double t, double sigma) const {
        const DiffusionKernel kv = kernel(t);
        return kv.k * kv.k * sigma * sigma + kv.v;
    }
};

inline void perturb(const DiffusionKernel& kv, std::span<const double> x0,
                    std::span<const double> noise, std::span<double> out) {
    if (x0.size() != noise.size() || x0.size() != out.size())
        throw std::invalid_argument("perturb: dimension mismatch");
    const double sv = std::sqrt(kv.v);
    for (std::size_t i = 0; i < x0.size(); ++i) out[i] = kv.k * x0[i] + sv * noise[i];
}

// score of the perturbation kernel: -(x_t - k x0) / v
inline void true_conditional_score(const DiffusionKernel& kv, std::span<const double> xt,
                                   std::span<const double> x0, std::span<double> out) {
    if (kv.v <= 0.0) throw std::invalid_argument("true_conditional_score: v_t must be positive");
    if (xt.size() != x0.size() || xt.size() != out.size())
        throw std::invalid_argument("true_conditional_score: dimension mismatch");
    for (std::size_t i = 0; i < xt.size(); ++i) out[i] = -(xt[i] - kv.k * x0[i]) / kv.v;
}

// score of the diffused isotropic Gaussian N(0, sigma^2 I): -x / chi_t
inline void gaussian_reference_score(const VpSchedule& sched, std::span<const double> x, double t,
                                     double sigma, std::span<double> out) {
    const double c = sched.chi(t, sigma);
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = -x[i] / c;
}

// analytic KL(N(0, I) || N(0, chi_T I)) tail of the entropy estimator:
// (N/2) (log chi_T - 1 + 1/chi_T)
inline double tail_correction(const VpSchedule& sched, double sigma, int n_dims) {
    if (n_dims < 1) throw std::invalid_argument("tail_correction: N must be >= 1");
    const double chi_T = sched.chi(sched.horizon, sigma);
    return 0.5 * n_dims * (std::log(chi_T) - 1.0 + 1.0 / chi_T);
}

enum class TimeProposal {
    uniform,            // q = 1/(T - t_eps)
    variance_weighted,  // q proportional to g_t^2 / v_t
};

// Draws t from a tabulated proposal on [t_eps, T] and returns the importance
// weight 1/q(t). The inverse CDF is linearly interpolated, so the realized
// density is piecewise constant on the grid and the weight matches it
// exactly: E_q[w h(t)] = integral of h over [t_eps, T] for any integrable h.
class TimeSampler {
public:
    struct Draw {
        double t;
        double weight;
    };

    explicit TimeSampler(const VpSchedule& sched,
                         TimeProposal proposal = TimeProposal::variance_weighted,
                         std::size_t grid_points = 1000)
        : lo_(sched.t_eps), hi_(sched.horizon), proposal_(proposal) {
        if (!(lo_ > 0.0 && lo_ < hi_)) throw std::invalid_argument("time sampler: bad support");
        grid_.resize(grid_points);
        cdf_.resize(grid_points);
        const double dt = (hi_ - lo_) / static_cast<double>(grid_points - 1);
        std::vector<double> q(grid_points);
        for (std::size_t i = 0; i < grid_points; ++i) {
            grid_[i] = lo_ + dt * static_cast<double>(i);
            q[i] = proposal_ == TimeProposal::uniform
                       ? 1.0
                       : sched.g2(grid_[i]) / sched.kernel(grid_[i]).v;
        }
        cdf_[0] = 0.0;
        for (std::size_t i = 1; i < grid_points; ++i)
            cdf_[i] = cdf_[i - 1] + 0.5 * (q[i - 1] + q[i]) * dt;
        const double z = cdf_.back();
        for (double& c : cdf_) c /= z;
        // piecewise-constant density implied by the linear inverse-CDF interp
        dens_.resize(grid_points - 1);
        for (std::size_t i = 0; i + 1 < grid_points; ++i)
            dens_[i] = (cdf_[i + 1] - cdf_[i]) / dt;
    }

    double support_lo() const { return lo_; }
    double support_hi() const { return hi_; }

    Draw sample(Rng& rng) const {
        const double u = rng.uniform();
        // find segment with cdf_[i] <= u < cdf_[i+1]
        std::size_t lo = 0, hi = cdf_.size() - 1;
        while (lo + 1 < hi) {
            const std::size_t mid = (lo + hi) / 2;
            if (cdf_[mid] <= u)
                lo = mid;
            else
                hi = mid;
        }
        const double span = cdf_[lo + 1] - cdf_[lo];
        const double frac = span > 0.0 ? (u - cdf_[lo]) / span : 0.5;
        const double t = grid_[lo] + frac * (grid_[lo + 1] - grid_[lo]);
        return {t, 1.0 / dens_[lo]};
    }

    double density(double t) const {
        if (t < lo_ || t > hi_) return 0.0;
        const double dt = grid_[1] - grid_[0];
        std::size_t i = static_cast<std::size_t>((t - lo_) / dt);
        if (i >= dens_.size()) i = dens_.size() - 1;
        return dens_[i];
    }

private:
    double lo_, hi_;
    TimeProposal proposal_;
    std::vector<double> grid_;
    std::vector<double> cdf_;
    std::vector<double> dens_;
};

}  // namespace minde
