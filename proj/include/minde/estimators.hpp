#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "minde/dataset.hpp"
#include "minde/oracles.hpp"
#include "minde/rng.hpp"
#include "minde/sde.hpp"
#include "minde/tensor.hpp"

namespace minde {

struct McConfig {
    long n_points = 10000;       // sample points per estimation run
    int n_time_per_point = 1;    // time draws per point
    std::size_t chunk = 2048;    // batch size for oracle evaluation
};

enum class MiVariant { cond, cond_sigma, joint, joint_sigma };

inline std::string variant_name(MiVariant v) {
    switch (v) {
        case MiVariant::cond: return "cond";
        case MiVariant::cond_sigma: return "cond_sigma";
        case MiVariant::joint: return "joint";
        case MiVariant::joint_sigma: return "joint_sigma";
    }
    return "?";
}

// one Monte Carlo estimation record, in nats
struct MiEstimate {
    double mean = 0.0;
    double se = 0.0;  // std of the per-draw integrand / sqrt(n)
    long n_points = 0;
    int n_time_per_point = 1;
    std::string variant;
    double sigma = std::numeric_limits<double>::quiet_NaN();
    std::uint64_t seed = 0;
    bool degenerate_flag = false;  // absolute-continuity failure detected
};

namespace detail {

class Welford {
public:
    void add(double x) {
        ++n_;
        const double d = x - mean_;
        mean_ += d / static_cast<double>(n_);
        m2_ += d * (x - mean_);
    }

    long count() const { return n_; }
    double mean() const { return mean_; }
    double stderr_of_mean() const {
        if (n_ < 2) return 0.0;
        return std::sqrt(m2_ / (static_cast<double>(n_ - 1) * static_cast<double>(n_)));
    }

private:
    long n_ = 0;
    double mean_ = 0.0;
    double m2_ = 0.0;
};

inline double sq_norm_row_diff(const Tensor& a, const Tensor& b, std::size_t i) {
    const double* ar = a.row_ptr(i);
    const double* br = b.row_ptr(i);
    double acc = 0.0;
    for (std::size_t j = 0; j < a.cols(); ++j) {
        const double d = ar[j] - br[j];
        acc += d * d;
    }
    return acc;
}

}  // namespace detail

// Monte Carlo estimate of the time-integrated score difference
//   integral over t of g_t^2/2 E[ || sA(X_t) - sB(X_t) ||^2 ]
// with X_0 cycled through `samples`, X_t from the perturbation kernel, and t
// from the importance sampler.
inline MiEstimate kl_divergence(const ScoreFn& score_a, const ScoreFn& score_b,
                                const Tensor& samples, const VpSchedule& sched,
                                const TimeSampler& sampler, const McConfig& cfg, Rng& rng) {
    if (score_a.dim() != score_b.dim())
        throw std::invalid_argument("kl: oracle dimensions disagree");
    if (samples.rows() == 0) throw std::invalid_argument("kl: empty sample set");
    if (samples.cols() != static_cast<std::size_t>(score_a.dim()))
        throw std::invalid_argument("kl: sample dimension mismatch");

    const std::size_t d = samples.cols();
    const long total = cfg.n_points * cfg.n_time_per_point;
    detail::Welford acc;
    std::vector<double> t, factor;
    long produced = 0;
    while (produced < total) {
        const std::size_t b = static_cast<std::size_t>(std::min<long>(cfg.chunk, total - produced));
        Tensor xt(b, d), sa(b, d), sb(b, d);
        t.resize(b);
        factor.resize(b);
        for (std::size_t i = 0; i < b; ++i) {
            const std::size_t row =
                static_cast<std::size_t>((produced + i) / cfg.n_time_per_point) % samples.rows();
            const auto draw = sampler.sample(rng);
            const DiffusionKernel kv = sched.kernel(draw.t);
            const double sv = std::sqrt(kv.v);
            t[i] = draw.t;
            factor[i] = draw.weight * 0.5 * sched.g2(draw.t);
            for (std::size_t j = 0; j < d; ++j)
                xt(i, j) = kv.k * samples(row, j) + sv * rng.normal();
        }
        score_a.eval(xt, t, sa);
        score_b.eval(xt, t, sb);
        for (std::size_t i = 0; i < b; ++i) acc.add(factor[i] * detail::sq_norm_row_diff(sa, sb, i));
        produced += static_cast<long>(b);
    }

    MiEstimate est;
    est.mean = acc.mean();
    est.se = acc.stderr_of_mean();
    est.n_points = cfg.n_points;
    est.n_time_per_point = cfg.n_time_per_point;
    est.variant = "kl";
    est.seed = rng.seed();
    return est;
}

// Entropy of the measure behind `score_a`, in nats:
//   N/2 log(2 pi sigma^2) + E||X0||^2 / (2 sigma^2)
//   - e(mu, N_sigma) - N/2 (log chi_T - 1 + 1/chi_T)
inline MiEstimate entropy(const ScoreFn& score_a, const Tensor& samples, double sigma,
                          const VpSchedule& sched, const TimeSampler& sampler, const McConfig& cfg,
                          Rng& rng) {
    if (sigma <= 0.0) throw std::invalid_argument("entropy: sigma must be positive");
    const int n_dims = score_a.dim();
    const GaussianReferenceScore ref(sched, n_dims, sigma);
    MiEstimate e_term = kl_divergence(score_a, ref, samples, sched, sampler, cfg, rng);

    detail::Welford second_moment;
    for (std::size_t i = 0; i < samples.rows(); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < samples.cols(); ++j) s += samples(i, j) * samples(i, j);
        second_moment.add(s / (2.0 * sigma * sigma));
    }

    MiEstimate est;
    est.mean = 0.5 * n_dims * std::log(2.0 * M_PI * sigma * sigma) + second_moment.mean() -
               e_term.mean - tail_correction(sched, sigma, n_dims);
    est.se = std::sqrt(e_term.se * e_term.se +
                       second_moment.stderr_of_mean() * second_moment.stderr_of_mean());
    est.n_points = cfg.n_points;
    est.n_time_per_point = cfg.n_time_per_point;
    est.variant = "entropy";
    est.sigma = sigma;
    est.seed = rng.seed();
    return est;
}

namespace detail {

inline bool looks_self_paired(const Dataset& test) {
    if (test.dim_x() != test.dim_y()) return false;
    const std::size_t n = std::min<std::size_t>(test.size(), 256);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < test.dim_x(); ++j)
            if (std::abs(test.x(i, j) - test.y(i, j)) > 1e-12) return false;
    return n > 0;
}

}  // namespace detail

// Conditional-model MI estimators.
//   cond:       w g^2/2 || s(A|y0) - s(A) ||^2               (difference inside)
//   cond_sigma: w g^2/2 ( ||s(A|y0) + x_t/chi||^2
//                        - ||s(A) + x_t/chi||^2 )            (difference of entropies)
inline MiEstimate mi_minde_c(const CondScoreOracle& oracle, const Dataset& test, MiVariant variant,
                             std::optional<double> sigma, const VpSchedule& sched,
                             const TimeSampler& sampler, const McConfig& cfg, Rng& rng) {
    if (variant != MiVariant::cond && variant != MiVariant::cond_sigma)
        throw std::invalid_argument("mi_minde_c: variant must be cond or cond_sigma");
    const bool with_sigma = variant == MiVariant::cond_sigma;
    if (with_sigma && !sigma) throw std::invalid_argument("cond_sigma requires sigma");
    if (!with_sigma && sigma) throw std::invalid_argument("cond does not accept sigma");
    if (test.size() == 0) throw std::invalid_argument("mi_minde_c: empty sample set");
    if (test.dim_x() != static_cast<std::size_t>(oracle.dim_x()) ||
        test.dim_y() != static_cast<std::size_t>(oracle.dim_y()))
        throw std::invalid_argument("mi_minde_c: dimension mismatch");

    const std::size_t dx = test.dim_x(), dy = test.dim_y();
    const long total = cfg.n_points * cfg.n_time_per_point;
    const bool degenerate = detail::looks_self_paired(test);
    detail::Welford acc;
    std::vector<double> t, factor;
    long produced = 0;
    while (produced < total) {
        const std::size_t b = static_cast<std::size_t>(std::min<long>(cfg.chunk, total - produced));
        Tensor xt(b, dx), y0(b, dy), s_cond(b, dx), s_marg(b, dx);
        t.resize(b);
        factor.resize(b);
        std::vector<double> chi(b);
        for (std::size_t i = 0; i < b; ++i) {
            const std::size_t row =
                static_cast<std::size_t>((produced + i) / cfg.n_time_per_point) % test.size();
            const auto draw = sampler.sample(rng);
            const DiffusionKernel kv = sched.kernel(draw.t);
            const double sv = std::sqrt(kv.v);
            t[i] = draw.t;
            factor[i] = draw.weight * 0.5 * sched.g2(draw.t);
            if (with_sigma) chi[i] = sched.chi(draw.t, *sigma);
            for (std::size_t j = 0; j < dx; ++j)
                xt(i, j) = kv.k * test.x(row, j) + sv * rng.normal();
            for (std::size_t j = 0; j < dy; ++j) y0(i, j) = test.y(row, j);
        }
        oracle.conditional(xt, y0, t, s_cond);
        oracle.marginal(xt, t, s_marg);
        for (std::size_t i = 0; i < b; ++i) {
            double val;
            if (!with_sigma) {
                val = detail::sq_norm_row_diff(s_cond, s_marg, i);
            } else {
                double nc = 0.0, nm = 0.0;
                for (std::size_t j = 0; j < dx; ++j) {
                    const double shift = xt(i, j) / chi[i];
                    const double c = s_cond(i, j) + shift;
                    const double m = s_marg(i, j) + shift;
                    nc += c * c;
                    nm += m * m;
                }
                val = nc - nm;
            }
            acc.add(factor[i] * val);
        }
        produced += static_cast<long>(b);
    }

    MiEstimate est;
    est.mean = acc.mean();
    est.se = acc.stderr_of_mean();
    est.n_points = cfg.n_points;
    est.n_time_per_point = cfg.n_time_per_point;
    est.variant = variant_name(variant);
    if (with_sigma) est.sigma = *sigma;
    est.seed = rng.seed();
    est.degenerate_flag = degenerate;
    return est;
}

// Joint-model MI estimators.
//   joint:       w g^2/2 || s(C)([xt,yt]) - [s(A|y0)(xt), s(B|x0)(yt)] ||^2
//   joint_sigma: w g^2/2 ( ||s(A|y0) + xt/chi||^2 + ||s(B|x0) + yt/chi||^2
//                         - ||s(C) + [xt,yt]/chi||^2 )
inline MiEstimate mi_minde_j(const JointScoreOracle& oracle, const Dataset& test, MiVariant variant,
                             std::optional<double> sigma, const VpSchedule& sched,
                             const TimeSampler& sampler, const McConfig& cfg, Rng& rng) {
    if (variant != MiVariant::joint && variant != MiVariant::joint_sigma)
        throw std::invalid_argument("mi_minde_j: variant must be joint or joint_sigma");
    const bool with_sigma = variant == MiVariant::joint_sigma;
    if (with_sigma && !sigma) throw std::invalid_argument("joint_sigma requires sigma");
    if (!with_sigma && sigma) throw std::invalid_argument("joint does not accept sigma");
    if (test.size() == 0) throw std::invalid_argument("mi_minde_j: empty sample set");
    if (test.dim_x() != static_cast<std::size_t>(oracle.dim_x()) ||
        test.dim_y() != static_cast<std::size_t>(oracle.dim_y()))
        throw std::invalid_argument("mi_minde_j: dimension mismatch");

    const std::size_t dx = test.dim_x(), dy = test.dim_y();
    const long total = cfg.n_points * cfg.n_time_per_point;
    const bool degenerate = detail::looks_self_paired(test);
    detail::Welford acc;
    std::vector<double> t, factor, chi;
    long produced = 0;
    while (produced < total) {
        const std::size_t b = static_cast<std::size_t>(std::min<long>(cfg.chunk, total - produced));
        Tensor xt(b, dx), yt(b, dy), x0(b, dx), y0(b, dy);
        Tensor s_joint(b, dx + dy), s_cx(b, dx), s_cy(b, dy);
        t.resize(b);
        factor.resize(b);
        chi.resize(b);
        for (std::size_t i = 0; i < b; ++i) {
            const std::size_t row =
                static_cast<std::size_t>((produced + i) / cfg.n_time_per_point) % test.size();
            const auto draw = sampler.sample(rng);
            const DiffusionKernel kv = sched.kernel(draw.t);
            const double sv = std::sqrt(kv.v);
            t[i] = draw.t;
            factor[i] = draw.weight * 0.5 * sched.g2(draw.t);
            if (with_sigma) chi[i] = sched.chi(draw.t, *sigma);
            for (std::size_t j = 0; j < dx; ++j) {
                x0(i, j) = test.x(row, j);
                xt(i, j) = kv.k * x0(i, j) + sv * rng.normal();
            }
            for (std::size_t j = 0; j < dy; ++j) {
                y0(i, j) = test.y(row, j);
                yt(i, j) = kv.k * y0(i, j) + sv * rng.normal();
            }
        }
        oracle.joint(xt, yt, t, s_joint);
        oracle.cond_x(xt, y0, t, s_cx);
        oracle.cond_y(x0, yt, t, s_cy);
        for (std::size_t i = 0; i < b; ++i) {
            double val = 0.0;
            if (!with_sigma) {
                for (std::size_t j = 0; j < dx; ++j) {
                    const double d = s_joint(i, j) - s_cx(i, j);
                    val += d * d;
                }
                for (std::size_t j = 0; j < dy; ++j) {
                    const double d = s_joint(i, dx + j) - s_cy(i, j);
                    val += d * d;
                }
            } else {
                double nj = 0.0, ncx = 0.0, ncy = 0.0;
                for (std::size_t j = 0; j < dx; ++j) {
                    const double shift = xt(i, j) / chi[i];
                    const double cj = s_joint(i, j) + shift;
                    const double cx = s_cx(i, j) + shift;
                    nj += cj * cj;
                    ncx += cx * cx;
                }
                for (std::size_t j = 0; j < dy; ++j) {
                    const double shift = yt(i, j) / chi[i];
                    const double cj = s_joint(i, dx + j) + shift;
                    const double cy = s_cy(i, j) + shift;
                    nj += cj * cj;
                    ncy += cy * cy;
                }
                val = ncx + ncy - nj;
            }
            acc.add(factor[i] * val);
        }
        produced += static_cast<long>(b);
    }

    MiEstimate est;
    est.mean = acc.mean();
    est.se = acc.stderr_of_mean();
    est.n_points = cfg.n_points;
    est.n_time_per_point = cfg.n_time_per_point;
    est.variant = variant_name(variant);
    if (with_sigma) est.sigma = *sigma;
    est.seed = rng.seed();
    est.degenerate_flag = degenerate;
    return est;
}

struct InvarianceCheck {
    double kl_base;
    double kl_rotated;
    double se_base;
    double se_rotated;
    double discrepancy;
};

// KL invariance under an orthogonal map: estimate KL(A||B) and
// KL(QA||QB) with identical random draws; Q = I reproduces the base
// estimate exactly.
inline InvarianceCheck kl_linear_invariance_check(std::shared_ptr<const ScoreFn> score_a,
                                                  std::shared_ptr<const ScoreFn> score_b,
                                                  const Tensor& samples, const Eigen::MatrixXd& q,
                                                  const VpSchedule& sched,
                                                  const TimeSampler& sampler, const McConfig& cfg,
                                                  const Rng& rng) {
    require_orthogonal(q);
    Rng rng_base = rng.split("kl-invariance");
    Rng rng_rot = rng.split("kl-invariance");
    const MiEstimate base =
        kl_divergence(*score_a, *score_b, samples, sched, sampler, cfg, rng_base);

    const RotatedScore ra(score_a, q);
    const RotatedScore rb(score_b, q);
    Tensor rotated(samples.rows(), samples.cols());
    const int d = static_cast<int>(samples.cols());
    for (std::size_t i = 0; i < samples.rows(); ++i)
        for (int j = 0; j < d; ++j) {
            double acc = 0.0;
            for (int l = 0; l < d; ++l) acc += q(j, l) * samples(i, l);
            rotated(i, j) = acc;
        }
    const MiEstimate rot = kl_divergence(ra, rb, rotated, sched, sampler, cfg, rng_rot);

    return {base.mean, rot.mean, base.se, rot.se, std::abs(rot.mean - base.mean)};
}

}  // namespace minde
