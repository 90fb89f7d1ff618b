#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <memory>
#include <stdexcept>
#include <vector>

#include "minde/score_model.hpp"
#include "minde/sde.hpp"
#include "minde/tensor.hpp"

namespace minde {

// Diffused score of a fixed base measure, evaluated on a batch of points
// with one diffusion time per row. Learned networks and analytic scores both
// implement this, so every estimator runs the same code path.
class ScoreFn {
public:
    virtual ~ScoreFn() = default;
    virtual int dim() const = 0;
    virtual void eval(const Tensor& x, const std::vector<double>& t, Tensor& out) const = 0;
    bool is_analytic = false;
};

// score of N(mean, cov) pushed through the VP kernel: N(k m, k^2 Sigma + v I)
class DiffusedGaussianScore : public ScoreFn {
public:
    DiffusedGaussianScore(const VpSchedule& sched, Eigen::VectorXd mean, Eigen::MatrixXd cov)
        : sched_(sched), mean_(std::move(mean)), cov_(std::move(cov)) {
        if (cov_.rows() != cov_.cols() || cov_.rows() != mean_.size())
            throw std::invalid_argument("gaussian score: shape mismatch");
        is_analytic = true;
    }

    int dim() const override { return static_cast<int>(mean_.size()); }

    void eval(const Tensor& x, const std::vector<double>& t, Tensor& out) const override {
        const int d = dim();
        Eigen::VectorXd r(d);
        for (std::size_t i = 0; i < x.rows(); ++i) {
            const DiffusionKernel kv = sched_.kernel(t[i]);
            const Eigen::MatrixXd m =
                kv.k * kv.k * cov_ + kv.v * Eigen::MatrixXd::Identity(d, d);
            for (int j = 0; j < d; ++j) r(j) = x(i, j) - kv.k * mean_(j);
            const Eigen::VectorXd s = -m.llt().solve(r);
            for (int j = 0; j < d; ++j) out(i, j) = s(j);
        }
    }

private:
    VpSchedule sched_;
    Eigen::VectorXd mean_;
    Eigen::MatrixXd cov_;
};

// score of the diffused N(0, sigma^2 I) reference: -x / chi_t
class GaussianReferenceScore : public ScoreFn {
public:
    GaussianReferenceScore(const VpSchedule& sched, int dim, double sigma)
        : sched_(sched), dim_(dim), sigma_(sigma) {
        is_analytic = true;
    }

    int dim() const override { return dim_; }

    void eval(const Tensor& x, const std::vector<double>& t, Tensor& out) const override {
        for (std::size_t i = 0; i < x.rows(); ++i) {
            const double c = sched_.chi(t[i], sigma_);
            for (int j = 0; j < dim_; ++j) out(i, j) = -x(i, j) / c;
        }
    }

private:
    VpSchedule sched_;
    int dim_;
    double sigma_;
};

inline void require_orthogonal(const Eigen::MatrixXd& q, double tol = 1e-9) {
    const Eigen::MatrixXd r = q.transpose() * q - Eigen::MatrixXd::Identity(q.rows(), q.cols());
    if (r.cwiseAbs().maxCoeff() > tol)
        throw std::invalid_argument("matrix is not orthogonal");
}

inline Eigen::MatrixXd random_orthogonal(int dim, Rng& rng) {
    Eigen::MatrixXd g(dim, dim);
    for (int i = 0; i < dim; ++i)
        for (int j = 0; j < dim; ++j) g(i, j) = rng.normal();
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
    Eigen::MatrixXd q = qr.householderQ();
    // fix signs so Q is a deterministic function of g
    const Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
    for (int j = 0; j < dim; ++j)
        if (r(j, j) < 0) q.col(j) = -q.col(j);
    return q;
}

// score of the pushforward by an orthogonal map: s_Q(x) = Q s(Q^T x).
// Rotation commutes with the isotropic VP kernel, so this holds at every t.
class RotatedScore : public ScoreFn {
public:
    RotatedScore(std::shared_ptr<const ScoreFn> base, Eigen::MatrixXd q)
        : base_(std::move(base)), q_(std::move(q)) {
        require_orthogonal(q_);
        if (q_.rows() != base_->dim()) throw std::invalid_argument("rotated score: dim mismatch");
        is_analytic = base_->is_analytic;
    }

    int dim() const override { return base_->dim(); }

    void eval(const Tensor& x, const std::vector<double>& t, Tensor& out) const override {
        const int d = dim();
        Tensor back(x.rows(), d);
        for (std::size_t i = 0; i < x.rows(); ++i)
            for (int j = 0; j < d; ++j) {
                double acc = 0.0;
                for (int l = 0; l < d; ++l) acc += q_(l, j) * x(i, l);  // Q^T x
                back(i, j) = acc;
            }
        Tensor s(x.rows(), d);
        base_->eval(back, t, s);
        for (std::size_t i = 0; i < x.rows(); ++i)
            for (int j = 0; j < d; ++j) {
                double acc = 0.0;
                for (int l = 0; l < d; ++l) acc += q_(j, l) * s(i, l);  // Q s
                out(i, j) = acc;
            }
    }

private:
    std::shared_ptr<const ScoreFn> base_;
    Eigen::MatrixXd q_;
};

// learned single-measure score (fixes the flavor-specific flag and context)
class LearnedMarginalScore : public ScoreFn {
public:
    explicit LearnedMarginalScore(const ScoreNet& net) : net_(&net) {
        if (net.flavor() != ScoreFlavor::conditional)
            throw std::invalid_argument("marginal score adapter needs a conditional net");
    }

    int dim() const override { return net_->arch().dim_x; }

    void eval(const Tensor& x, const std::vector<double>& t, Tensor& out) const override {
        const Tensor zeros(x.rows(), net_->arch().dim_y);
        out = net_->predict_score(x, zeros, t, flag::marginal);
    }

private:
    const ScoreNet* net_;
};

// ---------------------------------------------------------------------------
// oracles for the MI estimators
// ---------------------------------------------------------------------------

// marginal score of A plus conditional score of A given a per-row context y0
class CondScoreOracle {
public:
    virtual ~CondScoreOracle() = default;
    virtual int dim_x() const = 0;
    virtual int dim_y() const = 0;
    virtual void marginal(const Tensor& xt, const std::vector<double>& t, Tensor& out) const = 0;
    virtual void conditional(const Tensor& xt, const Tensor& y0, const std::vector<double>& t,
                             Tensor& out) const = 0;
    bool is_analytic = false;
};

// joint score over [x, y] plus both one-sided conditional scores
class JointScoreOracle {
public:
    virtual ~JointScoreOracle() = default;
    virtual int dim_x() const = 0;
    virtual int dim_y() const = 0;
    virtual void joint(const Tensor& xt, const Tensor& yt, const std::vector<double>& t,
                       Tensor& out) const = 0;
    virtual void cond_x(const Tensor& xt, const Tensor& y0, const std::vector<double>& t,
                        Tensor& out) const = 0;
    virtual void cond_y(const Tensor& x0, const Tensor& yt, const std::vector<double>& t,
                        Tensor& out) const = 0;
    bool is_analytic = false;
};

namespace detail {

// conditional N(mu(y0), cov_c) of a joint Gaussian, diffused; one solve per row
class GaussianConditionalBlock {
public:
    GaussianConditionalBlock() = default;

    GaussianConditionalBlock(const VpSchedule& sched, const Eigen::VectorXd& mean,
                             const Eigen::MatrixXd& cov, int dx, int dy, bool x_given_y)
        : sched_(sched) {
        const int off_a = x_given_y ? 0 : dx;
        const int off_b = x_given_y ? dx : 0;
        const int da = x_given_y ? dx : dy;
        const int db = x_given_y ? dy : dx;
        const Eigen::MatrixXd saa = cov.block(off_a, off_a, da, da);
        const Eigen::MatrixXd sab = cov.block(off_a, off_b, da, db);
        const Eigen::MatrixXd sbb = cov.block(off_b, off_b, db, db);
        gain_ = sab * sbb.llt().solve(Eigen::MatrixXd::Identity(db, db));
        cond_cov_ = saa - gain_ * sab.transpose();
        mean_a_ = mean.segment(off_a, da);
        mean_b_ = mean.segment(off_b, db);
    }

    // score of the diffused conditional at xt, context row y0
    void eval(const Tensor& xt, const Tensor& y0, const std::vector<double>& t,
              Tensor& out) const {
        const int da = static_cast<int>(cond_cov_.rows());
        const int db = static_cast<int>(mean_b_.size());
        Eigen::VectorXd ctx(db), r(da);
        for (std::size_t i = 0; i < xt.rows(); ++i) {
            const DiffusionKernel kv = sched_.kernel(t[i]);
            for (int j = 0; j < db; ++j) ctx(j) = y0(i, j) - mean_b_(j);
            const Eigen::VectorXd mu = mean_a_ + gain_ * ctx;
            const Eigen::MatrixXd m =
                kv.k * kv.k * cond_cov_ + kv.v * Eigen::MatrixXd::Identity(da, da);
            for (int j = 0; j < da; ++j) r(j) = xt(i, j) - kv.k * mu(j);
            const Eigen::VectorXd s = -m.llt().solve(r);
            for (int j = 0; j < da; ++j) out(i, j) = s(j);
        }
    }

private:
    VpSchedule sched_;
    Eigen::MatrixXd gain_, cond_cov_;
    Eigen::VectorXd mean_a_, mean_b_;
};

}  // namespace detail

// closed-form oracle for a jointly Gaussian (A, B)
class GaussianCondOracle : public CondScoreOracle {
public:
    GaussianCondOracle(const VpSchedule& sched, Eigen::VectorXd mean, Eigen::MatrixXd cov, int dx,
                       int dy)
        : dx_(dx), dy_(dy),
          marginal_(sched, mean.head(dx), cov.topLeftCorner(dx, dx)),
          cond_(sched, mean, cov, dx, dy, /*x_given_y=*/true) {
        is_analytic = true;
    }

    int dim_x() const override { return dx_; }
    int dim_y() const override { return dy_; }

    void marginal(const Tensor& xt, const std::vector<double>& t, Tensor& out) const override {
        marginal_.eval(xt, t, out);
    }

    void conditional(const Tensor& xt, const Tensor& y0, const std::vector<double>& t,
                     Tensor& out) const override {
        cond_.eval(xt, y0, t, out);
    }

private:
    int dx_, dy_;
    DiffusedGaussianScore marginal_;
    detail::GaussianConditionalBlock cond_;
};

class GaussianJointOracle : public JointScoreOracle {
public:
    GaussianJointOracle(const VpSchedule& sched, Eigen::VectorXd mean, Eigen::MatrixXd cov, int dx,
                        int dy)
        : dx_(dx), dy_(dy),
          joint_(sched, mean, cov),
          cond_x_(sched, mean, cov, dx, dy, /*x_given_y=*/true),
          cond_y_(sched, mean, cov, dx, dy, /*x_given_y=*/false) {
        is_analytic = true;
    }

    int dim_x() const override { return dx_; }
    int dim_y() const override { return dy_; }

    void joint(const Tensor& xt, const Tensor& yt, const std::vector<double>& t,
               Tensor& out) const override {
        Tensor z(xt.rows(), dx_ + dy_);
        for (std::size_t i = 0; i < xt.rows(); ++i) {
            for (int j = 0; j < dx_; ++j) z(i, j) = xt(i, j);
            for (int j = 0; j < dy_; ++j) z(i, dx_ + j) = yt(i, j);
        }
        joint_.eval(z, t, out);
    }

    void cond_x(const Tensor& xt, const Tensor& y0, const std::vector<double>& t,
                Tensor& out) const override {
        cond_x_.eval(xt, y0, t, out);
    }

    void cond_y(const Tensor& x0, const Tensor& yt, const std::vector<double>& t,
                Tensor& out) const override {
        cond_y_.eval(yt, x0, t, out);
    }

private:
    int dx_, dy_;
    DiffusedGaussianScore joint_;
    detail::GaussianConditionalBlock cond_x_, cond_y_;
};

// adapters over trained networks
class LearnedCondOracle : public CondScoreOracle {
public:
    explicit LearnedCondOracle(const ScoreNet& net) : net_(&net) {
        if (net.flavor() != ScoreFlavor::conditional)
            throw std::invalid_argument("conditional oracle needs a conditional net");
    }

    int dim_x() const override { return net_->arch().dim_x; }
    int dim_y() const override { return net_->arch().dim_y; }

    void marginal(const Tensor& xt, const std::vector<double>& t, Tensor& out) const override {
        const Tensor zeros(xt.rows(), net_->arch().dim_y);
        out = net_->predict_score(xt, zeros, t, flag::marginal);
    }

    void conditional(const Tensor& xt, const Tensor& y0, const std::vector<double>& t,
                     Tensor& out) const override {
        out = net_->predict_score(xt, y0, t, flag::conditional);
    }

private:
    const ScoreNet* net_;
};

class LearnedJointOracle : public JointScoreOracle {
public:
    explicit LearnedJointOracle(const ScoreNet& net) : net_(&net) {
        if (net.flavor() != ScoreFlavor::joint)
            throw std::invalid_argument("joint oracle needs a joint net");
    }

    int dim_x() const override { return net_->arch().dim_x; }
    int dim_y() const override { return net_->arch().dim_y; }

    void joint(const Tensor& xt, const Tensor& yt, const std::vector<double>& t,
               Tensor& out) const override {
        out = net_->predict_score(xt, yt, t, flag::joint_both);
    }

    // the frozen-block part of the network output is discarded
    void cond_x(const Tensor& xt, const Tensor& y0, const std::vector<double>& t,
                Tensor& out) const override {
        const Tensor full = net_->predict_score(xt, y0, t, flag::joint_x);
        out = Tensor(xt.rows(), dim_x());
        for (std::size_t i = 0; i < xt.rows(); ++i)
            for (int j = 0; j < dim_x(); ++j) out(i, j) = full(i, j);
    }

    void cond_y(const Tensor& x0, const Tensor& yt, const std::vector<double>& t,
                Tensor& out) const override {
        const Tensor full = net_->predict_score(x0, yt, t, flag::joint_y);
        out = Tensor(yt.rows(), dim_y());
        for (std::size_t i = 0; i < yt.rows(); ++i)
            for (int j = 0; j < dim_y(); ++j) out(i, j) = full(i, dim_x() + j);
    }

private:
    const ScoreNet* net_;
};

}  // namespace minde
