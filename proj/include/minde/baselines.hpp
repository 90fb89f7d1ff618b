#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "minde/dataset.hpp"
#include "minde/estimators.hpp"
#include "minde/graph.hpp"
#include "minde/nn.hpp"
#include "minde/rng.hpp"
#include "minde/tasks.hpp"

namespace minde {

enum class BaselineVariant { mine, dv, nwj, infonce, ksg };

inline std::string baseline_name(BaselineVariant v) {
    switch (v) {
        case BaselineVariant::mine: return "mine";
        case BaselineVariant::dv: return "dv";
        case BaselineVariant::nwj: return "nwj";
        case BaselineVariant::infonce: return "infonce";
        case BaselineVariant::ksg: return "ksg";
    }
    return "?";
}

// 3-layer ReLU MLP on the concatenated pair, scalar output
class Critic {
public:
    Critic(int dim_x, int dim_y, int width, Rng init_rng) : dx_(dim_x), dy_(dim_y) {
        const int d_in = dim_x + dim_y;
        w_.push_back(params_.add("w0", he_uniform(d_in, width, init_rng)));
        b_.push_back(params_.add("b0", Tensor(1, width)));
        w_.push_back(params_.add("w1", he_uniform(width, width, init_rng)));
        b_.push_back(params_.add("b1", Tensor(1, width)));
        w_.push_back(params_.add("w2", he_uniform(width, 1, init_rng)));
        b_.push_back(params_.add("b2", Tensor(1, 1)));
    }

    int dim_x() const { return dx_; }
    int dim_y() const { return dy_; }
    ParamSet& params() { return params_; }
    const ParamSet& params() const { return params_; }

    int build_forward(Graph& g, const std::vector<int>& pid, int input) const {
        int h = g.add_rowvec(g.matmul(input, pid[w_[0]]), pid[b_[0]]);
        h = g.relu(h);
        h = g.add_rowvec(g.matmul(h, pid[w_[1]]), pid[b_[1]]);
        h = g.relu(h);
        return g.add_rowvec(g.matmul(h, pid[w_[2]]), pid[b_[2]]);
    }

    // scores for rows [x_i, y_i]
    std::vector<double> score_pairs(const Tensor& x, const Tensor& y) const {
        Tensor input(x.rows(), x.cols() + y.cols());
        for (std::size_t i = 0; i < x.rows(); ++i) {
            double* row = input.row_ptr(i);
            for (std::size_t j = 0; j < x.cols(); ++j) row[j] = x(i, j);
            for (std::size_t j = 0; j < y.cols(); ++j) row[x.cols() + j] = y(i, j);
        }
        Graph g;
        std::vector<int> pid(params_.count());
        for (std::size_t i = 0; i < params_.count(); ++i) pid[i] = g.constant(params_.value(i));
        const Tensor& out = g.value(build_forward(g, pid, g.constant(std::move(input))));
        out.require_finite("critic output");
        std::vector<double> f(out.size());
        for (std::size_t i = 0; i < f.size(); ++i) f[i] = out[i];
        return f;
    }

private:
    int dx_, dy_;
    ParamSet params_;
    std::vector<int> w_, b_;
};

struct CriticConfig {
    int width = 64;
    int batch_size = 128;
    int batch_size_infonce = 64;
    long max_iterations = 10000;
    long eval_every = 250;
    int patience = 20;  // evaluations without improvement before stopping
    double lr = 1e-3;
    double val_fraction = 0.1;
    double mine_ema_rate = 0.99;
};

namespace detail {

inline double logmeanexp(const std::vector<double>& f) {
    const double m = *std::max_element(f.begin(), f.end());
    double acc = 0.0;
    for (double v : f) acc += std::exp(v - m);
    return m + std::log(acc / static_cast<double>(f.size()));
}

// bound value on a sample set, no gradients
inline double bound_value(BaselineVariant variant, const Critic& critic, const Dataset& d,
                          Rng& rng, int infonce_batch) {
    const std::size_t n = d.size();
    if (variant == BaselineVariant::infonce) {
        // mean over batches of the in-batch softmax bound
        double acc = 0.0;
        long batches = 0;
        const std::size_t b = std::min<std::size_t>(infonce_batch, n);
        for (std::size_t ofs = 0; ofs + b <= n; ofs += b) {
            Tensor xx(b * b, d.dim_x()), yy(b * b, d.dim_y());
            for (std::size_t i = 0; i < b; ++i)
                for (std::size_t j = 0; j < b; ++j) {
                    const std::size_t r = i * b + j;
                    for (std::size_t c = 0; c < d.dim_x(); ++c) xx(r, c) = d.x(ofs + i, c);
                    for (std::size_t c = 0; c < d.dim_y(); ++c) yy(r, c) = d.y(ofs + j, c);
                }
            const std::vector<double> s = critic.score_pairs(xx, yy);
            double batch_acc = 0.0;
            for (std::size_t i = 0; i < b; ++i) {
                double m = s[i * b];
                for (std::size_t j = 1; j < b; ++j) m = std::max(m, s[i * b + j]);
                double lse = 0.0;
                for (std::size_t j = 0; j < b; ++j) lse += std::exp(s[i * b + j] - m);
                lse = m + std::log(lse);
                batch_acc += s[i * b + i] - lse;
            }
            acc += batch_acc / static_cast<double>(b) + std::log(static_cast<double>(b));
            ++batches;
        }
        return batches ? acc / batches : 0.0;
    }

    // paired scores and within-set shuffled scores
    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.uniform_int(i)]);
    Tensor ys(n, d.dim_y());
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d.dim_y(); ++j) ys(i, j) = d.y(perm[i], j);
    const std::vector<double> fp = critic.score_pairs(d.x, d.y);
    const std::vector<double> fq = critic.score_pairs(d.x, ys);
    const double mean_fp =
        std::accumulate(fp.begin(), fp.end(), 0.0) / static_cast<double>(n);
    if (variant == BaselineVariant::nwj) {
        // E_p[f] - E_q[e^(f-1)]
        double acc = 0.0;
        for (double v : fq) acc += std::exp(v - 1.0);
        return mean_fp - acc / static_cast<double>(n);
    }
    // dv and mine report the Donsker-Varadhan value
    return mean_fp - logmeanexp(fq);
}

}  // namespace detail

// Maximize the variant's lower bound with early stopping on a held-out split.
// Marginal samples come from within-batch shuffling of y.
inline Critic train_critic(BaselineVariant variant, const Dataset& data, const CriticConfig& cfg,
                           Rng rng) {
    if (variant == BaselineVariant::ksg)
        throw std::invalid_argument("train_critic: ksg has no critic");
    const std::size_t n_val =
        std::max<std::size_t>(1, static_cast<std::size_t>(cfg.val_fraction * data.size()));
    const std::size_t n_train = data.size() - n_val;
    Dataset val{Tensor(n_val, data.dim_x()), Tensor(n_val, data.dim_y())};
    for (std::size_t i = 0; i < n_val; ++i) {
        for (std::size_t j = 0; j < data.dim_x(); ++j) val.x(i, j) = data.x(n_train + i, j);
        for (std::size_t j = 0; j < data.dim_y(); ++j) val.y(i, j) = data.y(n_train + i, j);
    }

    Critic critic(static_cast<int>(data.dim_x()), static_cast<int>(data.dim_y()), cfg.width,
                  rng.split("init"));
    Adam opt(critic.params(), AdamConfig{cfg.lr, 0.9, 0.999, 1e-8});
    Rng batch_rng = rng.split("batches");
    Rng eval_rng = rng.split("eval");

    const int b =
        variant == BaselineVariant::infonce ? cfg.batch_size_infonce : cfg.batch_size;
    double log_ema = 0.0;
    bool ema_init = false;
    double best = -1e300;
    std::vector<Tensor> best_params;
    int strikes = 0;

    for (long step = 0; step < cfg.max_iterations; ++step) {
        Graph g;
        const std::vector<int> pid = critic.params().bind(g);
        int loss;
        if (variant == BaselineVariant::infonce) {
            Tensor input(static_cast<std::size_t>(b) * b, data.dim_x() + data.dim_y());
            std::vector<std::size_t> idx(b);
            for (int i = 0; i < b; ++i) idx[i] = batch_rng.uniform_int(n_train);
            for (int i = 0; i < b; ++i)
                for (int j = 0; j < b; ++j) {
                    double* row = input.row_ptr(static_cast<std::size_t>(i) * b + j);
                    for (std::size_t c = 0; c < data.dim_x(); ++c) row[c] = data.x(idx[i], c);
                    for (std::size_t c = 0; c < data.dim_y(); ++c)
                        row[data.dim_x() + c] = data.y(idx[j], c);
                }
            const int scores = g.reshape(critic.build_forward(g, pid, g.constant(std::move(input))),
                                         b, b);
            const Tensor& sval = g.value(scores);
            std::vector<double> neg_rowmax(b);
            for (int i = 0; i < b; ++i) {
                double m = sval(i, 0);
                for (int j = 1; j < b; ++j) m = std::max(m, sval(i, j));
                neg_rowmax[i] = -m;
            }
            const int diag = g.gather_diag(scores);
            const int shifted = g.shift_rows(scores, neg_rowmax);
            int lse = g.log(g.row_sum(g.exp(shifted)));
            std::vector<double> rowmax(b);
            for (int i = 0; i < b; ++i) rowmax[i] = -neg_rowmax[i];
            lse = g.shift_rows(lse, rowmax);
            const int bound = g.add_scalar(g.mean_all(g.sub(diag, lse)),
                                           std::log(static_cast<double>(b)));
            loss = g.scale(bound, -1.0);
        } else {
            Tensor joint(b, data.dim_x() + data.dim_y());
            Tensor marg(b, data.dim_x() + data.dim_y());
            std::vector<std::size_t> idx(b);
            for (int i = 0; i < b; ++i) idx[i] = batch_rng.uniform_int(n_train);
            std::vector<std::size_t> sh = idx;
            for (std::size_t i = sh.size(); i > 1; --i)
                std::swap(sh[i - 1], sh[batch_rng.uniform_int(i)]);
            for (int i = 0; i < b; ++i) {
                double* jr = joint.row_ptr(i);
                double* mr = marg.row_ptr(i);
                for (std::size_t c = 0; c < data.dim_x(); ++c)
                    jr[c] = mr[c] = data.x(idx[i], c);
                for (std::size_t c = 0; c < data.dim_y(); ++c) {
                    jr[data.dim_x() + c] = data.y(idx[i], c);
                    mr[data.dim_x() + c] = data.y(sh[i], c);
                }
            }
            const int fp = critic.build_forward(g, pid, g.constant(std::move(joint)));
            const int fq = critic.build_forward(g, pid, g.constant(std::move(marg)));
            const int mean_fp = g.mean_all(fp);
            const Tensor& fqv = g.value(fq);
            double m = fqv[0];
            for (std::size_t i = 1; i < fqv.size(); ++i) m = std::max(m, fqv[i]);
            const int e = g.exp(g.add_scalar(fq, -m));  // batch max factored out
            if (variant == BaselineVariant::nwj) {
                const int term = g.scale(g.mean_all(e), std::exp(m - 1.0));
                loss = g.scale(g.sub(mean_fp, term), -1.0);
            } else if (variant == BaselineVariant::dv) {
                const int term = g.add_scalar(g.log(g.mean_all(e)), m);
                loss = g.scale(g.sub(mean_fp, term), -1.0);
            } else {  // mine: gradient of the log term uses an EMA denominator
                double acc = 0.0;
                for (std::size_t i = 0; i < fqv.size(); ++i) acc += std::exp(fqv[i] - m);
                const double log_mean = m + std::log(acc / static_cast<double>(b));
                log_ema = ema_init
                              ? std::log(cfg.mine_ema_rate * std::exp(log_ema - log_mean) +
                                         (1.0 - cfg.mine_ema_rate)) +
                                    log_mean
                              : log_mean;
                ema_init = true;
                const int term = g.scale(g.mean_all(e), std::exp(m - log_ema));
                loss = g.scale(g.sub(mean_fp, term), -1.0);
            }
        }
        const double loss_val = g.scalar(loss);
        if (!std::isfinite(loss_val))
            throw std::runtime_error("critic training diverged at step " + std::to_string(step));
        g.backward(loss);
        opt.step(critic.params(), critic.params().collect_grads(g, pid));

        if ((step + 1) % cfg.eval_every == 0) {
            const double v =
                detail::bound_value(variant, critic, val, eval_rng, cfg.batch_size_infonce);
            if (v > best + 1e-6) {
                best = v;
                best_params.clear();
                for (std::size_t i = 0; i < critic.params().count(); ++i)
                    best_params.push_back(critic.params().value(i));
                strikes = 0;
            } else if (++strikes >= cfg.patience) {
                break;
            }
        }
    }
    if (!best_params.empty())
        for (std::size_t i = 0; i < best_params.size(); ++i)
            critic.params().value(i) = best_params[i];
    return critic;
}

// Kraskov estimator (algorithm 1), Chebyshev metric, brute-force neighbors
inline double ksg_mi(const Dataset& d, int k) {
    const std::size_t n = d.size();
    if (k < 1 || n <= static_cast<std::size_t>(k))
        throw std::invalid_argument("ksg: need more samples than neighbors");
    std::vector<double> dx(n), dy(n), dj(n);
    double psi_nx = 0.0, psi_ny = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double mx = 0.0, my = 0.0;
            for (std::size_t c = 0; c < d.dim_x(); ++c)
                mx = std::max(mx, std::abs(d.x(i, c) - d.x(j, c)));
            for (std::size_t c = 0; c < d.dim_y(); ++c)
                my = std::max(my, std::abs(d.y(i, c) - d.y(j, c)));
            dx[j] = mx;
            dy[j] = my;
            dj[j] = std::max(mx, my);
        }
        dj[i] = std::numeric_limits<double>::infinity();
        std::vector<double> tmp = dj;
        std::nth_element(tmp.begin(), tmp.begin() + (k - 1), tmp.end());
        const double eps = tmp[k - 1];
        long nx = 0, ny = 0;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            if (dx[j] < eps) ++nx;
            if (dy[j] < eps) ++ny;
        }
        psi_nx += digamma(static_cast<double>(nx + 1));
        psi_ny += digamma(static_cast<double>(ny + 1));
    }
    return digamma(static_cast<double>(k)) + digamma(static_cast<double>(n)) -
           (psi_nx + psi_ny) / static_cast<double>(n);
}

// Bound (or KSG) value on test data, with a 10-fold spread as the standard
// error. Neural variants need a trained critic; ksg needs none.
inline MiEstimate baseline_estimate(BaselineVariant variant, const Critic* critic,
                                    const Dataset& test, Rng rng, int k_neighbors = 10,
                                    int infonce_batch = 256) {
    MiEstimate est;
    est.variant = baseline_name(variant);
    est.n_points = static_cast<long>(test.size());
    est.seed = rng.seed();
    const int n_folds = 10;
    const std::size_t fold = test.size() / n_folds;
    if (variant == BaselineVariant::ksg) {
        if (fold <= static_cast<std::size_t>(k_neighbors))
            throw std::invalid_argument("ksg: sample set too small for the fold spread");
        est.mean = ksg_mi(test, k_neighbors);
        detail::Welford acc;
        for (int f = 0; f < n_folds; ++f) {
            Dataset part{Tensor(fold, test.dim_x()), Tensor(fold, test.dim_y())};
            for (std::size_t i = 0; i < fold; ++i) {
                for (std::size_t j = 0; j < test.dim_x(); ++j)
                    part.x(i, j) = test.x(f * fold + i, j);
                for (std::size_t j = 0; j < test.dim_y(); ++j)
                    part.y(i, j) = test.y(f * fold + i, j);
            }
            acc.add(ksg_mi(part, k_neighbors));
        }
        est.se = acc.stderr_of_mean();
        return est;
    }
    if (critic == nullptr) throw std::invalid_argument("baseline_estimate: critic required");
    Rng full_rng = rng.split("full");
    est.mean = detail::bound_value(variant, *critic, test, full_rng, infonce_batch);
    detail::Welford acc;
    for (int f = 0; f < n_folds; ++f) {
        Dataset part{Tensor(fold, test.dim_x()), Tensor(fold, test.dim_y())};
        for (std::size_t i = 0; i < fold; ++i) {
            for (std::size_t j = 0; j < test.dim_x(); ++j) part.x(i, j) = test.x(f * fold + i, j);
            for (std::size_t j = 0; j < test.dim_y(); ++j) part.y(i, j) = test.y(f * fold + i, j);
        }
        Rng fold_rng = rng.split("fold", f);
        acc.add(detail::bound_value(variant, *critic, part, fold_rng,
                                    std::min<int>(infonce_batch, static_cast<int>(fold))));
    }
    est.se = acc.stderr_of_mean();
    return est;
}

}  // namespace minde
