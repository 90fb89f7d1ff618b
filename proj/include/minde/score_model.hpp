#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "minde/dataset.hpp"
#include "minde/graph.hpp"
#include "minde/nn.hpp"
#include "minde/rng.hpp"
#include "minde/sde.hpp"

namespace minde {

enum class ScoreFlavor : std::uint8_t {
    conditional,  // one variable scored, the other is a (nullable) context
    joint,        // masked joint diffusion over both blocks
};

// Flag values fed to the network alongside the inputs.
// conditional flavor: 0 = marginal (context zeroed), 1 = conditional.
// joint flavor:       0 = both blocks diffused, 1 = x diffused / y clean,
//                     2 = y diffused / x clean. (alpha, beta) = (0, 0) is invalid.
namespace flag {
inline constexpr int marginal = 0;
inline constexpr int conditional = 1;
inline constexpr int joint_both = 0;
inline constexpr int joint_x = 1;
inline constexpr int joint_y = 2;
}  // namespace flag

inline int joint_flag_from_mask(int alpha, int beta) {
    if (alpha == 1 && beta == 1) return flag::joint_both;
    if (alpha == 1 && beta == 0) return flag::joint_x;
    if (alpha == 0 && beta == 1) return flag::joint_y;
    throw std::invalid_argument("joint mask (0,0) is invalid");
}

struct ScoreArch {
    int dim_x = 1;
    int dim_y = 1;
    int width = 64;
    int blocks = 3;
    int time_embed = 64;
};

// sin/cos features of the diffusion time, transformer-style frequencies.
inline Tensor time_features(const std::vector<double>& t, int dim, double horizon) {
    const int half = dim / 2;
    Tensor e(t.size(), dim);
    for (std::size_t i = 0; i < t.size(); ++i) {
        const double pos = 1000.0 * t[i] / horizon;
        double* row = e.row_ptr(i);
        for (int j = 0; j < half; ++j) {
            const double freq = std::exp(-std::log(10000.0) * j / half);
            row[j] = std::sin(pos * freq);
            row[half + j] = std::cos(pos * freq);
        }
    }
    return e;
}

// Residual MLP score network. The raw output is the negated score, so the
// implied noise prediction is eps-hat = sqrt(v_t) * output; regressing
// sqrt(v_t) * output onto the sampled noise keeps the target unit-variance
// across t while the function the network represents stays smooth near t = 0.
// Conditioning (time features plus a learned flag embedding) is added to the
// first block input.
class ScoreNet {
public:
    ScoreNet(ScoreFlavor flavor, ScoreArch arch, const VpSchedule& sched, Rng init_rng)
        : flavor_(flavor), arch_(arch), sched_(sched) {
        const int d_in = arch.dim_x + arch.dim_y;
        const int d_out = output_dim();
        w_in_ = params_.add("w_in", he_uniform(d_in, arch.width, init_rng));
        b_in_ = params_.add("b_in", Tensor(1, arch.width));
        w_time_ = params_.add("w_time", he_uniform(arch.time_embed, arch.width, init_rng));
        b_time_ = params_.add("b_time", Tensor(1, arch.width));
        const int n_flags = flavor == ScoreFlavor::conditional ? 2 : 3;
        for (int f = 0; f < n_flags; ++f)
            flag_embed_.push_back(params_.add("flag_" + std::to_string(f), Tensor(1, arch.width)));
        for (int b = 0; b < arch.blocks; ++b) {
            const std::string tag = "block" + std::to_string(b);
            blk_w1_.push_back(params_.add(tag + "_w1", he_uniform(arch.width, arch.width, init_rng)));
            blk_b1_.push_back(params_.add(tag + "_b1", Tensor(1, arch.width)));
            blk_w2_.push_back(params_.add(tag + "_w2", he_uniform(arch.width, arch.width, init_rng)));
            blk_b2_.push_back(params_.add(tag + "_b2", Tensor(1, arch.width)));
        }
        // zero-initialized head and input bypass: the untrained score
        // prediction is identically 0, and linear score components can be
        // represented exactly
        w_out_ = params_.add("w_out", Tensor(arch.width, d_out));
        b_out_ = params_.add("b_out", Tensor(1, d_out));
        w_skip_ = params_.add("w_skip", Tensor(d_in, d_out));
    }

    ScoreFlavor flavor() const { return flavor_; }
    const ScoreArch& arch() const { return arch_; }
    const VpSchedule& schedule() const { return sched_; }
    ParamSet& params() { return params_; }
    const ParamSet& params() const { return params_; }
    int output_dim() const {
        return flavor_ == ScoreFlavor::conditional ? arch_.dim_x : arch_.dim_x + arch_.dim_y;
    }
    int n_flags() const { return static_cast<int>(flag_embed_.size()); }

    std::uint64_t trained_seed = 0;
    std::uint64_t trained_iterations = 0;

    // Graph-building forward shared by training and inference.
    int build_forward(Graph& g, const std::vector<int>& pid, int input, const std::vector<double>& t,
                      int which_flag) const {
        if (which_flag < 0 || which_flag >= n_flags())
            throw std::invalid_argument("score net: invalid flag");
        int temb = g.constant(time_features(t, arch_.time_embed, sched_.horizon));
        int cond = g.add_rowvec(g.matmul(temb, pid[w_time_]), pid[b_time_]);
        cond = g.add_rowvec(cond, pid[flag_embed_[which_flag]]);
        int h = g.add_rowvec(g.matmul(input, pid[w_in_]), pid[b_in_]);
        h = g.add(h, cond);
        for (int b = 0; b < arch_.blocks; ++b) {
            int u = g.silu(h);
            u = g.add_rowvec(g.matmul(u, pid[blk_w1_[b]]), pid[blk_b1_[b]]);
            u = g.silu(u);
            u = g.add_rowvec(g.matmul(u, pid[blk_w2_[b]]), pid[blk_b2_[b]]);
            h = g.add(h, u);
        }
        const int head = g.add_rowvec(g.matmul(g.silu(h), pid[w_out_]), pid[b_out_]);
        return g.add(head, g.matmul(input, pid[w_skip_]));
    }

    // Inference: raw network output (the negated score) on a batch sharing
    // one flag. For the conditional flavor with the marginal flag the context
    // block is zeroed before entry, whatever the caller passed.
    Tensor predict_raw(const Tensor& x, const Tensor& y, const std::vector<double>& t,
                       int which_flag) const {
        if (x.cols() != static_cast<std::size_t>(arch_.dim_x) ||
            y.cols() != static_cast<std::size_t>(arch_.dim_y) || x.rows() != y.rows() ||
            t.size() != x.rows())
            throw std::invalid_argument("predict: shape mismatch");
        Tensor input(x.rows(), x.cols() + y.cols());
        const bool zero_context =
            flavor_ == ScoreFlavor::conditional && which_flag == flag::marginal;
        for (std::size_t i = 0; i < x.rows(); ++i) {
            double* row = input.row_ptr(i);
            for (std::size_t j = 0; j < x.cols(); ++j) row[j] = x(i, j);
            for (std::size_t j = 0; j < y.cols(); ++j)
                row[x.cols() + j] = zero_context ? 0.0 : y(i, j);
        }
        Graph g;
        std::vector<int> pid(params_.count());
        for (std::size_t i = 0; i < params_.count(); ++i) pid[i] = g.constant(params_.value(i));
        const int out = build_forward(g, pid, g.constant(std::move(input)), t, which_flag);
        Tensor raw = g.value(out);
        raw.require_finite("score net output");
        return raw;
    }

    // Score in the same units as the true conditional score.
    Tensor predict_score(const Tensor& x, const Tensor& y, const std::vector<double>& t,
                         int which_flag) const {
        Tensor s = predict_raw(x, y, t, which_flag);
        for (std::size_t i = 0; i < s.size(); ++i) s[i] = -s[i];
        return s;
    }

    void save(const std::string& path) const;
    static ScoreNet load(const std::string& path);

private:
    ScoreFlavor flavor_;
    ScoreArch arch_;
    VpSchedule sched_;
    ParamSet params_;
    int w_in_, b_in_, w_time_, b_time_, w_out_, b_out_, w_skip_;
    std::vector<int> flag_embed_, blk_w1_, blk_b1_, blk_w2_, blk_b2_;
};

struct TrainConfig {
    double branch_prob = 0.5;  // d: probability of the conditional / both-diffused branch
    int batch_size = 128;
    long iterations = 50000;
    double lr = 1e-3;
    double ema_momentum = 0.999;
    double val_fraction = 0.05;
    long log_every = 1000;
    std::uint64_t seed = 0;
};

struct TrainStats {
    bool diverged = false;
    long steps = 0;
    std::string note;
    std::vector<double> loss_window;  // mean train loss per log_every window
    double final_val_loss = 0.0;      // EMA weights, held-out split
    double raw_val_loss = 0.0;        // raw final weights, same draws
};

namespace detail {

struct LossBatch {
    Tensor input;                 // network input rows
    Tensor target;                // noise target, diffused columns only
    std::vector<double> t;        // per-row diffusion time
    std::vector<double> weight;   // w(t) * g^2 / (2 v), per row
    std::vector<double> sqrt_v;   // maps the raw output to its noise prediction
    int which_flag = 0;
    std::size_t slice_lo = 0;     // output columns the loss applies to
    std::size_t slice_hi = 0;
};

// Assemble one randomized denoising batch for either flavor.
inline LossBatch make_loss_batch(const ScoreNet& net, const Dataset& data,
                                 const std::vector<std::size_t>& idx, const TimeSampler& sampler,
                                 double branch_prob, Rng& rng) {
    const VpSchedule& sched = net.schedule();
    const std::size_t b = idx.size();
    const std::size_t dx = data.dim_x(), dy = data.dim_y();
    LossBatch out;
    out.t.resize(b);
    out.weight.resize(b);
    out.sqrt_v.resize(b);
    out.input = Tensor(b, dx + dy);

    const bool primary = rng.uniform() < branch_prob;
    bool diffuse_x = true, diffuse_y = false;
    if (net.flavor() == ScoreFlavor::conditional) {
        out.which_flag = primary ? flag::conditional : flag::marginal;
        out.slice_lo = 0;
        out.slice_hi = dx;
        out.target = Tensor(b, dx);
    } else {
        if (primary) {
            out.which_flag = flag::joint_both;
            diffuse_y = true;
            out.slice_lo = 0;
            out.slice_hi = dx + dy;
            out.target = Tensor(b, dx + dy);
        } else if (rng.uniform() < 0.5) {
            out.which_flag = flag::joint_x;
            out.slice_lo = 0;
            out.slice_hi = dx;
            out.target = Tensor(b, dx);
        } else {
            out.which_flag = flag::joint_y;
            diffuse_x = false;
            diffuse_y = true;
            out.slice_lo = dx;
            out.slice_hi = dx + dy;
            out.target = Tensor(b, dy);
        }
    }

    const bool zero_context =
        net.flavor() == ScoreFlavor::conditional && out.which_flag == flag::marginal;
    for (std::size_t i = 0; i < b; ++i) {
        const auto draw = sampler.sample(rng);
        const DiffusionKernel kv = sched.kernel(draw.t);
        out.t[i] = draw.t;
        out.weight[i] = draw.weight * sched.g2(draw.t) / (2.0 * kv.v);
        const double sv = std::sqrt(kv.v);
        out.sqrt_v[i] = sv;
        double* row = out.input.row_ptr(i);
        double* trow = out.target.row_ptr(i);
        std::size_t tcol = 0;
        for (std::size_t j = 0; j < dx; ++j) {
            const double x0 = data.x(idx[i], j);
            if (diffuse_x) {
                const double n = rng.normal();
                row[j] = kv.k * x0 + sv * n;
                trow[tcol++] = n;
            } else {
                row[j] = x0;
            }
        }
        for (std::size_t j = 0; j < dy; ++j) {
            const double y0 = data.y(idx[i], j);
            if (diffuse_y) {
                const double n = rng.normal();
                row[dx + j] = kv.k * y0 + sv * n;
                trow[tcol++] = n;
            } else {
                row[dx + j] = zero_context ? 0.0 : y0;
            }
        }
    }
    return out;
}

}  // namespace detail

// One randomized denoising-loss evaluation with gradients. Returns the loss
// node; the caller drives backward + the optimizer.
inline int build_loss(const ScoreNet& net, Graph& g, const std::vector<int>& pid,
                      const detail::LossBatch& batch) {
    const int input = g.constant(batch.input);
    int pred = net.build_forward(g, pid, input, batch.t, batch.which_flag);
    if (batch.slice_lo != 0 || batch.slice_hi != static_cast<std::size_t>(net.output_dim()))
        pred = g.slice_cols(pred, batch.slice_lo, batch.slice_hi);
    pred = g.scale_rows(pred, batch.sqrt_v);  // noise prediction from the raw output
    const int diff = g.sub(pred, g.constant(batch.target));
    const int weighted = g.scale_rows(g.square(diff), batch.weight);
    return g.scale(g.sum_all(weighted), 1.0 / static_cast<double>(batch.input.rows()));
}

// Gradient-free loss for validation / the spec'd loss_step oracles. Uses the
// same randomized branch procedure as training.
inline double score_matching_loss(const ScoreNet& net, const Dataset& data,
                                  const TimeSampler& sampler, double branch_prob,
                                  std::size_t n_draws, Rng rng) {
    std::vector<std::size_t> idx(std::min<std::size_t>(n_draws, 512));
    double acc = 0.0;
    std::size_t done = 0;
    while (done < n_draws) {
        const std::size_t b = std::min(idx.size(), n_draws - done);
        idx.resize(b);
        for (std::size_t i = 0; i < b; ++i) idx[i] = rng.uniform_int(data.size());
        const auto batch = detail::make_loss_batch(net, data, idx, sampler, branch_prob, rng);
        Graph g;
        std::vector<int> pid(net.params().count());
        for (std::size_t i = 0; i < net.params().count(); ++i)
            pid[i] = g.constant(net.params().value(i));
        acc += g.scalar(build_loss(net, g, pid, batch)) * static_cast<double>(b);
        done += b;
    }
    return acc / static_cast<double>(n_draws);
}

// Train in place. Final parameters are the EMA shadow; the raw weights'
// validation loss is reported alongside for monitoring.
inline TrainStats train_score_net(ScoreNet& net, const Dataset& data, const TrainConfig& cfg,
                                  const TimeSampler& sampler, Rng rng) {
    if (cfg.iterations < 0) throw std::invalid_argument("train: negative iteration count");
    if (cfg.branch_prob < 0.0 || cfg.branch_prob > 1.0)
        throw std::invalid_argument("train: branch probability outside [0,1]");
    const std::size_t n_val =
        std::min<std::size_t>(static_cast<std::size_t>(cfg.val_fraction * data.size()),
                              data.size() > 2 ? data.size() - 2 : 0);
    const std::size_t n_train = data.size() - n_val;

    Adam opt(net.params(), AdamConfig{cfg.lr, 0.9, 0.999, 1e-8});
    EmaShadow ema(net.params(), cfg.ema_momentum);
    TrainStats stats;
    Rng batch_rng = rng.split("batches");

    std::vector<std::size_t> idx(cfg.batch_size);
    double window_acc = 0.0;
    long window_n = 0;
    for (long step = 0; step < cfg.iterations; ++step) {
        for (int i = 0; i < cfg.batch_size; ++i) idx[i] = batch_rng.uniform_int(n_train);
        const auto batch =
            detail::make_loss_batch(net, data, idx, sampler, cfg.branch_prob, batch_rng);
        Graph g;
        const std::vector<int> pid = net.params().bind(g);
        const int loss = build_loss(net, g, pid, batch);
        const double loss_val = g.scalar(loss);
        if (!std::isfinite(loss_val)) {
            stats.diverged = true;
            stats.note = "non-finite loss at iteration " + std::to_string(step) +
                         ", t[0]=" + std::to_string(batch.t[0]) +
                         "; returning last-good EMA checkpoint";
            break;
        }
        g.backward(loss);
        opt.step(net.params(), net.params().collect_grads(g, pid));
        ema.update(net.params());
        stats.steps = step + 1;
        window_acc += loss_val;
        ++window_n;
        if (cfg.log_every > 0 && (step + 1) % cfg.log_every == 0) {
            stats.loss_window.push_back(window_acc / window_n);
            window_acc = 0.0;
            window_n = 0;
        }
    }

    // validation with identical draws for raw and EMA weights
    const Dataset val = n_val > 0 ? [&] {
        Dataset v{Tensor(n_val, data.dim_x()), Tensor(n_val, data.dim_y())};
        for (std::size_t i = 0; i < n_val; ++i) {
            for (std::size_t j = 0; j < data.dim_x(); ++j) v.x(i, j) = data.x(n_train + i, j);
            for (std::size_t j = 0; j < data.dim_y(); ++j) v.y(i, j) = data.y(n_train + i, j);
        }
        return v;
    }() : data;
    const std::size_t val_draws = std::min<std::size_t>(val.size(), 2048);
    const Rng val_rng = rng.split("validation");
    stats.raw_val_loss =
        score_matching_loss(net, val, sampler, cfg.branch_prob, val_draws, val_rng);
    ema.write_to(net.params());
    stats.final_val_loss =
        score_matching_loss(net, val, sampler, cfg.branch_prob, val_draws, val_rng);
    net.trained_seed = cfg.seed;
    net.trained_iterations = static_cast<std::uint64_t>(stats.steps);
    return stats;
}

// ---------------------------------------------------------------------------
// checkpoint io: versioned little-endian binary
// ---------------------------------------------------------------------------

namespace detail {

inline void write_u64(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 8);
}

inline std::uint64_t read_u64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

inline void write_f64(std::ostream& os, double d) {
    std::uint64_t v;
    std::memcpy(&v, &d, 8);
    write_u64(os, v);
}

inline double read_f64(std::istream& is) {
    const std::uint64_t v = read_u64(is);
    double d;
    std::memcpy(&d, &v, 8);
    return d;
}

}  // namespace detail

inline void ScoreNet::save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("checkpoint: cannot open " + path);
    os.write("MNDE", 4);
    detail::write_u64(os, 1);  // format version
    detail::write_u64(os, static_cast<std::uint64_t>(flavor_));
    detail::write_u64(os, arch_.dim_x);
    detail::write_u64(os, arch_.dim_y);
    detail::write_u64(os, arch_.width);
    detail::write_u64(os, arch_.blocks);
    detail::write_u64(os, arch_.time_embed);
    detail::write_f64(os, sched_.beta_min);
    detail::write_f64(os, sched_.beta_max);
    detail::write_f64(os, sched_.horizon);
    detail::write_f64(os, sched_.t_eps);
    detail::write_u64(os, trained_seed);
    detail::write_u64(os, trained_iterations);
    detail::write_u64(os, params_.count());
    for (std::size_t p = 0; p < params_.count(); ++p) {
        const Tensor& t = params_.value(p);
        detail::write_u64(os, t.rows());
        detail::write_u64(os, t.cols());
        for (std::size_t i = 0; i < t.size(); ++i) detail::write_f64(os, t[i]);
    }
    if (!os) throw std::runtime_error("checkpoint: write failed for " + path);
}

inline ScoreNet ScoreNet::load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    if (std::memcmp(magic, "MNDE", 4) != 0) throw std::runtime_error("checkpoint: bad magic");
    if (detail::read_u64(is) != 1) throw std::runtime_error("checkpoint: unsupported version");
    const auto flavor = static_cast<ScoreFlavor>(detail::read_u64(is));
    ScoreArch arch;
    arch.dim_x = static_cast<int>(detail::read_u64(is));
    arch.dim_y = static_cast<int>(detail::read_u64(is));
    arch.width = static_cast<int>(detail::read_u64(is));
    arch.blocks = static_cast<int>(detail::read_u64(is));
    arch.time_embed = static_cast<int>(detail::read_u64(is));
    VpSchedule sched;
    sched.beta_min = detail::read_f64(is);
    sched.beta_max = detail::read_f64(is);
    sched.horizon = detail::read_f64(is);
    sched.t_eps = detail::read_f64(is);
    ScoreNet net(flavor, arch, sched, Rng(0));
    net.trained_seed = detail::read_u64(is);
    net.trained_iterations = detail::read_u64(is);
    const std::uint64_t n_params = detail::read_u64(is);
    if (n_params != net.params_.count()) throw std::runtime_error("checkpoint: parameter count mismatch");
    for (std::size_t p = 0; p < n_params; ++p) {
        const std::size_t r = detail::read_u64(is);
        const std::size_t c = detail::read_u64(is);
        Tensor& t = net.params_.value(p);
        if (r != t.rows() || c != t.cols()) throw std::runtime_error("checkpoint: shape mismatch");
        for (std::size_t i = 0; i < t.size(); ++i) t[i] = detail::read_f64(is);
    }
    if (!is) throw std::runtime_error("checkpoint: truncated file " + path);
    return net;
}

}  // namespace minde
