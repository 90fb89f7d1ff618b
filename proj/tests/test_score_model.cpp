#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>

#include "minde/estimators.hpp"
#include "minde/oracles.hpp"
#include "minde/score_model.hpp"
#include "minde/tasks.hpp"

using namespace minde;

namespace {

const VpSchedule kSched;

Dataset independent_gaussian_pairs(std::size_t n, Rng& rng) {
    Dataset d{Tensor(n, 1), Tensor(n, 1)};
    for (std::size_t i = 0; i < n; ++i) {
        d.x(i, 0) = rng.normal();
        d.y(i, 0) = rng.normal();
    }
    return d;
}

bool params_equal(const ParamSet& a, const ParamSet& b) {
    if (a.count() != b.count()) return false;
    for (std::size_t p = 0; p < a.count(); ++p) {
        if (!a.value(p).same_shape(b.value(p))) return false;
        for (std::size_t i = 0; i < a.value(p).size(); ++i)
            if (a.value(p)[i] != b.value(p)[i]) return false;
    }
    return true;
}

}  // namespace

TEST_CASE("flags: joint mask mapping rejects (0,0)") {
    REQUIRE(joint_flag_from_mask(1, 1) == flag::joint_both);
    REQUIRE(joint_flag_from_mask(1, 0) == flag::joint_x);
    REQUIRE(joint_flag_from_mask(0, 1) == flag::joint_y);
    REQUIRE_THROWS_AS(joint_flag_from_mask(0, 0), std::invalid_argument);
}

TEST_CASE("untrained network predicts the zero score") {
    for (ScoreFlavor f : {ScoreFlavor::conditional, ScoreFlavor::joint}) {
        ScoreNet net(f, ScoreArch{2, 3, 16, 3, 8}, kSched, Rng(1));
        Tensor x(4, 2, 0.7), y(4, 3, -0.2);
        std::vector<double> t(4, 0.3);
        const Tensor s = net.predict_score(x, y, t, 0);
        for (std::size_t i = 0; i < s.size(); ++i) REQUIRE(s[i] == 0.0);
    }
}

TEST_CASE("conditional flavor: marginal flag ignores the context") {
    ScoreNet net(ScoreFlavor::conditional, ScoreArch{1, 1, 16, 3, 8}, kSched, Rng(2));
    // give the net nonzero weights so the check is meaningful
    Rng prng(3);
    for (std::size_t p = 0; p < net.params().count(); ++p)
        for (std::size_t i = 0; i < net.params().value(p).size(); ++i)
            net.params().value(p)[i] += 0.1 * prng.normal();
    Tensor x(3, 1, 0.5), y1(3, 1, 10.0), y2(3, 1, -7.0);
    std::vector<double> t(3, 0.4);
    const Tensor a = net.predict_score(x, y1, t, flag::marginal);
    const Tensor b = net.predict_score(x, y2, t, flag::marginal);
    for (std::size_t i = 0; i < a.size(); ++i) REQUIRE(a[i] == b[i]);
    const Tensor c = net.predict_score(x, y1, t, flag::conditional);
    REQUIRE(std::abs(c(0, 0) - a(0, 0)) > 0.0);

    REQUIRE_THROWS_AS(net.predict_score(x, y1, t, 5), std::invalid_argument);
    Tensor bad(2, 1, 0.0);
    REQUIRE_THROWS_AS(net.predict_score(bad, y1, t, flag::marginal), std::invalid_argument);
}

TEST_CASE("joint oracle adapters discard the frozen-block output") {
    ScoreNet net(ScoreFlavor::joint, ScoreArch{2, 3, 16, 3, 8}, kSched, Rng(4));
    LearnedJointOracle oracle(net);
    Tensor xt(5, 2, 0.1), y0(5, 3, -0.4), x0(5, 2, 0.2), yt(5, 3, 0.3);
    std::vector<double> t(5, 0.25);
    Tensor sx(5, 2), sy(5, 3), sj(5, 5);
    oracle.cond_x(xt, y0, t, sx);
    oracle.cond_y(x0, yt, t, sy);
    oracle.joint(xt, yt, t, sj);
    REQUIRE(sx.cols() == 2);
    REQUIRE(sy.cols() == 3);
    REQUIRE(sj.cols() == 5);

    REQUIRE_THROWS_AS(LearnedCondOracle(net), std::invalid_argument);
}

TEST_CASE("loss: zero-initialized net reproduces the plug-in value") {
    ScoreNet net(ScoreFlavor::conditional, ScoreArch{1, 1, 16, 3, 8}, kSched, Rng(5));
    TimeSampler sampler(kSched, TimeProposal::variance_weighted);
    Rng rng(6);
    Dataset data = independent_gaussian_pairs(256, rng);
    std::vector<std::size_t> idx(64);
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    const auto batch = detail::make_loss_batch(net, data, idx, sampler, 0.5, rng);

    Graph g;
    const std::vector<int> pid = net.params().bind(g);
    const double loss = g.scalar(build_loss(net, g, pid, batch));

    // with output identically zero the loss is mean_i w_i g^2/(2v) |eps_i|^2,
    // which equals mean_i w_i g^2/2 |true conditional score|^2
    double expect = 0.0;
    for (std::size_t i = 0; i < idx.size(); ++i) {
        double n2 = 0.0;
        for (std::size_t j = 0; j < batch.target.cols(); ++j)
            n2 += batch.target(i, j) * batch.target(i, j);
        expect += batch.weight[i] * n2;
    }
    expect /= static_cast<double>(idx.size());
    REQUIRE_THAT(loss, Catch::Matchers::WithinRel(expect, 1e-12));
    REQUIRE(loss >= 0.0);
}

TEST_CASE("loss: a prediction equal to the true conditional score gives zero") {
    ScoreNet net(ScoreFlavor::conditional, ScoreArch{1, 1, 16, 3, 8}, kSched, Rng(7));
    TimeSampler sampler(kSched, TimeProposal::variance_weighted);
    Rng rng(8);
    Dataset data = independent_gaussian_pairs(128, rng);
    std::vector<std::size_t> idx(32);
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    const auto batch = detail::make_loss_batch(net, data, idx, sampler, 0.5, rng);

    // substitute the optimal raw output eps/sqrt(v) through the same weighting
    Graph g;
    Tensor opt_raw = batch.target;
    for (std::size_t i = 0; i < opt_raw.rows(); ++i)
        for (std::size_t j = 0; j < opt_raw.cols(); ++j) opt_raw(i, j) /= batch.sqrt_v[i];
    const int pred = g.scale_rows(g.constant(opt_raw), batch.sqrt_v);
    const int diff = g.sub(pred, g.constant(batch.target));
    const int loss = g.scale(g.sum_all(g.scale_rows(g.square(diff), batch.weight)),
                             1.0 / static_cast<double>(idx.size()));
    REQUIRE_THAT(g.scalar(loss), Catch::Matchers::WithinAbs(0.0, 1e-20));
}

TEST_CASE("gradient check: full score architecture vs finite differences") {
    TimeSampler sampler(kSched, TimeProposal::variance_weighted);
    Rng meta(9);
    for (int instance = 0; instance < 20; ++instance) {
        const ScoreFlavor flavor =
            instance % 2 ? ScoreFlavor::joint : ScoreFlavor::conditional;
        ScoreNet net(flavor, ScoreArch{1, 1, 8, 3, 8}, kSched, Rng(100 + instance));
        // random head weights so every output path carries gradient
        for (std::size_t p = 0; p < net.params().count(); ++p)
            for (std::size_t i = 0; i < net.params().value(p).size(); ++i)
                net.params().value(p)[i] += 0.3 * meta.normal();

        Rng rng(200 + instance);
        Dataset data = independent_gaussian_pairs(32, rng);
        std::vector<std::size_t> idx(8);
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        const auto batch = detail::make_loss_batch(net, data, idx, sampler, 0.5, rng);

        Graph g;
        const std::vector<int> pid = net.params().bind(g);
        const int loss = build_loss(net, g, pid, batch);
        g.backward(loss);

        auto eval = [&](const ParamSet& ps) {
            Graph gg;
            std::vector<int> cid(ps.count());
            for (std::size_t i = 0; i < ps.count(); ++i) cid[i] = gg.constant(ps.value(i));
            return gg.scalar(build_loss(net, gg, cid, batch));
        };

        double worst = 0.0;
        const double step = 1e-5;
        ParamSet& ps = net.params();
        for (std::size_t p = 0; p < ps.count(); ++p) {
            const Tensor& grad = g.grad(pid[p]);
            for (std::size_t i = 0; i < ps.value(p).size(); ++i) {
                const double keep = ps.value(p)[i];
                ps.value(p)[i] = keep + step;
                const double up = eval(ps);
                ps.value(p)[i] = keep - step;
                const double dn = eval(ps);
                ps.value(p)[i] = keep;
                const double fd = (up - dn) / (2.0 * step);
                // the 1e-3 floor keeps near-zero coordinates, where central
                // differences bottom out at float roundoff, on an absolute scale
                const double denom = std::max({std::abs(fd), std::abs(grad[i]), 1e-3});
                worst = std::max(worst, std::abs(fd - grad[i]) / denom);
            }
        }
        INFO("instance " << instance);
        REQUIRE(worst < 1e-5);
    }
}

TEST_CASE("training: zero iterations return the initialization") {
    ScoreNet net(ScoreFlavor::conditional, ScoreArch{1, 1, 16, 3, 8}, kSched, Rng(10));
    const ScoreNet init = net;
    TimeSampler sampler(kSched, TimeProposal::variance_weighted);
    Rng rng(11);
    Dataset data = independent_gaussian_pairs(512, rng);
    TrainConfig cfg;
    cfg.iterations = 0;
    const TrainStats stats = train_score_net(net, data, cfg, sampler, Rng(1));
    REQUIRE(stats.steps == 0);
    REQUIRE(params_equal(net.params(), init.params()));
}

TEST_CASE("training: identical seeds give bitwise-identical parameters") {
    TimeSampler sampler(kSched, TimeProposal::variance_weighted);
    TrainConfig cfg;
    cfg.iterations = 300;
    cfg.batch_size = 32;
    auto run = [&] {
        ScoreNet net(ScoreFlavor::joint, ScoreArch{1, 1, 16, 3, 8}, kSched, Rng(12));
        Rng rng(13);
        Dataset data = independent_gaussian_pairs(2000, rng);
        train_score_net(net, data, cfg, sampler, Rng(14));
        return net;
    };
    const ScoreNet a = run();
    const ScoreNet b = run();
    REQUIRE(params_equal(a.params(), b.params()));
}

TEST_CASE("training: divergence aborts with the last-good checkpoint") {
    ScoreNet net(ScoreFlavor::conditional, ScoreArch{1, 1, 16, 3, 8}, kSched, Rng(15));
    TimeSampler sampler(kSched, TimeProposal::variance_weighted);
    Rng rng(16);
    Dataset data = independent_gaussian_pairs(512, rng);
    data.x(3, 0) = 1e308;  // overflows the forward pass as soon as it is drawn
    TrainConfig cfg;
    cfg.iterations = 200;
    cfg.batch_size = 600;  // batch larger than the training split: always drawn
    cfg.val_fraction = 0.0;
    const TrainStats stats = train_score_net(net, data, cfg, sampler, Rng(17));
    REQUIRE(stats.diverged);
    REQUIRE_FALSE(stats.note.empty());
    REQUIRE(stats.steps < cfg.iterations);
    for (std::size_t p = 0; p < net.params().count(); ++p)
        REQUIRE(net.params().value(p).all_finite());
}

TEST_CASE("checkpoint: round trip preserves everything") {
    ScoreNet net(ScoreFlavor::joint, ScoreArch{2, 1, 16, 3, 8}, kSched, Rng(18));
    Rng prng(19);
    for (std::size_t p = 0; p < net.params().count(); ++p)
        for (std::size_t i = 0; i < net.params().value(p).size(); ++i)
            net.params().value(p)[i] = prng.normal();
    net.trained_seed = 777;
    net.trained_iterations = 12345;
    const std::string path = "ckpt_test.bin";
    net.save(path);
    const ScoreNet back = ScoreNet::load(path);
    REQUIRE(back.flavor() == ScoreFlavor::joint);
    REQUIRE(back.trained_seed == 777);
    REQUIRE(back.trained_iterations == 12345);
    REQUIRE(params_equal(net.params(), back.params()));

    Tensor x(3, 2, 0.4), y(3, 1, -0.6);
    std::vector<double> t(3, 0.5);
    const Tensor sa = net.predict_score(x, y, t, flag::joint_both);
    const Tensor sb = back.predict_score(x, y, t, flag::joint_both);
    for (std::size_t i = 0; i < sa.size(); ++i) REQUIRE(sa[i] == sb[i]);
    std::remove(path.c_str());
}

TEST_CASE("training: 1-d standard gaussian marginal score (20k steps)") {
    TimeSampler sampler(kSched, TimeProposal::variance_weighted);
    Rng drng(1000);
    Dataset data = independent_gaussian_pairs(100000, drng);
    ScoreNet net(ScoreFlavor::conditional, ScoreArch{1, 1, 64, 3, 64}, kSched, Rng(7));
    TrainConfig cfg;
    cfg.iterations = 20000;
    cfg.seed = 1;
    const TrainStats stats = train_score_net(net, data, cfg, sampler, Rng(cfg.seed));

    // learned marginal score at t = 0.01 vs the analytic -x on [-2, 2]
    const int ng = 41;
    Tensor xs(ng, 1), ys(ng, 1);
    std::vector<double> ts(ng, 0.01);
    for (int i = 0; i < ng; ++i) xs(i, 0) = -2.0 + 4.0 * i / (ng - 1);
    const Tensor sc = net.predict_score(xs, ys, ts, flag::marginal);
    double worst = 0.0;
    for (int i = 0; i < ng; ++i) worst = std::max(worst, std::abs(sc(i, 0) + xs(i, 0)));
    INFO("max |score + x| = " << worst);
    REQUIRE(worst < 0.05);

    // running-mean training loss decreases
    REQUIRE(stats.loss_window.back() < stats.loss_window.front());
    // EMA validation loss is no more than 5% worse than the raw weights
    REQUIRE(stats.final_val_loss <= 1.05 * stats.raw_val_loss);
}

TEST_CASE("training: joint flavor on independent pairs (independence oracle)") {
    TimeSampler sampler(kSched, TimeProposal::variance_weighted);
    Rng drng(2000);
    Dataset data = independent_gaussian_pairs(100000, drng);
    ScoreNet net(ScoreFlavor::joint, ScoreArch{1, 1, 64, 3, 64}, kSched, Rng(8));
    TrainConfig cfg;
    cfg.iterations = 20000;
    cfg.seed = 2;
    train_score_net(net, data, cfg, sampler, Rng(cfg.seed));

    // conditional score with mask (1,0) vs the analytic marginal -x/chi(t,1):
    // mean-square discrepancy over t in [0.1, 1]
    Rng rng(21);
    double acc = 0.0;
    const int n = 2000;
    Tensor xt(n, 1), y0(n, 1);
    std::vector<double> ts(n);
    for (int i = 0; i < n; ++i) {
        ts[i] = rng.uniform(0.1, 1.0);
        const DiffusionKernel kv = kSched.kernel(ts[i]);
        xt(i, 0) = kv.k * rng.normal() + std::sqrt(kv.v) * rng.normal();
        y0(i, 0) = rng.normal();
    }
    LearnedJointOracle oracle(net);
    Tensor sc(n, 1);
    oracle.cond_x(xt, y0, ts, sc);
    for (int i = 0; i < n; ++i) {
        const double analytic = -xt(i, 0) / kSched.chi(ts[i], 1.0);
        acc += (sc(i, 0) - analytic) * (sc(i, 0) - analytic);
    }
    acc /= n;
    INFO("mean-square discrepancy " << acc);
    REQUIRE(acc < 0.01);

    // joint 2-d standard gaussian: mask (1,1) score close to -[x, y]
    const int ng = 21;
    Tensor gx(ng, 1), gy(ng, 1);
    std::vector<double> gt(ng, 0.05);
    for (int i = 0; i < ng; ++i) {
        gx(i, 0) = -2.0 + 4.0 * i / (ng - 1);
        gy(i, 0) = 1.0 - 2.0 * i / (ng - 1);
    }
    const Tensor sj = net.predict_score(gx, gy, gt, flag::joint_both);
    double worst = 0.0;
    for (int i = 0; i < ng; ++i) {
        worst = std::max(worst, std::abs(sj(i, 0) + gx(i, 0)));
        worst = std::max(worst, std::abs(sj(i, 1) + gy(i, 0)));
    }
    INFO("max joint score error " << worst);
    REQUIRE(worst < 0.1);
}

TEST_CASE("training: paper hyperparameters are the defaults") {
    // benchmark (dim <= 10) row: d = 0.5, width 64, time embed 64,
    // batch 128, lr 1e-3; EMA momentum 0.999
    const TrainConfig cfg;
    REQUIRE(cfg.branch_prob == 0.5);
    REQUIRE(cfg.batch_size == 128);
    REQUIRE(cfg.lr == 1e-3);
    REQUIRE(cfg.ema_momentum == 0.999);
    const ScoreArch arch;
    REQUIRE(arch.width == 64);
    REQUIRE(arch.time_embed == 64);
    REQUIRE(arch.blocks == 3);
}
