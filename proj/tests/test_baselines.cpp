#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "minde/baselines.hpp"
#include "minde/tasks.hpp"

using namespace minde;

namespace {

Dataset paired_gaussian(double rho, std::size_t n, Rng& rng) {
    Dataset d{Tensor(n, 1), Tensor(n, 1)};
    for (std::size_t i = 0; i < n; ++i) {
        const double z1 = rng.normal(), z2 = rng.normal();
        d.x(i, 0) = z1;
        d.y(i, 0) = rho * z1 + std::sqrt(1.0 - rho * rho) * z2;
    }
    return d;
}

}  // namespace

TEST_CASE("ksg: bivariate gaussian rho = 0.8") {
    Rng rng(1);
    const Dataset d = paired_gaussian(0.8, 10000, rng);
    const double want = -0.5 * std::log(1.0 - 0.64);
    const double got = ksg_mi(d, 10);
    INFO("ksg " << got << " want " << want);
    REQUIRE(std::abs(got - want) < 0.05);
}

TEST_CASE("ksg: student 1x1 dof=1 lands on the tabulated 0.2") {
    TaskSpec st;
    st.base = BaseKind::student;
    st.m = st.n = 1;
    st.dof = 1;
    Rng rng(2);
    const Dataset d = sample_task(st, 10000, rng);
    const double got = ksg_mi(d, 10);
    INFO("ksg " << got << " exact gt " << student_correction(1, 1, 1));
    REQUIRE(std::abs(got - student_correction(1, 1, 1)) < 0.05);
}

TEST_CASE("ksg: stable under a strictly monotone per-coordinate map (asinh)") {
    Rng rng(3);
    Dataset d = paired_gaussian(0.6, 4000, rng);
    const double before = ksg_mi(d, 10);
    apply_transform(TransformKind::asinh, d);
    const double after = ksg_mi(d, 10);
    INFO(before << " -> " << after);
    REQUIRE(std::abs(before - after) < 0.02);
}

TEST_CASE("ksg: argument validation") {
    Rng rng(4);
    const Dataset d = paired_gaussian(0.5, 20, rng);
    REQUIRE_THROWS_AS(ksg_mi(d, 0), std::invalid_argument);
    REQUIRE_THROWS_AS(ksg_mi(d, 25), std::invalid_argument);
    REQUIRE_THROWS_AS(train_critic(BaselineVariant::ksg, d, CriticConfig{}, Rng(1)),
                      std::invalid_argument);
    REQUIRE_THROWS_AS(baseline_estimate(BaselineVariant::dv, nullptr, d, Rng(1)),
                      std::invalid_argument);
}

TEST_CASE("infonce: estimate never exceeds log(batch size)") {
    // structural bound of the softmax estimator, whatever the critic
    Rng rng(5);
    const Dataset d = paired_gaussian(0.9999, 512, rng);
    Critic critic(1, 1, 32, Rng(6));
    Rng prng(7);
    for (std::size_t p = 0; p < critic.params().count(); ++p)
        for (std::size_t i = 0; i < critic.params().value(p).size(); ++i)
            critic.params().value(p)[i] += prng.normal();
    for (int b : {4, 16, 64}) {
        Rng erng(8);
        const double v = detail::bound_value(BaselineVariant::infonce, critic, d, erng, b);
        REQUIRE(v <= std::log(static_cast<double>(b)) + 1e-12);
    }
}

TEST_CASE("neural bounds: deterministic per seed, order enters only via pairing") {
    Rng rng(9);
    const Dataset d = paired_gaussian(0.7, 2000, rng);
    Critic critic(1, 1, 32, Rng(10));
    Rng e1(11), e2(11);
    const double a = detail::bound_value(BaselineVariant::dv, critic, d, e1, 64);
    const double b = detail::bound_value(BaselineVariant::dv, critic, d, e2, 64);
    REQUIRE(a == b);
}

TEST_CASE("critic training: all four bounds recover the bivariate gaussian MI") {
    TaskSpec spec;
    spec.base = BaseKind::bivariate_normal;
    spec.rho = solve_bivariate_rho(0.4);
    Rng drng(12);
    Dataset train = sample_task(spec, 50000, drng);
    Dataset test = sample_task(spec, 10000, drng);
    const Standardizer st = fit_standardizer(train);
    st.apply(train);
    st.apply(test);

    CriticConfig cfg;
    cfg.max_iterations = 5000;
    int k = 0;
    for (BaselineVariant v : {BaselineVariant::dv, BaselineVariant::mine, BaselineVariant::nwj,
                              BaselineVariant::infonce}) {
        const Critic critic = train_critic(v, train, cfg, Rng(100 + k));
        const MiEstimate e = baseline_estimate(v, &critic, test, Rng(200 + k));
        ++k;
        INFO(baseline_name(v) << ": " << e.mean << " +- " << e.se << " (GT 0.4)");
        REQUIRE(std::abs(e.mean - 0.4) < 0.1);
        REQUIRE(e.se >= 0.0);
        REQUIRE(e.variant == baseline_name(v));
    }
}

TEST_CASE("critic training: independent data stays near zero") {
    Rng drng(13);
    Dataset train = paired_gaussian(0.0, 50000, drng);
    Dataset test = paired_gaussian(0.0, 10000, drng);

    CriticConfig cfg;
    cfg.max_iterations = 3000;
    for (BaselineVariant v : {BaselineVariant::dv, BaselineVariant::infonce}) {
        const Critic critic = train_critic(v, train, cfg, Rng(300));
        const MiEstimate e = baseline_estimate(v, &critic, test, Rng(301));
        INFO(baseline_name(v) << ": " << e.mean);
        REQUIRE(e.mean <= 0.05);
    }
    // ksg too
    REQUIRE(std::abs(ksg_mi(test, 10)) <= 0.05);
}
