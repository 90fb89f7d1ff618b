#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "minde/rng.hpp"
#include "minde/sde.hpp"

using namespace minde;

namespace {

// Simpson quadrature on [a, b]
double simpson(double a, double b, int n, const std::function<double(double)>& f) {
    if (n % 2) ++n;
    const double h = (b - a) / n;
    double acc = f(a) + f(b);
    for (int i = 1; i < n; ++i) acc += f(a + i * h) * (i % 2 ? 4.0 : 2.0);
    return acc * h / 3.0;
}

}  // namespace

TEST_CASE("kernel: boundary values and closed-form exponent") {
    VpSchedule s;
    const DiffusionKernel k0 = s.kernel(0.0);
    REQUIRE(k0.k == 1.0);
    REQUIRE(k0.v == 0.0);

    const DiffusionKernel kT = s.kernel(1.0);
    REQUIRE_THAT(kT.k, Catch::Matchers::WithinRel(std::exp(-5.025), 1e-12));
    REQUIRE_THAT(kT.k, Catch::Matchers::WithinAbs(6.56e-3, 1e-4));
    REQUIRE_THAT(kT.v, Catch::Matchers::WithinAbs(0.99996, 1e-5));

    REQUIRE_THROWS_AS(s.kernel(-0.1), std::invalid_argument);
    REQUIRE_THROWS_AS(s.kernel(1.1), std::invalid_argument);
}

TEST_CASE("kernel: v_t equals the general variance integral (quadrature oracle)") {
    VpSchedule s;
    for (int i = 1; i <= 100; ++i) {
        const double t = 0.01 * i;
        const DiffusionKernel kv = s.kernel(t);
        // k_t^2 * integral of k_u^-2 g_u^2 du; the integrand steepens with t
        const double integral = simpson(0.0, t, 2000 + static_cast<int>(20000 * t), [&](double u) {
            const double ku = s.kernel(u).k;
            return s.g2(u) / (ku * ku);
        });
        REQUIRE_THAT(kv.v, Catch::Matchers::WithinAbs(kv.k * kv.k * integral, 1e-8));
    }
}

TEST_CASE("kernel: k strictly decreasing") {
    VpSchedule s;
    double prev = 1.0;
    for (int i = 1; i <= 50; ++i) {
        const double k = s.kernel(0.02 * i).k;
        REQUIRE(k < prev);
        prev = k;
    }
}

TEST_CASE("perturb: endpoints and monte carlo variance") {
    VpSchedule s;
    const std::vector<double> x0{1.5, -2.0};
    std::vector<double> noise{0.7, -0.3}, out(2);

    perturb(s.kernel(0.0), x0, noise, out);  // t = 0 keeps x0
    REQUIRE(out[0] == x0[0]);
    REQUIRE(out[1] == x0[1]);

    noise = {0.0, 0.0};
    const DiffusionKernel kv = s.kernel(0.37);
    perturb(kv, x0, noise, out);  // zero noise: pure contraction
    REQUIRE_THAT(out[0], Catch::Matchers::WithinRel(kv.k * x0[0], 1e-14));

    std::vector<double> big(3);
    REQUIRE_THROWS_AS(perturb(kv, x0, big, out), std::invalid_argument);

    // empirical variance at t = 0.5 from x0 = 0
    Rng rng(99);
    const DiffusionKernel k5 = s.kernel(0.5);
    const int n = 200000;
    double acc = 0.0;
    std::vector<double> z{0.0}, nz(1), o(1);
    for (int i = 0; i < n; ++i) {
        nz[0] = rng.normal();
        perturb(k5, z, nz, o);
        acc += o[0] * o[0];
    }
    acc /= n;
    const double se = k5.v * std::sqrt(2.0 / n);  // var of chi2 mean
    REQUIRE(std::abs(acc - k5.v) < 3.0 * se);
}

TEST_CASE("true conditional score: formula cases and finite differences") {
    VpSchedule s;
    const DiffusionKernel kv = s.kernel(0.42);
    std::vector<double> x0{0.8}, xt{kv.k * 0.8}, out(1);
    true_conditional_score(kv, xt, x0, out);
    REQUIRE_THAT(out[0], Catch::Matchers::WithinAbs(0.0, 1e-14));

    // scalar case with v = 0.5: score of N(k x0, v) at x
    DiffusionKernel half{0.5, 0.5};
    x0 = {0.0};
    xt = {1.0};
    true_conditional_score(half, xt, x0, out);
    REQUIRE_THAT(out[0], Catch::Matchers::WithinAbs(-2.0, 1e-14));

    REQUIRE_THROWS_AS(true_conditional_score(DiffusionKernel{1.0, 0.0}, xt, x0, out),
                      std::invalid_argument);

    // finite differences of the Gaussian log-density N(k x0, v I)
    Rng rng(4);
    for (int trial = 0; trial < 20; ++trial) {
        const double t = rng.uniform(0.05, 1.0);
        const DiffusionKernel k = s.kernel(t);
        const double a = rng.normal(), b = rng.normal();
        auto logp = [&](double x) { return -0.5 * (x - k.k * a) * (x - k.k * a) / k.v; };
        const double h = 1e-6;
        std::vector<double> p{a}, q{b}, sc(1);
        true_conditional_score(k, q, p, sc);
        const double fd = (logp(b + h) - logp(b - h)) / (2.0 * h);
        REQUIRE_THAT(sc[0], Catch::Matchers::WithinRel(fd, 1e-6));
    }
}

TEST_CASE("score identity: perturb then conditional score gives -noise/sqrt(v)") {
    VpSchedule s;
    Rng rng(8);
    for (int trial = 0; trial < 50; ++trial) {
        const double t = rng.uniform(0.01, 1.0);
        const DiffusionKernel kv = s.kernel(t);
        std::vector<double> x0{rng.normal(), rng.normal()};
        std::vector<double> noise{rng.normal(), rng.normal()};
        std::vector<double> xt(2), sc(2);
        perturb(kv, x0, noise, xt);
        true_conditional_score(kv, xt, x0, sc);
        for (int j = 0; j < 2; ++j)
            REQUIRE_THAT(sc[j], Catch::Matchers::WithinAbs(-noise[j] / std::sqrt(kv.v), 1e-10));
    }
}

TEST_CASE("gaussian reference score: chi values") {
    VpSchedule s;
    std::vector<double> x{0.0, 0.0}, out(2);
    gaussian_reference_score(s, x, 0.5, 1.0, out);
    REQUIRE(out[0] == 0.0);

    x = {1.0, -2.0};
    gaussian_reference_score(s, x, 0.0, 1.0, out);  // chi_0 = sigma^2 = 1
    REQUIRE_THAT(out[0], Catch::Matchers::WithinAbs(-1.0, 1e-12));
    REQUIRE_THAT(out[1], Catch::Matchers::WithinAbs(2.0, 1e-12));

    gaussian_reference_score(s, x, 0.0, 2.0, out);  // chi_0 = 4
    REQUIRE_THAT(out[0], Catch::Matchers::WithinAbs(-0.25, 1e-12));
}

TEST_CASE("tail correction: closed forms") {
    VpSchedule s;
    // sigma = 1: chi_T = k^2 + v = 1 exactly, correction 0
    REQUIRE_THAT(tail_correction(s, 1.0, 3), Catch::Matchers::WithinAbs(0.0, 1e-12));

    // sigma = 1 via direct formula: negligible for any N
    REQUIRE(std::abs(tail_correction(s, 1.0, 100)) < 1e-8);

    // sigma = 10, N = 2: chi_T = 1 + 99 k_T^2
    const double kT = s.kernel(1.0).k;
    const double chi = 1.0 + 99.0 * kT * kT;
    const double expected = 1.0 * (std::log(chi) - 1.0 + 1.0 / chi);
    REQUIRE_THAT(tail_correction(s, 10.0, 2), Catch::Matchers::WithinRel(expected, 1e-12));

    REQUIRE_THROWS_AS(tail_correction(s, 1.0, 0), std::invalid_argument);
}

TEST_CASE("time sampler: uniform proposal has constant weight") {
    VpSchedule s;
    TimeSampler sampler(s, TimeProposal::uniform);
    Rng rng(2);
    for (int i = 0; i < 100; ++i) {
        const auto d = sampler.sample(rng);
        REQUIRE(d.t >= s.t_eps);
        REQUIRE(d.t <= s.horizon);
        REQUIRE_THAT(d.weight, Catch::Matchers::WithinRel(s.horizon - s.t_eps, 1e-9));
    }
}

TEST_CASE("time sampler: importance weights are unbiased (quadrature oracle)") {
    VpSchedule s;
    TimeSampler sampler(s, TimeProposal::variance_weighted);
    Rng rng(31);

    // five analytic integrands, E_q[w h] must match the integral over [t_eps, T]
    std::vector<std::function<double(double)>> hs = {
        [](double) { return 1.0; },
        [&](double t) { return 0.5 * s.g2(t); },
        [](double t) { return t; },
        [](double t) { return std::sin(3.0 * t); },
        [&](double t) { return s.kernel(t).k; },
    };
    const int n = 100000;
    std::vector<double> mean(hs.size(), 0.0), m2(hs.size(), 0.0);
    for (int i = 0; i < n; ++i) {
        const auto d = sampler.sample(rng);
        for (std::size_t j = 0; j < hs.size(); ++j) {
            const double v = d.weight * hs[j](d.t);
            const double delta = v - mean[j];
            mean[j] += delta / (i + 1);
            m2[j] += delta * (v - mean[j]);
        }
    }
    for (std::size_t j = 0; j < hs.size(); ++j) {
        const double integral = simpson(s.t_eps, s.horizon, 4000, hs[j]);
        const double se = std::sqrt(m2[j] / (double(n) - 1.0) / double(n));
        INFO("integrand " << j << ": mc " << mean[j] << " vs " << integral << " (se " << se << ")");
        REQUIRE(std::abs(mean[j] - integral) < 3.0 * se + 1e-4);
    }
    // the g^2/2 integral is (bmin+bmax)T/4 minus the t_eps sliver
    const double g2_int = simpson(s.t_eps, s.horizon, 4000, hs[1]);
    REQUIRE_THAT(g2_int, Catch::Matchers::WithinAbs((s.beta_min + s.beta_max) / 4.0, 1e-5));
}

TEST_CASE("time sampler: density matches draw frequencies") {
    VpSchedule s;
    TimeSampler sampler(s, TimeProposal::variance_weighted);
    Rng rng(5);
    // on a coarse bin, frequency ~ integral of density
    int hits = 0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        const double t = sampler.sample(rng).t;
        if (t >= 0.4 && t < 0.6) ++hits;
    }
    double mass = 0.0;
    for (int i = 0; i < 1000; ++i) {
        const double t = 0.4 + 0.2 * (i + 0.5) / 1000.0;
        mass += sampler.density(t) * 0.2 / 1000.0;
    }
    const double freq = double(hits) / n;
    const double se = std::sqrt(mass * (1.0 - mass) / n);
    REQUIRE(std::abs(freq - mass) < 4.0 * se + 1e-4);
}
