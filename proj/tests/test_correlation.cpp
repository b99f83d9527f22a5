#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>

#include "shelab/common.hpp"
#include "shelab/correlation.hpp"
#include "shelab/quadrature.hpp"

using namespace shelab;
using corr::CorrelationFunction;

TEST_CASE("spectral_of: white noise is the unit density") {
    auto m = corr::spectral_of(CorrelationFunction::white_noise(1));
    CHECK(m.kind() == corr::SpectralMeasure::Kind::Density);
    CHECK(m.density_at(0.3) == 1.0);
    CHECK(m.density_at(17.0) == 1.0);
}

TEST_CASE("spectral_of: gaussian bump against a numerical Fourier transform") {
    auto m = corr::spectral_of(CorrelationFunction::gaussian_bump(1.0, 1));
    for (double xi : {0.0, 0.5, 1.3, 3.0}) {
        double closed = m.density_at(xi);
        CHECK(closed == doctest::Approx(std::sqrt(kPi) * std::exp(-xi * xi / 4.0))
                            .epsilon(1e-12));
        auto numeric = quad::integrate(
            [xi](double x) { return std::cos(xi * x) * std::exp(-x * x); }, -12.0, 12.0);
        CHECK(closed == doctest::Approx(numeric.value).epsilon(1e-9));
    }
}

TEST_CASE("spectral_of: single lattice atom scales to a constant density") {
    auto m = corr::spectral_of(
        CorrelationFunction::lattice_atoms({{{0}, 0.7}}, 1));
    CHECK(m.density_at(0.0) == doctest::Approx(0.7));
    CHECK(m.density_at(2.4) == doctest::Approx(0.7));
}

TEST_CASE("spectral_of: tabulated entries have no catalogued transform") {
    auto f = CorrelationFunction::tabulated({-1.0, 0.0, 1.0}, {0.5, 1.0, 0.5});
    CHECK_THROWS_AS(corr::spectral_of(f), UnsupportedError);
}

TEST_CASE("dalang: white noise d=1 closed form 1/(2 sqrt(beta))") {
    auto m = corr::spectral_of(CorrelationFunction::white_noise(1));
    for (double beta : {0.5, 1.0, 4.0}) {
        auto r = corr::dalang_upsilon(m, beta);
        REQUIRE(r.finite);
        // (2 pi)^{-1} int dxi/(beta+xi^2) = 1/(2 sqrt(beta)), arctan oracle
        CHECK(r.value == doctest::Approx(1.0 / (2.0 * std::sqrt(beta))).epsilon(1e-8));
    }
    CHECK(corr::dalang_upsilon(m, 4.0).value == doctest::Approx(0.25).epsilon(1e-8));
}

TEST_CASE("dalang: white noise d=2 diverges") {
    auto m = corr::spectral_of(CorrelationFunction::white_noise(2));
    auto r = corr::dalang_upsilon(m, 1.0);
    CHECK_FALSE(r.finite);
    CHECK(!r.diagnostic.empty());
}

TEST_CASE("dalang: riesz closed form sqrt(pi) beta^{-3/4}") {
    auto m = corr::spectral_of(CorrelationFunction::riesz(0.5, 1));
    auto r = corr::dalang_upsilon(m, 1.0);
    REQUIRE(r.finite);
    CHECK(r.value > 0.0);
    // beta-integral oracle: (2pi)^{-1} c_{1,1/2} 2 (pi/sqrt(2)) = sqrt(pi)
    CHECK(r.value == doctest::Approx(std::sqrt(kPi)).epsilon(1e-7));
    auto r4 = corr::dalang_upsilon(m, 4.0);
    CHECK(r4.value == doctest::Approx(std::sqrt(kPi) * std::pow(4.0, -0.75)).epsilon(1e-7));
}

TEST_CASE("dalang: lattice atoms closed form") {
    auto f = CorrelationFunction::lattice_atoms({{{0}, 1.0}, {{1}, 0.25}, {{-1}, 0.25}}, 1);
    auto r = corr::dalang_upsilon(corr::spectral_of(f), 1.0);
    REQUIRE(r.finite);
    double expect = (1.0 + 0.5 * std::exp(-1.0)) / 2.0;
    CHECK(r.value == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("dalang: constant correlation is a zero-frequency atom") {
    auto m = corr::spectral_of(CorrelationFunction::constant(3.0, 1));
    CHECK(m.kind() == corr::SpectralMeasure::Kind::Atomic);
    auto r = corr::dalang_upsilon(m, 2.0);
    REQUIRE(r.finite);
    CHECK(r.value == doctest::Approx(1.5).epsilon(1e-12));  // c / beta
}

TEST_CASE("strengthened dalang branches") {
    auto white = corr::spectral_of(CorrelationFunction::white_noise(1));
    CHECK_FALSE(corr::strengthened_dalang(white, 1.0).finite);  // constant integrand

    auto gauss = corr::spectral_of(CorrelationFunction::gaussian_bump(1.0, 1));
    auto rg = corr::strengthened_dalang(gauss, 1.0);
    REQUIRE(rg.finite);
    // alpha = 1: (2pi)^{-1} int sqrt(pi) e^{-xi^2/4} dxi = 1 exactly
    CHECK(rg.value == doctest::Approx(1.0).epsilon(1e-9));

    auto riesz = corr::spectral_of(CorrelationFunction::riesz(0.5, 1));
    CHECK(corr::strengthened_dalang(riesz, 0.2).finite);
    CHECK_FALSE(corr::strengthened_dalang(riesz, 0.9).finite);  // 0.5 + 2(1-a) <= 1
    CHECK_THROWS_AS(corr::strengthened_dalang(white, 0.0), std::domain_error);

    // the oscillating flat tail of a trig-polynomial density has no certified
    // quadrature route here: inconclusive, reported as a numeric error
    auto atoms = corr::spectral_of(
        CorrelationFunction::lattice_atoms({{{0}, 1.0}, {{1}, 0.4}, {{-1}, 0.4}}, 1));
    CHECK_THROWS_AS(corr::strengthened_dalang(atoms, 0.2), NumericError);
}

TEST_CASE("kernel k: white noise sifting") {
    auto f = CorrelationFunction::white_noise(1);
    for (double t : {0.1, 1.0, 4.0})
        CHECK(corr::kernel_k(f, t) == doctest::Approx(1.0 / std::sqrt(kTwoPi * t)));
    CHECK_THROWS_AS(corr::kernel_k(f, 0.0), std::domain_error);
}

TEST_CASE("kernel k: constant level passes through (kernel mass 1)") {
    auto f = CorrelationFunction::constant(2.5, 1);
    for (double t : {0.2, 3.0}) CHECK(corr::kernel_k(f, t) == doctest::Approx(2.5));
}

TEST_CASE("kernel k: gaussian bump dual routes agree to 1e-8") {
    auto f = CorrelationFunction::gaussian_bump(1.5, 1);
    for (double t : {0.1, 0.5, 2.0}) {
        double phys = corr::kernel_k_physical(f, t);
        double spec = corr::kernel_k_spectral(f, t);
        double closed = corr::kernel_k(f, t);
        CHECK(phys == doctest::Approx(spec).epsilon(1e-8));
        CHECK(closed == doctest::Approx(phys).epsilon(1e-8));
        // closed form (1 + 2t/s)^{-1/2}
        CHECK(closed == doctest::Approx(std::pow(1.0 + 2.0 * t / 1.5, -0.5)).epsilon(1e-12));
    }
}

TEST_CASE("kernel k: dual routes across the catalog within 1e-6 relative") {
    std::vector<CorrelationFunction> fs = {
        CorrelationFunction::white_noise(1),
        CorrelationFunction::riesz(0.5, 1),
        CorrelationFunction::riesz(0.8, 1),
        CorrelationFunction::gaussian_bump(1.0, 1),
        CorrelationFunction::cauchy_like(1.0, 1),
        CorrelationFunction::lattice_atoms({{{0}, 1.0}, {{1}, 0.5}, {{-1}, 0.5}}, 1),
    };
    for (const auto& f : fs) {
        for (double t : {0.25, 1.0, 3.0}) {
            double phys = corr::kernel_k_physical(f, t);
            double spec = corr::kernel_k_spectral(f, t);
            CHECK_MESSAGE(phys == doctest::Approx(spec).epsilon(1e-6),
                          f.describe(), " at t=", t);
        }
    }
}

TEST_CASE("h sequence: h0 is 1 and white-noise h1 is sqrt(2t/pi)") {
    auto f = CorrelationFunction::white_noise(1);
    for (double t : {0.25, 1.0, 4.0}) {
        auto h = corr::h_sequence(f, 3, t, 256);
        CHECK(h[0] == 1.0);
        CHECK(std::abs(h[1] - std::sqrt(2.0 * t / kPi)) < 1e-4);
        CHECK(h[2] > 0.0);
    }
    auto h1 = corr::h_sequence(f, 1, 1.0, 256);
    CHECK(h1[1] == doctest::Approx(0.7978845608).epsilon(1e-6));
}

TEST_CASE("h sequence: constant kernel gives c^n t^n / n!") {
    auto f = CorrelationFunction::constant(2.0, 1);
    auto h = corr::h_sequence(f, 5, 1.0, 512);
    double factorial = 1.0;
    for (int n = 1; n <= 5; ++n) {
        factorial *= n;
        CHECK(h[n] == doctest::Approx(std::pow(2.0, n) / factorial).epsilon(5e-4));
    }
}

TEST_CASE("h sequence: nonnegative and nondecreasing in t") {
    for (const auto& f : {CorrelationFunction::white_noise(1),
                          CorrelationFunction::gaussian_bump(1.0, 1),
                          CorrelationFunction::riesz(0.5, 1)}) {
        std::vector<double> prev(4, 0.0);
        for (double t : {0.25, 0.5, 1.0, 2.0}) {
            auto h = corr::h_sequence(f, 3, t, 128);
            for (int n = 0; n <= 3; ++n) {
                CHECK(h[n] >= 0.0);
                CHECK(h[n] >= prev[n] - 1e-10);
                prev[n] = h[n];
            }
        }
    }
}

TEST_CASE("h sequence: rejects non-integrable kernels and bad grids") {
    CHECK_THROWS_AS(corr::h_sequence(CorrelationFunction::white_noise(2), 2, 1.0, 64),
                    NumericError);
    CHECK_THROWS_AS(corr::h_sequence(CorrelationFunction::white_noise(1), 2, 1.0, 8),
                    std::invalid_argument);
}

TEST_CASE("h series: gamma = 0 gives 1, constant kernel gives exp(gamma c t)") {
    auto f = CorrelationFunction::constant(2.0, 1);
    auto r0 = corr::h_series(f, 0.0, 1.0);
    CHECK(r0.value == 1.0);
    for (double gamma : {0.5, 1.0}) {
        for (double t : {0.5, 1.0}) {
            auto r = corr::h_series(f, gamma, t, 1e-8, 512);
            CHECK(r.converged);
            CHECK(std::abs(r.value - std::exp(gamma * 2.0 * t)) <
                  1e-4 * std::exp(gamma * 2.0 * t));
        }
    }
}

TEST_CASE("h series: white noise against a doubled-resolution brute force") {
    auto f = CorrelationFunction::white_noise(1);
    auto r = corr::h_series(f, 1.0, 1.0, 1e-10, 256);
    REQUIRE(r.converged);
    // brute force: 64 terms of the recursion at doubled grid resolution
    auto h = corr::h_sequence(f, 64, 1.0, 512);
    double brute = 0.0;
    for (int n = 0; n <= 64; ++n) brute += h[n];
    CHECK(std::abs(r.value - brute) < 1e-4);
    // spectral rate bound: inf {beta : Upsilon(2 beta) < 1/(2 gamma)} solves
    // 1/(2 sqrt(2 beta)) = 1/2 -> beta = 1/2
    REQUIRE(r.growth_rate_bound.has_value());
    CHECK(*r.growth_rate_bound == doctest::Approx(0.5).epsilon(1e-6));
}

TEST_CASE("h series: renewal march agrees with partial sums at moderate gamma") {
    // force the march by starving the partial-sum grid, then compare against
    // the converged partial sum on a healthy grid
    auto w = CorrelationFunction::white_noise(1);
    auto sum_route = corr::h_series(w, 2.0, 1.0, 1e-10, 512);
    REQUIRE_FALSE(sum_route.renewal_route);
    auto march_route = corr::h_series(w, 2.0, 1.0, 1e-10, 16);  // 8-term cap
    REQUIRE(march_route.renewal_route);
    CHECK(march_route.value == doctest::Approx(sum_route.value).epsilon(1e-4));

    // constant kernel: the march must reproduce exp(gamma c t) at a gamma the
    // partial sums cannot resolve on any reasonable grid
    auto c = CorrelationFunction::constant(1.0, 1);
    auto big = corr::h_series(c, 40.0, 1.0, 1e-8, 64);
    CHECK(big.renewal_route);
    CHECK(big.log_value == doctest::Approx(40.0).epsilon(1e-4));

    // fractional-power kernel (riesz) through both routes
    auto rz = CorrelationFunction::riesz(0.5, 1);
    auto rz_sum = corr::h_series(rz, 2.0, 1.0, 1e-10, 512);
    auto rz_march = corr::h_series(rz, 2.0, 1.0, 1e-10, 16);
    CHECK(rz_march.renewal_route);
    CHECK(rz_march.value == doctest::Approx(rz_sum.value).epsilon(1e-4));
}

TEST_CASE("moment bound: gamma_p = 0 collapses to vip + sqrt(2) J0") {
    corr::MomentBoundParams params;
    params.lip_rho = 0.0;
    params.vip = 0.7;
    params.p = 2;
    auto mu = heat::InitialDatum::lebesgue(1);
    auto res = corr::moment_upper_bound(params, CorrelationFunction::white_noise(1), mu, 1.0,
                                        {0.0});
    CHECK(res.gamma_p == 0.0);
    CHECK(res.bound == doctest::Approx(0.7 + std::sqrt(2.0)).epsilon(1e-9));
}

TEST_CASE("moment bound: lebesgue initial data gives sqrt(2) H^{1/2}") {
    corr::MomentBoundParams params;
    params.lip_rho = 1.0;
    params.vip = 0.0;  // rho(0) = 0
    params.p = 2;
    auto mu = heat::InitialDatum::lebesgue(1);
    auto f = CorrelationFunction::white_noise(1);
    auto res = corr::moment_upper_bound(params, f, mu, 0.1, {0.0});
    CHECK(res.gamma_p == doctest::Approx(64.0));  // 32 p Lip^2
    CHECK(res.j0 == doctest::Approx(1.0).epsilon(1e-8));
    CHECK(res.bound == doctest::Approx(std::sqrt(2.0) * std::sqrt(res.h_value)).epsilon(1e-9));
    CHECK(std::isfinite(res.bound));

    // monotone in t and p
    double prev = 0.0;
    for (double t : {0.05, 0.1, 0.2}) {
        auto r = corr::moment_upper_bound(params, f, mu, t, {0.0});
        CHECK(r.bound >= prev);
        prev = r.bound;
    }
    prev = 0.0;
    for (int p : {2, 3, 4}) {
        corr::MomentBoundParams pp = params;
        pp.p = p;
        auto r = corr::moment_upper_bound(pp, f, mu, 0.1, {0.0});
        CHECK(r.bound >= prev);
        prev = r.bound;
    }
}

TEST_CASE("moment bound: exponential form requires the strengthened condition") {
    corr::MomentBoundParams params;
    params.lip_rho = 1.0;
    params.vip = 0.0;
    params.p = 4;
    params.alpha = 1.0;
    auto mu = heat::InitialDatum::lebesgue(1);
    auto g = CorrelationFunction::gaussian_bump(1.0, 1);
    auto res = corr::moment_upper_bound(params, g, mu, 0.1, {0.0});
    REQUIRE(res.exp_form_bound.has_value());
    CHECK_FALSE(res.exp_form_sharp);
    CHECK(*res.exp_form_bound == doctest::Approx(std::exp(0.4)).epsilon(1e-9));

    CHECK_THROWS_AS(
        corr::moment_upper_bound(params, CorrelationFunction::white_noise(1), mu, 0.1, {0.0}),
        NumericError);
}

TEST_CASE("theta polynomial: values, support, continuity") {
    CHECK(corr::theta_poly(0.0) == doctest::Approx(16.0 / 3.0));
    CHECK(corr::theta_poly(4.0) == 0.0);
    CHECK(corr::theta_poly(-4.0) == 0.0);
    CHECK(corr::theta_poly(5.0) == 0.0);
    // both branches meet at |x| = 2 with value 4/3
    CHECK(corr::theta_poly(2.0 - 1e-9) == doctest::Approx(4.0 / 3.0).epsilon(1e-6));
    CHECK(corr::theta_poly(2.0 + 1e-9) == doctest::Approx(4.0 / 3.0).epsilon(1e-6));
    CHECK(corr::theta_poly(1.3) == corr::theta_poly(-1.3));
}

TEST_CASE("phi2 is a unit-mass even C^2 mollifier") {
    auto mass = quad::integrate([](double x) { return corr::phi2_1d(x); }, -4.0, 4.0);
    CHECK(mass.value == doctest::Approx(1.0).epsilon(1e-10));
    CHECK(corr::phi2_1d(0.0) == doctest::Approx(1.0 / 3.0));
    // scaled copy keeps mass
    auto mass_eps = quad::integrate([](double x) { return corr::phi2_scaled_1d(0.5, x); },
                                    -2.0, 2.0);
    CHECK(mass_eps.value == doctest::Approx(1.0).epsilon(1e-10));
}

TEST_CASE("mollify: white noise becomes the scaled mollifier") {
    auto f = CorrelationFunction::white_noise(1);
    corr::MollifyGrid grid;
    grid.half_width = 6.0;
    grid.step = 0.05;
    auto fe = corr::mollify_correlation(f, 1.0, grid);
    REQUIRE(fe.kind() == CorrelationFunction::Kind::Tabulated);
    // f^{1,1} = phi2, so f^{1,1}(0) = theta(0)/16 = 1/3
    CHECK(fe.evaluate({0.0}) == doctest::Approx(1.0 / 3.0).epsilon(1e-9));
    CHECK(fe.evaluate({4.2}) == 0.0);
    CHECK(fe.evaluate({1.7}) == doctest::Approx(corr::phi2_1d(1.7)).epsilon(1e-9));
}

TEST_CASE("mollify: flat first derivative and bounded curvature at zero") {
    for (const auto& f : {CorrelationFunction::white_noise(1),
                          CorrelationFunction::gaussian_bump(1.0, 1),
                          CorrelationFunction::riesz(0.5, 1)}) {
        corr::MollifyGrid grid;
        grid.half_width = 6.0;
        grid.step = 0.05;
        auto fe = corr::mollify_correlation(f, 0.5, grid);
        const double h = 0.05;
        double d1 = (fe.evaluate({h}) - fe.evaluate({-h})) / (2.0 * h);
        CHECK(std::abs(d1) < 1e-6);
        double d2 = (fe.evaluate({h}) - 2.0 * fe.evaluate({0.0}) + fe.evaluate({-h})) / (h * h);
        CHECK(std::isfinite(d2));
        // symmetry of the tabulated output
        for (double x : {0.3, 1.1, 2.7})
            CHECK(fe.evaluate({x}) == doctest::Approx(fe.evaluate({-x})).epsilon(1e-12));
    }
}

TEST_CASE("mollified kernel domination: k_eps <= k") {
    auto f = CorrelationFunction::white_noise(1);
    corr::MollifyGrid grid;
    grid.half_width = 6.0;
    grid.step = 0.02;
    for (double eps : {0.25, 0.5, 1.0}) {
        auto fe = corr::mollify_correlation(f, eps, grid);
        for (double t : {0.05, 0.2, 1.0, 4.0})
            CHECK(corr::kernel_k(fe, t) <= corr::kernel_k(f, t) * (1.0 + 1e-9) + 1e-12);
    }
}

TEST_CASE("mollify: grid resolution guard") {
    corr::MollifyGrid coarse;
    coarse.half_width = 6.0;
    coarse.step = 0.5;
    CHECK_THROWS_AS(
        corr::mollify_correlation(CorrelationFunction::white_noise(1), 0.25, coarse),
        std::invalid_argument);
}

TEST_CASE("lattice atom validation") {
    CHECK_THROWS_AS(CorrelationFunction::lattice_atoms({{{0}, -1.0}}, 1),
                    std::invalid_argument);
    CHECK_THROWS_AS(CorrelationFunction::lattice_atoms({{{1}, 0.5}}, 1),
                    std::invalid_argument);  // missing mirror
    // delta_0 + c(delta_1 + delta_{-1}) needs c <= 1/2 for a nonnegative density
    CHECK_THROWS_AS(
        CorrelationFunction::lattice_atoms({{{0}, 1.0}, {{1}, 0.8}, {{-1}, 0.8}}, 1),
        std::invalid_argument);
    CHECK_NOTHROW(
        CorrelationFunction::lattice_atoms({{{0}, 1.0}, {{1}, 0.5}, {{-1}, 0.5}}, 1));
}

TEST_CASE("gram matrices are PSD on random point sets") {
    std::vector<CorrelationFunction> fs = {
        CorrelationFunction::gaussian_bump(1.0, 1),
        CorrelationFunction::cauchy_like(2.0, 1),
        CorrelationFunction::constant(1.5, 1),
    };
    for (const auto& f : fs) {
        std::vector<std::vector<double>> pts;
        for (int i = 0; i < 48; ++i)
            pts.push_back({8.0 * (u64_to_unit(counter_key(5, i, 0, 0)) - 0.5)});
        auto g = corr::gram_matrix(f, pts);
        Eigen::MatrixXd m(pts.size(), pts.size());
        for (size_t i = 0; i < pts.size(); ++i)
            for (size_t j = 0; j < pts.size(); ++j) m(i, j) = g[i][j];
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
        CHECK(es.eigenvalues().minCoeff() >= -1e-8 * m.trace());
    }

    // lattice atoms act as a covariance function on integer points
    auto atoms = CorrelationFunction::lattice_atoms({{{0}, 1.0}, {{1}, 0.5}, {{-1}, 0.5}}, 1);
    std::vector<std::vector<double>> ipts;
    for (int i = 0; i < 64; ++i) ipts.push_back({static_cast<double>(i)});
    auto g = corr::gram_matrix(atoms, ipts);
    Eigen::MatrixXd m(64, 64);
    for (int i = 0; i < 64; ++i)
        for (int j = 0; j < 64; ++j) m(i, j) = g[i][j];
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
    CHECK(es.eigenvalues().minCoeff() >= -1e-8 * m.trace());
}

TEST_CASE("heat smoothing closed forms") {
    // white noise: G(s, x)
    auto w = CorrelationFunction::white_noise(1);
    CHECK(corr::heat_smoothed(w, 1.0, {0.0}) ==
          doctest::Approx(1.0 / std::sqrt(kTwoPi)).epsilon(1e-12));
    // gaussian bump: quadrature cross-check
    auto g = CorrelationFunction::gaussian_bump(1.0, 1);
    for (double x : {0.0, 0.8}) {
        double closed = corr::heat_smoothed(g, 0.6, {x});
        auto numeric = quad::integrate(
            [x](double y) {
                return std::exp(-y * y) * heat::heat_kernel_1d(0.6, x - y);
            },
            -14.0, 14.0);
        CHECK(closed == doctest::Approx(numeric.value).epsilon(1e-9));
    }
    // riesz: positive and finite
    CHECK(corr::heat_smoothed(CorrelationFunction::riesz(0.5, 1), 1.0, {0.5}) > 0.0);
}
