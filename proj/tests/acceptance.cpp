// Acceptance suite: one checked, timed pass/fail line per criterion.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>

#include "shelab/common.hpp"
#include "shelab/compare.hpp"
#include "shelab/experiment.hpp"
#include "shelab/oracle.hpp"
#include "shelab/sde.hpp"

using namespace shelab;
using cmp::Functional;
using cmp::GDescriptor;
using rho::DiffusionCoefficient;

namespace {

struct Stopwatch {
    std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
};

void report(int criterion, const char* label, bool pass, double seconds) {
    std::printf("[%s] criterion %2d: %s (%.1f s)\n", pass ? "PASS" : "FAIL", criterion,
                label, seconds);
    std::fflush(stdout);
    CHECK_MESSAGE(pass, "criterion ", criterion, ": ", label);
}

lattice::LatticeSystem ring_system(int n, double kappa, const DiffusionCoefficient& rc,
                                   const std::function<double(int)>& gamma,
                                   double u0_level = 1.0) {
    Eigen::MatrixXd p = Eigen::MatrixXd::Zero(n, n);
    if (n == 1) {
        p(0, 0) = 1.0;
    } else {
        for (int i = 0; i < n; ++i) {
            p(i, (i + 1) % n) += 0.5;
            p(i, (i + n - 1) % n) += 0.5;
        }
    }
    Eigen::VectorXd u0 = Eigen::VectorXd::Constant(n, u0_level);
    return lattice::make_direct_system(kappa, p, gamma, rc, u0);
}

bool all_consistent(const std::vector<cmp::ComparisonVerdict>& vs) {
    for (const auto& v : vs)
        if (v.status != cmp::Status::Consistent) return false;
    return true;
}

}  // namespace

TEST_CASE("criterion 1: dalang closed form") {
    Stopwatch sw;
    auto m = corr::spectral_of(corr::CorrelationFunction::white_noise(1));
    bool pass = true;
    for (double beta : {0.5, 1.0, 4.0}) {
        auto r = corr::dalang_upsilon(m, beta);
        double exact = 1.0 / (2.0 * std::sqrt(beta));
        pass &= r.finite && std::abs(r.value - exact) <= 1e-6 * exact;
    }
    double secs = sw.seconds();
    pass &= secs < 1.0;
    report(1, "dalang_upsilon(white noise, beta) = 1/(2 sqrt(beta)) to 1e-6, under 1 s",
           pass, secs);
}

TEST_CASE("criterion 2: moment-bound machinery") {
    Stopwatch sw;
    bool pass = true;
    auto white = corr::CorrelationFunction::white_noise(1);
    for (double t : {0.25, 1.0, 4.0}) {
        auto h = corr::h_sequence(white, 1, t, 512);
        pass &= std::abs(h[1] - std::sqrt(2.0 * t / kPi)) < 1e-4;
    }
    auto flat = corr::CorrelationFunction::constant(2.0, 1);
    for (double gamma : {0.5, 1.0}) {
        for (double t : {0.5, 1.0}) {
            auto r = corr::h_series(flat, gamma, t, 1e-9, 512);
            double exact = std::exp(gamma * 2.0 * t);
            pass &= r.converged && std::abs(r.value - exact) < 1e-4 * exact;
        }
    }
    double secs = sw.seconds();
    pass &= secs < 10.0;
    report(2, "h1 = sqrt(2t/pi) and H(t;gamma) = exp(gamma c t) to 1e-4, under 10 s", pass,
           secs);
}

TEST_CASE("criterion 3: lattice consistency") {
    Stopwatch sw;
    bool pass = true;
    auto tm = lattice::build_transition(0.4, 0.2, 40, 1);
    for (int i = 0; i < tm.size(); ++i)
        pass &= std::abs(tm.entries.row(i).sum() - 1.0) <= 1e-10;
    pass &= std::abs(lattice::check_lambda(tm) - 1.0) <= 1e-10;
    pass &= tm.entries.isApprox(tm.entries.transpose(), 1e-12);

    // discrete-Laplacian consistency of the Yosida scheme on phi = cos with
    // the second-order band eps/8 + delta^2/(8 eps)
    double prev_err = 1e9;
    for (auto [delta, eps] : {std::pair{0.2, 0.4}, {0.1, 0.2}}) {
        int radius = static_cast<int>(std::ceil(10.0 * std::sqrt(eps) / delta)) + 8;
        auto t2 = lattice::build_transition(eps, delta, radius, 1);
        double acc = 0.0;
        for (int j = 0; j < t2.size(); ++j)
            acc += t2.entries(radius, j) * (std::cos((j - radius) * delta) - 1.0);
        acc /= eps;
        double err = std::abs(acc + 0.5);  // phi''(0)/2 = -1/2
        double band = eps / 8.0 + delta * delta / (8.0 * eps);
        pass &= err <= band;
        pass &= err < prev_err;
        prev_err = err;
    }
    report(3, "row sums 1e-10, symmetric Lambda = 1, Yosida Laplacian in band", pass,
           sw.seconds());
}

TEST_CASE("criterion 4: noise correctness and thread determinism") {
    Stopwatch sw;
    bool pass = true;
    // empirical covariance of 1e5 increments vs dt Gamma on a 5-site
    // Riesz-derived covariance
    auto f = corr::CorrelationFunction::riesz(0.5, 1);
    auto gamma = lattice::lattice_covariance(f, 0.5, 0.5, {{0}, {1}, {2}, {3}, {4}});
    auto cov = noise::psd_repair(noise::assemble_covariance(
        [&](const std::vector<int>& off) { return gamma.at({std::abs(off[0])}); },
        {{0}, {1}, {2}, {3}, {4}}));
    auto factor = std::make_shared<const Eigen::MatrixXd>(noise::factorize(cov.gamma));
    const double dt = 0.1;
    auto stream = noise::make_stream(8812, 0, dt, factor);
    const int n = 100000;
    Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(5, 5), acc2 = Eigen::MatrixXd::Zero(5, 5);
    Eigen::VectorXd z, dm;
    for (int i = 0; i < n; ++i) {
        noise::sample_increments_into(stream, i, z, dm);
        Eigen::MatrixXd outer = dm * dm.transpose();
        acc += outer;
        acc2 += outer.cwiseProduct(outer);
    }
    for (int a = 0; a < 5; ++a)
        for (int b = 0; b < 5; ++b) {
            double mean = acc(a, b) / n;
            double se = std::sqrt(std::max(acc2(a, b) / n - mean * mean, 1e-30) / n);
            pass &= std::abs(mean - dt * cov.gamma(a, b)) <= 5.0 * se;
        }

    // bit determinism: 1 thread vs 8 threads
    auto sys = ring_system(3, 1.0, DiffusionCoefficient::linear(1.0),
                           [](int m) { return m == 0 ? 1.0 : 0.2; });
    cmp::MCParams mc;
    mc.n_paths = 5000;
    mc.dt = 0.01;
    mc.seed = 2222;
    auto fs = {Functional::moment({{{0.5, 1}, 2}})};
    setenv("SHELAB_THREADS", "1", 1);
    auto e1 = cmp::estimate(sys, fs, mc);
    setenv("SHELAB_THREADS", "8", 1);
    auto e8 = cmp::estimate(sys, fs, mc);
    unsetenv("SHELAB_THREADS");
    pass &= e1[0].value == e8[0].value && e1[0].std_error == e8[0].std_error;
    report(4, "1e5-increment covariance within 5 se; bit-identical at 1 vs 8 threads", pass,
           sw.seconds());
}

TEST_CASE("criterion 5: additive-noise oracle agreement") {
    Stopwatch sw;
    Eigen::VectorXd u0(3);
    u0 << 1.0, 0.5, 1.5;
    Eigen::MatrixXd p = Eigen::MatrixXd::Zero(3, 3);
    for (int i = 0; i < 3; ++i) {
        p(i, (i + 1) % 3) += 0.5;
        p(i, (i + 2) % 3) += 0.5;
    }
    auto sys = lattice::make_direct_system(
        1.0, p, [](int m) { return m == 0 ? 1.0 : 0.3; },
        DiffusionCoefficient::affine(0.7, 0.0), u0);
    const double t = 0.5;
    std::vector<Functional> fs = {
        Functional::moment({{{t, 0}, 1}}),
        Functional::moment({{{t, 1}, 2}}),
        Functional::moment({{{t, 0}, 1}, {{t, 1}, 1}, {{t, 2}, 1}}),
        Functional::moment({{{t, 0}, 2}, {{t, 2}, 2}}),
        Functional::moment({{{t, 1}, 4}}),
    };
    cmp::MCParams mc;
    mc.n_paths = 100000;
    mc.dt = 0.0025;
    mc.seed = 550;
    auto est = cmp::estimate(sys, fs, mc);
    auto law = oracle::additive_law(sys, {{t, 0}, {t, 1}, {t, 2}}, 1e-4);
    std::vector<std::vector<int>> idx = {
        {1, 0, 0}, {0, 2, 0}, {1, 1, 1}, {2, 0, 2}, {0, 4, 0}};
    bool pass = true;
    for (size_t i = 0; i < fs.size(); ++i) {
        double exact = oracle::isserlis_moment(law, idx[i]);
        pass &= std::abs(est[i].value - exact) <= 5.0 * est[i].std_error;
    }
    double secs = sw.seconds();
    pass &= secs < 120.0;
    report(5, "MC moments (degree <= 4) match isserlis(additive_law) within 5 se", pass,
           secs);
}

TEST_CASE("criterion 6: PAM oracle agreement (mandatory ODE gate)") {
    Stopwatch sw;
    auto sys = ring_system(3, 1.0, DiffusionCoefficient::linear(1.0),
                           [](int m) { return m == 0 ? 1.0 : 0.2; });
    oracle::PamMomentOracle om(sys);
    auto rep = om.validate(0.5, 0.00125, 100000, 660);
    bool pass = rep.pass && om.validated();
    report(6, "MC E[U_i U_j] matches pam_second_moments within 5 se at 1e5 paths", pass,
           sw.seconds());
}

namespace {

std::vector<Functional> criterion_suite(double t, int center, double flow_mean_value) {
    return {
        Functional::moment({{{t, center}, 1}}),
        Functional::moment({{{t, center}, 2}}),
        Functional::moment({{{t, center}, 3}}),
        Functional::laplace({{{t, 0}, 1.0}, {{t, center}, 0.5}}),
        Functional::central_even({t, center}, flow_mean_value, 2),
        Functional::coordinate_map({{{t, center}, GDescriptor::exp_neg(1.0), 1}}),
    };
}

}  // namespace

TEST_CASE("criterion 7: moment comparison in rho at desk scale") {
    Stopwatch sw;
    auto gamma = [](int m) { return m == 0 ? 1.0 : 0.2 * std::pow(0.5, std::abs(m) - 1); };
    auto sys = ring_system(5, 1.0, DiffusionCoefficient::linear(1.0), gamma);
    const double t = 0.4;
    // u0 = 1 and a doubly stochastic exchange keep the deterministic flow at 1
    auto fs = criterion_suite(t, 2, 1.0);
    cmp::MCParams mc;
    mc.n_paths = 100000;
    mc.dt = 0.004;
    mc.seed = 770;
    auto verdicts = cmp::compare_scenario_rho(sys, DiffusionCoefficient::linear(2.0),
                                              DiffusionCoefficient::linear(1.0), fs, mc);
    bool pass = all_consistent(verdicts);

    // exact second-moment ordering in the ODE oracle, machine precision
    auto sys1 = lattice::with_rho(sys, DiffusionCoefficient::linear(2.0));
    oracle::PamMomentOracle om1(sys1);
    oracle::PamMomentOracle om2(sys);
    pass &= om1.validate(t, 0.004, 20000, 771).pass;
    pass &= om2.validate(t, 0.004, 20000, 772).pass;
    Eigen::MatrixXd m1 = om1.second_moments(t);
    Eigen::MatrixXd m2 = om2.second_moments(t);
    for (int i = 0; i < 5; ++i) pass &= m1(i, i) >= m2(i, i) - 1e-12 * m2(i, i);

    double secs = sw.seconds();
    pass &= secs < 300.0;
    report(7, "PAM 2 vs 1: moments/laplace/central-even/exp all consistent at 99%", pass,
           secs);
}

TEST_CASE("criterion 8: moment comparison in gamma at desk scale") {
    Stopwatch sw;
    auto base = [](int m) { return m == 0 ? 1.0 : 0.2 * std::pow(0.5, std::abs(m) - 1); };
    auto bumped = [&](int m) { return base(m) + (std::abs(m) == 1 ? 0.2 : 0.0); };
    auto sys = ring_system(5, 1.0, DiffusionCoefficient::linear(1.0), base);
    const double t = 0.4;
    auto fs = criterion_suite(t, 2, 1.0);
    cmp::MCParams mc;
    mc.n_paths = 100000;
    mc.dt = 0.004;
    mc.seed = 880;
    auto verdicts = cmp::compare_scenario_gamma(sys, bumped, base, fs, mc);
    bool pass = all_consistent(verdicts);

    auto sys1 = lattice::with_gamma(sys, bumped);
    oracle::PamMomentOracle om1(sys1);
    oracle::PamMomentOracle om2(sys);
    pass &= om1.validate(t, 0.004, 20000, 881).pass;
    pass &= om2.validate(t, 0.004, 20000, 882).pass;
    Eigen::MatrixXd m1 = om1.second_moments(t);
    Eigen::MatrixXd m2 = om2.second_moments(t);
    for (int i = 0; i < 5; ++i) pass &= m1(i, i) >= m2(i, i) - 1e-12 * m2(i, i);

    report(8, "gamma + 0.2 bump at +-1 dominates the base suite; ODE ordering exact", pass,
           sw.seconds());
}

TEST_CASE("criterion 9: Slepian at desk scale") {
    Stopwatch sw;
    Eigen::VectorXd u0(2);
    u0 << 1.0, 1.0;
    Eigen::MatrixXd p(2, 2);
    p << 0.0, 1.0, 1.0, 0.0;
    auto g1 = [](int m) { return m == 0 ? 1.0 : 0.5; };
    auto g2 = [](int m) { return m == 0 ? 1.0 : 0.1; };
    auto sys = lattice::make_direct_system(1.0, p, g1,
                                           DiffusionCoefficient::affine(0.8, 0.0), u0);
    const double t = 0.5;
    auto law1 = oracle::additive_law(lattice::with_gamma(sys, g1), {{t, 0}, {t, 1}}, 1e-4);
    auto law2 = oracle::additive_law(lattice::with_gamma(sys, g2), {{t, 0}, {t, 1}}, 1e-4);
    double mean = law1.mean(0);
    double sd = std::sqrt(law1.cov(0, 0));

    cmp::MCParams mc;
    mc.n_paths = 100000;
    mc.dt = 0.0025;
    mc.seed = 990;
    auto results = cmp::slepian(sys, g1, g2, t, {0, 1}, {mean, mean + sd}, {}, mc);
    bool pass = true;
    for (const auto& r : results) {
        double p1_exact = oracle::gaussian_box_probability(law1, r.threshold, r.threshold);
        double p2_exact = oracle::gaussian_box_probability(law2, r.threshold, r.threshold);
        pass &= p1_exact >= p2_exact;  // the exact Slepian direction
        pass &= std::abs(r.p1 - p1_exact) <= 3.0 * r.se1;
        pass &= std::abs(r.p2 - p2_exact) <= 3.0 * r.se2;
        pass &= r.verdict.status == cmp::Status::Consistent;
    }

    // PAM face: fully correlated vs independent noise with equal variance
    auto pam = ring_system(2, 1.0, DiffusionCoefficient::linear(1.0),
                           [](int) { return 1.0; });
    auto full = [](int) { return 1.0; };
    auto diag = [](int m) { return m == 0 ? 1.0 : 0.0; };
    cmp::MCParams mc2;
    mc2.n_paths = 100000;
    mc2.dt = 0.005;
    mc2.seed = 991;
    auto pam_results = cmp::slepian(pam, full, diag, 0.5, {0, 1}, {1.0, 1.6}, {}, mc2);
    for (const auto& r : pam_results) pass &= r.verdict.status == cmp::Status::Consistent;

    report(9, "P{max <= a} ordering matches the bivariate-normal oracle; PAM consistent",
           pass, sw.seconds());
}

TEST_CASE("criterion 10: harness calibration by negative control") {
    Stopwatch sw;
    double freq = cmp::calibrate_negative_control(100, 4000, 5.0, 5);
    bool pass = freq >= 0.99;
    report(10, "planted 5-se wrong-direction gaps flagged with frequency >= 0.99", pass,
           sw.seconds());
}

TEST_CASE("criterion 11: cone gating mirrors the worked examples") {
    Stopwatch sw;
    bool pass = true;
    // (z - c)^{2n}: single-time yes, multi-time no
    auto g1 = cmp::cone_check_scalar([](double z) { return std::pow(z - 3.0, 4); });
    pass &= g1.single_time_ok() && !g1.multi_time_ok();
    // exp(-lambda z): both modes
    auto g2 = cmp::cone_check_scalar([](double z) { return std::exp(-0.7 * z); });
    pass &= g2.single_time_ok() && g2.multi_time_ok() && g2.decreasing && g2.bounded;
    // z^b log^a(e + z): the increasing polynomial-growth cone on (0, 50]
    cmp::ConeBox box;
    box.hi = 50.0;
    auto g3 = cmp::cone_check_scalar(
        [](double z) { return std::pow(z, 1.5) * std::pow(std::log(std::exp(1.0) + z), 2.0); },
        box, 0.5);
    pass &= g3.in_c2v() && g3.increasing && g3.poly_growth && g3.multi_time_ok();

    // the harness enforces the same gate
    auto sys = ring_system(2, 1.0, DiffusionCoefficient::linear(1.0),
                           [](int m) { return m == 0 ? 1.0 : 0.0; });
    cmp::MCParams mc;
    mc.n_paths = 50;
    mc.dt = 0.01;
    auto single_ok = Functional::central_even({0.5, 0}, 1.0, 2);
    bool threw = false;
    try {
        cmp::compare_scenario_rho(sys, DiffusionCoefficient::linear(2.0),
                                  DiffusionCoefficient::linear(1.0), {single_ok}, mc);
    } catch (const std::exception&) {
        threw = true;
    }
    pass &= !threw;
    report(11, "(z-c)^{2n} single-time only; exp(-z) both; z^b log^a(e+z) in C2v_{p,+}",
           pass, sw.seconds());
}

TEST_CASE("criterion 12: convergence ladders") {
    Stopwatch sw;
    // fixed f^{eps1,eps1}-mollified setting: mollified white noise, regularized
    // point-mass initial data, Lipschitz rho
    corr::MollifyGrid grid;
    grid.half_width = 8.0;
    grid.step = 0.1;
    auto f = corr::mollify_correlation(corr::CorrelationFunction::white_noise(1), 0.5, grid);
    auto mu = heat::truncate_initial(heat::InitialDatum::point_masses({{{0.0}, 2.0}}, 1), 0.5);
    auto rc = DiffusionCoefficient::linear(0.5);

    bool pass = true;
    Stopwatch sw_delta;
    {
        std::vector<cli::LadderLevel> levels = {
            {0.4, 0.2, 0.02}, {0.4, 0.1, 0.01}, {0.4, 0.05, 0.005}};
        auto d = cli::convergence_study(f, mu, rc, levels, 6.0, 0.4, 0.0, 800, 121);
        pass &= d.size() == 2 && d[1].l2_distance < d[0].l2_distance;
        pass &= sw_delta.seconds() < 600.0;
    }
    Stopwatch sw_eps;
    {
        std::vector<cli::LadderLevel> levels = {
            {0.4, 0.1, 0.02}, {0.2, 0.1, 0.01}, {0.1, 0.1, 0.005}};
        auto d = cli::convergence_study(f, mu, rc, levels, 6.0, 0.4, 0.0, 800, 122);
        pass &= d.size() == 2 && d[1].l2_distance < d[0].l2_distance;
        pass &= sw_eps.seconds() < 600.0;
    }
    report(12, "delta-halving and epsilon-halving ladders decrease in coupled L2", pass,
           sw.seconds());
}

TEST_CASE("criterion 13: positivity under refinement") {
    Stopwatch sw;
    auto sys = ring_system(3, 1.0, DiffusionCoefficient::linear(1.0),
                           [](int m) { return m == 0 ? 1.0 : 0.0; });
    auto rep = cmp::positivity_report(sys, 1.44, {0.072, 0.036, 0.018}, 200000, 131);
    bool pass = rep[0].negative_fraction < 1e-3;
    pass &= rep[0].negative_fraction > rep[1].negative_fraction;
    pass &= rep[1].negative_fraction > rep[2].negative_fraction;
    report(13, "negative-entry fraction < 1e-3 and strictly decreasing under dt halving",
           pass, sw.seconds());
}
