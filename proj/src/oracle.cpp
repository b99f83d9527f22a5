#include "shelab/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "shelab/parallel.hpp"
#include "shelab/quadrature.hpp"
#include "shelab/sde.hpp"

namespace shelab::oracle {

Eigen::MatrixXd expm(const Eigen::MatrixXd& a) {
    if (a.rows() != a.cols()) throw std::invalid_argument("expm: square matrix required");
    const int n = static_cast<int>(a.rows());
    double norm = a.cwiseAbs().rowwise().sum().maxCoeff();  // infinity norm
    int s = 0;
    if (norm > 0.25) s = static_cast<int>(std::ceil(std::log2(norm / 0.25)));
    Eigen::MatrixXd b = a / std::pow(2.0, s);

    // (6,6) Pade: c_0 = 1, c_k = c_{k-1} (7-k) / (k (13-k))
    double c = 1.0;
    Eigen::MatrixXd num = Eigen::MatrixXd::Identity(n, n);
    Eigen::MatrixXd den = Eigen::MatrixXd::Identity(n, n);
    Eigen::MatrixXd pw = Eigen::MatrixXd::Identity(n, n);
    for (int k = 1; k <= 6; ++k) {
        c *= static_cast<double>(7 - k) / (k * (13 - k));
        pw = pw * b;
        num += c * pw;
        if (k % 2 == 0)
            den += c * pw;
        else
            den -= c * pw;
    }
    Eigen::MatrixXd x = den.partialPivLu().solve(num);
    for (int i = 0; i < s; ++i) x = x * x;
    return x;
}

// ---------------------------------------------------------------------------
// Additive-noise law
// ---------------------------------------------------------------------------

GaussianLaw additive_law(const lattice::LatticeSystem& sys,
                         const std::vector<QueryPoint>& points, double dt_ode) {
    using rho::DiffusionCoefficient;
    const auto& rc = sys.rho_coef;
    bool constant_rho =
        (rc.kind() == DiffusionCoefficient::Kind::Affine && rc.linear_lambda() == 0.0) ||
        (rc.kind() == DiffusionCoefficient::Kind::Linear && rc.linear_lambda() == 0.0);
    if (!constant_rho)
        throw std::invalid_argument("additive_law: rho must be constant (Affine(a, 0))");
    if (!sys.all_active())
        throw std::invalid_argument("additive_law: restricted systems not supported");
    for (const auto& q : points)
        if (!(q.t > 0.0) || q.site < 0 || q.site >= sys.size())
            throw std::invalid_argument("additive_law: bad query point");

    const double a_const = rc(0.0);
    const int n = sys.size();
    const Eigen::MatrixXd drift =
        sys.kappa * (sys.p.entries - Eigen::MatrixXd::Identity(n, n));

    GaussianLaw law;
    law.points = points;
    const int m = static_cast<int>(points.size());
    law.mean.resize(m);
    law.cov.resize(m, m);

    // flows e^{A t} at all distinct times
    std::map<double, Eigen::MatrixXd> flow;
    for (const auto& q : points)
        if (!flow.count(q.t)) flow[q.t] = expm(drift * q.t);
    for (int i = 0; i < m; ++i)
        law.mean(i) = (flow[points[i].t] * sys.u0)(points[i].site);

    // W(tau) = int_0^tau e^{Aq} Gamma e^{A^T q} dq at every pairwise minimum,
    // composite Simpson on a shared fine grid.
    std::vector<double> taus;
    for (int i = 0; i < m; ++i)
        for (int j = 0; j <= i; ++j)
            taus.push_back(std::min(points[i].t, points[j].t));
    std::sort(taus.begin(), taus.end());
    taus.erase(std::unique(taus.begin(), taus.end()), taus.end());
    const double tau_max = taus.back();
    int64_t n_sub = std::max<int64_t>(64, static_cast<int64_t>(std::ceil(tau_max / dt_ode)));
    if (n_sub % 2 == 1) ++n_sub;
    const double h = tau_max / static_cast<double>(n_sub);

    const Eigen::MatrixXd step = expm(drift * h);
    Eigen::MatrixXd flow_q = Eigen::MatrixXd::Identity(n, n);
    Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(n, n);
    std::map<double, Eigen::MatrixXd> w_at;
    size_t next_tau = 0;
    auto integrand = [&](const Eigen::MatrixXd& fq) -> Eigen::MatrixXd {
        return fq * sys.cov.gamma * fq.transpose();
    };
    // Simpson with on-the-fly emission at the requested taus (snapped to grid)
    Eigen::MatrixXd prev_f = integrand(flow_q);
    double q0 = 0.0;
    while (next_tau < taus.size() && taus[next_tau] <= 1e-14) {
        w_at[taus[next_tau]] = acc;
        ++next_tau;
    }
    for (int64_t j = 0; j < n_sub; j += 2) {
        Eigen::MatrixXd f0 = prev_f;
        flow_q = flow_q * step;
        Eigen::MatrixXd f1 = integrand(flow_q);
        flow_q = flow_q * step;
        Eigen::MatrixXd f2 = integrand(flow_q);
        acc += (h / 3.0) * (f0 + 4.0 * f1 + f2);
        prev_f = f2;
        q0 = (j + 2) * h;
        while (next_tau < taus.size() && taus[next_tau] <= q0 + 0.5 * h) {
            w_at[taus[next_tau]] = acc;
            ++next_tau;
        }
    }
    while (next_tau < taus.size()) w_at[taus[next_tau++]] = acc;

    for (int i = 0; i < m; ++i) {
        for (int j = 0; j <= i; ++j) {
            const double ti = points[i].t, tj = points[j].t;
            const double tau = std::min(ti, tj);
            Eigen::MatrixXd w = w_at.at(tau);
            Eigen::MatrixXd cov_block = expm(drift * (ti - tau)) * w *
                                        expm(drift * (tj - tau)).transpose();
            double v = a_const * a_const * cov_block(points[i].site, points[j].site);
            law.cov(i, j) = v;
            law.cov(j, i) = v;
        }
    }
    return law;
}

double gaussian_box_probability(const GaussianLaw& law, double a1, double a2) {
    if (law.points.size() != 2)
        throw std::invalid_argument("gaussian_box_probability: 2-point law required");
    const double m1 = law.mean(0), m2 = law.mean(1);
    const double s11 = law.cov(0, 0), s22 = law.cov(1, 1), s12 = law.cov(0, 1);
    if (!(s11 > 0.0)) return (m1 <= a1 ? 1.0 : 0.0) * (m2 <= a2 ? 1.0 : 0.0);
    const double sd1 = std::sqrt(s11);
    const double cond_var = std::max(s22 - s12 * s12 / s11, 0.0);
    const double cond_sd = std::sqrt(cond_var);
    auto integrand = [&](double x) {
        double cond_mean = m2 + s12 / s11 * (x - m1);
        double inner;
        if (cond_sd > 0.0)
            inner = normal_cdf((a2 - cond_mean) / cond_sd);
        else
            inner = cond_mean <= a2 ? 1.0 : 0.0;
        double z = (x - m1) / sd1;
        return normal_pdf(z) / sd1 * inner;
    };
    quad::Options opt;
    opt.abs_tol = 1e-11;
    double lo = m1 - 10.0 * sd1;
    double hi = std::min(a1, m1 + 10.0 * sd1);
    if (hi <= lo) return a1 >= m1 + 10.0 * sd1 ? 1.0 : 0.0;
    return quad::integrate_checked(integrand, lo, hi, opt);
}

// ---------------------------------------------------------------------------
// Isserlis pairings
// ---------------------------------------------------------------------------

namespace {

double pairing_sum(std::vector<int>& vars, const Eigen::MatrixXd& cov) {
    if (vars.empty()) return 1.0;
    if (vars.size() % 2 == 1) return 0.0;
    // pair the first variable with each other one
    double total = 0.0;
    int first = vars[0];
    for (size_t j = 1; j < vars.size(); ++j) {
        int partner = vars[j];
        std::vector<int> rest;
        rest.reserve(vars.size() - 2);
        for (size_t k = 1; k < vars.size(); ++k)
            if (k != j) rest.push_back(vars[k]);
        total += cov(first, partner) * pairing_sum(rest, cov);
    }
    return total;
}

double binom(int n, int k) {
    double r = 1.0;
    for (int i = 1; i <= k; ++i) r *= static_cast<double>(n - k + i) / i;
    return r;
}

}  // namespace

double isserlis_moment(const GaussianLaw& law, const std::vector<int>& multi_index) {
    const int m = static_cast<int>(law.points.size());
    if (static_cast<int>(multi_index.size()) != m)
        throw std::invalid_argument("isserlis_moment: index size mismatch");
    int degree = 0;
    for (int k : multi_index) {
        if (k < 0) throw std::invalid_argument("isserlis_moment: negative exponent");
        degree += k;
    }
    if (degree > kIsserlisDegreeCap)
        throw UnsupportedError("isserlis_moment: total degree exceeds cap 8");

    // expand around the mean: sum over how many centered factors each point
    // contributes, pairings on the centered part, means on the rest.
    std::vector<int> j(m, 0);
    double total = 0.0;
    while (true) {
        double coeff = 1.0;
        std::vector<int> vars;
        for (int k = 0; k < m; ++k) {
            coeff *= binom(multi_index[k], j[k]) *
                     std::pow(law.mean(k), multi_index[k] - j[k]);
            for (int c = 0; c < j[k]; ++c) vars.push_back(k);
        }
        if (vars.size() % 2 == 0) total += coeff * pairing_sum(vars, law.cov);
        // next multi-index j <= multi_index
        int k = 0;
        while (k < m) {
            if (++j[k] <= multi_index[k]) break;
            j[k] = 0;
            ++k;
        }
        if (k == m) break;
    }
    return total;
}

// ---------------------------------------------------------------------------
// PAM second-moment ODE
// ---------------------------------------------------------------------------

PamMomentOracle::PamMomentOracle(const lattice::LatticeSystem& sys) : sys_(sys) {
    if (sys.rho_coef.kind() != rho::DiffusionCoefficient::Kind::Linear)
        throw std::invalid_argument("PamMomentOracle: rho must be Linear(lambda)");
    if (!sys.all_active())
        throw std::invalid_argument("PamMomentOracle: restricted systems not supported");
    lambda_ = sys.rho_coef.linear_lambda();
    const int n = sys.size();
    drift_ = sys.kappa * (sys.p.entries - Eigen::MatrixXd::Identity(n, n));
    gamma_ = sys.cov.gamma;
}

Eigen::MatrixXd PamMomentOracle::second_moments_unchecked(double t, double dt_ode) const {
    if (!(t >= 0.0)) throw std::domain_error("second_moments: t must be >= 0");
    Eigen::MatrixXd m = sys_.u0 * sys_.u0.transpose();
    if (t == 0.0) return m;
    int64_t n_steps = std::max<int64_t>(1, static_cast<int64_t>(std::ceil(t / dt_ode)));
    const double h = t / static_cast<double>(n_steps);
    const double l2 = lambda_ * lambda_;
    auto rhs = [&](const Eigen::MatrixXd& x) -> Eigen::MatrixXd {
        return drift_ * x + x * drift_.transpose() + l2 * gamma_.cwiseProduct(x);
    };
    for (int64_t s = 0; s < n_steps; ++s) {
        Eigen::MatrixXd k1 = rhs(m);
        Eigen::MatrixXd k2 = rhs(m + 0.5 * h * k1);
        Eigen::MatrixXd k3 = rhs(m + 0.5 * h * k2);
        Eigen::MatrixXd k4 = rhs(m + h * k3);
        m += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        if (!m.allFinite()) throw NumericError("second_moments: ODE step blew up");
    }
    return m;
}

Eigen::MatrixXd PamMomentOracle::second_moments(double t, double dt_ode) const {
    if (!validated_)
        throw std::logic_error(
            "PamMomentOracle: MC agreement gate has not passed; call validate() first");
    return second_moments_unchecked(t, dt_ode);
}

PamValidation PamMomentOracle::validate(double t, double dt_mc, int n_paths,
                                        uint64_t seed) {
    const int n = sys_.size();
    const int n_chunks = par::kEnsembleChunks;
    auto chunks = par::make_chunks(n_paths, n_chunks);
    std::vector<Eigen::MatrixXd> sum(chunks.size()), sumsq(chunks.size());
    par::run_chunks(chunks, [&](const par::Chunk& c) {
        Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(n, n);
        Eigen::MatrixXd acc2 = Eigen::MatrixXd::Zero(n, n);
        int64_t n_steps = static_cast<int64_t>(std::round(t / dt_mc));
        for (int64_t p = c.begin; p < c.end; ++p) {
            noise::NoiseStream stream =
                noise::make_stream(seed, static_cast<uint64_t>(p), dt_mc, sys_.factor);
            sde::run_path(sys_, t, dt_mc, stream,
                          [&](int64_t step, double, const Eigen::VectorXd& u) {
                              if (step != n_steps) return;
                              for (int i = 0; i < n; ++i)
                                  for (int j = 0; j <= i; ++j) {
                                      double v = u(i) * u(j);
                                      acc(i, j) += v;
                                      acc2(i, j) += v * v;
                                  }
                          });
        }
        sum[c.index] = acc;
        sumsq[c.index] = acc2;
    });
    Eigen::MatrixXd mean = Eigen::MatrixXd::Zero(n, n);
    Eigen::MatrixXd second = Eigen::MatrixXd::Zero(n, n);
    for (size_t c = 0; c < chunks.size(); ++c) {
        mean += sum[c];
        second += sumsq[c];
    }
    mean /= n_paths;
    second /= n_paths;

    Eigen::MatrixXd ode = second_moments_unchecked(t);
    PamValidation rep;
    rep.n_paths = n_paths;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j <= i; ++j) {
            double se = std::sqrt(
                std::max(second(i, j) - mean(i, j) * mean(i, j), 0.0) / n_paths);
            double z = se > 0.0 ? std::abs(mean(i, j) - ode(i, j)) / se : 0.0;
            rep.max_z = std::max(rep.max_z, z);
        }
    rep.pass = rep.max_z <= 5.0;
    if (rep.pass) validated_ = true;
    return rep;
}

}  // namespace shelab::oracle
