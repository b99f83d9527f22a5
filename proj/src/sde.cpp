#include "shelab/sde.hpp"

#include <cmath>
#include <sstream>

#include "shelab/parallel.hpp"

namespace shelab::sde {

namespace {

int64_t step_count(double T, double dt) {
    if (!(T > 0.0) || !(dt > 0.0))
        throw std::domain_error("integrator: T and dt must be positive");
    int64_t n = static_cast<int64_t>(std::round(T / dt));
    if (n < 1) n = 1;
    return n;
}

void check_stability(const lattice::LatticeSystem& sys, double dt, const EulerOptions& opt) {
    if (sys.epsilon > 0.0 && dt > opt.stability_fraction * sys.epsilon + 1e-15) {
        std::ostringstream msg;
        msg << "dt = " << dt << " exceeds " << opt.stability_fraction << " * epsilon = "
            << opt.stability_fraction * sys.epsilon << " (Yosida stability cap)";
        throw std::domain_error(msg.str());
    }
    if (sys.kappa * dt > 0.5)
        throw std::domain_error("integrator: kappa * dt > 0.5 is unstable for the explicit drift");
}

// kappa (P - I) with inactive rows zeroed and exchange restricted to the
// active index set.
Eigen::MatrixXd drift_matrix(const lattice::LatticeSystem& sys) {
    const int n = sys.size();
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, n);
    for (int i = 0; i < n; ++i) {
        if (!sys.active[i]) continue;
        for (int j = 0; j < n; ++j) {
            if (sys.active[j]) a(i, j) = sys.kappa * sys.p.entries(i, j);
        }
        a(i, i) -= sys.kappa;
    }
    return a;
}

}  // namespace

lattice::LatticeSystem restrict_system(const lattice::LatticeSystem& sys,
                                       const std::vector<int>& active_indices) {
    lattice::LatticeSystem out = sys;
    out.active.assign(sys.size(), 0);
    for (int idx : active_indices) {
        if (idx < 0 || idx >= sys.size())
            throw std::invalid_argument("restrict_system: index out of range");
        out.active[idx] = 1;
    }
    return out;
}

PathStats run_path(const lattice::LatticeSystem& sys, double T, double dt,
                   const noise::NoiseStream& stream,
                   const std::function<void(int64_t, double, const Eigen::VectorXd&)>& visit,
                   const EulerOptions& opt) {
    check_stability(sys, dt, opt);
    const int n = sys.size();
    if (stream.sites() != n)
        throw std::invalid_argument("run_path: stream factor size mismatch");
    const int64_t n_steps = step_count(T, dt);
    const Eigen::MatrixXd a = drift_matrix(sys);
    const bool track_negativity = sys.rho_coef.vanishes_at_zero();

    Eigen::VectorXd u = sys.u0;
    Eigen::VectorXd drift(n), dm(n), z(n);
    PathStats stats;
    stats.steps = n_steps;
    visit(0, 0.0, u);
    for (int64_t s = 0; s < n_steps; ++s) {
        noise::sample_increments_into(stream, static_cast<uint64_t>(s), z, dm);
        drift.noalias() = a * u;
        for (int i = 0; i < n; ++i) {
            if (!sys.active[i]) continue;
            u(i) += drift(i) * dt + sys.rho_coef(u(i)) * dm(i);
            if (!std::isfinite(u(i))) {
                std::ostringstream msg;
                msg << "run_path: non-finite state at step " << s << ", site " << i;
                throw NumericError(msg.str());
            }
            if (u(i) < 0.0) {
                if (track_negativity) {
                    ++stats.negativity_count;
                    stats.negativity_max = std::max(stats.negativity_max, -u(i));
                }
                if (opt.clamp_negative) u(i) = 0.0;
            }
        }
        visit(s + 1, (s + 1) * dt, u);
    }
    return stats;
}

Trajectory euler_maruyama(const lattice::LatticeSystem& sys, double T, double dt,
                          const noise::NoiseStream& stream, const EulerOptions& opt) {
    Trajectory tr;
    tr.seed = stream.seed;
    tr.path_id = stream.path_id;
    const int64_t n_steps = step_count(T, dt);
    PathStats stats = run_path(
        sys, T, dt, stream,
        [&](int64_t step, double t, const Eigen::VectorXd& u) {
            if (step % opt.record_every == 0 || step == n_steps) {
                tr.times.push_back(t);
                tr.states.push_back(u);
            }
        },
        opt);
    tr.negativity_count = stats.negativity_count;
    tr.negativity_max = stats.negativity_max;
    return tr;
}

Eigen::VectorXd euler_with_increments(const lattice::LatticeSystem& sys, double dt,
                                      const std::vector<Eigen::VectorXd>& increments) {
    EulerOptions opt;
    check_stability(sys, dt, opt);
    const int n = sys.size();
    const Eigen::MatrixXd a = drift_matrix(sys);
    Eigen::VectorXd u = sys.u0, drift(n);
    for (const Eigen::VectorXd& dm : increments) {
        drift.noalias() = a * u;
        for (int i = 0; i < n; ++i) {
            if (!sys.active[i]) continue;
            u(i) += drift(i) * dt + sys.rho_coef(u(i)) * dm(i);
        }
    }
    return u;
}

PicardReport picard_reference(const lattice::LatticeSystem& sys, double T, double dt,
                              const noise::NoiseStream& stream, int iterations,
                              double tol) {
    if (sys.size() > 16)
        throw std::invalid_argument("picard_reference: reference tool for <= 16 sites");
    EulerOptions opt;
    check_stability(sys, dt, opt);
    const int n = sys.size();
    const int64_t n_steps = step_count(T, dt);
    const Eigen::MatrixXd a = drift_matrix(sys);

    // fixed discretized noise path
    std::vector<Eigen::VectorXd> dm(n_steps);
    Eigen::VectorXd z(n);
    for (int64_t s = 0; s < n_steps; ++s)
        noise::sample_increments_into(stream, static_cast<uint64_t>(s), z, dm[s]);

    // U^{(k)} on the full grid
    std::vector<Eigen::VectorXd> cur(n_steps + 1, sys.u0), next(n_steps + 1, sys.u0);
    PicardReport rep;
    for (int it = 0; it < iterations; ++it) {
        // left-point quadrature of drift and stochastic terms
        Eigen::VectorXd acc = sys.u0;
        next[0] = sys.u0;
        for (int64_t s = 0; s < n_steps; ++s) {
            Eigen::VectorXd incr = a * cur[s] * dt;
            for (int i = 0; i < n; ++i) {
                if (!sys.active[i]) {
                    incr(i) = 0.0;
                    continue;
                }
                incr(i) += sys.rho_coef(cur[s](i)) * dm[s](i);
            }
            acc += incr;
            next[s + 1] = acc;
        }
        double sup = 0.0;
        for (int64_t s = 0; s <= n_steps; ++s)
            sup = std::max(sup, (next[s] - cur[s]).cwiseAbs().maxCoeff());
        rep.sup_differences.push_back(sup);
        cur.swap(next);
        if (sup < tol) {
            rep.converged = true;
            break;
        }
    }
    size_t m = rep.sup_differences.size();
    if (m >= 2 && rep.sup_differences[m - 2] > 0.0)
        rep.final_ratio = rep.sup_differences[m - 1] / rep.sup_differences[m - 2];
    if (!rep.converged && m >= 2)
        rep.converged = rep.final_ratio < 1.0;

    rep.trajectory.seed = stream.seed;
    rep.trajectory.path_id = stream.path_id;
    rep.trajectory.times.resize(n_steps + 1);
    rep.trajectory.states = cur;
    for (int64_t s = 0; s <= n_steps; ++s) rep.trajectory.times[s] = s * dt;
    return rep;
}

LkDiagnostic lk_moment_diagnostic(const lattice::LatticeSystem& sys, int k, double T,
                                  double dt, int n_paths, uint64_t seed) {
    if (k < 2 || k % 2 != 0)
        throw std::invalid_argument("lk_moment_diagnostic: k must be even and >= 2");
    const int64_t n_steps = step_count(T, dt);
    const int n_chunks = par::kEnsembleChunks;
    auto chunks = par::make_chunks(n_paths, n_chunks);

    // per-chunk accumulators of sum_i |U|^k per step (mean and square)
    std::vector<std::vector<double>> sums(chunks.size()),
        sq_sums(chunks.size());
    par::run_chunks(chunks, [&](const par::Chunk& c) {
        std::vector<double>& acc = sums[c.index];
        std::vector<double>& acc2 = sq_sums[c.index];
        acc.assign(n_steps + 1, 0.0);
        acc2.assign(n_steps + 1, 0.0);
        for (int64_t p = c.begin; p < c.end; ++p) {
            noise::NoiseStream stream =
                noise::make_stream(seed, static_cast<uint64_t>(p), dt, sys.factor);
            run_path(sys, T, dt, stream,
                     [&](int64_t step, double, const Eigen::VectorXd& u) {
                         double norm_k = 0.0;
                         for (int i = 0; i < u.size(); ++i)
                             norm_k += std::pow(std::abs(u(i)), k);
                         acc[step] += norm_k;
                         acc2[step] += norm_k * norm_k;
                     });
        }
    });

    std::vector<double> mean(n_steps + 1, 0.0), second(n_steps + 1, 0.0);
    for (size_t c = 0; c < chunks.size(); ++c)
        for (int64_t s = 0; s <= n_steps; ++s) {
            mean[s] += sums[c][s];
            second[s] += sq_sums[c][s];
        }
    LkDiagnostic out;
    int64_t arg = 0;
    for (int64_t s = 0; s <= n_steps; ++s) {
        mean[s] /= n_paths;
        if (mean[s] > out.estimate) {
            out.estimate = mean[s];
            arg = s;
        }
    }
    double var = second[arg] / n_paths - mean[arg] * mean[arg];
    out.std_error = std::sqrt(std::max(var, 0.0) / n_paths);

    const double lip = sys.rho_coef.lip_estimate();
    const double g0 = sys.gamma0();
    out.beta = 6.0 * (3.0 * g0 * k * k * lip * lip + sys.kappa * k);
    double u0_norm_k = 0.0;
    for (int i = 0; i < sys.u0.size(); ++i) u0_norm_k += std::pow(sys.u0(i), k);
    out.bound = std::pow(3.0, k) * u0_norm_k * std::exp(out.beta * T);
    out.pass = out.estimate + 2.58 * out.std_error <= out.bound;
    return out;
}

}  // namespace shelab::sde
