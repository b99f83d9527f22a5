#pragma once

#include <Eigen/Dense>
#include <functional>
#include <vector>

#include "shelab/lattice.hpp"
#include "shelab/noise.hpp"

// Time integration of the interacting-diffusion system: Euler-Maruyama
// production stepper, Picard reference solver, finite-subsystem restriction,
// and the l^k moment diagnostic.

namespace shelab::sde {

struct Trajectory {
    std::vector<double> times;
    std::vector<Eigen::VectorXd> states;
    uint64_t seed = 0;
    uint64_t path_id = 0;
    int negativity_count = 0;       // entries pushed below zero by the scheme
    double negativity_max = 0.0;    // largest magnitude among them
};

struct EulerOptions {
    double stability_fraction = 0.1;  // dt <= fraction * epsilon in Yosida mode
    bool clamp_negative = false;      // off by default: excursions are data
    int record_every = 1;             // snapshot stride for euler_maruyama
};

// Dynamics restricted to a subset of sites; the complement is frozen at u0 and
// drops out of the exchange sum (the full -kappa U(i) damping term remains).
lattice::LatticeSystem restrict_system(const lattice::LatticeSystem& sys,
                                       const std::vector<int>& active_indices);

struct PathStats {
    int negativity_count = 0;
    double negativity_max = 0.0;
    int64_t steps = 0;
};

// One Euler-Maruyama path.  visit(step, t, state) runs after initialization
// (step 0) and after every step; states are not stored.
PathStats run_path(const lattice::LatticeSystem& sys, double T, double dt,
                   const noise::NoiseStream& stream,
                   const std::function<void(int64_t, double, const Eigen::VectorXd&)>& visit,
                   const EulerOptions& opt = EulerOptions{});

// U_{n+1} = U_n + kappa p-exchange dt + rho(U_n) dM, snapshots retained.
Trajectory euler_maruyama(const lattice::LatticeSystem& sys, double T, double dt,
                          const noise::NoiseStream& stream,
                          const EulerOptions& opt = EulerOptions{});

// Euler endpoint with caller-supplied increments (one vector per step);
// refinement studies pass coarse increments summed from a fine stream.
Eigen::VectorXd euler_with_increments(const lattice::LatticeSystem& sys, double dt,
                                      const std::vector<Eigen::VectorXd>& increments);

struct PicardReport {
    Trajectory trajectory;
    std::vector<double> sup_differences;  // per iteration
    bool converged = false;
    double final_ratio = 0.0;
};

// Picard iteration on one fixed discretized noise path (left-point rule);
// reference tool for small systems (<= 16 sites).
PicardReport picard_reference(const lattice::LatticeSystem& sys, double T, double dt,
                              const noise::NoiseStream& stream, int iterations,
                              double tol = 1e-12);

struct LkDiagnostic {
    double estimate = 0.0;      // MC sup_{t<=T} E ||U(t,.)||_k^k
    double std_error = 0.0;     // at the maximizing step
    double bound = 0.0;         // 3^k ||u0||^k exp(beta T)
    double beta = 0.0;          // 6 (3 gamma(0) k^2 Lip^2 + kappa k)
    bool pass = false;          // estimate + 2.58 se <= bound
};

// Monte Carlo check of the l^k moment bound (symmetric-kernel constant).
LkDiagnostic lk_moment_diagnostic(const lattice::LatticeSystem& sys, int k, double T,
                                  double dt, int n_paths, uint64_t seed);

}  // namespace shelab::sde
