#pragma once

#include <Eigen/Dense>
#include <utility>
#include <vector>

#include "shelab/lattice.hpp"

// Exact and semi-exact references: the additive-noise Gaussian law, mixed
// Gaussian moments by pairing enumeration, and the linear-model second-moment
// matrix ODE (Monte Carlo gated before first trusted use).

namespace shelab::oracle {

// Matrix exponential: scaling-and-squaring with a fixed-order (6,6) Pade
// approximant; reference-grade for the small dense systems used here.
Eigen::MatrixXd expm(const Eigen::MatrixXd& a);

struct QueryPoint {
    double t = 0.0;
    int site = 0;
};

struct GaussianLaw {
    std::vector<QueryPoint> points;
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;
};

// Law of the additive-noise solution (rho constant = a) at the query points:
// mean = e^{kappa(p-I)t} u0, covariance from the Duhamel integral
// a^2 int_0^{t^s} e^{A(t-r)} Gamma e^{A^T(s-r)} dr  (Simpson, step dt_ode).
GaussianLaw additive_law(const lattice::LatticeSystem& sys,
                         const std::vector<QueryPoint>& points, double dt_ode = 1e-3);

// P{X1 <= a1, X2 <= a2} for a 2-point Gaussian law, by quadrature of the
// bivariate density (outer adaptive panel sweep, inner conditional CDF).
double gaussian_box_probability(const GaussianLaw& law, double a1, double a2);

inline constexpr int kIsserlisDegreeCap = 8;

// Exact mixed moment E[prod X_k^{m_k}] of a (non-centered) Gaussian law via
// enumeration over partial pairings.  Total degree capped at 8.
double isserlis_moment(const GaussianLaw& law, const std::vector<int>& multi_index);

struct PamValidation {
    bool pass = false;
    double max_z = 0.0;   // worst standardized deviation across entries
    int n_paths = 0;
};

// Second moments m_ij(t) = E[U(t,i) U(t,j)] for the linear coefficient
// rho(u) = lambda u, via RK4 on
//     dm/dt = kappa[(p-I)m + m(p-I)^T] + lambda^2 (Gamma o m),
// with o the entrywise product.  The ODE is implementation-derived, so a
// Monte Carlo agreement gate must pass before results are served.
class PamMomentOracle {
public:
    explicit PamMomentOracle(const lattice::LatticeSystem& sys);

    // Runs the mandatory MC agreement self-test (5 standard errors at t).
    PamValidation validate(double t, double dt_mc, int n_paths, uint64_t seed);

    bool validated() const { return validated_; }

    // Throws std::logic_error unless validate() has passed.
    Eigen::MatrixXd second_moments(double t, double dt_ode = 1e-4) const;

    // Ungated access for tests of the ODE itself.
    Eigen::MatrixXd second_moments_unchecked(double t, double dt_ode = 1e-4) const;

private:
    lattice::LatticeSystem sys_;
    Eigen::MatrixXd drift_;  // kappa (p - I)
    Eigen::MatrixXd gamma_;
    double lambda_ = 0.0;
    bool validated_ = false;
};

}  // namespace shelab::oracle
