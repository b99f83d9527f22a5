#pragma once

#include <Eigen/Dense>
#include <map>
#include <string>
#include <vector>

#include "shelab/correlation.hpp"
#include "shelab/heatkernel.hpp"
#include "shelab/noise.hpp"
#include "shelab/rho.hpp"

// Spatial discretization of the mollified equation: the cube-averaged heat
// kernel P^{eps,delta}, lattice-noise covariance, and assembly of complete
// interacting-diffusion systems.

namespace shelab::lattice {

using Site = std::vector<int>;

struct TransitionMatrix {
    std::vector<Site> sites;
    Eigen::MatrixXd entries;   // row-stochastic
    double lambda = 0.0;       // max column sum, recorded at build
    double lost_mass = 0.0;    // pre-fold mass outside the offset box

    int size() const { return static_cast<int>(sites.size()); }
};

// P_{ij}^{eps,delta}: product over coordinates of the standard normal mass of
// the delta-cube around (i-j), i.e. Phi((m+1/2) delta/sqrt(eps)) - Phi((m-1/2) delta/sqrt(eps)).
double transition_kernel(double eps, double delta, const Site& i, const Site& j, int d);

// Kernel over the box {-radius..radius}^d with periodic folding of the tail so
// rows sum to exactly 1 and the matrix stays symmetric (Lambda = 1).  Throws
// when the folded mass exceeds mass_tol.
TransitionMatrix build_transition(double eps, double delta, int radius, int d,
                                  double mass_tol = 1e-8);

// gamma^{eps,delta}(m) = (G(2 eps,.) * f)(m delta): physical-space double
// convolution of the two kernel factors with f.
std::map<Site, double> lattice_covariance(const corr::CorrelationFunction& f, double eps,
                                          double delta, const std::vector<Site>& offsets);

// Spectral route for the same covariance in the module convention,
// (2 pi)^{-d} int exp(-eps |xi|^2) cos(delta m . xi) fhat(dxi); used as a
// cross-check of the physical route (d = 1).
double lattice_covariance_spectral(const corr::CorrelationFunction& f, double eps,
                                   double delta, const Site& m);

// Lambda = max_j sum_i p_{ij}.
double check_lambda(const TransitionMatrix& p);

struct LatticeSystem {
    std::vector<Site> sites;
    double delta = 0.0;    // site spacing in physical units (0: abstract sites)
    double kappa = 0.0;
    double epsilon = 0.0;  // Yosida parameter when built from the pipeline, else 0
    TransitionMatrix p;
    std::map<Site, double> gamma;  // offset covariance
    noise::CovarianceMatrix cov;   // assembled over sites, PSD-repaired
    std::shared_ptr<const Eigen::MatrixXd> factor;  // lower-triangular noise factor
    rho::DiffusionCoefficient rho_coef = rho::DiffusionCoefficient::zero();
    Eigen::VectorXd u0;
    std::vector<uint8_t> active;  // restrict_system mask; all 1 by default

    double gamma_at(const Site& offset) const;
    double gamma0() const;
    int size() const { return static_cast<int>(sites.size()); }
    bool all_active() const;
};

enum class KappaMode { Yosida, Explicit };

// Full pipeline assembly: p from build_transition, kappa = 1/eps (Yosida),
// u0(i) = J0(mu, eps, i delta), Gamma from lattice_covariance + PSD repair.
LatticeSystem assemble_system(const corr::CorrelationFunction& f, double eps, double delta,
                              int radius, KappaMode kappa_mode,
                              const rho::DiffusionCoefficient& rho,
                              const heat::InitialDatum& mu,
                              double explicit_kappa = 0.0);

// Desk-scale assembly from explicit parts (abstract sites 0..n-1 on a line).
LatticeSystem make_direct_system(double kappa, const Eigen::MatrixXd& p,
                                 const std::function<double(int)>& gamma_of_offset,
                                 const rho::DiffusionCoefficient& rho,
                                 const Eigen::VectorXd& u0);

// Replace the noise covariance by a new offset function (same sites);
// re-assembles and re-factorizes.
LatticeSystem with_gamma(const LatticeSystem& sys,
                         const std::function<double(int)>& gamma_of_offset);

LatticeSystem with_rho(const LatticeSystem& sys, const rho::DiffusionCoefficient& rho);

// Structured text serialization for reproducibility.
void save_system(const LatticeSystem& sys, const std::string& path);
LatticeSystem load_system(const std::string& path);

}  // namespace shelab::lattice
