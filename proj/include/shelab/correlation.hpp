#pragma once

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "shelab/heatkernel.hpp"

// Catalog of spatial correlation functions and spectral measures, the Dalang
// integral, the k(t) / h_n(t) / H(t;gamma) moment-bound machinery, and the
// double mollification f^{eps,eps}.

namespace shelab::corr {

using Offset = std::vector<int>;

// ---------------------------------------------------------------------------
// Correlation catalog
// ---------------------------------------------------------------------------

class CorrelationFunction {
public:
    enum class Kind {
        WhiteNoise,    // f = delta_0
        Riesz,         // f(x) = |x|^{-riesz_exponent}, 0 < exponent < d
        GaussianBump,  // f(x) = exp(-|x|^2 / scale)
        CauchyLike,    // f(x) = 1 / (1 + scale |x|^2)
        LatticeAtoms,  // sum of nonnegative atoms at integer offsets
        Tabulated,     // 1-d symmetric grid, linear interpolation
        Constant,      // f(x) = level (bounded fully-correlated case)
    };

    static CorrelationFunction white_noise(int dim = 1);
    static CorrelationFunction riesz(double exponent, int dim = 1);
    static CorrelationFunction gaussian_bump(double scale, int dim = 1);
    static CorrelationFunction cauchy_like(double scale, int dim = 1);
    static CorrelationFunction lattice_atoms(std::map<Offset, double> weights, int dim = 1);
    static CorrelationFunction tabulated(std::vector<double> grid_x, std::vector<double> grid_f);
    static CorrelationFunction constant(double level, int dim = 1);

    Kind kind() const { return kind_; }
    int dim() const { return dim_; }
    double riesz_exponent() const { return riesz_exponent_; }
    double scale() const { return scale_; }
    double level() const { return level_; }
    const std::map<Offset, double>& atoms() const { return atoms_; }
    const std::vector<double>& grid_x() const { return grid_x_; }
    const std::vector<double>& grid_f() const { return grid_f_; }

    // Pointwise value for function-kind entries; throws for measure kinds
    // (WhiteNoise, LatticeAtoms have atomic parts).
    double evaluate(const std::vector<double>& x) const;
    bool is_pointwise() const;
    std::string describe() const;

private:
    Kind kind_ = Kind::WhiteNoise;
    int dim_ = 1;
    double riesz_exponent_ = 0.5;
    double scale_ = 1.0;
    double level_ = 1.0;
    std::map<Offset, double> atoms_;
    std::vector<double> grid_x_, grid_f_;
};

// ---------------------------------------------------------------------------
// Spectral measures
// ---------------------------------------------------------------------------

struct SpectralAtom {
    std::vector<double> frequency;
    double weight = 0.0;
};

// Decay of the spectral density at infinity; used for a priori divergence
// classification instead of runtime heuristics.
enum class SpectralTail { GaussianDecay, ExponentialDecay, PowerLaw, Flat };

class SpectralMeasure {
public:
    enum class Kind { Density, Atomic };

    static SpectralMeasure density(int dim, std::function<double(double)> radial_density,
                                   SpectralTail tail, double tail_exponent, double tail_amp);
    static SpectralMeasure atomic(int dim, std::vector<SpectralAtom> atoms);

    Kind kind() const { return kind_; }
    int dim() const { return dim_; }
    double density_at(double radius) const { return radial_density_(radius); }
    SpectralTail tail() const { return tail_; }
    // density ~ tail_amp * r^{-tail_exponent} as r -> inf (PowerLaw / Flat).
    double tail_exponent() const { return tail_exponent_; }
    double tail_amp() const { return tail_amp_; }
    // density(r) equals tail_amp r^{-q} exactly (white noise, Riesz): permits
    // analytic tail integrals.
    bool tail_is_exact_power() const { return tail_exact_power_; }
    const std::vector<SpectralAtom>& atoms() const { return atoms_; }
    // trigonometric-polynomial payload (d = 1 lattice atoms); enables closed
    // forms where the oscillating tail defeats the generic quadrature.
    bool has_trig_atoms() const { return has_trig_atoms_; }
    const std::map<int, double>& trig_atoms() const { return trig_atoms_; }

    // Convention marker: hat f(xi) = int exp(-i xi.x) f(x) dx, and every
    // spectral integral carries the (2 pi)^{-d} prefactor.
    static constexpr const char* kConvention = "ft=exp(-i xi.x); integrals carry (2pi)^-d";

private:
    friend SpectralMeasure spectral_of(const CorrelationFunction&);
    Kind kind_ = Kind::Density;
    int dim_ = 1;
    std::function<double(double)> radial_density_;
    SpectralTail tail_ = SpectralTail::Flat;
    double tail_exponent_ = 0.0;
    double tail_amp_ = 0.0;
    bool tail_exact_power_ = false;
    bool has_trig_atoms_ = false;
    std::map<int, double> trig_atoms_;
    std::vector<SpectralAtom> atoms_;
};

// Riesz normalization: FT of |x|^{-b} is c_{d,b} |xi|^{b-d} with
// c_{d,b} = 2^{d-b} pi^{d/2} Gamma((d-b)/2) / Gamma(b/2).
double riesz_spectral_constant(int dim, double exponent);

// Spectral measure of a catalog entry, in the module convention.
// Throws UnsupportedError for Tabulated (and CauchyLike with d > 1).
SpectralMeasure spectral_of(const CorrelationFunction& f);

// ---------------------------------------------------------------------------
// Dalang condition
// ---------------------------------------------------------------------------

struct DalangResult {
    bool finite = false;
    double value = 0.0;       // Upsilon when finite
    std::string diagnostic;   // reason when divergent
};

// Upsilon(beta) = (2 pi)^{-d} int fhat(dxi) / (beta + |xi|^2).
DalangResult dalang_upsilon(const SpectralMeasure& fhat, double beta);

// Strengthened condition: same with integrand fhat(dxi)/(1+|xi|^2)^{1-alpha}.
DalangResult strengthened_dalang(const SpectralMeasure& fhat, double alpha);

// ---------------------------------------------------------------------------
// k(t), h_n(t), H(t;gamma)
// ---------------------------------------------------------------------------

// k(t) = int f(z) G(t,z) dz, decomposed as  c t^{-q}  +  smooth(t)  so that
// the integrable singularity can be integrated exactly panel by panel.
struct KernelK {
    double power_coef = 0.0;
    double power_exp = 0.0;  // q in c t^{-q}; q >= 1 means non-integrable at 0
    std::function<double(double)> smooth;  // nullable

    double operator()(double t) const;
    bool integrable_at_zero() const { return power_coef == 0.0 || power_exp < 1.0; }
};

KernelK kernel_decomposition(const CorrelationFunction& f);

double kernel_k(const CorrelationFunction& f, double t);

// Independent evaluation routes for cross-checks; throw UnsupportedError
// where the catalog entry lacks the route.
double kernel_k_physical(const CorrelationFunction& f, double t);
double kernel_k_spectral(const CorrelationFunction& f, double t);

// h_0 = 1, h_n(t) = int_0^t h_{n-1}(s) k(t-s) ds on a uniform grid of `steps`
// panels over [0,t]; returns h_0(t) ... h_{n_max}(t).
std::vector<double> h_sequence(const CorrelationFunction& f, int n_max, double t, int steps);

struct HSeriesResult {
    double value = 0.0;      // inf when the sum exceeds double range; see log_value
    double log_value = 0.0;  // log H(t;gamma), valid even when value overflows
    int n_terms = 0;         // partial-sum route: terms used; 0 on the renewal route
    bool converged = false;
    bool renewal_route = false;  // grid could not resolve the partial sums; the
                                 // renewal identity H = 1 + gamma (H * k) was
                                 // marched instead
    double last_term_rel = 0.0;  // last term relative to the partial sum
    // spectral bound on the exponential rate: inf{beta : Upsilon(2 beta) < 1/(2 gamma)}.
    std::optional<double> growth_rate_bound;
};

HSeriesResult h_series(const CorrelationFunction& f, double gamma, double t,
                       double tol = 1e-8, int steps = 256, int n_cap = 4000);

// ---------------------------------------------------------------------------
// Moment upper bounds
// ---------------------------------------------------------------------------

struct MomentBoundParams {
    double lip_rho = 0.0;   // Lipschitz constant of rho
    double vip = 0.0;       // |rho(0)| / Lip_rho
    int p = 2;
    std::optional<double> alpha;  // enables the exponential-form bound
    double alpha_constant = 1.0;  // the non-sharp C in the exponential form
};

struct MomentBoundResult {
    double bound = 0.0;       // [vip + sqrt(2) J0] H(t; gamma_p)^{1/2}
    double gamma_p = 0.0;
    double h_value = 0.0;
    double j0 = 0.0;
    std::optional<double> exp_form_bound;  // C [vip + J0] exp(C Lip^{2/a} p^{1/a} t)
    bool exp_form_sharp = false;           // always false: C is a configured placeholder
};

MomentBoundResult moment_upper_bound(const MomentBoundParams& params,
                                     const CorrelationFunction& f,
                                     const heat::InitialDatum& mu, double t,
                                     const heat::SpacePoint& x);

// ---------------------------------------------------------------------------
// Mollification f^{eps,eps}
// ---------------------------------------------------------------------------

// theta: even C^2 piecewise cubic supported on [-4,4] with theta(0) = 16/3;
// the fourfold convolution of the unit-box indicator.
double theta_poly(double x);

// Unit-mass double mollifier phi2 = phi * phi with phi the normalized tent:
// phi2(x) = 16^{-d} prod theta(x_i); here d = 1.
double phi2_1d(double x);

// (phi2)_eps scaled copy: eps^{-1} phi2(x / eps).
double phi2_scaled_1d(double eps, double x);

struct MollifyGrid {
    double half_width = 8.0;  // grid spans [-half_width, half_width]
    double step = 0.05;
};

// f^{eps,eps} = (phi2)_eps * f, tabulated on the requested symmetric grid.
// Exact finite sums for atom kinds; quadrature for densities.  1-d only.
// Throws std::invalid_argument when the grid cannot resolve support width
// 4 eps (step > eps).
CorrelationFunction mollify_correlation(const CorrelationFunction& f, double eps,
                                        const MollifyGrid& grid);

// ---------------------------------------------------------------------------
// Heat-smoothed correlation (shared with the lattice module)
// ---------------------------------------------------------------------------

// (G(s,.) * f)(x): closed forms for WhiteNoise / GaussianBump / LatticeAtoms /
// Constant, quadrature for the rest (1-d).
double heat_smoothed(const CorrelationFunction& f, double s, const std::vector<double>& x);

// Gram matrix F[i][j] = f(x_i - x_j) for pointwise kinds (row-major).
std::vector<std::vector<double>> gram_matrix(const CorrelationFunction& f,
                                             const std::vector<std::vector<double>>& points);

}  // namespace shelab::corr
