#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

// Heat kernel, homogeneous solutions J0 for rough initial data, and the
// initial-data regularization operator (tent cutoff + heat smoothing).

namespace shelab::heat {

using SpacePoint = std::vector<double>;

double sq_norm(const SpacePoint& x);

// G(t,x) = (2 pi t)^{-d/2} exp(-|x|^2/(2t)).  Throws std::domain_error for t <= 0.
double heat_kernel(double t, const SpacePoint& x);
double heat_kernel_1d(double t, double x);

// Dimension cap for density quadrature (all catalog examples live in small d).
inline constexpr int kMaxDensityDim = 3;

struct PointMass {
    SpacePoint location;
    double mass = 0.0;
};

class InitialDatum;

// Catalogued density forms.  Closed set: analytic shapes, a tabulated grid
// with linear interpolation, and the regularized form produced by
// truncate_initial.
struct DensityForm {
    enum class Kind {
        Constant,      // f(x) = level
        GaussianBump,  // f(x) = amp * exp(-|x|^2 / scale)
        ExpQuadratic,  // f(x) = exp(growth * |x|^2), admissibility test case
        Tabulated,     // 1-d grid, linear interpolation, zero outside
        Truncated,     // ((mu psi_eps) * G(eps,.))(x)
    };
    Kind kind = Kind::Constant;
    double level = 1.0;
    double amp = 1.0;
    double scale = 1.0;
    double growth = 1.0;
    std::vector<double> grid_x;  // Tabulated
    std::vector<double> grid_f;
    std::shared_ptr<const InitialDatum> inner;  // Truncated
    double eps = 0.0;

    double evaluate(const std::vector<double>& x) const;
    // Effective support radius for quadrature windows; infinity when unbounded.
    double support_radius() const;
    bool bounded() const;
};

class InitialDatum {
public:
    enum class Kind { LebesgueDensity, PointMassSum, Zero };

    static InitialDatum zero(int dim);
    static InitialDatum lebesgue(int dim, double level = 1.0);
    static InitialDatum point_masses(std::vector<PointMass> masses, int dim);
    // max_dim raises the default quadrature-cost cap when a caller accepts it
    static InitialDatum density(DensityForm form, int dim, int max_dim = kMaxDensityDim);

    Kind kind() const { return kind_; }
    int dim() const { return dim_; }
    const std::vector<PointMass>& masses() const { return masses_; }
    const DensityForm& form() const { return form_; }

private:
    Kind kind_ = Kind::Zero;
    int dim_ = 1;
    std::vector<PointMass> masses_;
    DensityForm form_;
};

// Tent cutoff psi_eps: 1 on |x| <= 1/eps, linear ramp to 0 at 1 + 1/eps.
double tent_cutoff(double eps, double radius);

// J0(t,x) = (mu * G(t,.))(x).  Exact finite sum for point masses, adaptive
// quadrature (abs_tol) for densities.
double homogeneous_solution(const InitialDatum& mu, double t, const SpacePoint& x,
                            double abs_tol = 1e-9);

// Regularized initial data ((mu psi_eps) * G(eps,.)) as a density-kind datum.
// Requires eps in (0,1).
InitialDatum truncate_initial(const InitialDatum& mu, double eps);

// Dominating constant C(eps,delta,mu) with |truncated|(x) <= C G(delta,x),
// valid for any delta > eps (Gaussian-tail bound of the regularization).
double truncated_domination_constant(const InitialDatum& mu, double eps, double delta);

struct AdmissibilityEntry {
    double a = 0.0;
    bool finite = false;
    double value = 0.0;  // the weighted mass when finite
};

struct AdmissibilityReport {
    bool admissible = false;
    std::optional<double> failing_a;
    std::vector<AdmissibilityEntry> entries;
    std::string detail;
};

// Checks int exp(-a|x|^2) mu(dx) < inf for each supplied a.
AdmissibilityReport check_rough_admissible(const InitialDatum& mu,
                                           const std::vector<double>& a_values);

}  // namespace shelab::heat
