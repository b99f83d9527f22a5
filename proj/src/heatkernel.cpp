#include "shelab/heatkernel.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "shelab/common.hpp"
#include "shelab/quadrature.hpp"

namespace shelab::heat {

double sq_norm(const SpacePoint& x) {
    double s = 0.0;
    for (double v : x) s += v * v;
    return s;
}

double heat_kernel(double t, const SpacePoint& x) {
    if (!(t > 0.0)) throw std::domain_error("heat_kernel: t must be positive");
    const double d = static_cast<double>(x.size());
    return std::pow(kTwoPi * t, -0.5 * d) * std::exp(-sq_norm(x) / (2.0 * t));
}

double heat_kernel_1d(double t, double x) {
    if (!(t > 0.0)) throw std::domain_error("heat_kernel: t must be positive");
    return std::exp(-x * x / (2.0 * t)) / std::sqrt(kTwoPi * t);
}

double tent_cutoff(double eps, double radius) {
    const double r0 = 1.0 / eps;
    if (radius <= r0) return 1.0;
    if (radius <= 1.0 + r0) return 1.0 + r0 - radius;
    return 0.0;
}

// ---------------------------------------------------------------------------
// DensityForm
// ---------------------------------------------------------------------------

namespace {

double tabulated_eval(const std::vector<double>& gx, const std::vector<double>& gf,
                      double x) {
    if (gx.empty() || x < gx.front() || x > gx.back()) return 0.0;
    auto it = std::upper_bound(gx.begin(), gx.end(), x);
    if (it == gx.begin()) return gf.front();
    if (it == gx.end()) return gf.back();
    size_t i = static_cast<size_t>(it - gx.begin());
    double w = (x - gx[i - 1]) / (gx[i] - gx[i - 1]);
    return (1.0 - w) * gf[i - 1] + w * gf[i];
}

double truncated_eval(const InitialDatum& inner, double eps, const std::vector<double>& x);

}  // namespace

double DensityForm::evaluate(const std::vector<double>& x) const {
    double r2 = 0.0;
    for (double v : x) r2 += v * v;
    switch (kind) {
        case Kind::Constant:
            return level;
        case Kind::GaussianBump:
            return amp * std::exp(-r2 / scale);
        case Kind::ExpQuadratic:
            return std::exp(growth * r2);
        case Kind::Tabulated:
            return tabulated_eval(grid_x, grid_f, x.at(0));
        case Kind::Truncated:
            return truncated_eval(*inner, eps, x);
    }
    return 0.0;
}

double DensityForm::support_radius() const {
    switch (kind) {
        case Kind::Tabulated:
            return grid_x.empty() ? 0.0 : std::max(std::abs(grid_x.front()), std::abs(grid_x.back()));
        case Kind::Truncated:
            // psi support radius plus the heat-smoothing spread.
            return (1.0 + 1.0 / eps) + 12.0 * std::sqrt(eps);
        default:
            return std::numeric_limits<double>::infinity();
    }
}

bool DensityForm::bounded() const { return kind != Kind::ExpQuadratic; }

// ---------------------------------------------------------------------------
// InitialDatum
// ---------------------------------------------------------------------------

InitialDatum InitialDatum::zero(int dim) {
    InitialDatum mu;
    mu.kind_ = Kind::Zero;
    mu.dim_ = dim;
    return mu;
}

InitialDatum InitialDatum::lebesgue(int dim, double level) {
    DensityForm f;
    f.kind = DensityForm::Kind::Constant;
    f.level = level;
    return density(std::move(f), dim);
}

InitialDatum InitialDatum::point_masses(std::vector<PointMass> masses, int dim) {
    double total = 0.0;
    for (const auto& pm : masses) {
        if (pm.mass < 0.0) throw std::invalid_argument("InitialDatum: negative point mass");
        if (static_cast<int>(pm.location.size()) != dim)
            throw std::invalid_argument("InitialDatum: point mass dimension mismatch");
        total += pm.mass;
    }
    if (total <= 0.0)
        throw std::invalid_argument("InitialDatum: point-mass sum must carry positive mass");
    InitialDatum mu;
    mu.kind_ = Kind::PointMassSum;
    mu.dim_ = dim;
    mu.masses_ = std::move(masses);
    return mu;
}

InitialDatum InitialDatum::density(DensityForm form, int dim, int max_dim) {
    if (dim < 1 || dim > max_dim)
        throw std::invalid_argument("InitialDatum: density dimension out of supported range");
    if (form.kind == DensityForm::Kind::Tabulated && dim != 1)
        throw std::invalid_argument("InitialDatum: tabulated densities are 1-d");
    InitialDatum mu;
    mu.kind_ = Kind::LebesgueDensity;
    mu.dim_ = dim;
    mu.form_ = std::move(form);
    return mu;
}

// ---------------------------------------------------------------------------
// Quadrature helpers: iterated adaptive panels for d <= 3.
// ---------------------------------------------------------------------------

namespace {

double integrate_box(const std::function<double(const std::vector<double>&)>& f,
                     const std::vector<double>& lo, const std::vector<double>& hi,
                     double abs_tol) {
    const size_t d = lo.size();
    quad::Options opt;
    opt.abs_tol = abs_tol;
    std::vector<double> x(d, 0.0);
    std::function<double(size_t)> level = [&](size_t k) -> double {
        if (k == d) return f(x);
        return quad::integrate_checked(
            [&](double v) {
                x[k] = v;
                return level(k + 1);
            },
            lo[k], hi[k], opt);
    };
    return level(0);
}

// window covering the Gaussian factor around `center` intersected with the
// density support when compact.
void quad_window(const std::vector<double>& center, double t, double support_r,
                 std::vector<double>& lo, std::vector<double>& hi) {
    const double spread = 12.0 * std::sqrt(t);
    const size_t d = center.size();
    lo.assign(d, 0.0);
    hi.assign(d, 0.0);
    for (size_t k = 0; k < d; ++k) {
        double a = center[k] - spread;
        double b = center[k] + spread;
        if (std::isfinite(support_r)) {
            a = std::max(a, -support_r);
            b = std::min(b, support_r);
        }
        lo[k] = a;
        hi[k] = std::min(b, std::max(a, b));
    }
}

double truncated_eval(const InitialDatum& inner, double eps, const std::vector<double>& x) {
    switch (inner.kind()) {
        case InitialDatum::Kind::Zero:
            return 0.0;
        case InitialDatum::Kind::PointMassSum: {
            double s = 0.0;
            for (const auto& pm : inner.masses()) {
                double w = tent_cutoff(eps, std::sqrt(sq_norm(pm.location)));
                if (w == 0.0) continue;
                std::vector<double> diff(x.size());
                for (size_t k = 0; k < x.size(); ++k) diff[k] = x[k] - pm.location[k];
                s += pm.mass * w * heat_kernel(eps, diff);
            }
            return s;
        }
        case InitialDatum::Kind::LebesgueDensity: {
            const double R = 1.0 + 1.0 / eps;  // support of psi_eps
            const size_t d = x.size();
            std::vector<double> lo(d, -R), hi(d, R);
            for (size_t k = 0; k < d; ++k) {
                lo[k] = std::max(lo[k], x[k] - 12.0 * std::sqrt(eps));
                hi[k] = std::min(hi[k], x[k] + 12.0 * std::sqrt(eps));
                if (lo[k] > hi[k]) return 0.0;
            }
            auto integrand = [&](const std::vector<double>& y) {
                double r2 = 0.0;
                for (double v : y) r2 += v * v;
                double w = tent_cutoff(eps, std::sqrt(r2));
                if (w == 0.0) return 0.0;
                std::vector<double> diff(d);
                for (size_t k = 0; k < d; ++k) diff[k] = x[k] - y[k];
                return w * inner.form().evaluate(y) * heat_kernel(eps, diff);
            };
            return integrate_box(integrand, lo, hi, 1e-10);
        }
    }
    return 0.0;
}

}  // namespace

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

double homogeneous_solution(const InitialDatum& mu, double t, const SpacePoint& x,
                            double abs_tol) {
    if (!(t > 0.0)) throw std::domain_error("homogeneous_solution: t must be positive");
    if (static_cast<int>(x.size()) != mu.dim())
        throw std::invalid_argument("homogeneous_solution: dimension mismatch");

    switch (mu.kind()) {
        case InitialDatum::Kind::Zero:
            return 0.0;
        case InitialDatum::Kind::PointMassSum: {
            double s = 0.0;
            for (const auto& pm : mu.masses()) {
                std::vector<double> diff(x.size());
                for (size_t k = 0; k < x.size(); ++k) diff[k] = x[k] - pm.location[k];
                s += pm.mass * heat_kernel(t, diff);
            }
            return s;
        }
        case InitialDatum::Kind::LebesgueDensity: {
            const DensityForm& f = mu.form();
            if (f.kind == DensityForm::Kind::Constant) return f.level;  // kernel mass 1
            if (f.kind == DensityForm::Kind::ExpQuadratic && f.growth >= 1.0 / (2.0 * t)) {
                std::ostringstream msg;
                msg << "homogeneous_solution: exp(" << f.growth
                    << "|x|^2) density not integrable against G(" << t << ",.)";
                throw NumericError(msg.str());
            }
            std::vector<double> lo, hi;
            quad_window(x, t, f.support_radius(), lo, hi);
            auto integrand = [&](const std::vector<double>& y) {
                std::vector<double> diff(x.size());
                for (size_t k = 0; k < x.size(); ++k) diff[k] = x[k] - y[k];
                return f.evaluate(y) * heat_kernel(t, diff);
            };
            return integrate_box(integrand, lo, hi, abs_tol);
        }
    }
    return 0.0;
}

InitialDatum truncate_initial(const InitialDatum& mu, double eps) {
    if (!(eps > 0.0 && eps < 1.0))
        throw std::domain_error("truncate_initial: eps must lie in (0,1)");
    DensityForm f;
    f.kind = DensityForm::Kind::Truncated;
    f.inner = std::make_shared<InitialDatum>(mu);
    f.eps = eps;
    return InitialDatum::density(std::move(f), mu.dim());
}

namespace {

// mass of (mu psi_eps): finite sum for atoms, quadrature over the psi support
// for densities.
double cutoff_mass(const InitialDatum& mu, double eps) {
    switch (mu.kind()) {
        case InitialDatum::Kind::Zero:
            return 0.0;
        case InitialDatum::Kind::PointMassSum: {
            double s = 0.0;
            for (const auto& pm : mu.masses())
                s += pm.mass * tent_cutoff(eps, std::sqrt(sq_norm(pm.location)));
            return s;
        }
        case InitialDatum::Kind::LebesgueDensity: {
            const double R = 1.0 + 1.0 / eps;
            const size_t d = static_cast<size_t>(mu.dim());
            std::vector<double> lo(d, -R), hi(d, R);
            auto integrand = [&](const std::vector<double>& y) {
                double r2 = 0.0;
                for (double v : y) r2 += v * v;
                double w = tent_cutoff(eps, std::sqrt(r2));
                return w == 0.0 ? 0.0 : w * mu.form().evaluate(y);
            };
            return integrate_box(integrand, lo, hi, 1e-9);
        }
    }
    return 0.0;
}

}  // namespace

double truncated_domination_constant(const InitialDatum& mu, double eps, double delta) {
    if (!(delta > eps && eps > 0.0))
        throw std::domain_error("truncated_domination_constant: need delta > eps > 0");
    // G(eps, x-y) <= (delta/eps)^{d/2} exp(R^2/(2(delta-eps))) G(delta, x)
    // uniformly over |y| <= R with R = 1 + 1/eps.
    const double R = 1.0 + 1.0 / eps;
    const double d = static_cast<double>(mu.dim());
    double c = std::pow(delta / eps, 0.5 * d) * std::exp(R * R / (2.0 * (delta - eps)));
    return c * cutoff_mass(mu, eps);
}

AdmissibilityReport check_rough_admissible(const InitialDatum& mu,
                                           const std::vector<double>& a_values) {
    if (a_values.empty())
        throw std::invalid_argument("check_rough_admissible: a_values must be nonempty");
    AdmissibilityReport rep;
    rep.admissible = true;
    for (double a : a_values) {
        AdmissibilityEntry e;
        e.a = a;
        switch (mu.kind()) {
            case InitialDatum::Kind::Zero:
                e.finite = true;
                e.value = 0.0;
                break;
            case InitialDatum::Kind::PointMassSum: {
                e.finite = true;
                for (const auto& pm : mu.masses())
                    e.value += pm.mass * std::exp(-a * sq_norm(pm.location));
                break;
            }
            case InitialDatum::Kind::LebesgueDensity: {
                const DensityForm& f = mu.form();
                if (f.kind == DensityForm::Kind::ExpQuadratic && f.growth >= a) {
                    e.finite = false;  // integrand does not decay
                    break;
                }
                const size_t d = static_cast<size_t>(mu.dim());
                double reach = std::isfinite(f.support_radius())
                                   ? f.support_radius()
                                   : 12.0 / std::sqrt(std::max(
                                                 a - (f.kind == DensityForm::Kind::ExpQuadratic
                                                          ? f.growth
                                                          : 0.0),
                                                 1e-12));
                std::vector<double> lo(d, -reach), hi(d, reach);
                auto integrand = [&](const std::vector<double>& y) {
                    double r2 = 0.0;
                    for (double v : y) r2 += v * v;
                    return f.evaluate(y) * std::exp(-a * r2);
                };
                e.finite = true;
                e.value = integrate_box(integrand, lo, hi, 1e-9);
                break;
            }
        }
        if (!e.finite && rep.admissible) {
            rep.admissible = false;
            rep.failing_a = a;
        }
        rep.entries.push_back(e);
    }
    if (!rep.admissible) {
        std::ostringstream msg;
        msg << "Gaussian-weighted mass diverges at a = " << *rep.failing_a;
        rep.detail = msg.str();
    }
    return rep;
}

}  // namespace shelab::heat
