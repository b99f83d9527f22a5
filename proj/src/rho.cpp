#include "shelab/rho.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "shelab/common.hpp"
#include "shelab/correlation.hpp"
#include "shelab/quadrature.hpp"

namespace shelab::rho {

DiffusionCoefficient DiffusionCoefficient::linear(double lambda) {
    DiffusionCoefficient r;
    r.kind_ = Kind::Linear;
    r.b_ = lambda;
    r.lip_estimate_ = std::abs(lambda);
    r.vanishes_at_zero_ = true;
    return r;
}

DiffusionCoefficient DiffusionCoefficient::affine(double a, double b) {
    DiffusionCoefficient r;
    r.kind_ = Kind::Affine;
    r.a_ = a;
    r.b_ = b;
    r.lip_estimate_ = std::abs(b);
    r.vanishes_at_zero_ = std::abs(a) < 1e-12;
    return r;
}

DiffusionCoefficient DiffusionCoefficient::tabulated(std::vector<double> grid_x,
                                                     std::vector<double> grid_f) {
    if (grid_x.size() != grid_f.size() || grid_x.size() < 2)
        throw std::invalid_argument("DiffusionCoefficient: bad grid");
    for (size_t i = 1; i < grid_x.size(); ++i)
        if (grid_x[i] <= grid_x[i - 1])
            throw std::invalid_argument("DiffusionCoefficient: grid must increase");
    DiffusionCoefficient r;
    r.kind_ = Kind::Tabulated;
    double lip = 0.0;
    for (size_t i = 1; i < grid_x.size(); ++i)
        lip = std::max(lip, std::abs(grid_f[i] - grid_f[i - 1]) /
                                (grid_x[i] - grid_x[i - 1]));
    // zero outside the grid: the jump at the edges is part of the estimate
    r.grid_x_ = std::move(grid_x);
    r.grid_f_ = std::move(grid_f);
    r.lip_estimate_ = lip;
    DiffusionCoefficient probe = r;
    r.vanishes_at_zero_ = std::abs(probe(0.0)) < 1e-12;
    return r;
}

double DiffusionCoefficient::operator()(double u) const {
    switch (kind_) {
        case Kind::Linear:
            return b_ * u;
        case Kind::Affine:
            return a_ + b_ * u;
        case Kind::Tabulated: {
            if (u < grid_x_.front() || u > grid_x_.back()) return 0.0;
            auto it = std::upper_bound(grid_x_.begin(), grid_x_.end(), u);
            if (it == grid_x_.begin()) return grid_f_.front();
            if (it == grid_x_.end()) return grid_f_.back();
            size_t i = static_cast<size_t>(it - grid_x_.begin());
            double w = (u - grid_x_[i - 1]) / (grid_x_[i] - grid_x_[i - 1]);
            return (1.0 - w) * grid_f_[i - 1] + w * grid_f_[i];
        }
        case Kind::Truncated: {
            const double N = trunc_n_;
            const double au = std::abs(u);
            if (au <= N) return (*inner_)(u);
            if (au <= 2.0 * N)
                return (*inner_)(u >= 0.0 ? N : -N) * (2.0 - au / N);
            return 0.0;
        }
        case Kind::Mollified: {
            const double eps = moll_eps_;
            quad::Options opt;
            opt.abs_tol = 1e-11;
            return quad::integrate_checked(
                [&](double y) { return corr::phi2_scaled_1d(eps, y) * (*inner_)(u - y); },
                -4.0 * eps, 4.0 * eps, opt);
        }
    }
    return 0.0;
}

bool DiffusionCoefficient::compact_support() const {
    switch (kind_) {
        case Kind::Linear:
            return b_ == 0.0;
        case Kind::Affine:
            return a_ == 0.0 && b_ == 0.0;
        case Kind::Tabulated:
            return true;
        case Kind::Truncated:
            return true;
        case Kind::Mollified:
            return true;
    }
    return false;
}

double DiffusionCoefficient::support_bound() const {
    switch (kind_) {
        case Kind::Tabulated:
            return std::max(std::abs(grid_x_.front()), std::abs(grid_x_.back()));
        case Kind::Truncated:
            return 2.0 * trunc_n_;
        case Kind::Mollified:
            return inner_->support_bound() + 4.0 * moll_eps_;
        default:
            return compact_support() ? 0.0 : std::numeric_limits<double>::infinity();
    }
}

std::string DiffusionCoefficient::describe() const {
    std::ostringstream s;
    switch (kind_) {
        case Kind::Linear: s << "linear(" << b_ << ")"; break;
        case Kind::Affine: s << "affine(" << a_ << ", " << b_ << ")"; break;
        case Kind::Tabulated: s << "tabulated(" << grid_x_.size() << ")"; break;
        case Kind::Truncated: s << "truncated(" << inner_->describe() << ", N=" << trunc_n_ << ")"; break;
        case Kind::Mollified: s << "mollified(" << inner_->describe() << ", eps=" << moll_eps_ << ")"; break;
    }
    return s.str();
}

DiffusionCoefficient truncate_rho(const DiffusionCoefficient& rho, double N) {
    if (!(N > 0.0)) throw std::domain_error("truncate_rho: N must be positive");
    DiffusionCoefficient r;
    r.kind_ = DiffusionCoefficient::Kind::Truncated;
    r.inner_ = std::make_shared<DiffusionCoefficient>(rho);
    r.trunc_n_ = N;
    // Lip_{rho_N} <= Lip_rho when rho(0) = 0; the ramp slope |rho(+-N)|/N
    // covers the general case.
    double ramp = std::max(std::abs(rho(N)), std::abs(rho(-N))) / N;
    r.lip_estimate_ = rho.vanishes_at_zero() ? rho.lip_estimate()
                                             : std::max(rho.lip_estimate(), ramp);
    r.vanishes_at_zero_ = std::abs(rho(0.0)) < 1e-12;
    return r;
}

DiffusionCoefficient mollify_rho(const DiffusionCoefficient& rho, double eps) {
    if (!(eps > 0.0)) throw std::domain_error("mollify_rho: eps must be positive");
    if (!rho.compact_support())
        throw std::invalid_argument(
            "mollify_rho: coefficient must have compact support; truncate first");
    DiffusionCoefficient r;
    r.kind_ = DiffusionCoefficient::Kind::Mollified;
    r.inner_ = std::make_shared<DiffusionCoefficient>(rho);
    r.moll_eps_ = eps;
    r.lip_estimate_ = rho.lip_estimate();  // preserved by unit-mass convolution
    r.vanishes_at_zero_ = std::abs(r(0.0)) < 1e-12;
    return r;
}

}  // namespace shelab::rho
