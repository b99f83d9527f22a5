#include "shelab/correlation.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "shelab/common.hpp"
#include "shelab/quadrature.hpp"

namespace shelab::corr {

namespace {

double surface_area_unit_sphere(int d) {
    // omega_{d-1} = 2 pi^{d/2} / Gamma(d/2)
    return 2.0 * std::pow(kPi, 0.5 * d) / std::tgamma(0.5 * d);
}

double offset_norm(const Offset& k) {
    double s = 0.0;
    for (int v : k) s += static_cast<double>(v) * v;
    return std::sqrt(s);
}

Offset negate(const Offset& k) {
    Offset m(k.size());
    for (size_t i = 0; i < k.size(); ++i) m[i] = -k[i];
    return m;
}

}  // namespace

// ---------------------------------------------------------------------------
// Catalog construction and validation
// ---------------------------------------------------------------------------

CorrelationFunction CorrelationFunction::white_noise(int dim) {
    CorrelationFunction f;
    f.kind_ = Kind::WhiteNoise;
    f.dim_ = dim;
    return f;
}

CorrelationFunction CorrelationFunction::riesz(double exponent, int dim) {
    if (!(exponent > 0.0 && exponent < dim))
        throw std::invalid_argument("riesz: exponent must lie in (0, d)");
    CorrelationFunction f;
    f.kind_ = Kind::Riesz;
    f.dim_ = dim;
    f.riesz_exponent_ = exponent;
    return f;
}

CorrelationFunction CorrelationFunction::gaussian_bump(double scale, int dim) {
    if (!(scale > 0.0)) throw std::invalid_argument("gaussian_bump: scale must be positive");
    CorrelationFunction f;
    f.kind_ = Kind::GaussianBump;
    f.dim_ = dim;
    f.scale_ = scale;
    return f;
}

CorrelationFunction CorrelationFunction::cauchy_like(double scale, int dim) {
    if (!(scale > 0.0)) throw std::invalid_argument("cauchy_like: scale must be positive");
    CorrelationFunction f;
    f.kind_ = Kind::CauchyLike;
    f.dim_ = dim;
    f.scale_ = scale;
    return f;
}

CorrelationFunction CorrelationFunction::lattice_atoms(std::map<Offset, double> weights,
                                                       int dim) {
    double total = 0.0;
    for (const auto& [k, w] : weights) {
        if (static_cast<int>(k.size()) != dim)
            throw std::invalid_argument("lattice_atoms: offset dimension mismatch");
        if (w < 0.0) throw std::invalid_argument("lattice_atoms: negative weight");
        auto it = weights.find(negate(k));
        if (it == weights.end() || std::abs(it->second - w) > 1e-12)
            throw std::invalid_argument("lattice_atoms: weights must be symmetric");
        total += w;
    }
    if (total <= 0.0) throw std::invalid_argument("lattice_atoms: all weights vanish");
    CorrelationFunction f;
    f.kind_ = Kind::LatticeAtoms;
    f.dim_ = dim;
    f.atoms_ = std::move(weights);

    if (dim == 1) {
        // nonnegative definiteness of the atom set = nonnegativity of the
        // trigonometric-polynomial density on [0, pi].
        double min_density = 0.0;
        for (int i = 0; i <= 2048; ++i) {
            double xi = kPi * i / 2048.0;
            double v = 0.0;
            for (const auto& [k, w] : f.atoms_) v += w * std::cos(k[0] * xi);
            min_density = std::min(min_density, v);
        }
        if (min_density < -1e-8 * total)
            throw std::invalid_argument("lattice_atoms: spectral density is negative");
    }
    return f;
}

CorrelationFunction CorrelationFunction::tabulated(std::vector<double> grid_x,
                                                   std::vector<double> grid_f) {
    if (grid_x.size() != grid_f.size() || grid_x.size() < 3)
        throw std::invalid_argument("tabulated: grid too small or mismatched");
    for (size_t i = 1; i < grid_x.size(); ++i)
        if (grid_x[i] <= grid_x[i - 1])
            throw std::invalid_argument("tabulated: grid must be strictly increasing");
    const size_t n = grid_x.size();
    for (size_t i = 0; i < n; ++i) {
        if (grid_f[i] < -1e-12) throw std::invalid_argument("tabulated: negative value");
        // symmetry f(x) = f(-x) on the sampled grid
        if (std::abs(grid_x[i] + grid_x[n - 1 - i]) > 1e-9 ||
            std::abs(grid_f[i] - grid_f[n - 1 - i]) > 1e-9 * (1.0 + std::abs(grid_f[i])))
            throw std::invalid_argument("tabulated: grid must be symmetric about 0");
    }
    CorrelationFunction f;
    f.kind_ = Kind::Tabulated;
    f.dim_ = 1;
    f.grid_x_ = std::move(grid_x);
    f.grid_f_ = std::move(grid_f);
    return f;
}

CorrelationFunction CorrelationFunction::constant(double level, int dim) {
    if (level < 0.0) throw std::invalid_argument("constant: level must be nonnegative");
    CorrelationFunction f;
    f.kind_ = Kind::Constant;
    f.dim_ = dim;
    f.level_ = level;
    return f;
}

bool CorrelationFunction::is_pointwise() const { return kind_ != Kind::WhiteNoise; }

double CorrelationFunction::evaluate(const std::vector<double>& x) const {
    double r2 = 0.0;
    for (double v : x) r2 += v * v;
    switch (kind_) {
        case Kind::WhiteNoise:
            throw UnsupportedError("white noise has no pointwise values");
        case Kind::Riesz:
            return std::pow(r2, -0.5 * riesz_exponent_);
        case Kind::GaussianBump:
            return std::exp(-r2 / scale_);
        case Kind::CauchyLike:
            return 1.0 / (1.0 + scale_ * r2);
        case Kind::LatticeAtoms: {
            // as a covariance function on the integer lattice
            Offset k(x.size());
            for (size_t i = 0; i < x.size(); ++i) {
                double r = std::round(x[i]);
                if (std::abs(x[i] - r) > 1e-9) return 0.0;
                k[i] = static_cast<int>(r);
            }
            auto it = atoms_.find(k);
            return it == atoms_.end() ? 0.0 : it->second;
        }
        case Kind::Tabulated: {
            double x0 = x.at(0);
            if (x0 < grid_x_.front() || x0 > grid_x_.back()) return 0.0;
            auto it = std::upper_bound(grid_x_.begin(), grid_x_.end(), x0);
            if (it == grid_x_.begin()) return grid_f_.front();
            if (it == grid_x_.end()) return grid_f_.back();
            size_t i = static_cast<size_t>(it - grid_x_.begin());
            double w = (x0 - grid_x_[i - 1]) / (grid_x_[i] - grid_x_[i - 1]);
            return (1.0 - w) * grid_f_[i - 1] + w * grid_f_[i];
        }
        case Kind::Constant:
            return level_;
    }
    return 0.0;
}

std::string CorrelationFunction::describe() const {
    std::ostringstream s;
    switch (kind_) {
        case Kind::WhiteNoise: s << "white_noise(d=" << dim_ << ")"; break;
        case Kind::Riesz: s << "riesz(" << riesz_exponent_ << ", d=" << dim_ << ")"; break;
        case Kind::GaussianBump: s << "gaussian_bump(" << scale_ << ", d=" << dim_ << ")"; break;
        case Kind::CauchyLike: s << "cauchy_like(" << scale_ << ", d=" << dim_ << ")"; break;
        case Kind::LatticeAtoms: s << "lattice_atoms(" << atoms_.size() << " atoms)"; break;
        case Kind::Tabulated: s << "tabulated(" << grid_x_.size() << " points)"; break;
        case Kind::Constant: s << "constant(" << level_ << ", d=" << dim_ << ")"; break;
    }
    return s.str();
}

// ---------------------------------------------------------------------------
// Spectral measures
// ---------------------------------------------------------------------------

SpectralMeasure SpectralMeasure::density(int dim, std::function<double(double)> radial_density,
                                         SpectralTail tail, double tail_exponent,
                                         double tail_amp) {
    SpectralMeasure m;
    m.kind_ = Kind::Density;
    m.dim_ = dim;
    m.radial_density_ = std::move(radial_density);
    m.tail_ = tail;
    m.tail_exponent_ = tail_exponent;
    m.tail_amp_ = tail_amp;
    return m;
}

SpectralMeasure SpectralMeasure::atomic(int dim, std::vector<SpectralAtom> atoms) {
    SpectralMeasure m;
    m.kind_ = Kind::Atomic;
    m.dim_ = dim;
    m.atoms_ = std::move(atoms);
    return m;
}

double riesz_spectral_constant(int dim, double exponent) {
    return std::pow(2.0, dim - exponent) * std::pow(kPi, 0.5 * dim) *
           std::tgamma(0.5 * (dim - exponent)) / std::tgamma(0.5 * exponent);
}

SpectralMeasure spectral_of(const CorrelationFunction& f) {
    const int d = f.dim();
    switch (f.kind()) {
        case CorrelationFunction::Kind::WhiteNoise: {
            SpectralMeasure m = SpectralMeasure::density(
                d, [](double) { return 1.0; }, SpectralTail::Flat, 0.0, 1.0);
            m.tail_exact_power_ = true;
            return m;
        }
        case CorrelationFunction::Kind::Riesz: {
            const double b = f.riesz_exponent();
            const double c = riesz_spectral_constant(d, b);
            SpectralMeasure m = SpectralMeasure::density(
                d, [c, b, d](double r) { return c * std::pow(r, b - d); },
                SpectralTail::PowerLaw, d - b, c);
            m.tail_exact_power_ = true;
            return m;
        }
        case CorrelationFunction::Kind::GaussianBump: {
            const double s = f.scale();
            const double amp = std::pow(kPi * s, 0.5 * d);
            return SpectralMeasure::density(
                d, [amp, s](double r) { return amp * std::exp(-s * r * r / 4.0); },
                SpectralTail::GaussianDecay, 0.0, amp);
        }
        case CorrelationFunction::Kind::CauchyLike: {
            if (d != 1)
                throw UnsupportedError("cauchy_like spectral density is catalogued for d=1 only");
            const double s = f.scale();
            const double amp = kPi / std::sqrt(s);
            const double rate = 1.0 / std::sqrt(s);
            return SpectralMeasure::density(
                1, [amp, rate](double r) { return amp * std::exp(-rate * std::abs(r)); },
                SpectralTail::ExponentialDecay, 0.0, amp);
        }
        case CorrelationFunction::Kind::LatticeAtoms: {
            double total = 0.0;
            for (const auto& [k, w] : f.atoms()) total += w;
            if (d == 1) {
                auto atoms = f.atoms();
                SpectralMeasure m = SpectralMeasure::density(
                    1,
                    [atoms](double r) {
                        double v = 0.0;
                        for (const auto& [k, w] : atoms) v += w * std::cos(k[0] * r);
                        return v;
                    },
                    SpectralTail::Flat, 0.0, total);
                m.has_trig_atoms_ = true;
                for (const auto& [k, w] : f.atoms()) m.trig_atoms_[k[0]] = w;
                return m;
            }
            return SpectralMeasure::density(
                d, [](double) -> double {
                    throw UnsupportedError("lattice-atom spectral density is non-radial for d>1");
                },
                SpectralTail::Flat, 0.0, total);
        }
        case CorrelationFunction::Kind::Constant: {
            // hat f = level (2 pi)^d delta_0
            SpectralAtom a;
            a.frequency.assign(d, 0.0);
            a.weight = f.level() * std::pow(kTwoPi, d);
            return SpectralMeasure::atomic(d, {a});
        }
        case CorrelationFunction::Kind::Tabulated:
            throw UnsupportedError("tabulated correlation has no catalogued transform");
    }
    throw UnsupportedError("spectral_of: unknown kind");
}

// ---------------------------------------------------------------------------
// Dalang integrals
// ---------------------------------------------------------------------------

namespace {

// (2 pi)^{-d} omega_{d-1} int_0^R dens(r) r^{d-1} w(r) dr  by adaptive panels,
// with [0,1] handled on a sqrt substitution to soften integrable endpoint
// singularities (Riesz).
double radial_spectral_integral(const SpectralMeasure& m,
                                const std::function<double(double)>& weight, double R) {
    const int d = m.dim();
    auto g = [&](double r) { return m.density_at(r) * std::pow(r, d - 1) * weight(r); };
    quad::Options opt;
    opt.abs_tol = 1e-11;
    double inner = quad::integrate_checked(
        [&](double u) { return g(u * u) * 2.0 * u; }, 0.0, 1.0, opt);
    double outer = R > 1.0 ? quad::integrate_checked(g, 1.0, R, opt) : 0.0;
    return std::pow(kTwoPi, -d) * surface_area_unit_sphere(d) * (inner + outer);
}

bool tail_integrable(const SpectralMeasure& m, double weight_decay_power) {
    switch (m.tail()) {
        case SpectralTail::GaussianDecay:
        case SpectralTail::ExponentialDecay:
            return true;
        case SpectralTail::PowerLaw:
        case SpectralTail::Flat:
            return m.tail_exponent() + weight_decay_power > m.dim();
    }
    return false;
}

// Shared driver for (2 pi)^{-d} int fhat(dxi) weight(|xi|): handles exact
// power tails (analytic after u = 1/r), decaying tails (widening), and the
// oscillating flat-tail case (inconclusive).
double spectral_weight_integral(const SpectralMeasure& m,
                                const std::function<double(double)>& weight) {
    const int d = m.dim();
    const double front = std::pow(kTwoPi, -d) * surface_area_unit_sphere(d);
    quad::Options opt;
    opt.abs_tol = 1e-12;

    if (m.tail_is_exact_power()) {
        const double R = 64.0;
        double core = radial_spectral_integral(m, weight, R);
        // tail: amp int_R^inf r^{d-1-q} weight(r) dr
        //     = amp int_0^{1/R} u^{q-d-1} weight(1/u) du   (u = 1/r)
        const double q = m.tail_exponent();
        double tail = quad::integrate_checked(
            [&](double u) { return std::pow(u, q - d - 1.0) * weight(1.0 / u); }, 0.0,
            1.0 / R, opt);
        return core + front * m.tail_amp() * tail;
    }

    if (m.tail() == SpectralTail::GaussianDecay ||
        m.tail() == SpectralTail::ExponentialDecay) {
        double R = 64.0;
        double value = radial_spectral_integral(m, weight, R);
        for (int rounds = 0; rounds < 12; ++rounds) {
            // generous envelope: density(R) R^{d} weight(R) with fast decay
            double envelope = std::abs(m.density_at(R)) * std::pow(R, d) * weight(R);
            if (envelope < 1e-11 * (1.0 + std::abs(value))) return value;
            double R2 = 2.0 * R;
            auto g = [&](double r) {
                return m.density_at(r) * std::pow(r, d - 1) * weight(r);
            };
            value += front * quad::integrate_checked(g, R, R2, opt);
            R = R2;
        }
        throw NumericError("spectral integral: decaying tail did not certify");
    }

    throw NumericError(
        "spectral integral: oscillating flat tail is inconclusive for this entry");
}

}  // namespace

DalangResult dalang_upsilon(const SpectralMeasure& fhat, double beta) {
    if (!(beta > 0.0)) throw std::domain_error("dalang_upsilon: beta must be positive");
    DalangResult out;
    const int d = fhat.dim();

    if (fhat.kind() == SpectralMeasure::Kind::Atomic) {
        double s = 0.0;
        for (const auto& a : fhat.atoms()) {
            double r2 = 0.0;
            for (double v : a.frequency) r2 += v * v;
            s += a.weight / (beta + r2);
        }
        out.finite = true;
        out.value = std::pow(kTwoPi, -d) * s;
        return out;
    }

    if (!tail_integrable(fhat, 2.0)) {
        std::ostringstream msg;
        msg << "tail integrand ~ |xi|^{-" << fhat.tail_exponent() + 2.0
            << "} is not integrable in d = " << d;
        out.finite = false;
        out.diagnostic = msg.str();
        return out;
    }

    if (fhat.has_trig_atoms() && d == 1) {
        // (2 pi)^{-1} sum_k w_k int cos(k xi)/(beta + xi^2) dxi
        //   = sum_k w_k exp(-|k| sqrt(beta)) / (2 sqrt(beta))
        double s = 0.0;
        for (const auto& [k, w] : fhat.trig_atoms())
            s += w * std::exp(-std::abs(k) * std::sqrt(beta));
        out.finite = true;
        out.value = s / (2.0 * std::sqrt(beta));
        return out;
    }

    auto weight = [beta](double r) { return 1.0 / (beta + r * r); };
    out.value = spectral_weight_integral(fhat, weight);
    out.finite = true;
    return out;
}

DalangResult strengthened_dalang(const SpectralMeasure& fhat, double alpha) {
    if (!(alpha > 0.0 && alpha <= 1.0))
        throw std::domain_error("strengthened_dalang: alpha must lie in (0,1]");
    DalangResult out;
    const int d = fhat.dim();

    if (fhat.kind() == SpectralMeasure::Kind::Atomic) {
        double s = 0.0;
        for (const auto& a : fhat.atoms()) {
            double r2 = 0.0;
            for (double v : a.frequency) r2 += v * v;
            s += a.weight * std::pow(1.0 + r2, alpha - 1.0);
        }
        out.finite = true;
        out.value = std::pow(kTwoPi, -d) * s;
        return out;
    }

    const double decay = 2.0 * (1.0 - alpha);
    if (!tail_integrable(fhat, decay)) {
        std::ostringstream msg;
        msg << "tail integrand ~ |xi|^{-" << fhat.tail_exponent() + decay
            << "} is not integrable in d = " << d;
        out.finite = false;
        out.diagnostic = msg.str();
        return out;
    }

    auto weight = [alpha](double r) { return std::pow(1.0 + r * r, alpha - 1.0); };
    out.value = spectral_weight_integral(fhat, weight);
    out.finite = true;
    return out;
}

// ---------------------------------------------------------------------------
// k(t) and its decomposition
// ---------------------------------------------------------------------------

double KernelK::operator()(double t) const {
    if (!(t > 0.0)) throw std::domain_error("KernelK: t must be positive");
    double v = 0.0;
    if (power_coef != 0.0) v += power_coef * std::pow(t, -power_exp);
    if (smooth) v += smooth(t);
    return v;
}

KernelK kernel_decomposition(const CorrelationFunction& f) {
    const int d = f.dim();
    KernelK k;
    switch (f.kind()) {
        case CorrelationFunction::Kind::WhiteNoise:
            // delta_0 sifting: k(t) = G(t,0)
            k.power_coef = std::pow(kTwoPi, -0.5 * d);
            k.power_exp = 0.5 * d;
            return k;
        case CorrelationFunction::Kind::Riesz: {
            const double b = f.riesz_exponent();
            k.power_coef = std::pow(2.0, -0.5 * b) * std::tgamma(0.5 * (d - b)) /
                           std::tgamma(0.5 * d);
            k.power_exp = 0.5 * b;
            return k;
        }
        case CorrelationFunction::Kind::GaussianBump: {
            const double s = f.scale();
            k.smooth = [s, d](double t) { return std::pow(s / (s + 2.0 * t), 0.5 * d); };
            return k;
        }
        case CorrelationFunction::Kind::CauchyLike: {
            if (d != 1) throw UnsupportedError("cauchy_like k(t) catalogued for d=1 only");
            const double s = f.scale();
            // spectral route: (1/sqrt(s)) int_0^inf exp(-xi/sqrt(s) - t xi^2/2) dxi
            k.smooth = [s](double t) {
                const double rate = 1.0 / std::sqrt(s);
                double xi_max = 40.0 / rate;
                if (t > 0.0) xi_max = std::min(xi_max, 14.0 / std::sqrt(t) + 1.0);
                quad::Options opt;
                opt.abs_tol = 1e-12;
                return rate * quad::integrate_checked(
                                  [rate, t](double xi) {
                                      return std::exp(-rate * xi - 0.5 * t * xi * xi);
                                  },
                                  0.0, 40.0 / rate, opt);
            };
            return k;
        }
        case CorrelationFunction::Kind::LatticeAtoms: {
            auto it = f.atoms().find(Offset(static_cast<size_t>(d), 0));
            if (it != f.atoms().end() && it->second > 0.0) {
                k.power_coef = it->second * std::pow(kTwoPi, -0.5 * d);
                k.power_exp = 0.5 * d;
            }
            auto atoms = f.atoms();
            k.smooth = [atoms, d](double t) {
                double s = 0.0;
                for (const auto& [off, w] : atoms) {
                    double r = offset_norm(off);
                    if (r == 0.0) continue;
                    if (t <= 0.0) continue;
                    s += w * std::pow(kTwoPi * t, -0.5 * d) * std::exp(-r * r / (2.0 * t));
                }
                return s;
            };
            return k;
        }
        case CorrelationFunction::Kind::Constant: {
            const double c = f.level();
            k.smooth = [c](double) { return c; };
            return k;
        }
        case CorrelationFunction::Kind::Tabulated: {
            CorrelationFunction copy = f;
            k.smooth = [copy](double t) {
                if (t <= 1e-10) return copy.evaluate({0.0});
                double lo = copy.grid_x().front(), hi = copy.grid_x().back();
                lo = std::max(lo, -14.0 * std::sqrt(t));
                hi = std::min(hi, 14.0 * std::sqrt(t));
                if (lo >= hi) return 0.0;
                quad::Options opt;
                opt.abs_tol = 1e-11;
                return quad::integrate_checked(
                    [&](double z) {
                        return copy.evaluate({z}) * heat::heat_kernel_1d(t, z);
                    },
                    lo, hi, opt);
            };
            return k;
        }
    }
    throw UnsupportedError("kernel_decomposition: unknown kind");
}

double kernel_k(const CorrelationFunction& f, double t) {
    if (!(t > 0.0)) throw std::domain_error("kernel_k: t must be positive");
    return kernel_decomposition(f)(t);
}

double kernel_k_physical(const CorrelationFunction& f, double t) {
    if (!(t > 0.0)) throw std::domain_error("kernel_k_physical: t must be positive");
    const int d = f.dim();
    quad::Options opt;
    opt.abs_tol = 1e-11;
    switch (f.kind()) {
        case CorrelationFunction::Kind::WhiteNoise:
            return std::pow(kTwoPi * t, -0.5 * d);
        case CorrelationFunction::Kind::LatticeAtoms:
        case CorrelationFunction::Kind::Constant:
            return kernel_k(f, t);
        case CorrelationFunction::Kind::Riesz: {
            if (d != 1) throw UnsupportedError("physical route catalogued for d=1");
            const double b = f.riesz_exponent();
            const double eta = 1e-10;
            // |z|^{-b} G(t,z) over the small ball, G frozen at the center
            double ball = 2.0 * heat::heat_kernel_1d(t, 0.0) * std::pow(eta, 1.0 - b) / (1.0 - b);
            double rest = 2.0 * quad::integrate_checked(
                                    [&](double z) {
                                        return std::pow(z, -b) * heat::heat_kernel_1d(t, z);
                                    },
                                    eta, 14.0 * std::sqrt(t), opt);
            return ball + rest;
        }
        case CorrelationFunction::Kind::GaussianBump:
        case CorrelationFunction::Kind::CauchyLike:
        case CorrelationFunction::Kind::Tabulated: {
            if (d != 1) throw UnsupportedError("physical route catalogued for d=1");
            double R = 14.0 * std::sqrt(t);
            if (f.kind() == CorrelationFunction::Kind::Tabulated)
                R = std::min(R, f.grid_x().back());
            return quad::integrate_checked(
                [&](double z) { return f.evaluate({z}) * heat::heat_kernel_1d(t, z); }, -R, R,
                opt);
        }
    }
    throw UnsupportedError("kernel_k_physical: unknown kind");
}

double kernel_k_spectral(const CorrelationFunction& f, double t) {
    if (!(t > 0.0)) throw std::domain_error("kernel_k_spectral: t must be positive");
    SpectralMeasure m = spectral_of(f);
    const int d = m.dim();
    if (m.kind() == SpectralMeasure::Kind::Atomic) {
        double s = 0.0;
        for (const auto& a : m.atoms()) {
            double r2 = 0.0;
            for (double v : a.frequency) r2 += v * v;
            s += a.weight * std::exp(-0.5 * t * r2);
        }
        return std::pow(kTwoPi, -d) * s;
    }
    auto weight = [t](double r) { return std::exp(-0.5 * t * r * r); };
    double R = 14.0 / std::sqrt(t) + 2.0;
    return radial_spectral_integral(m, weight, R);
}

// ---------------------------------------------------------------------------
// h_n recursion with product integration for the singular part
// ---------------------------------------------------------------------------

namespace {

struct HGridWork {
    double dt = 0.0;
    int steps = 0;
    std::vector<double> K0, K1;  // cumulative moments of the power part
    std::vector<double> ks;      // smooth part on the grid
    bool has_power = false;
    bool has_smooth = false;
};

HGridWork prepare_h_grid(const CorrelationFunction& f, double t, int steps) {
    if (steps < 16) throw std::invalid_argument("h_sequence: steps must be >= 16");
    if (!(t > 0.0)) throw std::domain_error("h_sequence: t must be positive");
    KernelK k = kernel_decomposition(f);
    if (!k.integrable_at_zero()) {
        std::ostringstream msg;
        msg << "h_sequence: k(t) ~ t^{-" << k.power_exp
            << "} is not integrable at 0 for " << f.describe();
        throw NumericError(msg.str());
    }
    HGridWork w;
    w.dt = t / steps;
    w.steps = steps;
    w.has_power = k.power_coef != 0.0;
    w.has_smooth = static_cast<bool>(k.smooth);
    if (w.has_power) {
        const double c = k.power_coef, q = k.power_exp;
        w.K0.resize(steps + 1);
        w.K1.resize(steps + 1);
        for (int j = 0; j <= steps; ++j) {
            double u = j * w.dt;
            w.K0[j] = c * std::pow(u, 1.0 - q) / (1.0 - q);
            w.K1[j] = c * std::pow(u, 2.0 - q) / (2.0 - q);
        }
    }
    if (w.has_smooth) {
        w.ks.resize(steps + 1);
        w.ks[0] = k.smooth(1e-15);  // kind-specific t -> 0 limit
        for (int j = 1; j <= steps; ++j) w.ks[j] = k.smooth(j * w.dt);
    }
    return w;
}

// next[m] = int_0^{s_m} prev(s_m - u) k(u) du with prev piecewise linear.
void h_convolve(const HGridWork& w, const std::vector<double>& prev,
                std::vector<double>& next) {
    const int n = w.steps;
    next.assign(n + 1, 0.0);
    for (int m = 1; m <= n; ++m) {
        double acc = 0.0;
        for (int j = 0; j < m; ++j) {
            const double a = prev[m - j];       // value at u_j
            const double b = prev[m - j - 1];   // value at u_{j+1}
            if (w.has_power) {
                double dk0 = w.K0[j + 1] - w.K0[j];
                double dk1 = w.K1[j + 1] - w.K1[j];
                double slope = (b - a) / w.dt;
                acc += a * dk0 + slope * (dk1 - (j * w.dt) * dk0);
            }
            if (w.has_smooth) {
                acc += 0.5 * w.dt * (a * w.ks[j] + b * w.ks[j + 1]);
            }
        }
        next[m] = acc;
    }
}

}  // namespace

std::vector<double> h_sequence(const CorrelationFunction& f, int n_max, double t, int steps) {
    HGridWork w = prepare_h_grid(f, t, steps);
    std::vector<double> out;
    out.reserve(n_max + 1);
    std::vector<double> prev(steps + 1, 1.0), next;
    out.push_back(1.0);  // h_0
    for (int n = 1; n <= n_max; ++n) {
        h_convolve(w, prev, next);
        out.push_back(next[steps]);
        prev.swap(next);
    }
    return out;
}

namespace {

// Exponential-rate estimate used to precondition the renewal march: the
// spectral bound inf{beta : Upsilon(2 beta) < 1/(2 gamma)} when a spectral
// route exists, else gamma * sup k for bounded kernels.
double h_rate_estimate(const CorrelationFunction& f, double gamma, const KernelK& k) {
    try {
        SpectralMeasure m = spectral_of(f);
        const double target = 1.0 / (2.0 * gamma);
        double hi = 1.0;
        auto finite_below = [&](double beta) {
            DalangResult r = dalang_upsilon(m, 2.0 * beta);
            return r.finite && r.value < target;
        };
        while (!finite_below(hi)) {
            hi *= 2.0;
            if (hi > 1e18) return gamma * (k.smooth ? k.smooth(1e-15) : 1.0) + 1.0;
        }
        double lo = hi / 2.0;
        while (lo > 1e-12 && finite_below(lo)) {
            hi = lo;
            lo /= 2.0;
        }
        for (int it = 0; it < 60; ++it) {
            double mid = 0.5 * (lo + hi);
            (finite_below(mid) ? hi : lo) = mid;
        }
        return hi;
    } catch (const UnsupportedError&) {
        // bounded kernels: h_n <= (sup k)^n t^n / n!
        return gamma * (k.smooth ? k.smooth(1e-15) : 0.0);
    }
}

// Marches W(s) = e^{-r s} H(s) through the renewal equation
// H = 1 + gamma int_0^s H(s-u) k(u) du  (the term-wise sum telescoped), with
// product integration of the shifted kernel e^{-ru} k(u) against piecewise-
// linear W.  Returns log H(t).
double renewal_march_log_h(const KernelK& k, double gamma, double t, double r) {
    auto gamma_k0 = [&](double h) {
        double v = 0.0;
        if (k.power_coef != 0.0)
            v += k.power_coef * std::pow(h, 1.0 - k.power_exp) / (1.0 - k.power_exp);
        if (k.smooth) v += h * std::max(k.smooth(1e-15), k.smooth(h));
        return gamma * v;
    };
    int steps = 4096;
    while (steps < 262144 && (gamma_k0(t / steps) > 0.35 || r * (t / steps) > 0.05))
        steps *= 2;
    if (gamma_k0(t / steps) > 0.35 || r * (t / steps) > 0.05)
        throw NumericError("h_series: renewal march cannot resolve this gamma/t regime");
    const double h = t / steps;

    // panel moments of the shifted kernel:
    //   p0[j] = int_{u_j}^{u_{j+1}} e^{-ru} k(u) du
    //   p1[j] = int_{u_j}^{u_{j+1}} (u - u_j) e^{-ru} k(u) du
    static const double gl_x[4] = {0.069431844202973712, 0.330009478207571868,
                                   0.669990521792428132, 0.930568155797026288};
    static const double gl_w[4] = {0.173927422568726929, 0.326072577431273071,
                                   0.326072577431273071, 0.173927422568726929};
    std::vector<double> p0(steps, 0.0), p1(steps, 0.0);
    for (int j = 0; j < steps; ++j) {
        double uj = j * h;
        if (j == 0) {
            if (k.power_coef != 0.0) {
                // expand e^{-ru} to (ru)^3: exact power moments, error O((rh)^4)
                const double q = k.power_exp;
                double ri = 1.0;
                for (int i = 0; i <= 3; ++i) {
                    double m0 = std::pow(h, i + 1.0 - q) / (i + 1.0 - q);
                    double m1 = std::pow(h, i + 2.0 - q) / (i + 2.0 - q);
                    p0[0] += k.power_coef * ri * m0;
                    p1[0] += k.power_coef * ri * m1;
                    ri *= -r / (i + 1.0);
                }
            }
            if (k.smooth) {
                for (int g = 0; g < 4; ++g) {
                    double u = gl_x[g] * h;
                    double v = std::exp(-r * u) * k.smooth(u) * gl_w[g] * h;
                    p0[0] += v;
                    p1[0] += v * u;
                }
            }
        } else {
            for (int g = 0; g < 4; ++g) {
                double u = uj + gl_x[g] * h;
                double kv = 0.0;
                if (k.power_coef != 0.0) kv += k.power_coef * std::pow(u, -k.power_exp);
                if (k.smooth) kv += k.smooth(u);
                double v = std::exp(-r * u) * kv * gl_w[g] * h;
                p0[j] += v;
                p1[j] += v * (u - uj);
            }
        }
    }

    std::vector<double> w(steps + 1, 1.0);
    const double coef = p0[0] - p1[0] / h;  // weight of the unknown W(s_m)
    const double denom = 1.0 - gamma * coef;
    if (denom < 0.2)
        throw NumericError("h_series: renewal march implicit step lost diagonal dominance");
    for (int m = 1; m <= steps; ++m) {
        double acc = w[m - 1] * p1[0] / h;
        for (int j = 1; j < m; ++j) {
            double a = w[m - j];
            double slope = (w[m - j - 1] - a) / h;
            acc += a * p0[j] + slope * p1[j];
        }
        w[m] = (std::exp(-r * m * h) + gamma * acc) / denom;
        if (!std::isfinite(w[m]) || w[m] > 1e290)
            throw NumericError("h_series: renewal march overflow; bound exceeds double range");
    }
    return std::log(w[steps]) + r * t;
}

}  // namespace

HSeriesResult h_series(const CorrelationFunction& f, double gamma, double t, double tol,
                       int steps, int n_cap) {
    if (gamma < 0.0) throw std::domain_error("h_series: gamma must be >= 0");
    HSeriesResult res;
    res.value = 1.0;  // n = 0 term
    res.log_value = 0.0;
    res.n_terms = 1;
    if (gamma == 0.0) {
        res.converged = true;
        res.growth_rate_bound = 0.0;
        return res;
    }

    // Scaled recursion g_n = gamma * (g_{n-1} convolved with k), so the n-th
    // term is g_n(t) directly; a running log offset keeps large-gamma sums
    // inside double range.  A fixed grid only resolves h_n up to n ~ steps/2,
    // so the loop is capped there and the renewal march takes over beyond.
    HGridWork w = prepare_h_grid(f, t, steps);
    std::vector<double> prev(steps + 1, 1.0), next;
    double sum = 1.0;
    double scale_log = 0.0;
    const int n_limit = std::min(n_cap, steps / 2);
    for (int n = 1; n <= n_limit; ++n) {
        h_convolve(w, prev, next);
        prev.swap(next);
        for (double& v : prev) v *= gamma;
        double term = prev[steps];
        sum += term;
        res.last_term_rel = term / std::abs(sum);
        res.n_terms = n + 1;
        if (n >= 2 && term < tol * std::abs(sum)) {
            res.converged = true;
            break;
        }
        if (sum > 1e250) {
            const double shrink = 1e-250;
            sum *= shrink;
            for (double& v : prev) v *= shrink;
            scale_log -= std::log(shrink);
        }
    }
    res.log_value = std::log(sum) + scale_log;
    res.value = scale_log == 0.0 ? sum : std::exp(res.log_value);

    if (!res.converged) {
        KernelK k = kernel_decomposition(f);
        double rate_est = h_rate_estimate(f, gamma, k);
        res.log_value = renewal_march_log_h(k, gamma, t, rate_est);
        res.value = res.log_value < 700.0 ? std::exp(res.log_value)
                                          : std::numeric_limits<double>::infinity();
        res.renewal_route = true;
        res.n_terms = 0;
        res.converged = true;
    }

    // spectral growth-rate bound: inf{beta : Upsilon(2 beta) < 1/(2 gamma)}
    try {
        SpectralMeasure m = spectral_of(f);
        const double target = 1.0 / (2.0 * gamma);
        auto ups = [&](double beta) -> std::optional<double> {
            DalangResult r = dalang_upsilon(m, 2.0 * beta);
            if (!r.finite) return std::nullopt;
            return r.value;
        };
        auto u1 = ups(1.0);
        if (u1.has_value()) {
            double lo = 1.0, hi = 1.0;
            if (*u1 < target) {
                while (lo > 1e-12) {
                    double u = ups(lo / 2.0).value_or(std::numeric_limits<double>::infinity());
                    if (u >= target) break;
                    lo /= 2.0;
                }
                lo /= 2.0;
            } else {
                bool found = false;
                while (hi < 1e15) {
                    hi *= 2.0;
                    auto u = ups(hi);
                    if (u.has_value() && *u < target) {
                        found = true;
                        break;
                    }
                }
                if (!found) return res;  // rate bound not computable
                lo = hi / 2.0;
            }
            for (int it = 0; it < 100; ++it) {
                double mid = 0.5 * (lo + hi);
                auto u = ups(mid);
                if (u.has_value() && *u < target)
                    hi = mid;
                else
                    lo = mid;
            }
            res.growth_rate_bound = hi;
        }
    } catch (const UnsupportedError&) {
        // no spectral route for this entry; leave the rate empty
    }
    return res;
}

// ---------------------------------------------------------------------------
// Moment upper bounds
// ---------------------------------------------------------------------------

MomentBoundResult moment_upper_bound(const MomentBoundParams& params,
                                     const CorrelationFunction& f,
                                     const heat::InitialDatum& mu, double t,
                                     const heat::SpacePoint& x) {
    if (params.p < 2) throw std::invalid_argument("moment_upper_bound: p must be >= 2");
    if (params.lip_rho < 0.0 || params.vip < 0.0)
        throw std::invalid_argument("moment_upper_bound: negative parameter");
    MomentBoundResult out;
    out.gamma_p = 32.0 * params.p * params.lip_rho * params.lip_rho;
    out.j0 = heat::homogeneous_solution(mu, t, x);
    HSeriesResult h = h_series(f, out.gamma_p, t);
    out.h_value = h.value;
    // sqrt(H) via the log form so that representable bounds survive H overflow
    out.bound = (params.vip + std::sqrt(2.0) * out.j0) * std::exp(0.5 * h.log_value);
    if (params.alpha.has_value()) {
        const double a = *params.alpha;
        if (!(a > 0.0 && a <= 1.0))
            throw std::domain_error("moment_upper_bound: alpha must lie in (0,1]");
        DalangResult sd = strengthened_dalang(spectral_of(f), a);
        if (!sd.finite)
            throw NumericError("moment_upper_bound: strengthened Dalang condition fails: " +
                               sd.diagnostic);
        const double C = params.alpha_constant;
        out.exp_form_bound = C * (params.vip + out.j0) *
                             std::exp(C * std::pow(params.lip_rho, 2.0 / a) *
                                      std::pow(static_cast<double>(params.p), 1.0 / a) * t);
        out.exp_form_sharp = false;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Mollification
// ---------------------------------------------------------------------------

double theta_poly(double x) {
    const double a = std::abs(x);
    if (a <= 2.0) return 0.5 * (a - 4.0) * x * x + 16.0 / 3.0;
    if (a <= 4.0) {
        double u = 4.0 - a;
        return u * u * u / 6.0;
    }
    return 0.0;
}

double phi2_1d(double x) { return theta_poly(x) / 16.0; }

double phi2_scaled_1d(double eps, double x) { return phi2_1d(x / eps) / eps; }

namespace {

double mollified_value(const CorrelationFunction& f, double eps, double x) {
    const double half_support = 4.0 * eps;
    quad::Options opt;
    opt.abs_tol = 1e-11;
    switch (f.kind()) {
        case CorrelationFunction::Kind::WhiteNoise:
            return phi2_scaled_1d(eps, x);
        case CorrelationFunction::Kind::LatticeAtoms: {
            double s = 0.0;
            for (const auto& [k, w] : f.atoms()) s += w * phi2_scaled_1d(eps, x - k[0]);
            return s;
        }
        case CorrelationFunction::Kind::Constant:
            return f.level();
        case CorrelationFunction::Kind::Riesz: {
            const double b = f.riesz_exponent();
            double lo = x - half_support, hi = x + half_support;
            double s = 0.0;
            const double eta = 1e-9;
            if (lo < 0.0 && hi > 0.0) {
                s += phi2_scaled_1d(eps, x) * 2.0 * std::pow(eta, 1.0 - b) / (1.0 - b);
                auto seg = [&](double a2, double b2) {
                    if (a2 >= b2) return 0.0;
                    return quad::integrate_checked(
                        [&](double y) {
                            return std::pow(std::abs(y), -b) * phi2_scaled_1d(eps, x - y);
                        },
                        a2, b2, opt);
                };
                s += seg(lo, -eta) + seg(eta, hi);
            } else {
                s += quad::integrate_checked(
                    [&](double y) {
                        return std::pow(std::abs(y), -b) * phi2_scaled_1d(eps, x - y);
                    },
                    lo, hi, opt);
            }
            return s;
        }
        default: {
            return quad::integrate_checked(
                [&](double y) { return f.evaluate({y}) * phi2_scaled_1d(eps, x - y); },
                x - half_support, x + half_support, opt);
        }
    }
}

}  // namespace

CorrelationFunction mollify_correlation(const CorrelationFunction& f, double eps,
                                        const MollifyGrid& grid) {
    if (!(eps > 0.0)) throw std::domain_error("mollify_correlation: eps must be positive");
    if (f.dim() != 1)
        throw UnsupportedError("mollify_correlation: tabulated output is 1-d");
    if (grid.step > eps) {
        std::ostringstream msg;
        msg << "mollify_correlation: grid step " << grid.step
            << " cannot resolve mollifier support width " << 4.0 * eps;
        throw std::invalid_argument(msg.str());
    }
    const int n = static_cast<int>(std::round(grid.half_width / grid.step));
    std::vector<double> gx(2 * n + 1), gf(2 * n + 1);
    for (int i = 0; i <= n; ++i) {
        double x = i * grid.step;
        double v = mollified_value(f, eps, x);
        gx[n + i] = x;
        gx[n - i] = -x;
        gf[n + i] = v;
        gf[n - i] = v;  // certified symmetric by construction (f and phi2 even)
    }
    for (double& v : gf) v = std::max(v, 0.0);
    return CorrelationFunction::tabulated(std::move(gx), std::move(gf));
}

// ---------------------------------------------------------------------------
// Heat smoothing and Gram matrices
// ---------------------------------------------------------------------------

double heat_smoothed(const CorrelationFunction& f, double s, const std::vector<double>& x) {
    if (!(s > 0.0)) throw std::domain_error("heat_smoothed: s must be positive");
    const int d = f.dim();
    if (static_cast<int>(x.size()) != d)
        throw std::invalid_argument("heat_smoothed: dimension mismatch");
    double r2 = 0.0;
    for (double v : x) r2 += v * v;
    quad::Options opt;
    opt.abs_tol = 1e-11;
    switch (f.kind()) {
        case CorrelationFunction::Kind::WhiteNoise:
            return heat::heat_kernel(s, x);
        case CorrelationFunction::Kind::GaussianBump: {
            const double a = f.scale();
            return std::pow(a / (a + 2.0 * s), 0.5 * d) * std::exp(-r2 / (a + 2.0 * s));
        }
        case CorrelationFunction::Kind::LatticeAtoms: {
            double acc = 0.0;
            for (const auto& [k, w] : f.atoms()) {
                std::vector<double> diff(x.size());
                for (size_t i = 0; i < x.size(); ++i) diff[i] = x[i] - k[i];
                acc += w * heat::heat_kernel(s, diff);
            }
            return acc;
        }
        case CorrelationFunction::Kind::Constant:
            return f.level();
        case CorrelationFunction::Kind::Riesz: {
            if (d != 1) throw UnsupportedError("heat_smoothed riesz catalogued for d=1");
            const double b = f.riesz_exponent();
            const double x0 = x[0];
            const double eta = 1e-9;
            double ball = heat::heat_kernel_1d(s, x0) * 2.0 * std::pow(eta, 1.0 - b) / (1.0 - b);
            auto seg = [&](double a2, double b2) {
                if (a2 >= b2) return 0.0;
                return quad::integrate_checked(
                    [&](double y) {
                        return std::pow(std::abs(y), -b) * heat::heat_kernel_1d(s, x0 - y);
                    },
                    a2, b2, opt);
            };
            double R = std::abs(x0) + 14.0 * std::sqrt(s);
            return ball + seg(-R, -eta) + seg(eta, R);
        }
        case CorrelationFunction::Kind::CauchyLike:
        case CorrelationFunction::Kind::Tabulated: {
            if (d != 1) throw UnsupportedError("heat_smoothed catalogued for d=1");
            const double x0 = x[0];
            double lo = x0 - 14.0 * std::sqrt(s);
            double hi = x0 + 14.0 * std::sqrt(s);
            if (f.kind() == CorrelationFunction::Kind::Tabulated) {
                lo = std::max(lo, f.grid_x().front());
                hi = std::min(hi, f.grid_x().back());
                if (lo >= hi) return 0.0;
            }
            return quad::integrate_checked(
                [&](double y) { return f.evaluate({y}) * heat::heat_kernel_1d(s, x0 - y); },
                lo, hi, opt);
        }
    }
    throw UnsupportedError("heat_smoothed: unknown kind");
}

std::vector<std::vector<double>> gram_matrix(const CorrelationFunction& f,
                                             const std::vector<std::vector<double>>& points) {
    if (!f.is_pointwise())
        throw UnsupportedError("gram_matrix: entry has no pointwise values");
    const size_t n = points.size();
    std::vector<std::vector<double>> g(n, std::vector<double>(n, 0.0));
    for (size_t i = 0; i < n; ++i) {
        for (size_t j = 0; j <= i; ++j) {
            std::vector<double> diff(points[i].size());
            for (size_t k = 0; k < diff.size(); ++k) diff[k] = points[i][k] - points[j][k];
            double v = f.evaluate(diff);
            g[i][j] = v;
            g[j][i] = v;
        }
    }
    return g;
}

}  // namespace shelab::corr
