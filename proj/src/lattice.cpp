#include "shelab/lattice.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "shelab/quadrature.hpp"

namespace shelab::lattice {

namespace {

void enumerate_box(int radius, int d, std::vector<Site>& out) {
    Site cur(d, -radius);
    while (true) {
        out.push_back(cur);
        int k = d - 1;
        while (k >= 0) {
            if (++cur[k] <= radius) break;
            cur[k] = -radius;
            --k;
        }
        if (k < 0) break;
    }
}

double normal_interval_mass(double lo, double hi) {
    return 0.5 * (std::erfc(-hi / kSqrt2) - std::erfc(-lo / kSqrt2));
}

}  // namespace

double transition_kernel(double eps, double delta, const Site& i, const Site& j, int d) {
    if (!(eps > 0.0 && delta > 0.0))
        throw std::domain_error("transition_kernel: eps and delta must be positive");
    if (static_cast<int>(i.size()) != d || static_cast<int>(j.size()) != d)
        throw std::invalid_argument("transition_kernel: site dimension mismatch");
    const double scale = delta / std::sqrt(eps);
    double p = 1.0;
    for (int k = 0; k < d; ++k) {
        double m = static_cast<double>(i[k] - j[k]);
        p *= normal_interval_mass((m - 0.5) * scale, (m + 0.5) * scale);
    }
    return p;
}

TransitionMatrix build_transition(double eps, double delta, int radius, int d,
                                  double mass_tol) {
    if (radius < 1) throw std::invalid_argument("build_transition: radius must be >= 1");
    TransitionMatrix tm;
    enumerate_box(radius, d, tm.sites);
    const int n = tm.size();
    const int L = 2 * radius + 1;

    // offset kernel and its mass inside the box
    const Site origin(d, 0);
    double inside = 0.0;
    std::map<Site, double> q;
    for (const Site& s : tm.sites) {
        double v = transition_kernel(eps, delta, s, origin, d);
        q[s] = v;
        inside += v;
    }
    tm.lost_mass = 1.0 - inside;
    if (tm.lost_mass > mass_tol) {
        std::ostringstream msg;
        msg << "build_transition: truncated offset mass " << tm.lost_mass
            << " exceeds tolerance " << mass_tol << "; enlarge radius";
        throw NumericError(msg.str());
    }

    // fold the tail periodically: preserves row sums (exactly, after the
    // closing renormalization below) and evenness of the offset kernel
    std::map<Site, double> qw = q;
    {
        std::vector<Site> shifts;
        Site cur(d, -1);
        while (true) {
            bool nonzero = false;
            for (int v : cur) nonzero |= (v != 0);
            if (nonzero) shifts.push_back(cur);
            int k = d - 1;
            while (k >= 0) {
                if (++cur[k] <= 1) break;
                cur[k] = -1;
                --k;
            }
            if (k < 0) break;
        }
        for (auto& [off, v] : qw) {
            for (const Site& w : shifts) {
                Site shifted(d);
                for (int k = 0; k < d; ++k) shifted[k] = off[k] + w[k] * L;
                v += transition_kernel(eps, delta, shifted, origin, d);
            }
        }
    }
    double total = 0.0;
    for (const auto& [off, v] : qw) total += v;
    for (auto& [off, v] : qw) v /= total;  // rows sum to exactly 1

    tm.entries.resize(n, n);
    std::map<Site, int> index;
    for (int i = 0; i < n; ++i) index[tm.sites[i]] = i;
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            Site off(d);
            for (int k = 0; k < d; ++k) {
                int v = tm.sites[j][k] - tm.sites[i][k];
                // wrap into [-radius, radius]
                v = ((v + radius) % L + L) % L - radius;
                off[k] = v;
            }
            tm.entries(i, j) = qw.at(off);
        }
    }
    tm.lambda = check_lambda(tm);
    return tm;
}

std::map<Site, double> lattice_covariance(const corr::CorrelationFunction& f, double eps,
                                          double delta, const std::vector<Site>& offsets) {
    if (!(eps > 0.0 && delta > 0.0))
        throw std::domain_error("lattice_covariance: eps and delta must be positive");
    std::map<Site, double> out;
    for (const Site& m : offsets) {
        std::vector<double> x(m.size());
        for (size_t k = 0; k < m.size(); ++k) x[k] = m[k] * delta;
        out[m] = corr::heat_smoothed(f, 2.0 * eps, x);
    }
    return out;
}

double lattice_covariance_spectral(const corr::CorrelationFunction& f, double eps,
                                   double delta, const Site& m) {
    if (f.dim() != 1) throw UnsupportedError("spectral covariance route catalogued for d=1");
    corr::SpectralMeasure fm = corr::spectral_of(f);
    const double x = m.at(0) * delta;
    if (fm.kind() == corr::SpectralMeasure::Kind::Atomic) {
        double s = 0.0;
        for (const auto& a : fm.atoms())
            s += a.weight * std::exp(-eps * a.frequency[0] * a.frequency[0]) *
                 std::cos(x * a.frequency[0]);
        return s / kTwoPi;
    }
    quad::Options opt;
    opt.abs_tol = 1e-11;
    double R = 14.0 / std::sqrt(eps) + 2.0;
    // even integrand: 2 int_0^R, with a sqrt softening near 0 (Riesz)
    auto g = [&](double r) {
        return fm.density_at(r) * std::exp(-eps * r * r) * std::cos(x * r);
    };
    double inner = quad::integrate_checked([&](double u) { return g(u * u) * 2.0 * u; },
                                           0.0, 1.0, opt);
    double outer = quad::integrate_checked(g, 1.0, R, opt);
    return 2.0 * (inner + outer) / kTwoPi;
}

double check_lambda(const TransitionMatrix& p) {
    double lambda = 0.0;
    for (int j = 0; j < p.entries.cols(); ++j)
        lambda = std::max(lambda, p.entries.col(j).sum());
    return lambda;
}

// ---------------------------------------------------------------------------
// LatticeSystem
// ---------------------------------------------------------------------------

double LatticeSystem::gamma_at(const Site& offset) const {
    auto it = gamma.find(offset);
    if (it != gamma.end()) return it->second;
    Site neg(offset.size());
    for (size_t k = 0; k < offset.size(); ++k) neg[k] = -offset[k];
    it = gamma.find(neg);
    if (it != gamma.end()) return it->second;
    throw std::out_of_range("LatticeSystem: offset not covered by gamma");
}

double LatticeSystem::gamma0() const { return gamma_at(Site(sites[0].size(), 0)); }

bool LatticeSystem::all_active() const {
    for (uint8_t a : active)
        if (!a) return false;
    return true;
}

namespace {

void finalize_noise(LatticeSystem& sys) {
    noise::CovarianceMatrix cov = noise::assemble_covariance(
        [&](const std::vector<int>& off) { return sys.gamma_at(off); }, sys.sites);
    sys.cov = noise::psd_repair(cov);
    sys.factor =
        std::make_shared<const Eigen::MatrixXd>(noise::factorize(sys.cov.gamma));
}

void validate_u0(const Eigen::VectorXd& u0) {
    bool positive = false;
    for (int i = 0; i < u0.size(); ++i) {
        if (u0(i) < 0.0) throw std::invalid_argument("LatticeSystem: u0 must be nonnegative");
        positive |= u0(i) > 0.0;
    }
    if (!positive)
        throw std::invalid_argument("LatticeSystem: u0 must have a strictly positive entry");
}

}  // namespace

LatticeSystem assemble_system(const corr::CorrelationFunction& f, double eps, double delta,
                              int radius, KappaMode kappa_mode,
                              const rho::DiffusionCoefficient& rho,
                              const heat::InitialDatum& mu, double explicit_kappa) {
    const int d = f.dim();
    if (mu.dim() != d) throw std::invalid_argument("assemble_system: dimension mismatch");
    LatticeSystem sys;
    sys.p = build_transition(eps, delta, radius, d);
    sys.sites = sys.p.sites;
    sys.delta = delta;
    sys.epsilon = eps;
    sys.kappa = kappa_mode == KappaMode::Yosida ? 1.0 / eps : explicit_kappa;
    if (!(sys.kappa > 0.0)) throw std::invalid_argument("assemble_system: kappa must be positive");
    sys.rho_coef = rho;

    std::vector<Site> offsets;
    enumerate_box(2 * radius, d, offsets);
    sys.gamma = lattice_covariance(f, eps, delta, offsets);

    sys.u0.resize(sys.size());
    for (int i = 0; i < sys.size(); ++i) {
        std::vector<double> x(d);
        for (int k = 0; k < d; ++k) x[k] = sys.sites[i][k] * delta;
        sys.u0(i) = heat::homogeneous_solution(mu, eps, x);
    }
    validate_u0(sys.u0);
    sys.active.assign(sys.size(), 1);
    finalize_noise(sys);
    return sys;
}

LatticeSystem make_direct_system(double kappa, const Eigen::MatrixXd& p,
                                 const std::function<double(int)>& gamma_of_offset,
                                 const rho::DiffusionCoefficient& rho,
                                 const Eigen::VectorXd& u0) {
    if (!(kappa > 0.0)) throw std::invalid_argument("make_direct_system: kappa must be positive");
    const int n = static_cast<int>(p.rows());
    if (p.cols() != n || u0.size() != n)
        throw std::invalid_argument("make_direct_system: size mismatch");
    for (int i = 0; i < n; ++i) {
        if (std::abs(p.row(i).sum() - 1.0) > 1e-10)
            throw std::invalid_argument("make_direct_system: rows must sum to 1");
        for (int j = 0; j < n; ++j)
            if (p(i, j) < 0.0)
                throw std::invalid_argument("make_direct_system: negative entry");
    }
    LatticeSystem sys;
    sys.kappa = kappa;
    sys.delta = 0.0;
    sys.p.entries = p;
    for (int i = 0; i < n; ++i) sys.p.sites.push_back({i});
    sys.p.lambda = check_lambda(sys.p);
    sys.sites = sys.p.sites;
    for (int m = -(n - 1); m <= n - 1; ++m) sys.gamma[{m}] = gamma_of_offset(m);
    sys.rho_coef = rho;
    sys.u0 = u0;
    validate_u0(sys.u0);
    sys.active.assign(n, 1);
    finalize_noise(sys);
    return sys;
}

LatticeSystem with_gamma(const LatticeSystem& sys,
                         const std::function<double(int)>& gamma_of_offset) {
    if (sys.sites.empty() || sys.sites[0].size() != 1)
        throw std::invalid_argument("with_gamma: 1-d site layout required");
    LatticeSystem out = sys;
    out.gamma.clear();
    int lo = sys.sites.front()[0], hi = sys.sites.back()[0];
    for (int m = -(hi - lo); m <= hi - lo; ++m) out.gamma[{m}] = gamma_of_offset(m);
    finalize_noise(out);
    return out;
}

LatticeSystem with_rho(const LatticeSystem& sys, const rho::DiffusionCoefficient& rho) {
    LatticeSystem out = sys;
    out.rho_coef = rho;
    return out;
}

// ---------------------------------------------------------------------------
// Serialization: plain text, row-major dense matrices.
// ---------------------------------------------------------------------------

void save_system(const LatticeSystem& sys, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_system: cannot open " + path);
    out.precision(17);
    const int n = sys.size();
    const int d = static_cast<int>(sys.sites[0].size());
    out << "shelab-system 1\n";
    out << "n " << n << "\nd " << d << "\n";
    out << "kappa " << sys.kappa << "\ndelta " << sys.delta << "\nepsilon " << sys.epsilon
        << "\n";
    out << "sites";
    for (const auto& s : sys.sites)
        for (int v : s) out << ' ' << v;
    out << "\np";
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) out << ' ' << sys.p.entries(i, j);
    out << "\ngamma " << sys.gamma.size();
    for (const auto& [off, v] : sys.gamma) {
        for (int k : off) out << ' ' << k;
        out << ' ' << v;
    }
    out << "\nu0";
    for (int i = 0; i < n; ++i) out << ' ' << sys.u0(i);
    out << "\nactive";
    for (uint8_t a : sys.active) out << ' ' << static_cast<int>(a);
    out << "\nrho " << sys.rho_coef.describe() << "\n";
}

LatticeSystem load_system(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_system: cannot open " + path);
    std::string tag;
    int version = 0, n = 0, d = 0;
    in >> tag >> version;
    if (tag != "shelab-system" || version != 1)
        throw std::runtime_error("load_system: unrecognized header");
    LatticeSystem sys;
    double kappa = 0, delta = 0, epsilon = 0;
    in >> tag >> n >> tag >> d;
    in >> tag >> kappa >> tag >> delta >> tag >> epsilon;
    sys.kappa = kappa;
    sys.delta = delta;
    sys.epsilon = epsilon;
    in >> tag;  // "sites"
    sys.sites.assign(n, Site(d, 0));
    for (auto& s : sys.sites)
        for (int& v : s) in >> v;
    in >> tag;  // "p"
    sys.p.entries.resize(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) in >> sys.p.entries(i, j);
    sys.p.sites = sys.sites;
    sys.p.lambda = check_lambda(sys.p);
    size_t n_gamma = 0;
    in >> tag >> n_gamma;  // "gamma"
    for (size_t g = 0; g < n_gamma; ++g) {
        Site off(d);
        double v;
        for (int& k : off) in >> k;
        in >> v;
        sys.gamma[off] = v;
    }
    in >> tag;  // "u0"
    sys.u0.resize(n);
    for (int i = 0; i < n; ++i) in >> sys.u0(i);
    in >> tag;  // "active"
    sys.active.assign(n, 1);
    for (auto& a : sys.active) {
        int v;
        in >> v;
        a = static_cast<uint8_t>(v);
    }
    // rho descriptor is informational; loaded systems default to zero rho and
    // callers attach the coefficient they need.
    finalize_noise(sys);
    return sys;
}

}  // namespace shelab::lattice
