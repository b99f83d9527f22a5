#include "shelab/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "shelab/oracle.hpp"
#include "shelab/parallel.hpp"
#include "shelab/sde.hpp"

namespace shelab::cli {

namespace fs = std::filesystem;

namespace {

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::istringstream in(s);
    std::string tok;
    while (std::getline(in, tok, sep))
        if (!tok.empty()) out.push_back(tok);
    return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Construction from config
// ---------------------------------------------------------------------------

corr::CorrelationFunction correlation_from_config(const Config& cfg,
                                                  const std::string& prefix) {
    std::string kind = cfg.get_string(prefix + "kind");
    int d = cfg.get_int_or(prefix + "dim", 1);
    corr::CorrelationFunction f = [&]() {
        if (kind == "white_noise") return corr::CorrelationFunction::white_noise(d);
        if (kind == "riesz")
            return corr::CorrelationFunction::riesz(cfg.get_double(prefix + "riesz_exponent"), d);
        if (kind == "gaussian_bump")
            return corr::CorrelationFunction::gaussian_bump(
                cfg.get_double_or(prefix + "scale", 1.0), d);
        if (kind == "cauchy_like")
            return corr::CorrelationFunction::cauchy_like(
                cfg.get_double_or(prefix + "scale", 1.0), d);
        if (kind == "constant")
            return corr::CorrelationFunction::constant(cfg.get_double_or(prefix + "level", 1.0),
                                                       d);
        if (kind == "lattice_atoms") {
            // offset:weight pairs, e.g. "0:1.0,1:0.25,-1:0.25"
            std::map<corr::Offset, double> atoms;
            for (const std::string& item : split(cfg.get_string(prefix + "atoms"), ',')) {
                auto kv = split(item, ':');
                if (kv.size() != 2)
                    throw std::invalid_argument("config field '" + prefix +
                                                "atoms': expected offset:weight pairs");
                atoms[{std::stoi(kv[0])}] = std::stod(kv[1]);
            }
            return corr::CorrelationFunction::lattice_atoms(std::move(atoms), 1);
        }
        throw std::invalid_argument("config field '" + prefix + "kind': unknown kind '" +
                                    kind + "'");
    }();
    double moll_eps = cfg.get_double_or(prefix + "mollify_eps", 0.0);
    if (moll_eps > 0.0) {
        corr::MollifyGrid grid;
        grid.half_width = cfg.get_double_or(prefix + "mollify_half_width", 8.0);
        grid.step = cfg.get_double_or(prefix + "mollify_step", moll_eps / 4.0);
        f = corr::mollify_correlation(f, moll_eps, grid);
    }
    return f;
}

heat::InitialDatum initial_from_config(const Config& cfg) {
    std::string kind = cfg.get_string_or("initial.kind", "lebesgue");
    int d = cfg.get_int_or("initial.dim", cfg.get_int_or("correlation.dim", 1));
    heat::InitialDatum mu = [&]() {
        if (kind == "lebesgue")
            return heat::InitialDatum::lebesgue(d, cfg.get_double_or("initial.level", 1.0));
        if (kind == "zero") return heat::InitialDatum::zero(d);
        if (kind == "point_masses") {
            std::vector<heat::PointMass> masses;
            for (const std::string& item : split(cfg.get_string("initial.masses"), ',')) {
                auto kv = split(item, ':');
                if (kv.size() != 2)
                    throw std::invalid_argument(
                        "config field 'initial.masses': expected location:mass pairs");
                heat::PointMass pm;
                pm.location = {std::stod(kv[0])};
                pm.mass = std::stod(kv[1]);
                masses.push_back(pm);
            }
            return heat::InitialDatum::point_masses(std::move(masses), 1);
        }
        throw std::invalid_argument("config field 'initial.kind': unknown kind '" + kind +
                                    "'");
    }();
    double trunc_eps = cfg.get_double_or("initial.truncate_eps", 0.0);
    if (trunc_eps > 0.0) mu = heat::truncate_initial(mu, trunc_eps);
    return mu;
}

rho::DiffusionCoefficient rho_from_config(const Config& cfg, const std::string& prefix) {
    std::string kind = cfg.get_string(prefix + "kind");
    if (kind == "linear")
        return rho::DiffusionCoefficient::linear(cfg.get_double(prefix + "lambda"));
    if (kind == "affine")
        return rho::DiffusionCoefficient::affine(cfg.get_double(prefix + "a"),
                                                 cfg.get_double_or(prefix + "b", 0.0));
    if (kind == "zero") return rho::DiffusionCoefficient::zero();
    throw std::invalid_argument("config field '" + prefix + "kind': unknown kind '" + kind +
                                "'");
}

std::function<double(int)> gamma_from_config(const Config& cfg, const std::string& prefix) {
    std::string kind = cfg.get_string(prefix + "kind");
    if (kind == "diag") {
        double g0 = cfg.get_double(prefix + "g0");
        return [g0](int m) { return m == 0 ? g0 : 0.0; };
    }
    if (kind == "constant") {
        double g0 = cfg.get_double(prefix + "g0");
        return [g0](int) { return g0; };
    }
    if (kind == "exp") {
        double g0 = cfg.get_double(prefix + "g0");
        double rate = cfg.get_double(prefix + "rate");
        if (!(rate >= 0.0 && rate < 1.0))
            throw std::invalid_argument("config field '" + prefix +
                                        "rate': must lie in [0,1) for positive definiteness");
        return [g0, rate](int m) { return g0 * std::pow(rate, std::abs(m)); };
    }
    if (kind == "bump") {
        double g0 = cfg.get_double(prefix + "g0");
        double bump = cfg.get_double(prefix + "bump");
        return [g0, bump](int m) {
            if (m == 0) return g0;
            return std::abs(m) == 1 ? bump : 0.0;
        };
    }
    throw std::invalid_argument("config field '" + prefix + "kind': unknown kind '" + kind +
                                "'");
}

lattice::LatticeSystem system_from_config(const Config& cfg) {
    std::string source = cfg.get_string_or("system.source", "direct");
    rho::DiffusionCoefficient rc = rho_from_config(cfg, "rho.");
    if (source == "pipeline") {
        corr::CorrelationFunction f = correlation_from_config(cfg);
        heat::InitialDatum mu = initial_from_config(cfg);
        double eps = cfg.get_double("lattice.epsilon");
        double delta = cfg.get_double("lattice.delta");
        int radius = cfg.get_int("lattice.radius");
        std::string mode = cfg.get_string_or("lattice.kappa_mode", "yosida");
        if (mode == "yosida")
            return lattice::assemble_system(f, eps, delta, radius, lattice::KappaMode::Yosida,
                                            rc, mu);
        return lattice::assemble_system(f, eps, delta, radius, lattice::KappaMode::Explicit,
                                        rc, mu, cfg.get_double("lattice.kappa"));
    }
    if (source != "direct")
        throw std::invalid_argument("config field 'system.source': unknown '" + source + "'");

    int n = cfg.get_int("system.n_sites");
    if (n < 1) throw std::invalid_argument("config field 'system.n_sites': must be >= 1");
    double kappa = cfg.get_double("system.kappa");
    std::string p_kind = cfg.get_string_or("system.p", "ring");
    Eigen::MatrixXd p = Eigen::MatrixXd::Zero(n, n);
    if (p_kind == "ring") {
        if (n == 1)
            p(0, 0) = 1.0;
        else
            for (int i = 0; i < n; ++i) {
                p(i, (i + 1) % n) += 0.5;
                p(i, (i + n - 1) % n) += 0.5;
            }
    } else if (p_kind == "identity") {
        p.setIdentity();
    } else {
        throw std::invalid_argument("config field 'system.p': unknown '" + p_kind + "'");
    }
    Eigen::VectorXd u0(n);
    if (cfg.has("system.u0_list")) {
        auto vals = cfg.get_double_list("system.u0_list");
        if (static_cast<int>(vals.size()) != n)
            throw std::invalid_argument("config field 'system.u0_list': size mismatch");
        for (int i = 0; i < n; ++i) u0(i) = vals[i];
    } else {
        u0.setConstant(cfg.get_double_or("system.u0", 1.0));
    }
    return lattice::make_direct_system(kappa, p, gamma_from_config(cfg, "gamma."), rc, u0);
}

namespace {

// deterministic mean E U(t, i) = (e^{kappa(p-I)t} u0)(i): the lattice J0
double flow_mean(const lattice::LatticeSystem& sys, double t, int site) {
    const int n = sys.size();
    Eigen::MatrixXd a = sys.kappa * (sys.p.entries - Eigen::MatrixXd::Identity(n, n));
    return (oracle::expm(a * t) * sys.u0)(site);
}

std::map<std::string, std::string> parse_kv_tokens(const std::string& text,
                                                   const std::string& field) {
    std::map<std::string, std::string> kv;
    std::istringstream in(text);
    std::string tok;
    in >> tok;  // kind consumed by caller
    while (in >> tok) {
        size_t eq = tok.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config field '" + field + "': bad token '" + tok +
                                        "'");
        kv[tok.substr(0, eq)] = tok.substr(eq + 1);
    }
    return kv;
}

std::vector<double> parse_list(const std::string& s) {
    std::vector<double> out;
    for (const std::string& item : split(s, ',')) out.push_back(std::stod(item));
    return out;
}

std::vector<int> parse_int_list(const std::string& s, char sep = ',') {
    std::vector<int> out;
    for (const std::string& item : split(s, sep)) out.push_back(std::stoi(item));
    return out;
}

}  // namespace

std::vector<cmp::Functional> functionals_from_config(const Config& cfg,
                                                     const lattice::LatticeSystem& sys) {
    std::vector<cmp::Functional> out;
    std::vector<std::string> keys = cfg.keys_with_prefix("functional.");
    std::sort(keys.begin(), keys.end(), [](const std::string& a, const std::string& b) {
        return std::stoi(a.substr(11)) < std::stoi(b.substr(11));
    });
    for (const std::string& key : keys) {
        std::string text = cfg.get_string(key);
        std::istringstream in(text);
        std::string kind;
        in >> kind;
        auto kv = parse_kv_tokens(text, key);
        auto need = [&](const std::string& k) -> std::string {
            auto it = kv.find(k);
            if (it == kv.end())
                throw std::invalid_argument("config field '" + key + "': missing '" + k + "='");
            return it->second;
        };
        if (kind == "moment") {
            auto ts = parse_list(need("t"));
            auto sites = parse_int_list(need("site"));
            auto ks = parse_int_list(need("k"));
            if (ts.size() != sites.size() || ts.size() != ks.size())
                throw std::invalid_argument("config field '" + key + "': list length mismatch");
            std::vector<cmp::Functional::MomentTerm> terms;
            for (size_t i = 0; i < ts.size(); ++i)
                terms.push_back({{ts[i], sites[i]}, ks[i]});
            out.push_back(cmp::Functional::moment(std::move(terms)));
        } else if (kind == "laplace") {
            auto ts = parse_list(need("t"));
            auto sites = parse_int_list(need("site"));
            auto ls = parse_list(need("lambda"));
            if (ts.size() != sites.size() || ts.size() != ls.size())
                throw std::invalid_argument("config field '" + key + "': list length mismatch");
            std::vector<cmp::Functional::LaplaceTerm> terms;
            for (size_t i = 0; i < ts.size(); ++i)
                terms.push_back({{ts[i], sites[i]}, ls[i]});
            out.push_back(cmp::Functional::laplace(std::move(terms)));
        } else if (kind == "central_even") {
            double t = std::stod(need("t"));
            int site = std::stoi(need("site"));
            std::string c_text = need("c");
            double c = c_text == "mean" ? flow_mean(sys, t, site) : std::stod(c_text);
            out.push_back(cmp::Functional::central_even({t, site}, c, std::stoi(need("n"))));
        } else if (kind == "coordinate_map") {
            double t = std::stod(need("t"));
            int site = std::stoi(need("site"));
            int k = kv.count("k") ? std::stoi(kv["k"]) : 1;
            std::string g = need("g");
            cmp::GDescriptor gd = [&]() {
                if (g == "exp_neg") return cmp::GDescriptor::exp_neg(std::stod(need("lambda")));
                if (g == "inv_power") return cmp::GDescriptor::inv_power(std::stod(need("c")));
                if (g == "log_ratio")
                    return cmp::GDescriptor::log_ratio(std::stod(need("a")),
                                                       std::stod(need("b")));
                if (g == "pow_log")
                    return cmp::GDescriptor::pow_log(std::stod(need("b")), std::stod(need("a")),
                                                     std::stod(need("c")));
                if (g == "power") return cmp::GDescriptor::power(std::stod(need("d")));
                throw std::invalid_argument("config field '" + key + "': unknown g '" + g + "'");
            }();
            out.push_back(cmp::Functional::coordinate_map({{{t, site}, gd, k}}));
        } else if (kind == "norm_power") {
            cmp::Functional::NormGroup grp;
            grp.t = std::stod(need("t"));
            grp.sites = parse_int_list(need("sites"), '|');
            grp.alpha = std::stod(need("alpha"));
            out.push_back(cmp::Functional::norm_power({grp}));
        } else {
            throw std::invalid_argument("config field '" + key + "': unknown functional kind '" +
                                        kind + "'");
        }
    }
    if (out.empty()) throw std::invalid_argument("config: no functional.N entries");
    return out;
}

// ---------------------------------------------------------------------------
// Convergence ladders (coupled across levels)
// ---------------------------------------------------------------------------

std::vector<LadderDistance> convergence_study(const corr::CorrelationFunction& f,
                                              const heat::InitialDatum& mu,
                                              const rho::DiffusionCoefficient& rho_coef,
                                              const std::vector<LadderLevel>& levels,
                                              double half_width, double t_query,
                                              double x_query, int n_paths, uint64_t seed) {
    const int L = static_cast<int>(levels.size());
    if (L < 2) throw std::invalid_argument("convergence_study: need at least 2 levels");

    struct Level {
        int radius = 0;
        int n = 0;
        int joint_offset = 0;
        int query_index = 0;
        int64_t ratio = 1;  // fine steps per own step
        Eigen::MatrixXd drift;
        Eigen::VectorXd u0;
    };

    double dt_fine = levels[0].dt;
    for (const auto& lv : levels) dt_fine = std::min(dt_fine, lv.dt);
    std::vector<Level> built(L);
    int joint_n = 0;
    for (int l = 0; l < L; ++l) {
        const auto& spec = levels[l];
        if (!(spec.eps > 0.0 && spec.delta > 0.0 && spec.dt > 0.0))
            throw std::invalid_argument("convergence_study: level parameters must be positive");
        int64_t ratio = static_cast<int64_t>(std::round(spec.dt / dt_fine));
        if (std::abs(spec.dt - ratio * dt_fine) > 1e-12)
            throw std::invalid_argument("convergence_study: level dts must be multiples of the finest");
        Level lv;
        lv.ratio = ratio;
        lv.radius = static_cast<int>(std::round(half_width / spec.delta));
        lattice::TransitionMatrix p =
            lattice::build_transition(spec.eps, spec.delta, lv.radius, 1);
        lv.n = p.size();
        double kappa = 1.0 / spec.eps;
        if (spec.dt > 0.1 * spec.eps + 1e-15)
            throw std::invalid_argument("convergence_study: dt exceeds 0.1 epsilon at a level");
        lv.drift = kappa * (p.entries - Eigen::MatrixXd::Identity(lv.n, lv.n));
        lv.u0.resize(lv.n);
        for (int i = 0; i < lv.n; ++i)
            lv.u0(i) = heat::homogeneous_solution(mu, spec.eps,
                                                  {(i - lv.radius) * spec.delta});
        int qi = static_cast<int>(std::round(x_query / spec.delta)) + lv.radius;
        if (qi < 0 || qi >= lv.n)
            throw std::invalid_argument("convergence_study: x_query outside the site box");
        lv.query_index = qi;
        lv.joint_offset = joint_n;
        joint_n += lv.n;
        built[l] = std::move(lv);
    }
    int64_t n_fine = static_cast<int64_t>(std::round(t_query / dt_fine));
    if (std::abs(t_query - n_fine * dt_fine) > 1e-12)
        throw std::invalid_argument("convergence_study: t_query must be a multiple of the finest dt");
    for (const auto& lv : built)
        if (n_fine % lv.ratio != 0)
            throw std::invalid_argument("convergence_study: t_query must align with every level grid");

    // joint covariance across all (level, site) rows:
    // Cov rate = (G(eps_a + eps_b) * f)(i delta_a - j delta_b)
    Eigen::MatrixXd joint(joint_n, joint_n);
    for (int a = 0; a < L; ++a) {
        for (int b = 0; b <= a; ++b) {
            double s = levels[a].eps + levels[b].eps;
            for (int i = 0; i < built[a].n; ++i) {
                double xa = (i - built[a].radius) * levels[a].delta;
                for (int j = 0; j < built[b].n; ++j) {
                    double xb = (j - built[b].radius) * levels[b].delta;
                    double v = corr::heat_smoothed(f, s, {xa - xb});
                    joint(built[a].joint_offset + i, built[b].joint_offset + j) = v;
                    joint(built[b].joint_offset + j, built[a].joint_offset + i) = v;
                }
            }
        }
    }
    noise::CovarianceMatrix cov = noise::psd_repair(noise::assemble_covariance(joint), 1e-6);
    auto factor = std::make_shared<const Eigen::MatrixXd>(noise::factorize(cov.gamma));

    // coupled paths: one joint fine-step increment stream feeds every level
    auto chunks = par::make_chunks(n_paths, par::kEnsembleChunks);
    struct Acc {
        std::vector<double> sum, sumsq;  // per level pair (l, l+1)
    };
    std::vector<Acc> acc(chunks.size());
    par::run_chunks(chunks, [&](const par::Chunk& c) {
        Acc& a = acc[c.index];
        a.sum.assign(L - 1, 0.0);
        a.sumsq.assign(L - 1, 0.0);
        Eigen::VectorXd z(joint_n), dw(joint_n), drift_buf;
        std::vector<Eigen::VectorXd> u(L), dm(L);
        for (int64_t p = c.begin; p < c.end; ++p) {
            auto stream = noise::make_stream(seed, static_cast<uint64_t>(p), dt_fine, factor);
            for (int l = 0; l < L; ++l) {
                u[l] = built[l].u0;
                dm[l] = Eigen::VectorXd::Zero(built[l].n);
            }
            for (int64_t s = 0; s < n_fine; ++s) {
                noise::sample_increments_into(stream, static_cast<uint64_t>(s), z, dw);
                for (int l = 0; l < L; ++l) {
                    dm[l] += dw.segment(built[l].joint_offset, built[l].n);
                    if ((s + 1) % built[l].ratio == 0) {
                        double dt_l = levels[l].dt;
                        drift_buf.noalias() = built[l].drift * u[l];
                        for (int i = 0; i < built[l].n; ++i)
                            u[l](i) += drift_buf(i) * dt_l + rho_coef(u[l](i)) * dm[l](i);
                        dm[l].setZero();
                    }
                }
            }
            for (int l = 0; l + 1 < L; ++l) {
                double d = u[l](built[l].query_index) - u[l + 1](built[l + 1].query_index);
                a.sum[l] += d * d;
                a.sumsq[l] += d * d * d * d;
            }
        }
    });

    std::vector<LadderDistance> out;
    for (int l = 0; l + 1 < L; ++l) {
        double s1 = 0.0, s2 = 0.0;
        for (const auto& a : acc) {
            s1 += a.sum[l];
            s2 += a.sumsq[l];
        }
        double mean_sq = s1 / n_paths;
        double var_sq = std::max(s2 / n_paths - mean_sq * mean_sq, 0.0);
        LadderDistance d;
        d.level_a = l;
        d.level_b = l + 1;
        d.l2_distance = std::sqrt(mean_sq);
        // delta-method SE of sqrt(mean)
        d.std_error = mean_sq > 0.0
                          ? 0.5 * std::sqrt(var_sq / n_paths) / std::sqrt(mean_sq)
                          : 0.0;
        out.push_back(d);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Experiment drivers
// ---------------------------------------------------------------------------

namespace {

// Buffers artifacts in memory and writes them only once the experiment has
// succeeded, so a failed run leaves nothing behind but the error log.
struct Emitter {
    fs::path dir;
    std::vector<std::pair<std::string, std::ostringstream>> buffers;

    std::ostringstream& open(const std::string& name) {
        buffers.emplace_back(name, std::ostringstream{});
        return buffers.back().second;
    }

    std::vector<std::string> flush() {
        fs::create_directories(dir);
        std::vector<std::string> written;
        for (auto& [name, buf] : buffers) {
            fs::path p = dir / name;
            std::ofstream out(p);
            if (!out) throw std::runtime_error("cannot write " + p.string());
            out << buf.str();
            written.push_back(p.string());
        }
        return written;
    }
};

void write_manifest(Emitter& em, const Config& cfg) {
    auto& out = em.open("manifest.cfg");
    out << "# shelab manifest v" << kVersion << " (re-runnable config)\n";
    out << cfg.serialize();
}

cmp::MCParams mc_from_config(const Config& cfg) {
    cmp::MCParams mc;
    mc.n_paths = cfg.get_int_or("mc.n_paths", 10000);
    mc.dt = cfg.get_double_or("mc.dt", 0.01);
    mc.seed = cfg.get_u64_or("seed", 1);
    if (mc.n_paths < 1) throw std::invalid_argument("config field 'mc.n_paths': must be >= 1");
    if (!(mc.dt > 0.0)) throw std::invalid_argument("config field 'mc.dt': must be positive");
    return mc;
}

cmp::VerdictOptions verdict_options_from_config(const Config& cfg) {
    cmp::VerdictOptions opt;
    opt.z_threshold = cfg.get_double_or("verdict.z_threshold", 2.576);
    opt.n_floor = cfg.get_int_or("verdict.n_floor", 100);
    opt.cone_box.hi = cfg.get_double_or("verdict.cone_box_hi", 8.0);
    opt.cone_h = cfg.get_double_or("verdict.cone_h", 0.25);
    return opt;
}

int exit_from_verdicts(const std::vector<cmp::ComparisonVerdict>& verdicts) {
    bool violation = false, inconclusive = false;
    for (const auto& v : verdicts) {
        violation |= v.status == cmp::Status::Violation;
        inconclusive |= v.status == cmp::Status::Inconclusive;
    }
    if (violation) return kExitViolation;
    if (inconclusive) return kExitInconclusive;
    return kExitOk;
}

void write_verdict_csv(std::ostream& out, const std::vector<cmp::ComparisonVerdict>& vs) {
    out << "# shelab-csv v" << kVersion << " compare\n";
    out << "functional_id,est1,se1,est2,se2,z,verdict\n";
    for (const auto& v : vs)
        out << '"' << v.functional_id << '"' << ',' << fmt(v.est1) << ',' << fmt(v.se1) << ','
            << fmt(v.est2) << ',' << fmt(v.se2) << ',' << fmt(v.z) << ','
            << cmp::to_string(v.status) << "\n";
}

std::string verdict_summary(const std::vector<cmp::ComparisonVerdict>& vs) {
    std::ostringstream s;
    for (const auto& v : vs)
        s << cmp::to_string(v.status) << "  z=" << fmt(v.z) << "  " << v.functional_id
          << "\n";
    return s.str();
}

int run_dalang(const Config& cfg, Emitter& em, std::string& summary) {
    corr::CorrelationFunction f = correlation_from_config(cfg);
    corr::SpectralMeasure m = corr::spectral_of(f);
    std::vector<double> betas = cfg.get_double_list("dalang.beta");
    auto& out = em.open("dalang.csv");
    out << "# shelab-csv v" << kVersion << " dalang\n";
    out << "beta,status,upsilon\n";
    std::ostringstream s;
    for (double beta : betas) {
        corr::DalangResult r = corr::dalang_upsilon(m, beta);
        out << fmt(beta) << ',' << (r.finite ? "finite" : "divergent") << ','
            << (r.finite ? fmt(r.value) : "") << "\n";
        s << "Upsilon(" << beta << ") = " << (r.finite ? fmt(r.value) : "divergent") << "\n";
    }
    summary = s.str();
    return kExitOk;
}

int run_simulate(const Config& cfg, Emitter& em, std::string& summary) {
    lattice::LatticeSystem sys = system_from_config(cfg);
    cmp::MCParams mc = mc_from_config(cfg);
    double T = cfg.get_double("mc.t");
    int n_dump = cfg.get_int_or("simulate.n_dump_paths", std::min(mc.n_paths, 8));
    int stride = cfg.get_int_or("simulate.record_every", 1);
    auto& out = em.open("trajectories.csv");
    out << "# shelab-csv v" << kVersion << " trajectories\n";
    out << "path_id,t,site,value\n";
    int64_t total_negative = 0;
    for (int p = 0; p < n_dump; ++p) {
        auto stream = noise::make_stream(mc.seed, static_cast<uint64_t>(p), mc.dt, sys.factor);
        sde::EulerOptions eo;
        eo.record_every = stride;
        sde::Trajectory tr = sde::euler_maruyama(sys, T, mc.dt, stream, eo);
        total_negative += tr.negativity_count;
        for (size_t ti = 0; ti < tr.times.size(); ++ti)
            for (int i = 0; i < sys.size(); ++i)
                out << p << ',' << fmt(tr.times[ti]) << ',' << i << ','
                    << fmt(tr.states[ti](i)) << "\n";
    }
    std::ostringstream s;
    s << "simulated " << n_dump << " paths, " << sys.size() << " sites, T=" << T
      << ", negativity entries " << total_negative << "\n";
    summary = s.str();
    return kExitOk;
}

int run_compare_rho(const Config& cfg, Emitter& em, std::string& summary) {
    lattice::LatticeSystem sys = system_from_config(cfg);
    auto rho1 = rho_from_config(cfg, "rho.");
    auto rho2 = rho_from_config(cfg, "rho2.");
    auto fs = functionals_from_config(cfg, sys);
    auto verdicts = cmp::compare_scenario_rho(sys, rho1, rho2, fs, mc_from_config(cfg),
                                              verdict_options_from_config(cfg));
    auto& out = em.open("verdicts.csv");
    write_verdict_csv(out, verdicts);
    summary = verdict_summary(verdicts);
    return exit_from_verdicts(verdicts);
}

int run_compare_gamma(const Config& cfg, Emitter& em, std::string& summary) {
    lattice::LatticeSystem sys = system_from_config(cfg);
    auto fs = functionals_from_config(cfg, sys);
    auto g1 = gamma_from_config(cfg, "gamma.");
    auto g2 = gamma_from_config(cfg, "gamma2.");
    auto verdicts = cmp::compare_scenario_gamma(sys, g1, g2, fs, mc_from_config(cfg),
                                                verdict_options_from_config(cfg));
    auto& out = em.open("verdicts.csv");
    write_verdict_csv(out, verdicts);
    summary = verdict_summary(verdicts);
    return exit_from_verdicts(verdicts);
}

int run_slepian(const Config& cfg, Emitter& em, std::string& summary) {
    lattice::LatticeSystem sys = system_from_config(cfg);
    auto g1 = gamma_from_config(cfg, "gamma.");
    auto g2 = gamma_from_config(cfg, "gamma2.");
    double t = cfg.get_double("slepian.t");
    std::vector<int> sites = parse_int_list(cfg.get_string("slepian.sites"));
    std::vector<double> max_thresholds = cfg.get_double_list("slepian.thresholds");
    std::vector<double> box;
    if (cfg.has("slepian.box_thresholds")) box = cfg.get_double_list("slepian.box_thresholds");
    auto results = cmp::slepian(sys, g1, g2, t, sites, max_thresholds, box,
                                mc_from_config(cfg), verdict_options_from_config(cfg));
    auto& out = em.open("slepian.csv");
    out << "# shelab-csv v" << kVersion << " slepian\n";
    out << "event,threshold,p1,se1,p2,se2,z,verdict\n";
    std::vector<cmp::ComparisonVerdict> verdicts;
    std::ostringstream s;
    for (const auto& r : results) {
        out << (r.joint_box ? "box" : "max") << ',' << fmt(r.threshold) << ',' << fmt(r.p1)
            << ',' << fmt(r.se1) << ',' << fmt(r.p2) << ',' << fmt(r.se2) << ','
            << fmt(r.verdict.z) << ',' << cmp::to_string(r.verdict.status) << "\n";
        verdicts.push_back(r.verdict);
        s << cmp::to_string(r.verdict.status) << "  " << r.verdict.functional_id << "\n";
    }
    summary = s.str();
    return exit_from_verdicts(verdicts);
}

int run_oracle(const Config& cfg, Emitter& em, std::string& summary) {
    lattice::LatticeSystem sys = system_from_config(cfg);
    cmp::MCParams mc = mc_from_config(cfg);
    double t = cfg.get_double("oracle.t");
    std::string which = cfg.get_string_or("oracle.kind", "pam");
    auto& out = em.open("oracle.csv");
    out << "# shelab-csv v" << kVersion << " oracle\n";
    std::ostringstream s;
    if (which == "pam") {
        oracle::PamMomentOracle om(sys);
        oracle::PamValidation val = om.validate(t, mc.dt, mc.n_paths, mc.seed);
        out << "check,max_z,n_paths,pass\n";
        out << "pam_second_moments," << fmt(val.max_z) << ',' << val.n_paths << ','
            << (val.pass ? "yes" : "no") << "\n";
        s << "PAM ODE vs MC: max |z| = " << fmt(val.max_z) << " over " << val.n_paths
          << " paths -> " << (val.pass ? "agree" : "DISAGREE") << "\n";
        summary = s.str();
        return val.pass ? kExitOk : kExitViolation;
    }
    if (which == "additive") {
        std::vector<oracle::QueryPoint> pts;
        for (int i = 0; i < sys.size(); ++i) pts.push_back({t, i});
        oracle::GaussianLaw law = oracle::additive_law(sys, pts);
        // MC cross-check of first and second moments
        std::vector<cmp::Functional> fs;
        for (int i = 0; i < sys.size(); ++i)
            fs.push_back(cmp::Functional::moment({{{t, i}, 1}}));
        for (int i = 0; i < sys.size(); ++i)
            fs.push_back(cmp::Functional::moment({{{t, i}, 2}}));
        auto est = cmp::estimate(sys, fs, mc);
        out << "entry,mc,se,oracle,z\n";
        bool ok = true;
        for (int i = 0; i < sys.size(); ++i) {
            double exact = law.mean(i);
            double z = est[i].std_error > 0.0
                           ? (est[i].value - exact) / est[i].std_error
                           : 0.0;
            ok &= std::abs(z) <= 5.0;
            out << "mean_" << i << ',' << fmt(est[i].value) << ',' << fmt(est[i].std_error)
                << ',' << fmt(exact) << ',' << fmt(z) << "\n";
        }
        for (int i = 0; i < sys.size(); ++i) {
            double exact = oracle::isserlis_moment(
                law, [&] {
                    std::vector<int> mi(pts.size(), 0);
                    mi[i] = 2;
                    return mi;
                }());
            const auto& e = est[sys.size() + i];
            double z = e.std_error > 0.0 ? (e.value - exact) / e.std_error : 0.0;
            ok &= std::abs(z) <= 5.0;
            out << "second_" << i << ',' << fmt(e.value) << ',' << fmt(e.std_error) << ','
                << fmt(exact) << ',' << fmt(z) << "\n";
        }
        s << "additive law vs MC: " << (ok ? "agree within 5 se" : "DISAGREE") << "\n";
        summary = s.str();
        return ok ? kExitOk : kExitViolation;
    }
    throw std::invalid_argument("config field 'oracle.kind': unknown '" + which + "'");
}

int run_convergence(const Config& cfg, Emitter& em, std::string& summary) {
    corr::CorrelationFunction f = correlation_from_config(cfg);
    heat::InitialDatum mu = initial_from_config(cfg);
    rho::DiffusionCoefficient rc = rho_from_config(cfg, "rho.");
    std::string mode = cfg.get_string("convergence.mode");
    int n_levels = cfg.get_int_or("convergence.levels", 3);
    double eps0 = cfg.get_double("convergence.eps0");
    double delta0 = cfg.get_double("convergence.delta0");
    double dt0 = cfg.get_double("convergence.dt0");
    std::vector<LadderLevel> levels;
    for (int l = 0; l < n_levels; ++l) {
        LadderLevel lv;
        double h = std::pow(0.5, l);
        if (mode == "delta") {
            lv.eps = eps0;
            lv.delta = delta0 * h;
            lv.dt = dt0 * h;
        } else if (mode == "epsilon") {
            lv.eps = eps0 * h;
            lv.delta = delta0;
            lv.dt = dt0 * h;
        } else {
            throw std::invalid_argument("config field 'convergence.mode': 'delta' or 'epsilon'");
        }
        levels.push_back(lv);
    }
    auto dists = convergence_study(f, mu, rc, levels, cfg.get_double("convergence.width"),
                                   cfg.get_double("convergence.t"),
                                   cfg.get_double_or("convergence.x", 0.0),
                                   cfg.get_int_or("mc.n_paths", 2000),
                                   cfg.get_u64_or("seed", 1));
    auto& out = em.open("convergence.csv");
    out << "# shelab-csv v" << kVersion << " convergence\n";
    out << "level_a,level_b,l2_distance,se\n";
    bool monotone = true;
    std::ostringstream s;
    for (size_t i = 0; i < dists.size(); ++i) {
        const auto& d = dists[i];
        out << d.level_a << ',' << d.level_b << ',' << fmt(d.l2_distance) << ','
            << fmt(d.std_error) << "\n";
        s << "levels (" << d.level_a << "," << d.level_b << "): L2 distance "
          << fmt(d.l2_distance) << "\n";
        if (i > 0) monotone &= dists[i].l2_distance < dists[i - 1].l2_distance;
    }
    s << (monotone ? "monotone decreasing\n" : "NOT monotone\n");
    summary = s.str();
    return monotone ? kExitOk : kExitViolation;
}

}  // namespace

RunResult run(const Config& config, const std::string& out_dir) {
    RunResult result;
    Emitter em;
    em.dir = out_dir;
    std::string summary;
    try {
        std::string kind = config.get_string("experiment");
        // validate shared fields up front, before any simulation
        (void)config.get_u64_or("seed", 1);
        write_manifest(em, config);

        if (kind == "dalang")
            result.exit_code = run_dalang(config, em, summary);
        else if (kind == "simulate")
            result.exit_code = run_simulate(config, em, summary);
        else if (kind == "compare-rho")
            result.exit_code = run_compare_rho(config, em, summary);
        else if (kind == "compare-gamma")
            result.exit_code = run_compare_gamma(config, em, summary);
        else if (kind == "slepian")
            result.exit_code = run_slepian(config, em, summary);
        else if (kind == "oracle")
            result.exit_code = run_oracle(config, em, summary);
        else if (kind == "convergence")
            result.exit_code = run_convergence(config, em, summary);
        else
            throw std::invalid_argument("config field 'experiment': unknown kind '" + kind +
                                        "'");
        auto& out = em.open("summary.txt");
        out << summary;
        out << "exit_code " << result.exit_code << "\n";
        result.artifacts = em.flush();
    } catch (const std::exception& e) {
        result.exit_code = kExitError;
        try {
            fs::create_directories(em.dir);
            std::ofstream err(em.dir / "error.log");
            err << e.what() << "\n";
            result.artifacts = {(em.dir / "error.log").string()};
        } catch (...) {
        }
        result.summary = std::string("error: ") + e.what();
        return result;
    }
    result.summary = summary;
    return result;
}

}  // namespace shelab::cli
