#include "shelab/compare.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include "shelab/parallel.hpp"

namespace shelab::cmp {

// ---------------------------------------------------------------------------
// GDescriptor
// ---------------------------------------------------------------------------

GDescriptor GDescriptor::exp_neg(double lambda) {
    if (!(lambda > 0.0)) throw std::invalid_argument("exp_neg: lambda must be positive");
    GDescriptor g;
    g.kind = Kind::ExpNeg;
    g.lambda = lambda;
    return g;
}

GDescriptor GDescriptor::inv_power(double c) {
    if (!(c >= 1.0)) throw std::invalid_argument("inv_power: c must be >= 1");
    GDescriptor g;
    g.kind = Kind::InvPower;
    g.c = c;
    return g;
}

GDescriptor GDescriptor::log_ratio(double a, double b) {
    if (!(a > b && b > 0.0)) throw std::invalid_argument("log_ratio: need a > b > 0");
    GDescriptor g;
    g.kind = Kind::LogRatio;
    g.a = a;
    g.b = b;
    return g;
}

GDescriptor GDescriptor::pow_log(double b, double a, double c) {
    if (!(a >= 1.0 && b >= 1.0 && c >= std::exp(1.0)))
        throw std::invalid_argument("pow_log: need a,b >= 1 and c >= e");
    GDescriptor g;
    g.kind = Kind::PowLog;
    g.a = a;
    g.b = b;
    g.c = c;
    return g;
}

GDescriptor GDescriptor::power(double d) {
    if (!(d >= 1.0)) throw std::invalid_argument("power: d must be >= 1");
    GDescriptor g;
    g.kind = Kind::Power;
    g.d = d;
    return g;
}

double GDescriptor::operator()(double z) const {
    switch (kind) {
        case Kind::ExpNeg: return std::exp(-lambda * z);
        case Kind::InvPower: return std::pow(1.0 + z, -c);
        case Kind::LogRatio: return std::log((z + a) / (z + b));
        case Kind::PowLog: return std::pow(z, b) * std::pow(std::log(c + z), a);
        case Kind::Power: return std::pow(z, d);
    }
    return 0.0;
}

std::string GDescriptor::name() const {
    std::ostringstream s;
    switch (kind) {
        case Kind::ExpNeg: s << "exp(-" << lambda << "z)"; break;
        case Kind::InvPower: s << "(1+z)^-" << c; break;
        case Kind::LogRatio: s << "log((z+" << a << ")/(z+" << b << "))"; break;
        case Kind::PowLog: s << "z^" << b << " log^" << a << "(" << c << "+z)"; break;
        case Kind::Power: s << "z^" << d; break;
    }
    return s.str();
}

// ---------------------------------------------------------------------------
// Functional
// ---------------------------------------------------------------------------

namespace {

void require_distinct_points(const std::vector<PointRef>& pts) {
    for (size_t i = 0; i < pts.size(); ++i)
        for (size_t j = i + 1; j < pts.size(); ++j)
            if (pts[i] == pts[j])
                throw std::invalid_argument(
                    "functional: repeated (t, site) query point; merge exponents instead");
}

void require_positive_times(const std::vector<PointRef>& pts) {
    for (const auto& p : pts)
        if (!(p.t > 0.0)) throw std::invalid_argument("functional: times must be positive");
}

std::string point_str(const PointRef& p) {
    std::ostringstream s;
    s << "(t=" << p.t << ",s=" << p.site << ")";
    return s.str();
}

}  // namespace

Functional Functional::moment(std::vector<MomentTerm> terms) {
    if (terms.empty()) throw std::invalid_argument("moment: no terms");
    Functional f;
    f.kind_ = Kind::Moment;
    std::ostringstream id;
    id << "moment";
    for (const auto& t : terms) {
        if (t.k < 0) throw std::invalid_argument("moment: exponent must be >= 0");
        f.points_.push_back(t.point);
        f.exponents_.push_back(t.k);
        id << ":k=" << t.k << point_str(t.point);
    }
    require_distinct_points(f.points_);
    require_positive_times(f.points_);
    f.id_ = id.str();
    return f;
}

Functional Functional::laplace(std::vector<LaplaceTerm> terms) {
    if (terms.empty()) throw std::invalid_argument("laplace: no terms");
    Functional f;
    f.kind_ = Kind::Laplace;
    std::ostringstream id;
    id << "laplace";
    for (const auto& t : terms) {
        if (t.lambda < 0.0) throw std::invalid_argument("laplace: lambda must be >= 0");
        f.points_.push_back(t.point);
        f.lambdas_.push_back(t.lambda);
        id << ":l=" << t.lambda << point_str(t.point);
    }
    require_distinct_points(f.points_);
    require_positive_times(f.points_);
    f.id_ = id.str();
    return f;
}

Functional Functional::central_even(PointRef point, double c, int n) {
    if (!(c >= 0.0)) throw std::invalid_argument("central_even: c must be >= 0");
    if (n < 1) throw std::invalid_argument("central_even: n must be >= 1");
    Functional f;
    f.kind_ = Kind::CentralEven;
    f.points_ = {point};
    f.center_ = c;
    f.even_n_ = n;
    require_positive_times(f.points_);
    std::ostringstream id;
    id << "central_even:c=" << c << ":n=" << n << point_str(point);
    f.id_ = id.str();
    return f;
}

Functional Functional::coordinate_map(std::vector<MapTerm> terms) {
    if (terms.empty()) throw std::invalid_argument("coordinate_map: no terms");
    Functional f;
    f.kind_ = Kind::CoordinateMap;
    std::ostringstream id;
    id << "coordinate_map";
    for (const auto& t : terms) {
        if (t.k < 1) throw std::invalid_argument("coordinate_map: exponent must be >= 1");
        f.points_.push_back(t.point);
        f.maps_.push_back(t.g);
        f.exponents_.push_back(t.k);
        id << ":" << t.g.name() << "^" << t.k << point_str(t.point);
    }
    require_distinct_points(f.points_);
    require_positive_times(f.points_);
    f.id_ = id.str();
    return f;
}

Functional Functional::norm_power(std::vector<NormGroup> groups) {
    if (groups.empty()) throw std::invalid_argument("norm_power: no groups");
    Functional f;
    f.kind_ = Kind::NormPower;
    std::ostringstream id;
    id << "norm_power";
    for (const auto& g : groups) {
        if (!(g.alpha >= 2.0)) throw std::invalid_argument("norm_power: alpha must be >= 2");
        std::set<int> distinct(g.sites.begin(), g.sites.end());
        if (distinct.size() != g.sites.size())
            throw std::invalid_argument("norm_power: sites within a group must be distinct");
        id << ":a=" << g.alpha << "(t=" << g.t;
        for (int s : g.sites) {
            f.points_.push_back({g.t, s});
            id << "," << s;
        }
        id << ")";
        f.groups_.push_back(g);
    }
    require_distinct_points(f.points_);
    require_positive_times(f.points_);
    f.id_ = id.str();
    return f;
}

Functional Functional::max_indicator(double t, std::vector<int> sites,
                                     std::vector<double> thresholds) {
    if (sites.empty() || sites.size() != thresholds.size())
        throw std::invalid_argument("max_indicator: sites/thresholds mismatch");
    Functional f;
    f.kind_ = Kind::MaxIndicator;
    std::ostringstream id;
    id << "max_indicator:t=" << t;
    for (size_t i = 0; i < sites.size(); ++i) {
        f.points_.push_back({t, sites[i]});
        id << ":(" << sites[i] << "<=" << thresholds[i] << ")";
    }
    f.thresholds_ = std::move(thresholds);
    require_distinct_points(f.points_);
    require_positive_times(f.points_);
    f.id_ = id.str();
    return f;
}

bool Functional::multi_time() const {
    std::set<double> times;
    for (const auto& p : points_) times.insert(p.t);
    return times.size() > 1;
}

double Functional::evaluate(const std::vector<double>& values) const {
    if (static_cast<int>(values.size()) != arity())
        throw std::invalid_argument("Functional::evaluate: value count mismatch");
    switch (kind_) {
        case Kind::Moment: {
            double prod = 1.0;
            for (size_t i = 0; i < values.size(); ++i)
                prod *= std::pow(values[i], exponents_[i]);
            return prod;
        }
        case Kind::Laplace: {
            double expo = 0.0;
            for (size_t i = 0; i < values.size(); ++i) expo += lambdas_[i] * values[i];
            return std::exp(-expo);
        }
        case Kind::CentralEven: {
            double d = values[0] - center_;
            return std::pow(d * d, even_n_);
        }
        case Kind::CoordinateMap: {
            double prod = 1.0;
            for (size_t i = 0; i < values.size(); ++i)
                prod *= std::pow(maps_[i](values[i]), exponents_[i]);
            return prod;
        }
        case Kind::NormPower: {
            double prod = 1.0;
            size_t at = 0;
            for (const auto& g : groups_) {
                double ss = 0.0;
                for (size_t k = 0; k < g.sites.size(); ++k, ++at)
                    ss += values[at] * values[at];
                prod *= std::pow(ss, 0.5 * g.alpha);
            }
            return prod;
        }
        case Kind::MaxIndicator: {
            for (size_t i = 0; i < values.size(); ++i)
                if (values[i] > thresholds_[i]) return 0.0;
            return 1.0;
        }
    }
    return 0.0;
}

// ---------------------------------------------------------------------------
// Cone membership
// ---------------------------------------------------------------------------

ConeReport cone_check(const std::function<double(const std::vector<double>&)>& f, int arity,
                      const ConeBox& box, double h, double tol_scale) {
    if (arity < 1) throw std::invalid_argument("cone_check: arity must be >= 1");
    if (!(box.hi > box.lo) || box.lo < 0.0)
        throw std::invalid_argument("cone_check: box must satisfy 0 <= lo < hi");
    if (!(h > 0.0)) throw std::invalid_argument("cone_check: h must be positive");

    // deterministic low-discrepancy-ish sample of base points
    const int n_base = std::min(512, 16 << std::min(arity, 5));
    std::vector<std::vector<double>> base(n_base, std::vector<double>(arity, 0.0));
    for (int s = 0; s < n_base; ++s)
        for (int k = 0; k < arity; ++k) {
            double u = u64_to_unit(counter_key(0x10d3a5cull, s, k, 0));
            base[s][k] = box.lo + u * (box.hi - box.lo - 2.0 * h);
        }

    ConeReport rep;
    rep.nonnegative = true;
    rep.convex = true;
    rep.increasing = true;
    rep.decreasing = true;

    double max_abs_f = 0.0;
    double max_abs_inner = 0.0;   // |f| on the inner half of the box
    double max_grad_inner = 0.0;  // |grad| around |z| ~ hi/2
    double max_grad_outer = 0.0;  // |grad| around |z| ~ hi
    std::vector<double> u0(arity), u1(arity), u2(arity), u12(arity);

    for (const auto& z : base) {
        double f0 = f(z);
        if (!(f0 >= -tol_scale * (1.0 + std::abs(f0)))) rep.nonnegative = false;
        max_abs_f = std::max(max_abs_f, std::abs(f0));
        double znorm = 0.0;
        for (double v : z) znorm = std::max(znorm, v);
        if (znorm <= box.lo + 0.5 * (box.hi - box.lo)) {
            max_abs_inner = std::max(max_abs_inner, std::abs(f0));
        }

        double grad1 = 0.0;
        for (int i = 0; i < arity; ++i) {
            u1 = z;
            u1[i] += h;
            double fi = f(u1);
            double diff = fi - f0;
            double tol = tol_scale * std::max({1.0, std::abs(f0), std::abs(fi)});
            if (diff < -tol) rep.increasing = false;
            if (diff > tol) rep.decreasing = false;
            grad1 += (diff / h) * (diff / h);

            for (int j = i; j < arity; ++j) {
                u2 = z;
                u2[j] += h;
                u12 = u1;
                u12[j] += h;
                double second = f(u12) - f(u2) - fi + f0;
                double scale = std::max({1.0, std::abs(f0), std::abs(f(u12))});
                if (second < -tol_scale * scale) rep.convex = false;
            }
        }
        grad1 = std::sqrt(grad1);
        if (znorm >= 0.70 * box.hi)
            max_grad_outer = std::max(max_grad_outer, grad1);
        else if (znorm >= 0.35 * box.hi && znorm <= 0.55 * box.hi)
            max_grad_inner = std::max(max_grad_inner, grad1);
    }

    // boundedness: the envelope of |f| does not grow toward the box edge
    rep.bounded = max_abs_f <= max_abs_inner * (1.0 + 1e-6) + tol_scale;

    // polynomial-growth fit of the gradient between the half shell and the
    // outer shell
    if (max_grad_outer <= tol_scale || max_grad_inner <= tol_scale) {
        rep.growth_degree = 0.0;
        rep.poly_growth = true;
    } else {
        double ratio = max_grad_outer / max_grad_inner;
        rep.growth_degree = std::max(0.0, std::log(ratio) / std::log(2.0));
        rep.poly_growth = rep.growth_degree <= 10.0;
    }
    if (max_grad_outer <= max_grad_inner * (1.0 + 1e-9)) rep.poly_growth = true;
    return rep;
}

ConeReport cone_check(const Functional& f, const ConeBox& box, double h) {
    return cone_check([&f](const std::vector<double>& z) { return f.evaluate(z); },
                      f.arity(), box, h);
}

ConeReport cone_check_scalar(const std::function<double(double)>& g, const ConeBox& box,
                             double h) {
    return cone_check([&g](const std::vector<double>& z) { return g(z[0]); }, 1, box, h);
}

// ---------------------------------------------------------------------------
// Query plumbing
// ---------------------------------------------------------------------------

namespace {

struct QueryIndex {
    std::vector<std::pair<int64_t, int>> slots;        // (step, site)
    std::vector<std::vector<int>> functional_slots;    // per functional
    std::map<int64_t, std::vector<int>> step_slots;    // step -> slot indices
    int64_t max_step = 0;
    double T = 0.0;
};

int64_t snap_step(double t, double dt) {
    int64_t s = static_cast<int64_t>(std::round(t / dt));
    if (s < 1 || std::abs(t - s * dt) > 1e-9 * std::max(1.0, std::abs(t))) {
        std::ostringstream msg;
        msg << "query time " << t << " is not a positive multiple of dt = " << dt;
        throw std::invalid_argument(msg.str());
    }
    return s;
}

QueryIndex build_query_index(const std::vector<Functional>& fs, double dt, int n_sites) {
    QueryIndex qi;
    std::map<std::pair<int64_t, int>, int> seen;
    for (const auto& f : fs) {
        std::vector<int> slots;
        for (const auto& p : f.query_points()) {
            if (p.site < 0 || p.site >= n_sites)
                throw std::invalid_argument("functional references a site out of range");
            int64_t step = snap_step(p.t, dt);
            auto key = std::make_pair(step, p.site);
            auto it = seen.find(key);
            int idx;
            if (it == seen.end()) {
                idx = static_cast<int>(qi.slots.size());
                seen[key] = idx;
                qi.slots.push_back(key);
                qi.step_slots[step].push_back(idx);
                qi.max_step = std::max(qi.max_step, step);
            } else {
                idx = it->second;
            }
            slots.push_back(idx);
        }
        qi.functional_slots.push_back(std::move(slots));
    }
    qi.T = static_cast<double>(qi.max_step) * dt;
    return qi;
}

// collect the slot values of one simulated path
void collect_path(const lattice::LatticeSystem& sys, const QueryIndex& qi, double dt,
                  const noise::NoiseStream& stream, std::vector<double>& out) {
    out.assign(qi.slots.size(), 0.0);
    sde::run_path(sys, qi.T, dt, stream,
                  [&](int64_t step, double, const Eigen::VectorXd& u) {
                      auto it = qi.step_slots.find(step);
                      if (it == qi.step_slots.end()) return;
                      for (int slot : it->second) out[slot] = u(qi.slots[slot].second);
                  });
}

struct Welford {
    double sum = 0.0;
    double sumsq = 0.0;
    int64_t n = 0;
    void add(double x) {
        sum += x;
        sumsq += x * x;
        ++n;
    }
    void merge(const Welford& o) {
        sum += o.sum;
        sumsq += o.sumsq;
        n += o.n;
    }
    double mean() const { return n > 0 ? sum / n : 0.0; }
    double se() const {
        if (n < 2) return 0.0;
        double var = std::max(sumsq / n - mean() * mean(), 0.0);
        return std::sqrt(var / n);
    }
};

uint64_t derive_seed(uint64_t seed, uint64_t tag) {
    return splitmix64(seed ^ splitmix64(tag * 0x9e3779b97f4a7c15ULL + 1));
}

}  // namespace

// ---------------------------------------------------------------------------
// Estimation
// ---------------------------------------------------------------------------

std::vector<MomentEstimate> estimate(const lattice::LatticeSystem& sys,
                                     const std::vector<Functional>& functionals,
                                     const MCParams& mc) {
    QueryIndex qi = build_query_index(functionals, mc.dt, sys.size());
    const size_t nf = functionals.size();
    auto chunks = par::make_chunks(mc.n_paths, par::kEnsembleChunks);
    std::vector<std::vector<Welford>> acc(chunks.size(), std::vector<Welford>(nf));
    par::run_chunks(chunks, [&](const par::Chunk& c) {
        std::vector<double> slots, vals;
        for (int64_t p = c.begin; p < c.end; ++p) {
            auto stream = noise::make_stream(mc.seed, static_cast<uint64_t>(p), mc.dt,
                                             sys.factor);
            collect_path(sys, qi, mc.dt, stream, slots);
            for (size_t fi = 0; fi < nf; ++fi) {
                vals.clear();
                for (int slot : qi.functional_slots[fi]) vals.push_back(slots[slot]);
                acc[c.index][fi].add(functionals[fi].evaluate(vals));
            }
        }
    });
    std::vector<MomentEstimate> out(nf);
    for (size_t fi = 0; fi < nf; ++fi) {
        Welford w;
        for (size_t c = 0; c < chunks.size(); ++c) w.merge(acc[c][fi]);
        out[fi].functional_id = functionals[fi].id();
        out[fi].value = w.mean();
        out[fi].std_error = w.se();
        out[fi].n_paths = mc.n_paths;
        out[fi].seed = mc.seed;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Verdicts
// ---------------------------------------------------------------------------

std::string to_string(Status s) {
    switch (s) {
        case Status::Consistent: return "Consistent";
        case Status::Violation: return "Violation";
        case Status::Inconclusive: return "Inconclusive";
    }
    return "?";
}

namespace {

Status classify(double mean_gap, double z, int n, const VerdictOptions& opt) {
    if (mean_gap < 0.0 && std::abs(z) > opt.z_threshold) return Status::Violation;
    if (n < opt.n_floor && std::abs(z) < 1.0) return Status::Inconclusive;
    return Status::Consistent;
}

}  // namespace

ComparisonVerdict verdict_from_paired(const std::string& id, double mean_diff,
                                      double se_diff, int n, const VerdictOptions& opt) {
    ComparisonVerdict v;
    v.functional_id = id;
    if (se_diff > 0.0)
        v.z = mean_diff / se_diff;
    else
        v.z = mean_diff == 0.0 ? 0.0 : std::copysign(1e300, mean_diff);
    v.direction = mean_diff > 0.0 ? 1 : (mean_diff < 0.0 ? -1 : 0);
    v.status = classify(mean_diff, v.z, n, opt);
    return v;
}

ComparisonVerdict verdict_from_two_sample(const std::string& id, double est1, double se1,
                                          double est2, double se2, int n,
                                          const VerdictOptions& opt) {
    ComparisonVerdict v;
    v.functional_id = id;
    v.est1 = est1;
    v.se1 = se1;
    v.est2 = est2;
    v.se2 = se2;
    double gap = est1 - est2;
    double se = std::sqrt(se1 * se1 + se2 * se2);
    if (se > 0.0)
        v.z = gap / se;
    else
        v.z = gap == 0.0 ? 0.0 : std::copysign(1e300, gap);
    v.direction = gap > 0.0 ? 1 : (gap < 0.0 ? -1 : 0);
    v.status = classify(gap, v.z, n, opt);
    return v;
}

// ---------------------------------------------------------------------------
// Scenario comparisons
// ---------------------------------------------------------------------------

namespace {

void gate_functionals(const std::vector<Functional>& fs, const VerdictOptions& opt) {
    for (const auto& f : fs) {
        if (f.kind() == Functional::Kind::MaxIndicator)
            throw std::invalid_argument(
                "comparison harness: indicator events belong to the slepian scenario");
        ConeReport rep = cone_check(f, opt.cone_box, opt.cone_h);
        bool ok = f.multi_time() ? rep.multi_time_ok() : rep.single_time_ok();
        if (!ok) {
            std::ostringstream msg;
            msg << "functional " << f.id() << " rejected by cone gating ("
                << (f.multi_time() ? "multi-time mode needs C2v_{p,+} or C2v_{b,-}"
                                   : "single-time mode needs C2v + polynomial growth")
                << ")";
            throw std::invalid_argument(msg.str());
        }
    }
}

void check_rho_order(const rho::DiffusionCoefficient& rho1,
                     const rho::DiffusionCoefficient& rho2, double hi) {
    for (int i = 0; i <= 512; ++i) {
        double z = hi * i / 512.0;
        double r1 = rho1(z), r2 = rho2(z);
        if (r2 < -1e-12 || r1 < r2 - 1e-12) {
            std::ostringstream msg;
            msg << "rho ordering violated at z = " << z << ": rho1 = " << r1
                << ", rho2 = " << r2 << " (need rho1 >= rho2 >= 0)";
            throw std::invalid_argument(msg.str());
        }
    }
}

}  // namespace

std::vector<ComparisonVerdict> compare_scenario_rho(const lattice::LatticeSystem& sys,
                                                    const rho::DiffusionCoefficient& rho1,
                                                    const rho::DiffusionCoefficient& rho2,
                                                    const std::vector<Functional>& functionals,
                                                    const MCParams& mc,
                                                    const VerdictOptions& opt) {
    gate_functionals(functionals, opt);
    check_rho_order(rho1, rho2, opt.cone_box.hi);

    lattice::LatticeSystem sys1 = lattice::with_rho(sys, rho1);
    lattice::LatticeSystem sys2 = lattice::with_rho(sys, rho2);
    QueryIndex qi = build_query_index(functionals, mc.dt, sys.size());
    const size_t nf = functionals.size();

    struct Acc {
        std::vector<Welford> diff, one, two;
    };
    auto chunks = par::make_chunks(mc.n_paths, par::kEnsembleChunks);
    std::vector<Acc> acc(chunks.size());
    par::run_chunks(chunks, [&](const par::Chunk& c) {
        Acc& a = acc[c.index];
        a.diff.resize(nf);
        a.one.resize(nf);
        a.two.resize(nf);
        std::vector<double> slots1, slots2, vals1, vals2;
        for (int64_t p = c.begin; p < c.end; ++p) {
            // common noise: the same stream drives both systems
            auto stream = noise::make_stream(mc.seed, static_cast<uint64_t>(p), mc.dt,
                                             sys.factor);
            collect_path(sys1, qi, mc.dt, stream, slots1);
            collect_path(sys2, qi, mc.dt, stream, slots2);
            for (size_t fi = 0; fi < nf; ++fi) {
                vals1.clear();
                vals2.clear();
                for (int slot : qi.functional_slots[fi]) {
                    vals1.push_back(slots1[slot]);
                    vals2.push_back(slots2[slot]);
                }
                double f1 = functionals[fi].evaluate(vals1);
                double f2 = functionals[fi].evaluate(vals2);
                a.diff[fi].add(f1 - f2);
                a.one[fi].add(f1);
                a.two[fi].add(f2);
            }
        }
    });

    std::vector<ComparisonVerdict> out;
    for (size_t fi = 0; fi < nf; ++fi) {
        Welford d, w1, w2;
        for (size_t c = 0; c < chunks.size(); ++c) {
            d.merge(acc[c].diff[fi]);
            w1.merge(acc[c].one[fi]);
            w2.merge(acc[c].two[fi]);
        }
        ComparisonVerdict v =
            verdict_from_paired(functionals[fi].id(), d.mean(), d.se(), mc.n_paths, opt);
        v.est1 = w1.mean();
        v.se1 = w1.se();
        v.est2 = w2.mean();
        v.se2 = w2.se();
        out.push_back(v);
    }
    return out;
}

std::vector<ComparisonVerdict> compare_scenario_gamma(
    const lattice::LatticeSystem& sys, const std::function<double(int)>& gamma1,
    const std::function<double(int)>& gamma2, const std::vector<Functional>& functionals,
    const MCParams& mc, const VerdictOptions& opt) {
    gate_functionals(functionals, opt);
    const int n = sys.size();
    for (int m = -(n - 1); m <= n - 1; ++m) {
        if (gamma1(m) < gamma2(m) - 1e-12) {
            std::ostringstream msg;
            msg << "gamma ordering violated at offset " << m << ": " << gamma1(m) << " < "
                << gamma2(m);
            throw std::invalid_argument(msg.str());
        }
    }
    lattice::LatticeSystem sys1 = lattice::with_gamma(sys, gamma1);
    lattice::LatticeSystem sys2 = lattice::with_gamma(sys, gamma2);

    // independent ensembles: no coupling across different covariances
    MCParams mc1 = mc, mc2 = mc;
    mc1.seed = derive_seed(mc.seed, 1);
    mc2.seed = derive_seed(mc.seed, 2);
    std::vector<MomentEstimate> e1 = estimate(sys1, functionals, mc1);
    std::vector<MomentEstimate> e2 = estimate(sys2, functionals, mc2);

    std::vector<ComparisonVerdict> out;
    for (size_t fi = 0; fi < functionals.size(); ++fi)
        out.push_back(verdict_from_two_sample(functionals[fi].id(), e1[fi].value,
                                              e1[fi].std_error, e2[fi].value,
                                              e2[fi].std_error, mc.n_paths, opt));
    return out;
}

// ---------------------------------------------------------------------------
// Slepian
// ---------------------------------------------------------------------------

namespace {

struct EventCounts {
    std::vector<int64_t> max_hits;  // per max threshold
    int64_t box_hits = 0;
    int64_t n = 0;
};

EventCounts slepian_ensemble(const lattice::LatticeSystem& sys, double t,
                             const std::vector<int>& sites,
                             const std::vector<double>& max_thresholds,
                             const std::vector<double>& box_thresholds, const MCParams& mc) {
    int64_t step = snap_step(t, mc.dt);
    auto chunks = par::make_chunks(mc.n_paths, par::kEnsembleChunks);
    std::vector<EventCounts> acc(chunks.size());
    par::run_chunks(chunks, [&](const par::Chunk& c) {
        EventCounts& e = acc[c.index];
        e.max_hits.assign(max_thresholds.size(), 0);
        for (int64_t p = c.begin; p < c.end; ++p) {
            auto stream = noise::make_stream(mc.seed, static_cast<uint64_t>(p), mc.dt,
                                             sys.factor);
            sde::run_path(sys, step * mc.dt, mc.dt, stream,
                          [&](int64_t s, double, const Eigen::VectorXd& u) {
                              if (s != step) return;
                              double mx = -std::numeric_limits<double>::infinity();
                              bool box = true;
                              for (size_t k = 0; k < sites.size(); ++k) {
                                  double v = u(sites[k]);
                                  mx = std::max(mx, v);
                                  if (!box_thresholds.empty() && v > box_thresholds[k])
                                      box = false;
                              }
                              for (size_t a = 0; a < max_thresholds.size(); ++a)
                                  if (mx <= max_thresholds[a]) ++e.max_hits[a];
                              if (!box_thresholds.empty() && box) ++e.box_hits;
                          });
            ++e.n;
        }
    });
    EventCounts total;
    total.max_hits.assign(max_thresholds.size(), 0);
    for (const auto& e : acc) {
        for (size_t a = 0; a < total.max_hits.size(); ++a) total.max_hits[a] += e.max_hits[a];
        total.box_hits += e.box_hits;
        total.n += e.n;
    }
    return total;
}

std::pair<double, double> binomial_rate(int64_t hits, int64_t n) {
    double p = n > 0 ? static_cast<double>(hits) / n : 0.0;
    double se = n > 0 ? std::sqrt(std::max(p * (1.0 - p), 0.0) / n) : 0.0;
    return {p, se};
}

}  // namespace

SlepianPrecondition slepian_spde_precondition(const corr::CorrelationFunction& f1,
                                              const corr::CorrelationFunction& f2) {
    using Kind = corr::CorrelationFunction::Kind;
    SlepianPrecondition out;
    auto atomic = [](const corr::CorrelationFunction& f) {
        return f.kind() == Kind::WhiteNoise || f.kind() == Kind::LatticeAtoms;
    };
    auto mass_at_origin = [](const corr::CorrelationFunction& f) {
        if (f.kind() == Kind::WhiteNoise) return 1.0;
        auto it = f.atoms().find(corr::Offset(static_cast<size_t>(f.dim()), 0));
        return it == f.atoms().end() ? 0.0 : it->second;
    };
    auto smooth_bounded = [](const corr::CorrelationFunction& f) {
        return f.kind() == Kind::GaussianBump || f.kind() == Kind::CauchyLike ||
               f.kind() == Kind::Constant || f.kind() == Kind::Tabulated;
    };
    if (atomic(f1) && atomic(f2)) {
        // condition (i) on a cube small enough to isolate the origin atom
        if (std::abs(mass_at_origin(f1) - mass_at_origin(f2)) < 1e-12) {
            out.admissible = true;
            out.reason = "equal atomic mass at the origin (condition i)";
        } else {
            out.reason = "origin atoms differ";
        }
        return out;
    }
    if (smooth_bounded(f1) && smooth_bounded(f2)) {
        std::vector<double> zero(static_cast<size_t>(f1.dim()), 0.0);
        if (std::abs(f1.evaluate(zero) - f2.evaluate(zero)) < 1e-10) {
            out.admissible = true;
            out.reason = "C^2_b entries with f1(0) = f2(0) (condition ii)";
        } else {
            out.reason = "f1(0) != f2(0)";
        }
        return out;
    }
    out.reason =
        "measure equality on a cube is not numerically decidable for this pair of kinds";
    return out;
}

std::vector<SlepianResult> slepian(const lattice::LatticeSystem& sys,
                                   const std::function<double(int)>& gamma1,
                                   const std::function<double(int)>& gamma2, double t,
                                   const std::vector<int>& sites,
                                   const std::vector<double>& max_thresholds,
                                   const std::vector<double>& box_thresholds,
                                   const MCParams& mc, const VerdictOptions& opt) {
    if (std::abs(gamma1(0) - gamma2(0)) >= 1e-10)
        throw std::invalid_argument("slepian: gamma1(0) must equal gamma2(0)");
    const int n = sys.size();
    for (int m = -(n - 1); m <= n - 1; ++m)
        if (gamma1(m) < gamma2(m) - 1e-12)
            throw std::invalid_argument("slepian: gamma1 >= gamma2 violated");
    if (!box_thresholds.empty() && box_thresholds.size() != sites.size())
        throw std::invalid_argument("slepian: box threshold count mismatch");

    lattice::LatticeSystem sys1 = lattice::with_gamma(sys, gamma1);
    lattice::LatticeSystem sys2 = lattice::with_gamma(sys, gamma2);
    MCParams mc1 = mc, mc2 = mc;
    mc1.seed = derive_seed(mc.seed, 11);
    mc2.seed = derive_seed(mc.seed, 12);
    EventCounts e1 = slepian_ensemble(sys1, t, sites, max_thresholds, box_thresholds, mc1);
    EventCounts e2 = slepian_ensemble(sys2, t, sites, max_thresholds, box_thresholds, mc2);

    std::vector<SlepianResult> out;
    for (size_t a = 0; a < max_thresholds.size(); ++a) {
        SlepianResult r;
        r.threshold = max_thresholds[a];
        std::tie(r.p1, r.se1) = binomial_rate(e1.max_hits[a], e1.n);
        std::tie(r.p2, r.se2) = binomial_rate(e2.max_hits[a], e2.n);
        std::ostringstream id;
        id << "slepian:max<=" << r.threshold;
        r.verdict =
            verdict_from_two_sample(id.str(), r.p1, r.se1, r.p2, r.se2, mc.n_paths, opt);
        out.push_back(r);
    }
    if (!box_thresholds.empty()) {
        SlepianResult r;
        r.joint_box = true;
        std::tie(r.p1, r.se1) = binomial_rate(e1.box_hits, e1.n);
        std::tie(r.p2, r.se2) = binomial_rate(e2.box_hits, e2.n);
        r.verdict = verdict_from_two_sample("slepian:box", r.p1, r.se1, r.p2, r.se2,
                                            mc.n_paths, opt);
        out.push_back(r);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Positivity and calibration
// ---------------------------------------------------------------------------

std::vector<PositivityLevel> positivity_report(const lattice::LatticeSystem& sys, double T,
                                               const std::vector<double>& dt_levels,
                                               int n_paths, uint64_t seed) {
    if (!sys.rho_coef.vanishes_at_zero())
        throw std::invalid_argument("positivity_report: rho must vanish at zero");
    for (int i = 0; i < sys.u0.size(); ++i)
        if (sys.u0(i) < 0.0)
            throw std::invalid_argument("positivity_report: u0 must be nonnegative");

    int n_active = 0;
    for (uint8_t a : sys.active) n_active += a;

    std::vector<PositivityLevel> out;
    for (size_t lvl = 0; lvl < dt_levels.size(); ++lvl) {
        const double dt = dt_levels[lvl];
        int64_t steps = static_cast<int64_t>(std::round(T / dt));
        auto chunks = par::make_chunks(n_paths, par::kEnsembleChunks);
        std::vector<int64_t> counts(chunks.size(), 0);
        par::run_chunks(chunks, [&](const par::Chunk& c) {
            int64_t local = 0;
            for (int64_t p = c.begin; p < c.end; ++p) {
                auto stream = noise::make_stream(seed, static_cast<uint64_t>(p), dt,
                                                 sys.factor);
                sde::PathStats st = sde::run_path(sys, steps * dt, dt, stream,
                                                  [](int64_t, double, const Eigen::VectorXd&) {});
                local += st.negativity_count;
            }
            counts[c.index] = local;
        });
        PositivityLevel level;
        level.dt = dt;
        for (int64_t c : counts) level.negative_entries += c;
        level.total_entries = static_cast<int64_t>(n_paths) * steps * n_active;
        level.negative_fraction =
            static_cast<double>(level.negative_entries) / level.total_entries;
        out.push_back(level);
    }
    return out;
}

double calibrate_negative_control(int n_reps, int n_samples, double gap_se, uint64_t seed,
                                  const VerdictOptions& opt) {
    int violations = 0;
    const double true_mean = -gap_se / std::sqrt(static_cast<double>(n_samples));
    for (int rep = 0; rep < n_reps; ++rep) {
        Welford w;
        for (int i = 0; i < n_samples; ++i)
            w.add(true_mean + counter_normal(seed, rep, i, 0));
        ComparisonVerdict v =
            verdict_from_paired("control", w.mean(), w.se(), n_samples, opt);
        if (v.status == Status::Violation) ++violations;
    }
    return static_cast<double>(violations) / n_reps;
}

}  // namespace shelab::cmp
