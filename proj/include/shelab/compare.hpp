#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "shelab/lattice.hpp"
#include "shelab/sde.hpp"

// Functional library, numerical cone-membership checking, Monte Carlo
// estimation, and one-sided statistical verification of the comparison
// principles.

namespace shelab::cmp {

// ---------------------------------------------------------------------------
// Functionals
// ---------------------------------------------------------------------------

struct PointRef {
    double t = 0.0;
    int site = 0;
    bool operator==(const PointRef& o) const { return t == o.t && site == o.site; }
};

// Scalar maps admitted in coordinate functionals.
struct GDescriptor {
    enum class Kind {
        ExpNeg,    // exp(-lambda z), lambda > 0
        InvPower,  // (1+z)^{-c}, c >= 1
        LogRatio,  // log((z+a)/(z+b)), a > b > 0
        PowLog,    // z^b log^a(c+z), a,b >= 1, c >= e
        Power,     // z^d, d >= 1
    };
    Kind kind = Kind::ExpNeg;
    double lambda = 1.0, c = 1.0, a = 2.0, b = 1.0, d = 1.0;

    static GDescriptor exp_neg(double lambda);
    static GDescriptor inv_power(double c);
    static GDescriptor log_ratio(double a, double b);
    static GDescriptor pow_log(double b, double a, double c);
    static GDescriptor power(double d);

    double operator()(double z) const;
    std::string name() const;
};

class Functional {
public:
    enum class Kind { Moment, Laplace, CentralEven, CoordinateMap, NormPower, MaxIndicator };

    struct MomentTerm { PointRef point; int k = 1; };
    struct LaplaceTerm { PointRef point; double lambda = 0.0; };
    struct MapTerm { PointRef point; GDescriptor g; int k = 1; };
    struct NormGroup { double t = 0.0; std::vector<int> sites; double alpha = 2.0; };

    static Functional moment(std::vector<MomentTerm> terms);
    static Functional laplace(std::vector<LaplaceTerm> terms);
    static Functional central_even(PointRef point, double c, int n);
    static Functional coordinate_map(std::vector<MapTerm> terms);
    static Functional norm_power(std::vector<NormGroup> groups);
    static Functional max_indicator(double t, std::vector<int> sites,
                                    std::vector<double> thresholds);

    Kind kind() const { return kind_; }
    const std::vector<PointRef>& query_points() const { return points_; }
    int arity() const { return static_cast<int>(points_.size()); }
    bool multi_time() const;
    const std::string& id() const { return id_; }

    // Evaluation on the trajectory values at query_points(), in order.
    double evaluate(const std::vector<double>& values) const;

private:
    Kind kind_ = Kind::Moment;
    std::vector<PointRef> points_;
    std::vector<int> exponents_;       // Moment / CoordinateMap
    std::vector<double> lambdas_;      // Laplace
    std::vector<GDescriptor> maps_;    // CoordinateMap
    double center_ = 0.0;              // CentralEven
    int even_n_ = 1;
    std::vector<NormGroup> groups_;    // NormPower (sites resolved to points_)
    std::vector<double> thresholds_;   // MaxIndicator
    std::string id_;
};

// ---------------------------------------------------------------------------
// Cone membership
// ---------------------------------------------------------------------------

struct ConeBox {
    double lo = 0.0;
    double hi = 8.0;
};

struct ConeReport {
    bool nonnegative = false;
    bool convex = false;       // all sampled rectangle second differences >= -tol
    bool increasing = false;
    bool decreasing = false;
    bool bounded = false;
    bool poly_growth = false;
    double growth_degree = 0.0;

    bool in_c2v() const { return nonnegative && convex; }
    bool single_time_ok() const { return in_c2v() && poly_growth; }
    bool multi_time_ok() const {
        return in_c2v() && ((increasing && poly_growth) || (decreasing && bounded));
    }
};

// Second-difference scan of an m-variate map over the box, with sign
// classification of first differences and a growth fit for the gradient.
ConeReport cone_check(const std::function<double(const std::vector<double>&)>& f, int arity,
                      const ConeBox& box = ConeBox{}, double h = 0.25,
                      double tol_scale = 1e-8);

ConeReport cone_check(const Functional& f, const ConeBox& box = ConeBox{}, double h = 0.25);

// Scalar convenience overload.
ConeReport cone_check_scalar(const std::function<double(double)>& g,
                             const ConeBox& box = ConeBox{}, double h = 0.25);

// ---------------------------------------------------------------------------
// Monte Carlo estimation
// ---------------------------------------------------------------------------

struct MCParams {
    int n_paths = 10000;
    double dt = 0.01;
    uint64_t seed = 1;
};

struct MomentEstimate {
    std::string functional_id;
    double value = 0.0;
    double std_error = 0.0;
    int n_paths = 0;
    uint64_t seed = 0;
};

std::vector<MomentEstimate> estimate(const lattice::LatticeSystem& sys,
                                     const std::vector<Functional>& functionals,
                                     const MCParams& mc);

// ---------------------------------------------------------------------------
// Verdicts
// ---------------------------------------------------------------------------

enum class Status { Consistent, Violation, Inconclusive };

std::string to_string(Status s);

struct VerdictOptions {
    double z_threshold = 2.576;  // one-sided 99% default of the project
    int n_floor = 100;           // below this, weak signals are Inconclusive
    ConeBox cone_box;            // gating box
    double cone_h = 0.25;
};

struct ComparisonVerdict {
    std::string functional_id;
    Status status = Status::Inconclusive;
    double z = 0.0;
    int direction = 0;  // sign of the observed gap (est1 - est2)
    double est1 = 0.0, se1 = 0.0;
    double est2 = 0.0, se2 = 0.0;
};

// Verdict core, exposed for harness calibration: paired one-sided test of
// E[diff] >= 0.
ComparisonVerdict verdict_from_paired(const std::string& id, double mean_diff,
                                      double se_diff, int n, const VerdictOptions& opt);

ComparisonVerdict verdict_from_two_sample(const std::string& id, double est1, double se1,
                                          double est2, double se2, int n,
                                          const VerdictOptions& opt);

// Scenario S-1: same noise, rho1 >= rho2 >= 0.  Common-noise paired ensemble.
std::vector<ComparisonVerdict> compare_scenario_rho(const lattice::LatticeSystem& sys,
                                                    const rho::DiffusionCoefficient& rho1,
                                                    const rho::DiffusionCoefficient& rho2,
                                                    const std::vector<Functional>& functionals,
                                                    const MCParams& mc,
                                                    const VerdictOptions& opt = VerdictOptions{});

// Scenario S-2: same rho, gamma1 >= gamma2 entrywise.  Independent ensembles.
std::vector<ComparisonVerdict> compare_scenario_gamma(
    const lattice::LatticeSystem& sys, const std::function<double(int)>& gamma1,
    const std::function<double(int)>& gamma2, const std::vector<Functional>& functionals,
    const MCParams& mc, const VerdictOptions& opt = VerdictOptions{});

// Continuum-face precondition of the Slepian comparison, checkable per catalog:
// either both entries are atomic and carry equal mass near the origin
// (condition (i), exact for lattice atoms), or both are C^2_b entries with
// f1(0) = f2(0) (condition (ii)).  Measure equality on a cube is not
// numerically decidable for general densities, so mixed cases are rejected.
struct SlepianPrecondition {
    bool admissible = false;
    std::string reason;
};

SlepianPrecondition slepian_spde_precondition(const corr::CorrelationFunction& f1,
                                              const corr::CorrelationFunction& f2);

// Slepian: gamma1(0) = gamma2(0), gamma1 >= gamma2; compares non-exceedance
// probabilities with binomial standard errors.
struct SlepianResult {
    double threshold = 0.0;
    double p1 = 0.0, se1 = 0.0;
    double p2 = 0.0, se2 = 0.0;
    ComparisonVerdict verdict;   // one-sided test of p1 >= p2
    bool joint_box = false;      // true for the per-site box probability row
};

std::vector<SlepianResult> slepian(const lattice::LatticeSystem& sys,
                                   const std::function<double(int)>& gamma1,
                                   const std::function<double(int)>& gamma2, double t,
                                   const std::vector<int>& sites,
                                   const std::vector<double>& max_thresholds,
                                   const std::vector<double>& box_thresholds,
                                   const MCParams& mc,
                                   const VerdictOptions& opt = VerdictOptions{});

// ---------------------------------------------------------------------------
// Positivity and calibration
// ---------------------------------------------------------------------------

struct PositivityLevel {
    double dt = 0.0;
    double negative_fraction = 0.0;
    int64_t negative_entries = 0;
    int64_t total_entries = 0;
};

// Fraction of strictly negative (path, step, site) entries per dt level.
std::vector<PositivityLevel> positivity_report(const lattice::LatticeSystem& sys, double T,
                                               const std::vector<double>& dt_levels,
                                               int n_paths, uint64_t seed);

// Verdict-machinery calibration: synthetic paired ensembles with a planted
// wrong-direction gap of `gap_se` standard errors; returns the observed
// Violation frequency.
double calibrate_negative_control(int n_reps, int n_samples, double gap_se, uint64_t seed,
                                  const VerdictOptions& opt = VerdictOptions{});

}  // namespace shelab::cmp
