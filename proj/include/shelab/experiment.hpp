#pragma once

#include <string>
#include <vector>

#include "shelab/compare.hpp"
#include "shelab/config.hpp"
#include "shelab/correlation.hpp"
#include "shelab/lattice.hpp"

// Experiment orchestration: config -> system/functional construction, the
// experiment drivers, and CSV/manifest/summary emission.

namespace shelab::cli {

inline constexpr const char* kVersion = "1.0";
inline constexpr int kExitOk = 0;
inline constexpr int kExitError = 1;
inline constexpr int kExitViolation = 2;
inline constexpr int kExitInconclusive = 3;

struct RunResult {
    int exit_code = kExitError;
    std::vector<std::string> artifacts;  // files written under out_dir
    std::string summary;                  // human-readable verdict text
};

// Executes the experiment named by `experiment` in the config.  Writes a CSV,
// a reproducibility manifest, and a summary into out_dir.  Config errors
// surface before any simulation starts; they produce exit code 1 and an
// error.log.
RunResult run(const Config& config, const std::string& out_dir);

// Construction helpers shared with tests.
corr::CorrelationFunction correlation_from_config(const Config& cfg,
                                                  const std::string& prefix = "correlation.");
heat::InitialDatum initial_from_config(const Config& cfg);
rho::DiffusionCoefficient rho_from_config(const Config& cfg, const std::string& prefix);
lattice::LatticeSystem system_from_config(const Config& cfg);
std::vector<cmp::Functional> functionals_from_config(const Config& cfg,
                                                     const lattice::LatticeSystem& sys);
std::function<double(int)> gamma_from_config(const Config& cfg, const std::string& prefix);

// Convergence-ladder study: coupled Monte Carlo L2 distances between
// successive refinement levels at a fixed (t, x) query.
struct LadderLevel {
    double eps = 0.0;
    double delta = 0.0;
    double dt = 0.0;
};

struct LadderDistance {
    int level_a = 0;
    int level_b = 0;
    double l2_distance = 0.0;
    double std_error = 0.0;
};

std::vector<LadderDistance> convergence_study(const corr::CorrelationFunction& f,
                                              const heat::InitialDatum& mu,
                                              const rho::DiffusionCoefficient& rho_coef,
                                              const std::vector<LadderLevel>& levels,
                                              double half_width, double t_query,
                                              double x_query, int n_paths, uint64_t seed);

}  // namespace shelab::cli
