#pragma once

#include <Eigen/Dense>
#include <functional>
#include <memory>
#include <vector>

#include "shelab/common.hpp"

// Correlated Brownian increments for finite site sets: covariance assembly,
// eigenvalue repair, semidefinite factorization, counter-based streams.

namespace shelab::noise {

struct RepairLog {
    bool applied = false;
    double max_clip = 0.0;  // magnitude of the most negative clipped eigenvalue
    int n_clipped = 0;
};

struct CovarianceMatrix {
    Eigen::MatrixXd gamma;
    RepairLog repair;
};

// Dense Gamma with Gamma_ij = off_cov(i - j), from an offset covariance.
CovarianceMatrix assemble_covariance(
    const std::function<double(const std::vector<int>&)>& off_cov,
    const std::vector<std::vector<int>>& sites);

CovarianceMatrix assemble_covariance(const Eigen::MatrixXd& gamma);

// Clips negative eigenvalues to zero.  Throws NumericError when the most
// negative eigenvalue exceeds tol * trace (genuinely non-PSD input).
CovarianceMatrix psd_repair(const CovarianceMatrix& in, double tol = 1e-8);

// Lower-triangular L with L L^T = Gamma.  Semidefinite inputs produce zero
// columns (diagonal pivots below the rank tolerance are flushed).
Eigen::MatrixXd factorize(const Eigen::MatrixXd& gamma);

// A value-like handle on one path's increment stream.  Increments are pure
// functions of (seed, path_id, step); no state advances.
struct NoiseStream {
    uint64_t seed = 0;
    uint64_t path_id = 0;
    double dt = 0.0;
    std::shared_ptr<const Eigen::MatrixXd> factor;

    int sites() const { return factor ? static_cast<int>(factor->rows()) : 0; }
};

NoiseStream make_stream(uint64_t seed, uint64_t path_id, double dt,
                        std::shared_ptr<const Eigen::MatrixXd> factor);

// dM for one step: sqrt(dt) * L * z with z keyed on (seed, path_id, step, site).
Eigen::VectorXd sample_increments(const NoiseStream& stream, uint64_t step);

// Allocation-free variant for integrator loops.
void sample_increments_into(const NoiseStream& stream, uint64_t step,
                            Eigen::VectorXd& z_scratch, Eigen::VectorXd& out);

}  // namespace shelab::noise
