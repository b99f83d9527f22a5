#include "shelab/noise.hpp"

#include <sstream>

namespace shelab::noise {

CovarianceMatrix assemble_covariance(
    const std::function<double(const std::vector<int>&)>& off_cov,
    const std::vector<std::vector<int>>& sites) {
    const int n = static_cast<int>(sites.size());
    CovarianceMatrix out;
    out.gamma.resize(n, n);
    std::vector<int> diff;
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j <= i; ++j) {
            diff.resize(sites[i].size());
            for (size_t k = 0; k < diff.size(); ++k) diff[k] = sites[i][k] - sites[j][k];
            double v = off_cov(diff);
            out.gamma(i, j) = v;
            out.gamma(j, i) = v;
        }
    }
    return out;
}

CovarianceMatrix assemble_covariance(const Eigen::MatrixXd& gamma) {
    if (gamma.rows() != gamma.cols())
        throw std::invalid_argument("assemble_covariance: matrix must be square");
    if (!gamma.isApprox(gamma.transpose(), 1e-12))
        throw std::invalid_argument("assemble_covariance: matrix must be symmetric");
    CovarianceMatrix out;
    out.gamma = 0.5 * (gamma + gamma.transpose());
    return out;
}

CovarianceMatrix psd_repair(const CovarianceMatrix& in, double tol) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(in.gamma);
    if (es.info() != Eigen::Success)
        throw NumericError("psd_repair: eigendecomposition failed");
    Eigen::VectorXd ev = es.eigenvalues();
    const double trace = std::max(in.gamma.trace(), 0.0);
    CovarianceMatrix out = in;
    double worst = 0.0;
    int clipped = 0;
    for (int i = 0; i < ev.size(); ++i) {
        if (ev(i) < 0.0) {
            worst = std::max(worst, -ev(i));
            ev(i) = 0.0;
            ++clipped;
        }
    }
    if (worst > tol * std::max(trace, 1e-300)) {
        std::ostringstream msg;
        msg << "psd_repair: eigenvalue " << -worst << " exceeds repair tolerance "
            << tol * trace;
        throw NumericError(msg.str());
    }
    if (clipped > 0) {
        out.gamma = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
        out.gamma = 0.5 * (out.gamma + out.gamma.transpose());
    }
    out.repair.applied = clipped > 0;
    out.repair.max_clip = worst;
    out.repair.n_clipped = clipped;
    return out;
}

Eigen::MatrixXd factorize(const Eigen::MatrixXd& gamma) {
    const int n = static_cast<int>(gamma.rows());
    const double scale = std::max(gamma.diagonal().maxCoeff(), 0.0);
    const double rank_tol = 1e-14 * std::max(scale, 1e-300);

    // diagonal-pivoted Cholesky: rank-revealing and stable on semidefinite
    // input; remaining mass below rank_tol is flushed to zero columns
    Eigen::MatrixXd A = gamma;
    Eigen::MatrixXd Lp = Eigen::MatrixXd::Zero(n, n);
    std::vector<int> perm(n);
    for (int i = 0; i < n; ++i) perm[i] = i;
    int rank = 0;
    for (int k = 0; k < n; ++k) {
        int pivot = k;
        for (int i = k + 1; i < n; ++i)
            if (A(perm[i], perm[i]) > A(perm[pivot], perm[pivot])) pivot = i;
        if (A(perm[pivot], perm[pivot]) <= rank_tol) break;
        std::swap(perm[k], perm[pivot]);
        const int pk = perm[k];
        double lkk = std::sqrt(A(pk, pk));
        for (int r = k; r < n; ++r) Lp(perm[r], k) = A(perm[r], pk) / lkk;
        for (int r = k; r < n; ++r) {
            int pi = perm[r];
            for (int c = k; c <= r; ++c) {
                int pj = perm[c];
                A(pi, pj) -= Lp(pi, k) * Lp(pj, k);
                A(pj, pi) = A(pi, pj);
            }
        }
        ++rank;
    }
    Lp.conservativeResize(n, std::max(rank, 1));

    // re-triangularize: QR of Lp^T gives Gamma = (R^T)(R^T)^T with R^T lower
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(Lp.transpose());
    Eigen::MatrixXd R = qr.matrixQR()
                            .topRows(std::min<int>(rank, n))
                            .triangularView<Eigen::Upper>();
    Eigen::MatrixXd L = Eigen::MatrixXd::Zero(n, n);
    L.leftCols(R.rows()) = R.transpose();
    for (int j = 0; j < n; ++j) {
        if (L(j, j) < 0.0) L.col(j) = -L.col(j);
    }

    double ref = std::max(gamma.norm(), 1e-300);
    double resid = (L * L.transpose() - gamma).norm() / ref;
    if (resid > 1e-10) {
        std::ostringstream msg;
        msg << "factorize: relative residual " << resid << " exceeds 1e-10";
        throw NumericError(msg.str());
    }
    return L;
}

NoiseStream make_stream(uint64_t seed, uint64_t path_id, double dt,
                        std::shared_ptr<const Eigen::MatrixXd> factor) {
    if (!(dt > 0.0)) throw std::domain_error("make_stream: dt must be positive");
    if (!factor) throw std::invalid_argument("make_stream: missing factor");
    NoiseStream s;
    s.seed = seed;
    s.path_id = path_id;
    s.dt = dt;
    s.factor = std::move(factor);
    return s;
}

void sample_increments_into(const NoiseStream& stream, uint64_t step,
                            Eigen::VectorXd& z_scratch, Eigen::VectorXd& out) {
    const int n = stream.sites();
    z_scratch.resize(n);
    for (int i = 0; i < n; ++i)
        z_scratch(i) = counter_normal(stream.seed, stream.path_id, step,
                                      static_cast<uint64_t>(i));
    out.noalias() = (*stream.factor) * z_scratch;
    out *= std::sqrt(stream.dt);
}

Eigen::VectorXd sample_increments(const NoiseStream& stream, uint64_t step) {
    Eigen::VectorXd z, out;
    sample_increments_into(stream, step, z, out);
    return out;
}

}  // namespace shelab::noise
