#include <algorithm>
#include <string>

#include "nora/errors.hpp"
#include "nora/random.hpp"
#include "nora/solver.hpp"

namespace nora {

namespace {

void fix_signs(Svd& svd) {
    for (Eigen::Index j = 0; j < svd.u.cols(); ++j) {
        Eigen::Index arg = 0;
        svd.u.col(j).cwiseAbs().maxCoeff(&arg);
        if (svd.u(arg, j) < 0.0) {
            svd.u.col(j) *= -1.0;
            svd.v.col(j) *= -1.0;
        }
    }
}

Svd truncate(Svd svd, std::int64_t rank) {
    rank = std::min<std::int64_t>(rank, svd.s.size());
    svd.u = svd.u.leftCols(rank).eval();
    svd.s = svd.s.head(rank).eval();
    svd.v = svd.v.leftCols(rank).eval();
    return svd;
}

Matrix orthonormal_basis(const Matrix& m) {
    Eigen::HouseholderQR<Matrix> qr(m);
    return qr.householderQ() * Matrix::Identity(m.rows(), m.cols());
}

}  // namespace

Svd full_svd(const Matrix& m) {
    if (!m.allFinite()) throw NumericalError("SVD input contains non-finite entries");
    Svd out;
    if (m.size() == 0) return out;
    Eigen::BDCSVD<Matrix> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
    if (svd.info() != Eigen::Success) {
        throw NumericalError("SVD failed on a " + std::to_string(m.rows()) + "x" +
                             std::to_string(m.cols()) + " matrix (Frobenius norm " +
                             std::to_string(m.norm()) + ")");
    }
    out.u = svd.matrixU();
    out.s = svd.singularValues();
    out.v = svd.matrixV();
    fix_signs(out);
    return out;
}

Svd partial_svd(const Matrix& m, std::int64_t rank_cap, std::uint64_t seed) {
    const auto min_dim = std::min(m.rows(), m.cols());
    if (rank_cap < 1 || rank_cap > min_dim) {
        throw ConfigError("rank cap " + std::to_string(rank_cap) + " outside [1, " +
                          std::to_string(min_dim) + "]");
    }
    if (min_dim <= 64) return truncate(full_svd(m), rank_cap);

    constexpr std::int64_t kOversampling = 8;
    constexpr int kPowerIterations = 2;
    const auto sketch = std::min<std::int64_t>(rank_cap + kOversampling, min_dim);

    Rng rng(seed);
    Matrix omega(m.cols(), sketch);
    for (Eigen::Index i = 0; i < omega.size(); ++i) omega.data()[i] = rng.normal();

    Matrix q = orthonormal_basis(m * omega);
    for (int it = 0; it < kPowerIterations; ++it) {
        const Matrix z = orthonormal_basis(m.transpose() * q);
        q = orthonormal_basis(m * z);
    }
    Svd small = full_svd(q.transpose() * m);
    Svd out;
    out.u = q * small.u;
    out.s = std::move(small.s);
    out.v = std::move(small.v);
    fix_signs(out);
    return truncate(std::move(out), rank_cap);
}

Matrix svt(const Matrix& m, double tau) {
    if (!(tau >= 0.0)) throw ConfigError("threshold must be nonnegative");
    const Svd svd = full_svd(m);
    const Vector shrunk = (svd.s.array() - tau).max(0.0).matrix();
    return svd.u * shrunk.asDiagonal() * svd.v.transpose();
}

}  // namespace nora
