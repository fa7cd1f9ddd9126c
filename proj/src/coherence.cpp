#include <cmath>
#include <string>

#include "nora/analysis.hpp"
#include "nora/errors.hpp"

namespace nora {

double coherence_mu_b(const VideoMatrix& video, const Psf& psf, std::int64_t rank,
                      KernelNormalization normalization) {
    const auto& grid = video.grid();
    const auto N = grid.pixels();
    if (rank < 1) throw ConfigError("coherence rank must be at least 1");
    const Svd svd = full_svd(video.data());
    const double cut = svd.s.size() > 0 ? 1e-8 * svd.s(0) : 0.0;
    std::int64_t numerical = 0;
    for (Eigen::Index i = 0; i < svd.s.size(); ++i) numerical += svd.s(i) > cut && svd.s(i) > 0.0;
    if (rank > numerical) {
        throw ConfigError("coherence rank " + std::to_string(rank) + " exceeds numerical rank " +
                          std::to_string(numerical));
    }

    Psf kernel = psf;
    if (normalization == KernelNormalization::UnitEnergy) {
        kernel.kernel /= std::sqrt(psf.kernel.squaredNorm());
    }
    // <u, b_n> for every n is the correlation of u with the kernel
    Vector energy = Vector::Zero(N);
    for (std::int64_t r = 0; r < rank; ++r) {
        const Matrix img = vector_to_frame(svd.u.col(r), grid);
        const Vector proj = frame_to_vector(correlate_frame(img, kernel), grid);
        energy += proj.cwiseAbs2();
    }
    return static_cast<double>(N) / static_cast<double>(rank) * energy.maxCoeff();
}

}  // namespace nora
