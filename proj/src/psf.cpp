#include <cmath>

#include "nora/errors.hpp"
#include "nora/operators.hpp"

namespace nora {

namespace {

std::int64_t wrap(std::int64_t v, std::int64_t n) {
    v %= n;
    return v < 0 ? v + n : v;
}

Vector gaussian_taps(double sigma, double truncation_sigmas) {
    auto radius = sigma > 0.0 ? static_cast<std::int64_t>(std::ceil(truncation_sigmas * sigma)) : 0;
    // drop taps that underflow to zero for vanishing widths
    while (radius > 0 && std::exp(-0.5 * std::pow(static_cast<double>(radius) / sigma, 2)) == 0.0) --radius;
    Vector taps(2 * radius + 1);
    if (radius == 0) {
        taps(0) = 1.0;
        return taps;
    }
    for (std::int64_t i = -radius; i <= radius; ++i) {
        const double z = static_cast<double>(i) / sigma;
        taps(i + radius) = std::exp(-0.5 * z * z);
    }
    return taps;
}

}  // namespace

Psf Psf::delta() { return Psf{}; }

double fwhm_to_sigma(double fwhm) { return fwhm / (2.0 * std::sqrt(2.0 * std::log(2.0))); }

Psf make_gaussian_psf_px(double sigma_fast_px, double sigma_slow_px, double truncation_sigmas) {
    if (sigma_fast_px < 0.0 || sigma_slow_px < 0.0 || !(truncation_sigmas > 0.0)) {
        throw ConfigError("PSF widths must be nonnegative and truncation positive");
    }
    const Vector slow = gaussian_taps(sigma_slow_px, truncation_sigmas);
    const Vector fast = gaussian_taps(sigma_fast_px, truncation_sigmas);
    Psf psf;
    psf.kernel = slow * fast.transpose();
    psf.kernel /= psf.kernel.sum();
    psf.sigma_fast_px = sigma_fast_px;
    psf.sigma_slow_px = sigma_slow_px;
    psf.eta = psf.kernel.squaredNorm();
    return psf;
}

Psf make_gaussian_psf(double fwhm_fast_um, double fwhm_slow_um, double pixel_pitch_um,
                      double truncation_sigmas) {
    if (!(pixel_pitch_um > 0.0)) throw ConfigError("pixel pitch must be positive");
    return make_gaussian_psf_px(fwhm_to_sigma(fwhm_fast_um) / pixel_pitch_um,
                                fwhm_to_sigma(fwhm_slow_um) / pixel_pitch_um, truncation_sigmas);
}

Matrix blur_frame(const Matrix& frame, const Psf& psf) {
    const auto H = frame.rows(), W = frame.cols();
    const auto cs = psf.center_slow(), cf = psf.center_fast();
    Matrix out = Matrix::Zero(H, W);
    for (std::int64_t i = 0; i < psf.kernel.rows(); ++i) {
        for (std::int64_t j = 0; j < psf.kernel.cols(); ++j) {
            const double k = psf.kernel(i, j);
            for (std::int64_t h = 0; h < H; ++h) {
                const auto src_h = wrap(h - (i - cs), H);
                for (std::int64_t w = 0; w < W; ++w) {
                    out(h, w) += k * frame(src_h, wrap(w - (j - cf), W));
                }
            }
        }
    }
    return out;
}

Matrix correlate_frame(const Matrix& frame, const Psf& psf) {
    const auto H = frame.rows(), W = frame.cols();
    const auto cs = psf.center_slow(), cf = psf.center_fast();
    Matrix out = Matrix::Zero(H, W);
    for (std::int64_t i = 0; i < psf.kernel.rows(); ++i) {
        for (std::int64_t j = 0; j < psf.kernel.cols(); ++j) {
            const double k = psf.kernel(i, j);
            for (std::int64_t h = 0; h < H; ++h) {
                const auto src_h = wrap(h + (i - cs), H);
                for (std::int64_t w = 0; w < W; ++w) {
                    out(h, w) += k * frame(src_h, wrap(w + (j - cf), W));
                }
            }
        }
    }
    return out;
}

}  // namespace nora
