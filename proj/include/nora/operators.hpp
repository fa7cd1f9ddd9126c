#pragma once

#include <cstdint>

#include "nora/core.hpp"

namespace nora {

/// Gaussian point-spread function sampled on an odd-sized integer grid.
/// Rows run along the slow-scan axis, columns along the fast-scan axis.
/// The kernel center sits at (rows / 2, cols / 2).
struct Psf {
    Matrix kernel = Matrix::Ones(1, 1);
    double sigma_fast_px = 0.0;
    double sigma_slow_px = 0.0;
    /// Squared Euclidean norm of the kernel.
    double eta = 1.0;

    std::int64_t center_slow() const { return kernel.rows() / 2; }
    std::int64_t center_fast() const { return kernel.cols() / 2; }
    bool is_delta() const { return kernel.size() == 1; }

    /// 1x1 identity kernel.
    static Psf delta();
};

/// FWHM = 2 sqrt(2 ln 2) sigma.
double fwhm_to_sigma(double fwhm);

/// Builds a unit-sum Gaussian from physical widths. A width that maps to a
/// kernel radius of zero pixels degenerates to a single tap on that axis.
Psf make_gaussian_psf(double fwhm_fast_um, double fwhm_slow_um, double pixel_pitch_um,
                      double truncation_sigmas = 4.0);

/// Same, with standard deviations given directly in pixels.
Psf make_gaussian_psf_px(double sigma_fast_px, double sigma_slow_px,
                         double truncation_sigmas = 4.0);

/// 2D circular convolution of an H x W frame with the kernel.
Matrix blur_frame(const Matrix& frame, const Psf& psf);

/// Circular correlation with the kernel; the adjoint of blur_frame.
Matrix correlate_frame(const Matrix& frame, const Psf& psf);

SamplingPlan generate_plan(const FrameGrid& grid, std::int64_t frames,
                           std::int64_t lines_per_frame, SamplingStrategy strategy,
                           std::uint64_t seed);

/// Line count for a speedup ratio: max(1, round(H / ratio)).
std::int64_t lines_for_speedup(std::int64_t height_lines, double speedup);

/// The linear map A(X) = S(B X): blur every frame, then keep the sampled
/// lines. Operates on raw N x T matrices so the solver can stay allocation
/// light; the VideoMatrix/MeasurementSet wrappers below check metadata.
class ForwardModel {
public:
    ForwardModel(Psf psf, SamplingPlan plan);

    const Psf& psf() const { return psf_; }
    const SamplingPlan& plan() const { return plan_; }
    const FrameGrid& grid() const { return plan_.grid; }
    std::int64_t frames() const { return plan_.frames; }
    std::int64_t rows_per_frame() const { return plan_.rows_per_frame(); }

    /// N x T -> (L' W) x T.
    Matrix apply(const Matrix& x) const;
    /// (L' W) x T -> N x T.
    Matrix adjoint(const Matrix& y) const;

private:
    void apply_frame(const double* x, const std::vector<std::int64_t>& lines, double* y) const;
    void adjoint_frame(const double* y, const std::vector<std::int64_t>& lines, double* x) const;

    Psf psf_;
    SamplingPlan plan_;
};

MeasurementSet forward_apply(const VideoMatrix& x, const ForwardModel& model);
VideoMatrix adjoint_apply(const MeasurementSet& y, const ForwardModel& model);

/// Power iteration on A^T A. Returns the Rayleigh quotient after the given
/// number of iterations, an estimate of ||A||^2 from below.
double estimate_operator_norm(const ForwardModel& model, int iterations, std::uint64_t seed);

}  // namespace nora
