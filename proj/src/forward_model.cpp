#include <cmath>
#include <string>

#include "nora/errors.hpp"
#include "nora/operators.hpp"
#include "nora/random.hpp"

namespace nora {

namespace {

std::int64_t wrap(std::int64_t v, std::int64_t n) {
    v %= n;
    return v < 0 ? v + n : v;
}

}  // namespace

ForwardModel::ForwardModel(Psf psf, SamplingPlan plan) : psf_(std::move(psf)), plan_(std::move(plan)) {
    plan_.validate();
    if (psf_.kernel.rows() % 2 == 0 || psf_.kernel.cols() % 2 == 0) {
        throw ConfigError("PSF kernel dimensions must be odd");
    }
}

void ForwardModel::apply_frame(const double* x, const std::vector<std::int64_t>& lines,
                               double* y) const {
    const auto H = grid().height_lines, W = grid().width_pixels;
    const auto cs = psf_.center_slow(), cf = psf_.center_fast();
    const auto& k = psf_.kernel;
    for (std::size_t a = 0; a < lines.size(); ++a) {
        double* out = y + a * W;
        for (std::int64_t w = 0; w < W; ++w) out[w] = 0.0;
        for (std::int64_t i = 0; i < k.rows(); ++i) {
            const double* src = x + wrap(lines[a] - (i - cs), H) * W;
            for (std::int64_t j = 0; j < k.cols(); ++j) {
                const double kij = k(i, j);
                const auto shift = cf - j;
                for (std::int64_t w = 0; w < W; ++w) out[w] += kij * src[wrap(w + shift, W)];
            }
        }
    }
}

void ForwardModel::adjoint_frame(const double* y, const std::vector<std::int64_t>& lines,
                                 double* x) const {
    const auto H = grid().height_lines, W = grid().width_pixels;
    const auto cs = psf_.center_slow(), cf = psf_.center_fast();
    const auto& k = psf_.kernel;
    for (std::int64_t n = 0; n < H * W; ++n) x[n] = 0.0;
    for (std::size_t a = 0; a < lines.size(); ++a) {
        const double* in = y + a * W;
        for (std::int64_t i = 0; i < k.rows(); ++i) {
            double* dst = x + wrap(lines[a] - (i - cs), H) * W;
            for (std::int64_t j = 0; j < k.cols(); ++j) {
                const double kij = k(i, j);
                const auto shift = cf - j;
                for (std::int64_t w = 0; w < W; ++w) dst[wrap(w + shift, W)] += kij * in[w];
            }
        }
    }
}

Matrix ForwardModel::apply(const Matrix& x) const {
    if (x.rows() != grid().pixels() || x.cols() != frames()) {
        throw ShapeError("forward model expects " + std::to_string(grid().pixels()) + "x" +
                         std::to_string(frames()) + " input");
    }
    Matrix y(rows_per_frame(), frames());
    for (std::int64_t t = 0; t < frames(); ++t) {
        apply_frame(x.col(t).data(), plan_.line_indices[t], y.col(t).data());
    }
    return y;
}

Matrix ForwardModel::adjoint(const Matrix& y) const {
    if (y.rows() != rows_per_frame() || y.cols() != frames()) {
        throw ShapeError("adjoint expects " + std::to_string(rows_per_frame()) + "x" +
                         std::to_string(frames()) + " input");
    }
    Matrix x(grid().pixels(), frames());
    for (std::int64_t t = 0; t < frames(); ++t) {
        adjoint_frame(y.col(t).data(), plan_.line_indices[t], x.col(t).data());
    }
    return x;
}

MeasurementSet forward_apply(const VideoMatrix& x, const ForwardModel& model) {
    if (!(x.grid() == model.grid())) throw ShapeError("video grid differs from model grid");
    if (x.frames() != model.frames()) {
        throw ShapeError("video has " + std::to_string(x.frames()) + " frames, plan has " +
                         std::to_string(model.frames()));
    }
    return MeasurementSet{model.plan(), model.apply(x.data())};
}

VideoMatrix adjoint_apply(const MeasurementSet& y, const ForwardModel& model) {
    if (!(y.plan == model.plan())) throw ShapeError("measurements were taken with another plan");
    return VideoMatrix(model.grid(), model.adjoint(y.data));
}

double estimate_operator_norm(const ForwardModel& model, int iterations, std::uint64_t seed) {
    if (iterations < 1) throw ConfigError("power iteration needs at least one iteration");
    Rng rng(seed);
    Matrix x(model.grid().pixels(), model.frames());
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
    x /= x.norm();
    double rayleigh = 0.0;
    for (int it = 0; it < iterations; ++it) {
        const Matrix ax = model.apply(x);
        rayleigh = ax.squaredNorm();
        const Matrix next = model.adjoint(ax);
        const double n = next.norm();
        if (n == 0.0) return 0.0;
        x = next / n;
    }
    return rayleigh;
}

}  // namespace nora
