#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "nora/core.hpp"

namespace nora {

/// Low-rank ground truth: K cell footprints plus a smooth neuropil map.
struct Scene {
    FrameGrid grid;
    std::vector<Matrix> footprints;  // each H x W, unit maximum
    Matrix background;               // H x W, nonnegative
    std::uint64_t seed = 0;

    std::int64_t cells() const { return static_cast<std::int64_t>(footprints.size()); }

    /// N x (K + 1) matrix of vectorized footprints followed by the background.
    Matrix profiles() const;
};

/// Soft-edged ellipses with radii drawn from [radius_min, radius_max] and
/// non-overlapping centers; background is low-pass filtered noise scaled to
/// peak at 10% of a footprint.
Scene gen_scene(const FrameGrid& grid, std::int64_t cells, double radius_min, double radius_max,
                std::uint64_t seed);

/// Scene <-> video container mapping: frame k < K is footprint k, the last
/// frame is the background.
VideoMatrix scene_to_video(const Scene& scene);
Scene scene_from_video(const VideoMatrix& video, std::uint64_t seed = 0);

struct ActivityModel {
    double spike_rate_hz = 0.2;
    double tau_rise_s = 0.05;
    double tau_decay_s = 0.4;
    double baseline = 1.0;
    double amplitude_jitter = 0.2;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Spike counts per (cell, frame) drawn from a Poisson process.
Matrix gen_spikes(const ActivityModel& model, std::int64_t cells, std::int64_t frames,
                  double frame_rate_hz);

/// Double-exponential calcium kernel sampled at the frame rate, unit peak.
Vector calcium_kernel(const ActivityModel& model, std::int64_t frames, double frame_rate_hz);

/// Convolves spike amplitudes with the calcium kernel and adds the baseline.
Matrix traces_from_spikes(const ActivityModel& model, const Matrix& spike_amplitudes,
                          double frame_rate_hz);

/// K x T nonnegative activity traces.
Matrix gen_traces(const ActivityModel& model, std::int64_t cells, std::int64_t frames,
                  double frame_rate_hz);

/// X[:, t] = sum_k vec(footprint_k) trace_k[t] + vec(background).
VideoMatrix render_clean(const Scene& scene, const Matrix& traces);

struct MotionModel {
    double rigid_sigma_px = 0.0;
    double line_jitter_sigma_px = 0.0;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Circular shift of every frame by a rounded Gaussian rigid offset, then of
/// every line along the fast-scan axis by a rounded Gaussian jitter.
VideoMatrix apply_motion(const VideoMatrix& video, const MotionModel& motion);

/// Circularly shifts an H x W frame by (d_slow, d_fast).
Matrix shift_frame(const Matrix& frame, std::int64_t d_slow, std::int64_t d_fast);

struct NoiseModel {
    /// Photon counts per fluorescence unit; 0 disables the shot-noise term,
    /// +inf passes the clean value through.
    double photon_gain = 0.0;
    double gaussian_sigma = 0.0;
    double offset = 0.0;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Picks gain and read noise so that mean_signal / total_sigma = snr, with
/// poisson_fraction of the variance coming from shot noise at the mean level.
NoiseModel noise_for_snr(double mean_signal, double snr, double poisson_fraction,
                         std::uint64_t seed);

/// Per-entry noise standard deviation at a given signal level.
double noise_sigma_at(const NoiseModel& noise, double signal);

struct NoisyMeasurements {
    MeasurementSet measurements;
    /// Clean entries below zero that were clamped before the Poisson draw.
    std::int64_t clamped_entries = 0;
};

/// y = Poisson(gain y_clean) / gain + Normal(0, sigma) + offset, entrywise.
NoisyMeasurements apply_noise(const MeasurementSet& clean, const NoiseModel& noise);

/// CSV with header `cell_id,t0,t1,...` and one row per cell.
std::string traces_to_csv(const Matrix& traces);
void write_traces_csv(const std::filesystem::path& path, const Matrix& traces);

}  // namespace nora
