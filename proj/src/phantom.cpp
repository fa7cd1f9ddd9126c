#include "nora/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <string>

#include "nora/container.hpp"
#include "nora/errors.hpp"
#include "nora/random.hpp"

namespace nora {

namespace {

constexpr double kEdgeWidthPx = 1.0;
constexpr double kEdgeCutoff = 3.0;  // edge widths beyond the ellipse rim
constexpr int kPlacementRetries = 1000;
constexpr int kBackgroundModes = 3;
constexpr double kBackgroundMin = 0.02;
constexpr double kBackgroundMax = 0.1;

struct Ellipse {
    double center_slow = 0.0;
    double center_fast = 0.0;
    double semi_slow = 0.0;
    double semi_fast = 0.0;
    double angle = 0.0;

    double extent() const {
        const double r_max = std::max(semi_slow, semi_fast);
        const double r_min = std::min(semi_slow, semi_fast);
        return r_max * (1.0 + kEdgeCutoff * kEdgeWidthPx / r_min);
    }
};

Matrix rasterize(const Ellipse& e, const FrameGrid& grid) {
    Matrix fp = Matrix::Zero(grid.height_lines, grid.width_pixels);
    const double c = std::cos(e.angle), s = std::sin(e.angle);
    const double r_min = std::min(e.semi_slow, e.semi_fast);
    for (std::int64_t h = 0; h < grid.height_lines; ++h) {
        for (std::int64_t w = 0; w < grid.width_pixels; ++w) {
            const double dy = h - e.center_slow, dx = w - e.center_fast;
            const double u = (c * dy + s * dx) / e.semi_slow;
            const double v = (-s * dy + c * dx) / e.semi_fast;
            const double rho = std::sqrt(u * u + v * v);
            if (rho <= 1.0) {
                fp(h, w) = 1.0;
                continue;
            }
            const double outside = (rho - 1.0) * r_min / kEdgeWidthPx;
            if (outside <= kEdgeCutoff) fp(h, w) = std::exp(-0.5 * outside * outside);
        }
    }
    return fp;
}

Matrix smooth_background(const FrameGrid& grid, Rng& rng) {
    const auto H = grid.height_lines, W = grid.width_pixels;
    Matrix bg = Matrix::Zero(H, W);
    for (int p = -kBackgroundModes; p <= kBackgroundModes; ++p) {
        for (int q = 0; q <= kBackgroundModes; ++q) {
            if (q == 0 && p <= 0) continue;
            const double amp = rng.normal() * std::exp(-0.5 * (p * p + q * q));
            const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
            for (std::int64_t h = 0; h < H; ++h) {
                for (std::int64_t w = 0; w < W; ++w) {
                    const double arg = 2.0 * std::numbers::pi *
                                       (static_cast<double>(p * h) / H + static_cast<double>(q * w) / W);
                    bg(h, w) += amp * std::cos(arg + phase);
                }
            }
        }
    }
    const double lo = bg.minCoeff(), hi = bg.maxCoeff();
    if (hi - lo <= 0.0) return Matrix::Constant(H, W, kBackgroundMax);
    return ((bg.array() - lo) / (hi - lo) * (kBackgroundMax - kBackgroundMin) + kBackgroundMin).matrix();
}

}  // namespace

Matrix Scene::profiles() const {
    Matrix p(grid.pixels(), cells() + 1);
    for (std::int64_t k = 0; k < cells(); ++k) p.col(k) = frame_to_vector(footprints[k], grid);
    p.col(cells()) = frame_to_vector(background, grid);
    return p;
}

Scene gen_scene(const FrameGrid& grid, std::int64_t cells, double radius_min, double radius_max,
                std::uint64_t seed) {
    grid.validate();
    if (cells < 0) throw ConfigError("cell count must be nonnegative");
    const double half = 0.5 * static_cast<double>(std::min(grid.height_lines, grid.width_pixels));
    if (!(radius_min > 0.0) || radius_max < radius_min || radius_max >= half) {
        throw ConfigError("cell radii must satisfy 0 < min <= max < min(H, W) / 2");
    }

    Scene scene;
    scene.grid = grid;
    scene.seed = seed;
    Rng rng(seed);

    std::vector<Ellipse> placed;
    for (std::int64_t k = 0; k < cells; ++k) {
        bool ok = false;
        for (int attempt = 0; attempt < kPlacementRetries && !ok; ++attempt) {
            Ellipse e;
            const double r = rng.uniform(radius_min, radius_max);
            const double aspect = rng.uniform(0.75, 1.25);
            e.semi_slow = r;
            e.semi_fast = std::clamp(r * aspect, radius_min, radius_max);
            e.angle = rng.uniform(0.0, std::numbers::pi);
            const double ext = e.extent();
            const double max_slow = static_cast<double>(grid.height_lines - 1) - ext;
            const double max_fast = static_cast<double>(grid.width_pixels - 1) - ext;
            if (max_slow < ext || max_fast < ext) continue;
            e.center_slow = rng.uniform(ext, max_slow);
            e.center_fast = rng.uniform(ext, max_fast);
            ok = std::all_of(placed.begin(), placed.end(), [&](const Ellipse& o) {
                const double d = std::hypot(e.center_slow - o.center_slow, e.center_fast - o.center_fast);
                return d >= std::max(e.semi_slow, e.semi_fast) + std::max(o.semi_slow, o.semi_fast);
            });
            if (ok) placed.push_back(e);
        }
        if (!ok) {
            throw ConfigError("cannot place " + std::to_string(cells) + " cells in a " +
                              std::to_string(grid.height_lines) + "x" +
                              std::to_string(grid.width_pixels) + " grid (placed " +
                              std::to_string(placed.size()) + ")");
        }
    }
    for (const auto& e : placed) scene.footprints.push_back(rasterize(e, grid));
    scene.background = smooth_background(grid, rng);
    return scene;
}

VideoMatrix scene_to_video(const Scene& scene) { return VideoMatrix(scene.grid, scene.profiles()); }

Scene scene_from_video(const VideoMatrix& video, std::uint64_t seed) {
    if (video.frames() < 1) throw ShapeError("scene video needs at least the background frame");
    Scene scene;
    scene.grid = video.grid();
    scene.seed = seed;
    for (std::int64_t k = 0; k + 1 < video.frames(); ++k) scene.footprints.push_back(video.frame(k));
    scene.background = video.frame(video.frames() - 1);
    return scene;
}

void ActivityModel::validate() const {
    if (!(tau_rise_s > 0.0) || !(tau_decay_s > tau_rise_s)) {
        throw ConfigError("activity kinetics need tau_decay > tau_rise > 0");
    }
    if (!(spike_rate_hz >= 0.0)) throw ConfigError("spike rate must be nonnegative");
    if (!(amplitude_jitter >= 0.0)) throw ConfigError("amplitude jitter must be nonnegative");
}

Matrix gen_spikes(const ActivityModel& model, std::int64_t cells, std::int64_t frames,
                  double frame_rate_hz) {
    model.validate();
    Rng rng(model.seed);
    const double per_frame = model.spike_rate_hz / frame_rate_hz;
    Matrix amps = Matrix::Zero(cells, frames);
    for (std::int64_t k = 0; k < cells; ++k) {
        for (std::int64_t t = 0; t < frames; ++t) {
            const auto count = rng.poisson(per_frame);
            for (std::int64_t s = 0; s < count; ++s) {
                amps(k, t) += std::max(0.0, 1.0 + model.amplitude_jitter * rng.normal());
            }
        }
    }
    return amps;
}

Vector calcium_kernel(const ActivityModel& model, std::int64_t frames, double frame_rate_hz) {
    model.validate();
    // Fluorescence averaged over each frame's exposure window [n, n + 1) / rate.
    const double dt = 1.0 / frame_rate_hz;
    auto integrated = [&](double tau, std::int64_t n) {
        return tau * std::exp(-static_cast<double>(n) * dt / tau) * -std::expm1(-dt / tau);
    };
    Vector h(frames);
    for (std::int64_t n = 0; n < frames; ++n) {
        h(n) = integrated(model.tau_decay_s, n) - integrated(model.tau_rise_s, n);
    }
    const double peak = frames > 0 ? h.maxCoeff() : 1.0;
    if (peak > 0.0) h /= peak;
    return h;
}

Matrix traces_from_spikes(const ActivityModel& model, const Matrix& spike_amplitudes,
                          double frame_rate_hz) {
    const auto K = spike_amplitudes.rows(), T = spike_amplitudes.cols();
    const Vector h = calcium_kernel(model, T, frame_rate_hz);
    Matrix traces = Matrix::Constant(K, T, model.baseline);
    for (std::int64_t k = 0; k < K; ++k) {
        for (std::int64_t s = 0; s < T; ++s) {
            const double a = spike_amplitudes(k, s);
            if (a == 0.0) continue;
            for (std::int64_t t = s; t < T; ++t) traces(k, t) += a * h(t - s);
        }
    }
    return traces;
}

Matrix gen_traces(const ActivityModel& model, std::int64_t cells, std::int64_t frames,
                  double frame_rate_hz) {
    if (frames < 1) throw ConfigError("traces need at least one frame");
    if (!(frame_rate_hz > 0.0)) throw ConfigError("frame rate must be positive");
    return traces_from_spikes(model, gen_spikes(model, cells, frames, frame_rate_hz), frame_rate_hz);
}

VideoMatrix render_clean(const Scene& scene, const Matrix& traces) {
    if (traces.rows() != scene.cells()) {
        throw ShapeError("traces have " + std::to_string(traces.rows()) + " rows for " +
                         std::to_string(scene.cells()) + " cells");
    }
    Matrix coeffs(scene.cells() + 1, traces.cols());
    coeffs.topRows(scene.cells()) = traces;
    coeffs.row(scene.cells()).setOnes();
    return VideoMatrix(scene.grid, scene.profiles() * coeffs);
}

void MotionModel::validate() const {
    if (!(rigid_sigma_px >= 0.0) || !(line_jitter_sigma_px >= 0.0)) {
        throw ConfigError("motion sigmas must be nonnegative");
    }
}

Matrix shift_frame(const Matrix& frame, std::int64_t d_slow, std::int64_t d_fast) {
    const auto H = frame.rows(), W = frame.cols();
    Matrix out(H, W);
    for (std::int64_t h = 0; h < H; ++h) {
        const auto src_h = ((h - d_slow) % H + H) % H;
        for (std::int64_t w = 0; w < W; ++w) out(h, w) = frame(src_h, ((w - d_fast) % W + W) % W);
    }
    return out;
}

VideoMatrix apply_motion(const VideoMatrix& video, const MotionModel& motion) {
    motion.validate();
    const auto& grid = video.grid();
    const auto W = grid.width_pixels;
    Rng rng(motion.seed);
    Matrix out(video.data().rows(), video.frames());
    for (std::int64_t t = 0; t < video.frames(); ++t) {
        const auto dy = static_cast<std::int64_t>(std::llround(rng.normal(0.0, motion.rigid_sigma_px)));
        const auto dx = static_cast<std::int64_t>(std::llround(rng.normal(0.0, motion.rigid_sigma_px)));
        Matrix frame = shift_frame(video.frame(t), dy, dx);
        if (motion.line_jitter_sigma_px > 0.0) {
            for (std::int64_t h = 0; h < grid.height_lines; ++h) {
                const auto j = static_cast<std::int64_t>(
                    std::llround(rng.normal(0.0, motion.line_jitter_sigma_px)));
                const Eigen::RowVectorXd line = frame.row(h);
                for (std::int64_t w = 0; w < W; ++w) frame(h, w) = line(((w - j) % W + W) % W);
            }
        }
        out.col(t) = frame_to_vector(frame, grid);
    }
    return VideoMatrix(grid, std::move(out));
}

void NoiseModel::validate() const {
    if (!(photon_gain >= 0.0)) throw ConfigError("photon gain must be nonnegative");
    if (!(gaussian_sigma >= 0.0)) throw ConfigError("gaussian sigma must be nonnegative");
}

NoiseModel noise_for_snr(double mean_signal, double snr, double poisson_fraction,
                         std::uint64_t seed) {
    if (!(mean_signal > 0.0) || !(snr > 0.0) || poisson_fraction < 0.0 || poisson_fraction > 1.0) {
        throw ConfigError("noise calibration needs positive signal and SNR, fraction in [0, 1]");
    }
    const double total_var = std::pow(mean_signal / snr, 2);
    NoiseModel n;
    n.seed = seed;
    n.photon_gain = poisson_fraction > 0.0 ? mean_signal / (poisson_fraction * total_var)
                                           : std::numeric_limits<double>::infinity();
    n.gaussian_sigma = std::sqrt((1.0 - poisson_fraction) * total_var);
    return n;
}

double noise_sigma_at(const NoiseModel& noise, double signal) {
    double var = noise.gaussian_sigma * noise.gaussian_sigma;
    if (noise.photon_gain > 0.0 && std::isfinite(noise.photon_gain)) {
        var += std::max(signal, 0.0) / noise.photon_gain;
    }
    return std::sqrt(var);
}

NoisyMeasurements apply_noise(const MeasurementSet& clean, const NoiseModel& noise) {
    noise.validate();
    Rng rng(noise.seed);
    NoisyMeasurements out{clean, 0};
    Matrix& y = out.measurements.data;
    const bool passthrough = std::isinf(noise.photon_gain);
    for (Eigen::Index i = 0; i < y.size(); ++i) {
        double c = y.data()[i];
        if (c < 0.0) {
            c = 0.0;
            ++out.clamped_entries;
        }
        double v = 0.0;
        if (passthrough) {
            v = c;
        } else if (noise.photon_gain > 0.0) {
            v = static_cast<double>(rng.poisson(noise.photon_gain * c)) / noise.photon_gain;
        }
        y.data()[i] = v + rng.normal(0.0, noise.gaussian_sigma) + noise.offset;
    }
    return out;
}

std::string traces_to_csv(const Matrix& traces) {
    std::string out = "cell_id";
    for (Eigen::Index t = 0; t < traces.cols(); ++t) out += ",t" + std::to_string(t);
    out += '\n';
    char buf[32];
    for (Eigen::Index k = 0; k < traces.rows(); ++k) {
        out += std::to_string(k);
        for (Eigen::Index t = 0; t < traces.cols(); ++t) {
            std::snprintf(buf, sizeof buf, ",%.17g", traces(k, t));
            out += buf;
        }
        out += '\n';
    }
    return out;
}

void write_traces_csv(const std::filesystem::path& path, const Matrix& traces) {
    write_file_atomic(path, traces_to_csv(traces));
}

}  // namespace nora
