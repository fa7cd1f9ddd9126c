#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <boost/property_tree/ptree.hpp>
#include <json.hpp>

#include "nora/analysis.hpp"
#include "nora/core.hpp"
#include "nora/operators.hpp"
#include "nora/phantom.hpp"
#include "nora/solver.hpp"

namespace nora::cli {

/// Exit codes shared by every subcommand.
enum ExitCode : int { kOk = 0, kConfigError = 2, kIoError = 3, kNumericalError = 4 };

/// Seed tags; every generator draws from derive_seed(run.seed, {tag}).
enum class SeedTag : std::uint64_t { Scene = 1, Activity, Motion, Plan, Noise, Solver, Phase };

struct PsfParams {
    double sigma_fast_px = 0.0;
    double sigma_slow_px = 0.0;
    double fwhm_fast_um = 0.0;
    double fwhm_slow_um = 0.0;
    double truncation_sigmas = 4.0;

    /// FWHM values win when either is positive.
    Psf make(double pixel_pitch_um) const;
};

struct SolverParams {
    std::string mode;  // "lagrangian" or "constrained"
    double lambda = 0.0;
    double lambda_rel = 1e-4;
    std::string preset;
    double epsilon = 0.0;
    double mu = 0.1;
    SolverConfig base;  // iteration controls; mode is filled per batch
    std::int64_t batch_size_frames = 500;
};

struct PhaseParams {
    FrameGrid grid;
    std::int64_t frames = 64;
    std::vector<std::int64_t> ranks;
    std::vector<std::int64_t> lines;
    int trials = 5;
    double success_threshold = 0.05;
    double lambda_rel = 1e-4;
    SamplingStrategy strategy = SamplingStrategy::UniformRandom;
    PsfParams psf;
    SolverConfig solver;
};

/// Fully resolved run configuration. `values` holds every known key as a
/// string, after file values and --set overrides were applied.
struct RunConfig {
    boost::property_tree::ptree values;

    std::uint64_t seed = 0;
    int threads = 1;
    FrameGrid grid;
    std::int64_t frames = 0;
    std::int64_t cells = 0;
    double radius_min_px = 0.0;
    double radius_max_px = 0.0;
    ActivityModel activity;
    MotionModel motion;
    bool noise_enabled = true;
    double snr = 0.0;
    double poisson_fraction = 0.5;
    NoiseModel noise;  // explicit parameters, used when snr == 0
    PsfParams psf;
    SamplingStrategy strategy = SamplingStrategy::RotatingEvenlySpaced;
    std::int64_t lines_per_frame = 0;
    SolverParams solver;
    bool median_filter = true;
    std::array<std::int64_t, 3> median_window{9, 9, 9};
    PhaseParams phase;

    std::uint64_t seed_for(SeedTag tag) const;
    nlohmann::json to_json() const;
};

/// Reads the key-value file (INI sections; keys are `section.key`), applies
/// `key=value` overrides, checks that every key is known, and resolves types.
RunConfig load_run_config(const std::optional<std::filesystem::path>& file,
                          const std::vector<std::string>& overrides);

/// Tabulated residual bound for a preset name such as "10x" or "15x-motion".
struct EpsilonPreset {
    double epsilon_reference = 0.0;
    double speedup = 0.0;
};
EpsilonPreset epsilon_preset(const std::string& name);

/// Residual bound after scaling by sqrt(M / M_ref), with M_ref the
/// sample count of a 500-frame batch on a 512 x 512 grid at the same speedup.
double scaled_epsilon(const EpsilonPreset& preset, std::int64_t samples);

struct Paths {
    std::filesystem::path out;
    std::optional<std::filesystem::path> clean, scene, traces, measurements, recon, acquisition;
};

void cmd_phantom(const RunConfig& config, const Paths& paths);
void cmd_acquire(const RunConfig& config, const Paths& paths);
void cmd_reconstruct(const RunConfig& config, const Paths& paths, std::optional<double> lambda);
void cmd_evaluate(const RunConfig& config, const Paths& paths);
void cmd_phase_diagram(const RunConfig& config, const Paths& paths);

/// Full command-line entry point; returns the process exit code.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace nora::cli
