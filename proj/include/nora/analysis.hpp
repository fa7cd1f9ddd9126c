#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "nora/core.hpp"
#include "nora/operators.hpp"
#include "nora/phantom.hpp"
#include "nora/solver.hpp"

namespace nora {

/// 10 log10(peak^2 / MSE) with peak = max of the reference. Returns +inf
/// when the inputs are identical.
double psnr(const Matrix& estimate, const Matrix& reference);

/// Per-voxel median over a (lines, pixels, frames) window with edge
/// replication. Window sizes must be odd.
VideoMatrix median_filter_3d(const VideoMatrix& video, std::array<std::int64_t, 3> window);

struct TraceSet {
    Matrix values;  // K x T
    std::vector<std::int64_t> cell_ids;
    double frame_rate_hz = 30.0;
    /// Set when the profile Gram matrix was singular and a ridge was added.
    bool regularized = false;
};

TraceSet make_trace_set(Matrix values, double frame_rate_hz);

/// Least-squares fit of every frame onto the scene's footprints plus
/// background; returns the footprint coefficients.
TraceSet pals_traces(const VideoMatrix& video, const Scene& scene);

struct CorrelationSummary {
    /// Pearson r per cell; empty when either trace is constant.
    std::vector<std::optional<double>> per_cell;
    std::vector<double> bin_edges;
    std::vector<std::int64_t> histogram;
    std::int64_t excluded = 0;
    double mean = 0.0;
    double median = 0.0;
};

std::optional<double> pearson(const Eigen::Ref<const Eigen::RowVectorXd>& a,
                              const Eigen::Ref<const Eigen::RowVectorXd>& b);

CorrelationSummary trace_correlations(const TraceSet& estimate, const TraceSet& truth, int bins = 20);

enum class KernelNormalization { UnitSum, UnitEnergy };

/// (N / R) max_n ||U^T b_n||^2 with U the top-R left singular vectors of X and
/// b_n the kernel circularly centered at pixel n.
double coherence_mu_b(const VideoMatrix& video, const Psf& psf, std::int64_t rank,
                      KernelNormalization normalization = KernelNormalization::UnitSum);

struct TheoremBounds {
    double sample_requirement = 0.0;
    double error_bound = 0.0;
};

/// Sample requirement C beta R (T mu_b^2 + N) log^2(N T) and error bound
/// 4 sqrt(min(T, N) (2 N T + M) / M) eps.
TheoremBounds theorem_bounds(double pixels, double frames, double samples, double rank,
                             double mu_b2, double eps_noise, double beta = 1.0, double c = 1.0);

/// Report written by the evaluate command.
struct MetricsReport {
    double psnr_db = 0.0;
    std::vector<std::optional<double>> per_cell_correlation;
    std::optional<double> mean_correlation;
    std::optional<double> median_correlation;
    std::int64_t excluded_cells = 0;
    std::vector<std::int64_t> correlation_histogram;
    double mu_b2 = 0.0;
    double mu_b2_unit_energy = 0.0;
    double eta = 0.0;
    double theorem_error_bound = 0.0;
    double theorem_error_bound_lines = 0.0;
    double measured_error = 0.0;
    double relative_error = 0.0;
    double noise_level = 0.0;
    std::int64_t samples_pixels = 0;
    std::int64_t samples_lines = 0;
};

nlohmann::json to_json(const MetricsReport& report);

/// N x T matrix U V^T with i.i.d. standard normal factors of inner size R.
Matrix random_low_rank(std::int64_t rows, std::int64_t cols, std::int64_t rank, std::uint64_t seed);

struct PhaseDiagramConfig {
    FrameGrid grid{16, 16, 1.0, 30.0};
    std::int64_t frames = 64;
    Psf psf;
    SamplingStrategy strategy = SamplingStrategy::UniformRandom;
    /// Only iteration/tolerance fields are used; the weight is
    /// lambda_rel * lambda_zero_threshold(Y).
    SolverConfig solver;
    double lambda_rel = 1e-4;
    std::vector<std::int64_t> ranks;
    std::vector<std::int64_t> lines;
    int trials = 5;
    double success_threshold = 0.05;
    std::uint64_t seed = 0;
    int threads = 1;
    /// Per-cell results are cached here and reused on the next run.
    std::optional<std::filesystem::path> checkpoint_dir;
};

struct PhaseCell {
    std::int64_t rank = 0;
    std::int64_t lines = 0;
    int trials = 0;
    int successes = 0;
    int failures = 0;
    double success_fraction = 0.0;
    double mean_rel_error = 0.0;
    std::vector<std::uint64_t> seeds;
    std::vector<double> rel_errors;
    std::vector<std::string> errors;
};

nlohmann::json to_json(const PhaseCell& cell);
PhaseCell phase_cell_from_json(const nlohmann::json& j);

struct PhaseDiagramResult {
    std::vector<PhaseCell> cells;
    double success_threshold = 0.05;
    std::uint64_t seed = 0;

    const PhaseCell* find(std::int64_t rank, std::int64_t lines) const;
    /// Smallest L' whose success fraction reaches min_success.
    std::optional<std::int64_t> boundary(std::int64_t rank, double min_success = 0.9) const;
};

/// One noiseless recovery attempt; returns the relative Frobenius error.
double phase_trial(const PhaseDiagramConfig& config, std::int64_t rank, std::int64_t lines,
                   std::uint64_t seed);

PhaseDiagramResult phase_diagram(const PhaseDiagramConfig& config);

/// `R,Lprime,success_fraction,mean_rel_error`
std::string phase_diagram_csv(const PhaseDiagramResult& result);

}  // namespace nora
