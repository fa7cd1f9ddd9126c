#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <variant>
#include <vector>

#include <json.hpp>

#include "nora/core.hpp"
#include "nora/operators.hpp"

namespace nora {

/// Thin SVD with singular values in descending order. Each left singular
/// vector is sign-fixed so its largest-magnitude entry is positive.
struct Svd {
    Matrix u;
    Vector s;
    Matrix v;
};

Svd full_svd(const Matrix& m);

/// Randomized range finder (oversampling 8, two power iterations) returning
/// the leading rank_cap triplets. Falls back to full_svd when the smaller
/// dimension is at most 64.
Svd partial_svd(const Matrix& m, std::int64_t rank_cap, std::uint64_t seed);

/// Singular value soft-thresholding: U max(S - tau, 0) V^T.
Matrix svt(const Matrix& m, double tau);

/// Minimize ||Y - A(X)||_F^2 + lambda ||X||_*.
struct LagrangianMode {
    double lambda = 0.0;
};

/// Minimize ||X||_* + (mu / 2) ||X - X0||_F^2 subject to ||A(X) - Y||_F <= epsilon.
struct ConstrainedMode {
    double epsilon = 0.0;
    double mu = 0.1;
};

struct SolverConfig {
    std::variant<LagrangianMode, ConstrainedMode> mode = LagrangianMode{};
    int max_iters = 500;
    double rel_tol = 1e-4;
    double step_scale = 0.99;
    std::optional<std::int64_t> svd_rank_cap;
    std::uint64_t seed = 0;
    /// Lagrangian: start from a large weight and shrink it geometrically
    /// toward lambda. Constrained: re-solve with X0 set to the previous
    /// solution until it stops moving.
    bool continuation = false;
    int norm_iterations = 100;

    void validate() const;
};

struct BisectionStep {
    double lambda = 0.0;
    double residual = 0.0;
    int iterations = 0;
};

struct SolveReport {
    int iterations_run = 0;
    std::vector<double> objective_per_iter;
    double final_data_residual = 0.0;
    double final_nuclear_norm = 0.0;
    std::int64_t solution_rank = 0;
    bool converged = false;

    double lambda = 0.0;
    double step = 0.0;
    double operator_norm_sq = 0.0;
    /// Constrained mode only.
    std::optional<double> epsilon;
    std::optional<double> mu;
    std::vector<BisectionStep> bisection;
};

nlohmann::json to_json(const SolveReport& report);

struct Solution {
    VideoMatrix estimate;
    SolveReport report;
};

/// Weight above which the Lagrangian minimizer is exactly zero:
/// 2 ||A^T(Y)||_2.
double lambda_zero_threshold(const MeasurementSet& y, const ForwardModel& model);

/// Accelerated proximal gradient with function-value restart. The optional
/// warm start seeds the iterate.
Solution solve_lagrangian(const MeasurementSet& y, const ForwardModel& model,
                          const SolverConfig& config, const Matrix* warm_start = nullptr);

/// Discrepancy-principle search over the Lagrangian weight until the data
/// residual lands in [epsilon, 1.05 epsilon]; the smoothing term enters each
/// subproblem scaled by the weight.
Solution solve_constrained(const MeasurementSet& y, const ForwardModel& model,
                           const SolverConfig& config);

/// Dispatches on config.mode.
Solution solve(const MeasurementSet& y, const ForwardModel& model, const SolverConfig& config);

/// Restriction of a plan / measurement set to frames [first, first + count).
SamplingPlan slice_plan(const SamplingPlan& plan, std::int64_t first, std::int64_t count);
MeasurementSet slice_measurements(const MeasurementSet& y, std::int64_t first, std::int64_t count);

struct BatchedSolution {
    VideoMatrix estimate;
    std::vector<SolveReport> reports;
};

/// Per-batch hook that may rewrite the config (for example to set a weight
/// relative to that batch's data) before it is solved.
using BatchConfigure = std::function<void(SolverConfig&, const MeasurementSet&, const ForwardModel&)>;

/// Splits the video into consecutive batches of batch_frames frames, solves
/// each independently (in parallel up to thread_count) and concatenates.
BatchedSolution solve_in_batches(const MeasurementSet& y, const Psf& psf,
                                 const SolverConfig& config, std::int64_t batch_frames,
                                 int thread_count, const BatchConfigure& configure = {});

}  // namespace nora
