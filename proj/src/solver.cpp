#include "nora/solver.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <string>

#include "nora/errors.hpp"
#include "nora/parallel.hpp"
#include "nora/random.hpp"

namespace nora {

namespace {

constexpr double kBisectionSlack = 0.05;
constexpr int kMaxBisectionSteps = 40;
constexpr int kMaxContinuationRounds = 8;
constexpr double kRankThreshold = 1e-8;
constexpr double kHomotopyStart = 0.5;
constexpr double kHomotopyDecay = 0.8;

struct ProxOutput {
    Matrix x;
    double nuclear = 0.0;
    std::int64_t rank = 0;
};

// argmin_X  tau ||X||_* + (1/2) ||X - v||_F^2, optionally on a capped SVD.
ProxOutput nuclear_prox(const Matrix& v, double tau, const std::optional<std::int64_t>& cap,
                        std::uint64_t seed) {
    const auto min_dim = std::min(v.rows(), v.cols());
    const Svd svd = cap && *cap < min_dim ? partial_svd(v, *cap, seed) : full_svd(v);
    const Vector shrunk = (svd.s.array() - tau).max(0.0).matrix();
    ProxOutput out;
    out.nuclear = shrunk.sum();
    const double cut = shrunk.size() > 0 ? kRankThreshold * shrunk(0) : 0.0;
    out.rank = std::count_if(shrunk.data(), shrunk.data() + shrunk.size(),
                             [cut](double s) { return s > cut && s > 0.0; });
    const auto r = out.rank;
    out.x = svd.u.leftCols(r) * shrunk.head(r).asDiagonal() * svd.v.leftCols(r).transpose();
    return out;
}

struct Subproblem {
    double lambda = 0.0;
    /// Smoothing weight relative to lambda; the penalty is lambda mu / 2 ||X - X0||^2.
    double mu = 0.0;
    const Matrix* center = nullptr;
    const Matrix* init = nullptr;
    bool homotopy = false;
    double lambda_zero = 0.0;
};

double objective(double residual_sq, double nuclear, const Subproblem& p, const Matrix& x) {
    double obj = residual_sq + p.lambda * nuclear;
    if (p.mu > 0.0) {
        const double dist = p.center ? (x - *p.center).squaredNorm() : x.squaredNorm();
        obj += 0.5 * p.lambda * p.mu * dist;
    }
    return obj;
}

Solution run_fista(const Matrix& y, const ForwardModel& model, const SolverConfig& cfg,
                   const Subproblem& p, double norm_sq) {
    const auto N = model.grid().pixels();
    const auto T = model.frames();

    SolveReport report;
    report.lambda = p.lambda;
    report.operator_norm_sq = norm_sq;
    if (!(norm_sq > 0.0)) throw NumericalError("forward operator is identically zero");
    const double step = cfg.step_scale / (2.0 * norm_sq);
    report.step = step;

    Matrix x = p.init ? *p.init : Matrix::Zero(N, T);
    Matrix z = x;
    double theta = 1.0;
    double prev_obj = std::numeric_limits<double>::infinity();
    double lambda_cur = p.lambda;
    if (p.homotopy) lambda_cur = std::max(p.lambda, kHomotopyStart * p.lambda_zero);

    ProxOutput last;
    double last_residual_sq = 0.0;
    for (int k = 0; k < cfg.max_iters; ++k) {
        const Matrix grad = 2.0 * model.adjoint(model.apply(z) - y);
        Matrix v = z - step * grad;
        const double smooth = step * lambda_cur * p.mu;
        if (smooth > 0.0) {
            if (p.center) v += smooth * *p.center;
            v /= 1.0 + smooth;
        }
        const double tau = step * lambda_cur / (1.0 + smooth);
        ProxOutput next = nuclear_prox(v, tau, cfg.svd_rank_cap, derive_seed(cfg.seed, {static_cast<std::uint64_t>(k)}));

        const double residual_sq = (model.apply(next.x) - y).squaredNorm();
        const double obj = objective(residual_sq, next.nuclear, p, next.x);
        if (!std::isfinite(obj)) {
            std::ostringstream msg;
            msg << "objective became non-finite at iteration " << k + 1 << " (step " << step
                << ", lambda " << lambda_cur << ")";
            throw NumericalError(msg.str());
        }

        const double change = (next.x - x).norm();
        const double scale = next.x.norm();
        const bool at_target = lambda_cur == p.lambda;

        if (obj > prev_obj && at_target) {
            // function-value restart
            theta = 1.0;
            z = next.x;
        } else {
            const double theta_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * theta * theta));
            z = next.x + ((theta - 1.0) / theta_next) * (next.x - x);
            theta = theta_next;
        }
        x = std::move(next.x);
        last = std::move(next);
        last_residual_sq = residual_sq;
        report.objective_per_iter.push_back(obj);
        report.iterations_run = k + 1;
        prev_obj = obj;

        if (at_target && (change == 0.0 || (scale > 0.0 && change / scale < cfg.rel_tol))) {
            report.converged = true;
            break;
        }
        if (p.homotopy && !at_target) lambda_cur = std::max(p.lambda, lambda_cur * kHomotopyDecay);
    }

    report.final_data_residual = std::sqrt(last_residual_sq);
    report.final_nuclear_norm = last.nuclear;
    report.solution_rank = last.rank;
    return Solution{VideoMatrix(model.grid(), std::move(x)), std::move(report)};
}

void check_consistent(const MeasurementSet& y, const ForwardModel& model) {
    if (!(y.plan == model.plan())) throw ShapeError("measurements were taken with another plan");
    if (y.data.rows() != model.rows_per_frame() || y.data.cols() != model.frames()) {
        throw ShapeError("measurement matrix does not match the forward model");
    }
}

double spectral_norm(const Matrix& m) {
    if (m.size() == 0) return 0.0;
    return full_svd(m).s(0);
}

}  // namespace

void SolverConfig::validate() const {
    if (max_iters < 1) throw ConfigError("max_iters must be at least 1");
    if (!(rel_tol > 0.0 && rel_tol < 1.0)) throw ConfigError("rel_tol must lie in (0, 1)");
    if (!(step_scale > 0.0 && step_scale <= 1.0)) throw ConfigError("step_scale must lie in (0, 1]");
    if (svd_rank_cap && *svd_rank_cap < 1) throw ConfigError("svd rank cap must be positive");
    if (norm_iterations < 1) throw ConfigError("norm_iterations must be at least 1");
    if (const auto* l = std::get_if<LagrangianMode>(&mode)) {
        if (!(l->lambda > 0.0)) throw ConfigError("lambda must be positive");
    } else {
        const auto& c = std::get<ConstrainedMode>(mode);
        if (!(c.epsilon > 0.0)) throw ConfigError("epsilon must be positive");
        if (!(c.mu >= 0.0)) throw ConfigError("mu must be nonnegative");
    }
}

nlohmann::json to_json(const SolveReport& r) {
    nlohmann::json j;
    j["iterations_run"] = r.iterations_run;
    j["objective_per_iter"] = r.objective_per_iter;
    j["final_data_residual"] = r.final_data_residual;
    j["final_nuclear_norm"] = r.final_nuclear_norm;
    j["solution_rank"] = r.solution_rank;
    j["converged"] = r.converged;
    j["lambda"] = r.lambda;
    j["step"] = r.step;
    j["operator_norm_sq"] = r.operator_norm_sq;
    if (r.epsilon) j["epsilon"] = *r.epsilon;
    if (r.mu) j["mu"] = *r.mu;
    if (!r.bisection.empty()) {
        auto& trace = j["bisection"] = nlohmann::json::array();
        for (const auto& b : r.bisection) {
            trace.push_back({{"lambda", b.lambda}, {"residual", b.residual}, {"iterations", b.iterations}});
        }
    }
    return j;
}

double lambda_zero_threshold(const MeasurementSet& y, const ForwardModel& model) {
    check_consistent(y, model);
    return 2.0 * spectral_norm(model.adjoint(y.data));
}

Solution solve_lagrangian(const MeasurementSet& y, const ForwardModel& model,
                          const SolverConfig& config, const Matrix* warm_start) {
    config.validate();
    const auto* mode = std::get_if<LagrangianMode>(&config.mode);
    if (!mode) throw ConfigError("solve_lagrangian needs a Lagrangian-mode config");
    check_consistent(y, model);
    if (warm_start && (warm_start->rows() != model.grid().pixels() ||
                       warm_start->cols() != model.frames())) {
        throw ShapeError("warm start has the wrong shape");
    }

    Subproblem p;
    p.lambda = mode->lambda;
    p.init = warm_start;
    if (config.continuation) {
        p.homotopy = true;
        p.lambda_zero = lambda_zero_threshold(y, model);
    }
    const double norm_sq = estimate_operator_norm(model, config.norm_iterations, config.seed);
    return run_fista(y.data, model, config, p, norm_sq);
}

Solution solve_constrained(const MeasurementSet& y, const ForwardModel& model,
                           const SolverConfig& config) {
    config.validate();
    const auto* mode = std::get_if<ConstrainedMode>(&config.mode);
    if (!mode) throw ConfigError("solve_constrained needs a constrained-mode config");
    check_consistent(y, model);

    const double eps = mode->epsilon;
    const double upper = (1.0 + kBisectionSlack) * eps;
    const double y_norm = y.data.norm();

    auto zero_solution = [&] {
        SolveReport r;
        r.converged = true;
        r.final_data_residual = y_norm;
        r.epsilon = eps;
        r.mu = mode->mu;
        return Solution{VideoMatrix::zeros(model.grid(), model.frames()), std::move(r)};
    };
    // zero is feasible, and it has the smallest possible nuclear norm
    if (y_norm <= upper) return zero_solution();

    const double norm_sq = estimate_operator_norm(model, config.norm_iterations, config.seed);
    const double lambda_hi_start = lambda_zero_threshold(y, model);
    if (!(lambda_hi_start > 0.0)) {
        // A^T Y = 0: zero is optimal for every lambda, and it violates the constraint
        throw NumericalError("epsilon " + std::to_string(eps) +
                             " is infeasible: the measurements are orthogonal to the range of the "
                             "forward operator (residual " + std::to_string(y_norm) + ")");
    }

    SolverConfig inner = config;
    inner.continuation = false;

    std::vector<BisectionStep> trace;
    std::optional<Solution> nearest;

    auto solve_at = [&](double lambda) {
        Subproblem p;
        p.lambda = lambda;
        p.mu = mode->mu;
        p.init = nearest ? &nearest->estimate.data() : nullptr;
        Solution s = run_fista(y.data, model, inner, p, norm_sq);
        if (config.continuation && mode->mu > 0.0) {
            for (int round = 0; round < kMaxContinuationRounds; ++round) {
                const Matrix center = s.estimate.data();
                p.center = &center;
                p.init = &center;
                Solution again = run_fista(y.data, model, inner, p, norm_sq);
                const double moved = (again.estimate.data() - center).norm();
                const int total = s.report.iterations_run + again.report.iterations_run;
                s = std::move(again);
                s.report.iterations_run = total;
                if (moved <= config.rel_tol * std::max(center.norm(), 1e-300)) break;
            }
        }
        trace.push_back({lambda, s.report.final_data_residual, s.report.iterations_run});
        nearest = s;
        return s;
    };

    auto finish = [&](Solution s) {
        s.report.epsilon = eps;
        s.report.mu = mode->mu;
        s.report.bisection = trace;
        return s;
    };

    auto trace_text = [&] {
        std::ostringstream out;
        for (const auto& b : trace) out << "\n  lambda=" << b.lambda << " residual=" << b.residual;
        return out.str();
    };

    // find a weight small enough to satisfy the constraint
    double lo = 1e-3 * lambda_hi_start;
    Solution at_lo = solve_at(lo);
    while (at_lo.report.final_data_residual > upper) {
        lo *= 0.1;
        if (lo < 1e-9 * lambda_hi_start) {
            throw NumericalError("epsilon " + std::to_string(eps) +
                                 " is infeasible: residual stays above it as lambda -> 0" +
                                 trace_text());
        }
        at_lo = solve_at(lo);
    }
    if (at_lo.report.final_data_residual >= eps) return finish(std::move(at_lo));

    double hi = lambda_hi_start;
    for (int step = 0; step < kMaxBisectionSteps; ++step) {
        const double mid = std::sqrt(lo * hi);
        Solution s = solve_at(mid);
        const double r = s.report.final_data_residual;
        if (r < eps) {
            lo = mid;
        } else if (r > upper) {
            hi = mid;
        } else {
            return finish(std::move(s));
        }
    }
    throw NumericalError("bisection on lambda did not bracket the residual window [" +
                         std::to_string(eps) + ", " + std::to_string(upper) + "]" + trace_text());
}

Solution solve(const MeasurementSet& y, const ForwardModel& model, const SolverConfig& config) {
    if (std::holds_alternative<LagrangianMode>(config.mode)) return solve_lagrangian(y, model, config);
    return solve_constrained(y, model, config);
}

SamplingPlan slice_plan(const SamplingPlan& plan, std::int64_t first, std::int64_t count) {
    if (first < 0 || count < 1 || first + count > plan.frames) {
        throw ShapeError("frame slice out of range");
    }
    SamplingPlan out = plan;
    out.frames = count;
    out.line_indices.assign(plan.line_indices.begin() + first,
                            plan.line_indices.begin() + first + count);
    return out;
}

MeasurementSet slice_measurements(const MeasurementSet& y, std::int64_t first, std::int64_t count) {
    return MeasurementSet{slice_plan(y.plan, first, count), y.data.middleCols(first, count)};
}

BatchedSolution solve_in_batches(const MeasurementSet& y, const Psf& psf,
                                 const SolverConfig& config, std::int64_t batch_frames,
                                 int thread_count, const BatchConfigure& configure) {
    if (batch_frames < 1) throw ConfigError("batch size must be at least one frame");
    const auto T = y.plan.frames;
    const auto batches = (T + batch_frames - 1) / batch_frames;
    std::vector<std::optional<Solution>> parts(batches);
    parallel_for(batches, thread_count, [&](std::int64_t b) {
        const auto first = b * batch_frames;
        const auto count = std::min(batch_frames, T - first);
        const MeasurementSet part = slice_measurements(y, first, count);
        const ForwardModel model(psf, part.plan);
        SolverConfig cfg = config;
        cfg.seed = derive_seed(config.seed, {static_cast<std::uint64_t>(b)});
        if (configure) configure(cfg, part, model);
        parts[b] = solve(part, model, cfg);
    });

    Matrix x(y.plan.grid.pixels(), T);
    BatchedSolution out;
    for (std::int64_t b = 0; b < batches; ++b) {
        x.middleCols(b * batch_frames, parts[b]->estimate.frames()) = parts[b]->estimate.data();
        out.reports.push_back(std::move(parts[b]->report));
    }
    out.estimate = VideoMatrix(y.plan.grid, std::move(x));
    return out;
}

}  // namespace nora
