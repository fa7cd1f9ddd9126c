#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "nora/errors.hpp"
#include "nora/operators.hpp"
#include "nora/random.hpp"
#include "nora/solver.hpp"
#include "test_support.hpp"

using namespace nora;
using testing::random_matrix;

namespace {

// Soft-thresholding through Jacobi SVD, independent of the BDC path used
// in production.
Matrix svt_oracle(const Matrix& m, double tau) {
    Eigen::JacobiSVD<Matrix> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
    Vector s = svd.singularValues();
    for (Eigen::Index i = 0; i < s.size(); ++i) s(i) = std::max(s(i) - tau, 0.0);
    return svd.matrixU() * s.asDiagonal() * svd.matrixV().transpose();
}

double nuclear_norm(const Matrix& m) { return Eigen::JacobiSVD<Matrix>(m).singularValues().sum(); }

Matrix rank_one(std::int64_t n, std::int64_t t, Rng& rng) {
    Vector u = random_matrix(n, 1, rng), v = random_matrix(t, 1, rng);
    u.normalize();
    v.normalize();
    return u * v.transpose();
}

SolverConfig lagrangian(double lambda, int iters = 500, double tol = 1e-4) {
    SolverConfig c;
    c.mode = LagrangianMode{lambda};
    c.max_iters = iters;
    c.rel_tol = tol;
    return c;
}

double objective(const ForwardModel& model, const Matrix& y, const Matrix& x, double lambda) {
    return (model.apply(x) - y).squaredNorm() + lambda * nuclear_norm(x);
}

}  // namespace

TEST_CASE("svt on a diagonal matrix") {
    Matrix m = Matrix::Zero(3, 3);
    m.diagonal() << 3.0, 1.0, 0.5;
    Matrix expected = Matrix::Zero(3, 3);
    expected(0, 0) = 2.0;
    CHECK((svt(m, 1.0) - expected).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("svt with zero threshold is the identity") {
    Rng rng(1);
    const Matrix m = random_matrix(9, 6, rng);
    CHECK((svt(m, 0.0) - m).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("svt matches the Jacobi SVD oracle") {
    Rng rng(2);
    const Matrix m = random_matrix(20, 12, rng);
    CHECK((svt(m, 0.7) - svt_oracle(m, 0.7)).cwiseAbs().maxCoeff() <= 1e-8);
    const Matrix wide = random_matrix(7, 15, rng);
    CHECK((svt(wide, 1.3) - svt_oracle(wide, 1.3)).cwiseAbs().maxCoeff() <= 1e-8);
    CHECK_THROWS_AS(svt(m, -1.0), ConfigError);
}

TEST_CASE("svt is nonexpansive") {
    Rng rng(3);
    for (int trial = 0; trial < 30; ++trial) {
        const Matrix a = random_matrix(10, 8, rng), b = a + 0.3 * random_matrix(10, 8, rng);
        const double tau = rng.uniform(0.0, 2.0);
        CHECK((svt(a, tau) - svt(b, tau)).norm() <= (a - b).norm() + 1e-12);
    }
}

TEST_CASE("svt minimizes the nuclear-norm proximal objective") {
    Rng rng(4);
    const Matrix m = random_matrix(8, 6, rng);
    const double tau = 0.9;
    const Matrix p = svt(m, tau);
    auto f = [&](const Matrix& x) { return tau * nuclear_norm(x) + 0.5 * (x - m).squaredNorm(); };
    const double best = f(p);
    for (int trial = 0; trial < 20; ++trial) CHECK(f(p + 1e-3 * random_matrix(8, 6, rng)) >= best - 1e-12);
}

TEST_CASE("full SVD fixes signs deterministically") {
    Rng rng(5);
    const Matrix m = random_matrix(12, 5, rng);
    const Svd a = full_svd(m), b = full_svd(-m);
    for (Eigen::Index j = 0; j < a.u.cols(); ++j) {
        Eigen::Index arg;
        a.u.col(j).cwiseAbs().maxCoeff(&arg);
        CHECK(a.u(arg, j) > 0.0);
        CHECK((a.u.col(j) - b.u.col(j)).norm() < 1e-10);
        CHECK((a.v.col(j) + b.v.col(j)).norm() < 1e-10);
    }
    CHECK_THROWS_AS(full_svd(Matrix::Constant(2, 2, std::nan(""))), NumericalError);
}

TEST_CASE("partial SVD of an exact low-rank matrix") {
    Rng rng(6);
    const Matrix m = random_matrix(200, 3, rng) * random_matrix(3, 80, rng);
    const Svd s = partial_svd(m, 8, 1);
    REQUIRE(s.s.size() == 8);
    for (int i = 3; i < 8; ++i) CHECK(s.s(i) <= 1e-10 * s.s(0));
    const Svd full = full_svd(m);
    for (int i = 0; i < 3; ++i) CHECK(s.s(i) == doctest::Approx(full.s(i)).epsilon(1e-12));
    CHECK((s.u.leftCols(3) * s.s.head(3).asDiagonal() * s.v.leftCols(3).transpose() - m).norm() <=
          1e-10 * m.norm());
}

TEST_CASE("partial SVD falls back to the full decomposition on small inputs") {
    Rng rng(7);
    const Matrix m = random_matrix(30, 20, rng);
    const Svd p = partial_svd(m, 20, 3);
    const Svd f = full_svd(m);
    CHECK((p.s - f.s).cwiseAbs().maxCoeff() <= 1e-8);
    CHECK((p.u - f.u).cwiseAbs().maxCoeff() <= 1e-8);

    const Svd id = partial_svd(Matrix::Identity(16, 16), 4, 0);
    REQUIRE(id.s.size() == 4);
    CHECK((id.s.array() - 1.0).abs().maxCoeff() < 1e-14);
    CHECK_THROWS_AS(partial_svd(m, 0, 0), ConfigError);
    CHECK_THROWS_AS(partial_svd(m, 21, 0), ConfigError);
}

TEST_CASE("partial SVD top triplets on a decaying spectrum") {
    Rng rng(8);
    const Matrix q1 = Eigen::HouseholderQR<Matrix>(random_matrix(150, 100, rng)).householderQ() *
                      Matrix::Identity(150, 100);
    const Matrix q2 = Eigen::HouseholderQR<Matrix>(random_matrix(100, 100, rng)).householderQ();
    Vector s(100);
    for (int i = 0; i < 100; ++i) s(i) = std::pow(0.5, i);
    const Matrix m = q1 * s.asDiagonal() * q2.transpose();
    const Svd p = partial_svd(m, 5, 9);
    for (int i = 0; i < 5; ++i) CHECK(p.s(i) == doctest::Approx(s(i)).epsilon(1e-6));
}

TEST_CASE("noiseless rank-1 recovery with full sampling") {
    Rng rng(10);
    const FrameGrid grid{16, 16};
    const Matrix x = rank_one(256, 32, rng);
    const auto plan = generate_plan(grid, 32, 16, SamplingStrategy::UniformRandom, 1);
    const ForwardModel model(Psf::delta(), plan);
    const MeasurementSet y{plan, model.apply(x)};
    const Solution s = solve_lagrangian(y, model, lagrangian(1e-6 * 1.0, 500, 1e-10));
    CHECK((s.estimate.data() - x).norm() / x.norm() <= 1e-3);
    CHECK(s.report.solution_rank == 1);
}

TEST_CASE("the zero-solution threshold on lambda") {
    Rng rng(11);
    const FrameGrid grid{8, 8};
    const auto plan = generate_plan(grid, 12, 3, SamplingStrategy::UniformRandom, 2);
    const ForwardModel model(make_gaussian_psf_px(0.5, 1.0), plan);
    const MeasurementSet y{plan, random_matrix(model.rows_per_frame(), 12, rng)};
    const double kill = lambda_zero_threshold(y, model);

    CHECK(solve_lagrangian(y, model, lagrangian(1.001 * kill)).estimate.data().isZero(0.0));
    CHECK(solve_lagrangian(y, model, lagrangian(kill * (1.0 + 1e-9))).estimate.data().isZero(0.0));
    CHECK_FALSE(solve_lagrangian(y, model, lagrangian(0.98 * kill)).estimate.data().isZero(0.0));

    // empirical threshold by bisection on "solution is zero"
    double lo = 0.1 * kill, hi = 10.0 * kill;
    for (int i = 0; i < 30; ++i) {
        const double mid = std::sqrt(lo * hi);
        const bool zero = solve_lagrangian(y, model, lagrangian(mid, 2000, 1e-9)).estimate.data().isZero(0.0);
        (zero ? hi : lo) = mid;
    }
    CHECK(hi == doctest::Approx(kill).epsilon(1e-3));
}

TEST_CASE("zero measurements give a zero estimate after one iteration") {
    const FrameGrid grid{8, 8};
    const auto plan = generate_plan(grid, 6, 2, SamplingStrategy::UniformRandom, 3);
    const ForwardModel model(make_gaussian_psf_px(0.5, 1.0), plan);
    const MeasurementSet y{plan, Matrix::Zero(16, 6)};
    const Solution s = solve_lagrangian(y, model, lagrangian(0.1));
    CHECK(s.estimate.data().isZero(0.0));
    CHECK(s.report.iterations_run == 1);
    CHECK(s.report.converged);
    CHECK(s.report.solution_rank == 0);
}

TEST_CASE("objective trace is monotone up to restart blips") {
    Rng rng(12);
    const FrameGrid grid{12, 12};
    const Matrix x = random_matrix(144, 2, rng) * random_matrix(2, 24, rng);
    const auto plan = generate_plan(grid, 24, 5, SamplingStrategy::UniformRandom, 4);
    const ForwardModel model(make_gaussian_psf_px(0.5, 1.0), plan);
    const MeasurementSet y{plan, model.apply(x)};
    const Solution s = solve_lagrangian(y, model, lagrangian(0.01 * lambda_zero_threshold(y, model), 300, 1e-8));
    const auto& obj = s.report.objective_per_iter;
    REQUIRE(obj.size() > 2);
    for (std::size_t k = 1; k < obj.size(); ++k) CHECK(obj[k] <= obj[k - 1] * 1.01);
    CHECK(obj.back() < obj.front());
}

TEST_CASE("returned estimate is a local minimum of the convex objective") {
    Rng rng(13);
    const FrameGrid grid{10, 10};
    const Matrix x = random_matrix(100, 2, rng) * random_matrix(2, 16, rng);
    const auto plan = generate_plan(grid, 16, 4, SamplingStrategy::UniformRandom, 5);
    const ForwardModel model(make_gaussian_psf_px(0.5, 0.8), plan);
    const MeasurementSet y{plan, model.apply(x) + 0.05 * random_matrix(40, 16, rng)};
    const double lambda = 0.05 * lambda_zero_threshold(y, model);
    const Solution s = solve_lagrangian(y, model, lagrangian(lambda, 5000, 1e-12));
    const Matrix& xh = s.estimate.data();
    const double best = objective(model, y.data, xh, lambda);
    CHECK(s.report.objective_per_iter.back() == doctest::Approx(best).epsilon(1e-10));
    for (int trial = 0; trial < 20; ++trial) {
        Matrix d = random_matrix(100, 16, rng);
        d *= 1e-3 * xh.norm() / d.norm();
        CHECK(objective(model, y.data, xh + d, lambda) >= best - 1e-9 * best);
    }
}

TEST_CASE("rank cap bounds the solution rank; uncapped small runs match") {
    Rng rng(14);
    const FrameGrid grid{12, 12};
    const Matrix x = random_matrix(144, 6, rng) * random_matrix(6, 20, rng);
    const auto plan = generate_plan(grid, 20, 6, SamplingStrategy::UniformRandom, 6);
    const ForwardModel model(Psf::delta(), plan);
    const MeasurementSet y{plan, model.apply(x)};
    SolverConfig cfg = lagrangian(1e-3 * lambda_zero_threshold(y, model), 200);
    const Solution plain = solve_lagrangian(y, model, cfg);
    cfg.svd_rank_cap = 3;
    const Solution capped = solve_lagrangian(y, model, cfg);
    CHECK(capped.report.solution_rank <= 3);
    CHECK(plain.report.solution_rank > 3);
    // min dimension <= 64 means the capped path uses the full SVD; a cap at
    // the full size must reproduce the uncapped run exactly
    cfg.svd_rank_cap = 20;
    const Solution full_cap = solve_lagrangian(y, model, cfg);
    CHECK(full_cap.estimate.data() == plain.estimate.data());
}

TEST_CASE("vanishing lambda reproduces full-plan data exactly") {
    Rng rng(15);
    const FrameGrid grid{8, 8};
    const auto plan = generate_plan(grid, 10, 8, SamplingStrategy::UniformRandom, 7);
    const ForwardModel model(Psf::delta(), plan);
    const MeasurementSet y{plan, random_matrix(64, 10, rng)};
    double prev = std::numeric_limits<double>::infinity();
    for (double rel : {1e-2, 1e-4, 1e-6}) {
        const Solution s =
            solve_lagrangian(y, model, lagrangian(rel * lambda_zero_threshold(y, model), 2000, 1e-12));
        CHECK(s.report.final_data_residual < prev);
        prev = s.report.final_data_residual;
    }
    CHECK(prev <= 1e-5 * y.data.norm());
}

TEST_CASE("continuation reaches the same minimizer") {
    Rng rng(16);
    const FrameGrid grid{10, 10};
    const Matrix x = random_matrix(100, 2, rng) * random_matrix(2, 20, rng);
    const auto plan = generate_plan(grid, 20, 4, SamplingStrategy::UniformRandom, 8);
    const ForwardModel model(make_gaussian_psf_px(0.5, 0.8), plan);
    const MeasurementSet y{plan, model.apply(x)};
    SolverConfig cfg = lagrangian(1e-2 * lambda_zero_threshold(y, model), 5000, 1e-11);
    const Solution a = solve_lagrangian(y, model, cfg);
    cfg.continuation = true;
    const Solution b = solve_lagrangian(y, model, cfg);
    CHECK((a.estimate.data() - b.estimate.data()).norm() <= 1e-5 * a.estimate.data().norm());
}

TEST_CASE("constrained mode: loose epsilon admits the zero solution") {
    Rng rng(17);
    const FrameGrid grid{8, 8};
    const auto plan = generate_plan(grid, 6, 2, SamplingStrategy::UniformRandom, 9);
    const ForwardModel model(Psf::delta(), plan);
    const MeasurementSet y{plan, random_matrix(16, 6, rng)};
    SolverConfig cfg;
    cfg.mode = ConstrainedMode{2.0 * y.data.norm(), 0.1};
    const Solution s = solve_constrained(y, model, cfg);
    CHECK(s.estimate.data().isZero(0.0));
    CHECK(s.report.final_data_residual == doctest::Approx(y.data.norm()));
}

TEST_CASE("constrained mode: noiseless rank-2 recovery and Lagrangian consistency") {
    Rng rng(18);
    const FrameGrid grid{16, 16};
    const Matrix x = random_matrix(256, 2, rng) * random_matrix(2, 32, rng);
    const auto plan = generate_plan(grid, 32, 8, SamplingStrategy::UniformRandom, 10);
    const ForwardModel model(Psf::delta(), plan);
    const MeasurementSet y{plan, model.apply(x)};

    SolverConfig cfg;
    cfg.mode = ConstrainedMode{1e-6 * y.data.norm(), 0.0};
    cfg.max_iters = 3000;
    cfg.rel_tol = 1e-12;
    const Solution s = solve_constrained(y, model, cfg);
    CHECK((s.estimate.data() - x).norm() / x.norm() <= 1e-2);
    CHECK(s.report.final_data_residual >= 1e-6 * y.data.norm());
    CHECK(s.report.final_data_residual <= 1.05e-6 * y.data.norm());

    // residual grows with lambda along the search trace
    auto trace = s.report.bisection;
    std::sort(trace.begin(), trace.end(), [](auto& a, auto& b) { return a.lambda < b.lambda; });
    for (std::size_t i = 1; i < trace.size(); ++i) {
        CHECK(trace[i].residual >= trace[i - 1].residual * (1.0 - 1e-6));
    }

    SolverConfig lag = cfg;
    lag.mode = LagrangianMode{s.report.lambda};
    lag.max_iters = 20000;
    const Solution direct = solve_lagrangian(y, model, lag);
    CHECK((direct.estimate.data() - s.estimate.data()).norm() <= 1e-6 * x.norm());
}

TEST_CASE("constrained mode with smoothing and continuation satisfies the constraint") {
    Rng rng(19);
    const FrameGrid grid{12, 12};
    const Matrix x = random_matrix(144, 2, rng) * random_matrix(2, 20, rng);
    const auto plan = generate_plan(grid, 20, 6, SamplingStrategy::UniformRandom, 11);
    const ForwardModel model(make_gaussian_psf_px(0.5, 0.8), plan);
    const Matrix noise = 0.1 * random_matrix(model.rows_per_frame(), 20, rng);
    const MeasurementSet y{plan, model.apply(x) + noise};
    SolverConfig cfg;
    cfg.mode = ConstrainedMode{noise.norm(), 0.1};
    cfg.continuation = true;
    cfg.max_iters = 1000;
    cfg.rel_tol = 1e-7;
    const Solution s = solve_constrained(y, model, cfg);
    CHECK(s.report.final_data_residual >= noise.norm());
    CHECK(s.report.final_data_residual <= 1.05 * noise.norm());
    CHECK(s.report.mu.value() == 0.1);
    cfg.continuation = false;
    const Solution plain = solve_constrained(y, model, cfg);
    CHECK(plain.report.final_data_residual >= noise.norm());
    CHECK(plain.report.final_data_residual <= 1.05 * noise.norm());
}

TEST_CASE("constrained mode reports infeasible epsilon") {
    Rng rng(20);
    const FrameGrid grid{8, 4};
    const auto plan = generate_plan(grid, 4, 8, SamplingStrategy::UniformRandom, 12);
    Psf psf;
    psf.kernel = (Matrix(3, 1) << 0.25, 0.5, 0.25).finished();  // zero symbol at Nyquist
    const ForwardModel model(psf, plan);
    Matrix y = Matrix::Zero(32, 4);
    for (int h = 0; h < 8; ++h) {
        for (int w = 0; w < 4; ++w) y(h * 4 + w, 0) = (h % 2 == 0) ? 1.0 : -1.0;
    }
    SolverConfig cfg;
    cfg.mode = ConstrainedMode{1e-3, 0.0};
    cfg.max_iters = 200;
    CHECK_THROWS_AS(solve_constrained(MeasurementSet{plan, y}, model, cfg), NumericalError);
    // with a reachable component the weight search runs down to its floor
    y += 0.1 * random_matrix(32, 4, rng);
    CHECK_THROWS_AS(solve_constrained(MeasurementSet{plan, y}, model, cfg), NumericalError);
}

TEST_CASE("solver rejects bad input") {
    const FrameGrid grid{8, 8};
    const auto plan = generate_plan(grid, 4, 2, SamplingStrategy::UniformRandom, 13);
    const ForwardModel model(Psf::delta(), plan);
    Matrix y = Matrix::Ones(16, 4);
    y(0, 0) = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(solve_lagrangian(MeasurementSet{plan, y}, model, lagrangian(1.0)), NumericalError);
    CHECK_THROWS_AS(solve_lagrangian(MeasurementSet{plan, Matrix::Ones(16, 4)}, model, lagrangian(-1.0)),
                    ConfigError);
    SolverConfig constrained;
    constrained.mode = ConstrainedMode{1.0, 0.1};
    CHECK_THROWS_AS(solve_lagrangian(MeasurementSet{plan, Matrix::Ones(16, 4)}, model, constrained),
                    ConfigError);
}

TEST_CASE("batched solve equals independent per-batch solves") {
    Rng rng(21);
    const FrameGrid grid{8, 8};
    const auto plan = generate_plan(grid, 10, 4, SamplingStrategy::UniformRandom, 14);
    const Psf psf = make_gaussian_psf_px(0.5, 0.8);
    const ForwardModel model(psf, plan);
    const Matrix x = random_matrix(64, 2, rng) * random_matrix(2, 10, rng);
    const MeasurementSet y{plan, model.apply(x)};
    SolverConfig cfg = lagrangian(0.01, 100);
    cfg.seed = 5;
    const BatchedSolution batched = solve_in_batches(y, psf, cfg, 4, 2);
    REQUIRE(batched.reports.size() == 3);
    CHECK(batched.estimate.frames() == 10);
    for (int b = 0; b < 3; ++b) {
        const auto first = 4 * b, count = std::min(4, 10 - first);
        const MeasurementSet part = slice_measurements(y, first, count);
        SolverConfig c = cfg;
        c.seed = derive_seed(cfg.seed, {static_cast<std::uint64_t>(b)});
        const Solution s = solve(part, ForwardModel(psf, part.plan), c);
        CHECK(batched.estimate.data().middleCols(first, count) == s.estimate.data());
    }
}

TEST_CASE("report serializes every field") {
    SolveReport r;
    r.iterations_run = 3;
    r.objective_per_iter = {3.0, 2.0, 1.0};
    r.final_data_residual = 0.5;
    r.solution_rank = 2;
    r.converged = true;
    r.epsilon = 1.5;
    r.bisection.push_back({0.1, 0.2, 7});
    const auto j = to_json(r);
    CHECK(j["iterations_run"] == 3);
    CHECK(j["objective_per_iter"].size() == 3);
    CHECK(j["final_data_residual"] == 0.5);
    CHECK(j.contains("final_nuclear_norm"));
    CHECK(j["solution_rank"] == 2);
    CHECK(j["converged"] == true);
    CHECK(j["epsilon"] == 1.5);
    CHECK(j["bisection"][0]["iterations"] == 7);
}
