#include <doctest.h>

#include <cmath>
#include <complex>
#include <numbers>
#include <set>

#include "nora/errors.hpp"
#include "nora/operators.hpp"
#include "nora/random.hpp"
#include "test_support.hpp"

using namespace nora;
using testing::random_matrix;

namespace {

Psf column_kernel(std::initializer_list<double> taps) {
    Psf psf;
    psf.kernel.resize(static_cast<Eigen::Index>(taps.size()), 1);
    Eigen::Index i = 0;
    for (double t : taps) psf.kernel(i++, 0) = t;
    psf.eta = psf.kernel.squaredNorm();
    return psf;
}

double rel_diff(const Matrix& a, const Matrix& b) {
    const double scale = std::max(a.norm(), b.norm());
    return scale == 0.0 ? 0.0 : (a - b).norm() / scale;
}

}  // namespace

TEST_CASE("FWHM to sigma conversion") {
    // 2 sqrt(2 ln 2) evaluated independently
    const double factor = 2.0 * std::sqrt(2.0 * 0.69314718055994530942);
    CHECK(fwhm_to_sigma(3.35) == doctest::Approx(3.35 / factor).epsilon(1e-14));
    CHECK(fwhm_to_sigma(3.35) == doctest::Approx(1.4227).epsilon(1e-3));

    const Psf psf = make_gaussian_psf(1.15, 3.35, 1.0);
    CHECK(psf.sigma_slow_px == doctest::Approx(3.35 / factor));
    CHECK(psf.sigma_fast_px == doctest::Approx(1.15 / factor));

    const Psf unit = make_gaussian_psf(0.5 * factor, 0.5 * factor, 0.5);
    CHECK(unit.sigma_fast_px == doctest::Approx(1.0));
    CHECK(unit.sigma_slow_px == doctest::Approx(1.0));
}

TEST_CASE("Gaussian kernel shape and normalization") {
    const Psf psf = make_gaussian_psf_px(0.6, 1.5);
    CHECK(psf.kernel.rows() == 2 * 6 + 1);  // ceil(4 * 1.5) = 6
    CHECK(psf.kernel.cols() == 2 * 3 + 1);  // ceil(4 * 0.6) = 3
    CHECK(psf.kernel.sum() == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(psf.kernel.minCoeff() >= 0.0);
    CHECK(psf.eta == doctest::Approx(psf.kernel.squaredNorm()));
    CHECK(psf.eta > 0.0);
    const Matrix rotated = psf.kernel.reverse();
    CHECK((rotated - psf.kernel).cwiseAbs().maxCoeff() < 1e-15);
    // elongated along the slow axis
    CHECK(psf.kernel.col(psf.center_fast()).sum() > psf.kernel.row(psf.center_slow()).sum());
}

TEST_CASE("degenerate widths give a delta kernel") {
    const Psf psf = make_gaussian_psf(1e-9, 1e-9, 1.0);
    CHECK(psf.kernel.rows() == 1);
    CHECK(psf.kernel.cols() == 1);
    CHECK(psf.kernel(0, 0) == 1.0);
    CHECK(make_gaussian_psf_px(0.0, 0.0).is_delta());
}

TEST_CASE("blur with delta kernel is the identity") {
    Rng rng(1);
    const Matrix f = random_matrix(7, 9, rng);
    CHECK(blur_frame(f, Psf::delta()) == f);
    CHECK(correlate_frame(f, Psf::delta()) == f);
}

TEST_CASE("blur preserves constant frames for unit-sum kernels") {
    const Psf psf = make_gaussian_psf_px(0.8, 1.5);
    const Matrix out = blur_frame(Matrix::Constant(16, 12, 2.5), psf);
    CHECK((out.array() - 2.5).abs().maxCoeff() < 1e-13);
}

TEST_CASE("blur of a point source is the kernel centered there") {
    const FrameGrid grid{12, 10};
    const Psf psf = make_gaussian_psf_px(0.7, 1.2);
    Matrix f = Matrix::Zero(12, 10);
    f(1, 8) = 1.0;  // near a corner, so the kernel wraps
    const Matrix out = blur_frame(f, psf);
    const Matrix oracle =
        testing::dense_blur_matrix(grid, psf) * frame_to_vector(f, grid);
    CHECK((frame_to_vector(out, grid) - oracle).cwiseAbs().maxCoeff() < 1e-15);
    CHECK(out(1, 8) == doctest::Approx(psf.kernel(psf.center_slow(), psf.center_fast())));
    // the tap one line above the center, wrapped around the bottom edge
    CHECK(out(0, 8) == doctest::Approx(psf.kernel(psf.center_slow() - 1, psf.center_fast())));
    CHECK(out(11, 8) == doctest::Approx(psf.kernel(psf.center_slow() - 2, psf.center_fast())));
}

TEST_CASE("blur commutes with circular shifts") {
    Rng rng(2);
    const Psf psf = make_gaussian_psf_px(0.9, 1.7);
    for (int trial = 0; trial < 10; ++trial) {
        const Matrix f = random_matrix(16, 13, rng);
        const auto ds = rng.uniform_int(-20, 20), df = rng.uniform_int(-20, 20);
        auto shift = [&](const Matrix& m) {
            Matrix out(m.rows(), m.cols());
            for (Eigen::Index h = 0; h < m.rows(); ++h) {
                for (Eigen::Index w = 0; w < m.cols(); ++w) {
                    out(h, w) = m(((h - ds) % m.rows() + m.rows()) % m.rows(),
                                  ((w - df) % m.cols() + m.cols()) % m.cols());
                }
            }
            return out;
        };
        CHECK((blur_frame(shift(f), psf) - shift(blur_frame(f, psf))).cwiseAbs().maxCoeff() < 1e-13);
    }
}

TEST_CASE("rotating plan follows the evenly spaced formula") {
    const FrameGrid grid{8, 4};
    const auto plan = generate_plan(grid, 6, 2, SamplingStrategy::RotatingEvenlySpaced, 0);
    CHECK(plan.line_indices[0] == std::vector<std::int64_t>{0, 4});
    CHECK(plan.line_indices[1] == std::vector<std::int64_t>{1, 5});
    CHECK(plan.line_indices[3] == std::vector<std::int64_t>{3, 7});
    CHECK(plan.line_indices[4] == std::vector<std::int64_t>{0, 4});
    std::set<std::int64_t> seen;
    for (int t = 0; t < 4; ++t) seen.insert(plan.line_indices[t].begin(), plan.line_indices[t].end());
    CHECK(seen.size() == 8);
}

TEST_CASE("rotating plans cover every line within ceil(H / L') frames") {
    for (std::int64_t H : {5, 8, 17, 32, 33}) {
        for (std::int64_t L = 1; L <= H; ++L) {
            const std::int64_t cycle = (H + L - 1) / L;
            const auto plan =
                generate_plan(FrameGrid{H, 2}, 2 * cycle, L, SamplingStrategy::RotatingEvenlySpaced, 0);
            CHECK_NOTHROW(plan.validate());
            for (std::int64_t start : {std::int64_t{0}, cycle / 2}) {
                std::set<std::int64_t> seen;
                for (std::int64_t t = start; t < start + cycle; ++t) {
                    seen.insert(plan.line_indices[t].begin(), plan.line_indices[t].end());
                }
                CHECK(static_cast<std::int64_t>(seen.size()) == H);
            }
            if (L < H) CHECK(plan.line_indices[0] != plan.line_indices[1]);
        }
    }
}

TEST_CASE("uniform random plans are deterministic and vary by frame") {
    const FrameGrid grid{32, 4};
    const auto a = generate_plan(grid, 50, 3, SamplingStrategy::UniformRandom, 42);
    const auto b = generate_plan(grid, 50, 3, SamplingStrategy::UniformRandom, 42);
    const auto c = generate_plan(grid, 50, 3, SamplingStrategy::UniformRandom, 43);
    CHECK(a == b);
    CHECK(a.line_indices != c.line_indices);
    CHECK_NOTHROW(a.validate());
    for (std::size_t t = 1; t < a.line_indices.size(); ++t) CHECK(a.line_indices[t] != a.line_indices[t - 1]);

    const auto tiny = generate_plan(FrameGrid{2, 1}, 40, 1, SamplingStrategy::UniformRandom, 1);
    for (std::size_t t = 1; t < tiny.line_indices.size(); ++t) {
        CHECK(tiny.line_indices[t] != tiny.line_indices[t - 1]);
    }
}

TEST_CASE("plan generation rejects out-of-range line counts") {
    CHECK_THROWS_AS(generate_plan(FrameGrid{8, 8}, 4, 0, SamplingStrategy::UniformRandom, 0), ConfigError);
    CHECK_THROWS_AS(generate_plan(FrameGrid{8, 8}, 4, 9, SamplingStrategy::UniformRandom, 0), ConfigError);
}

TEST_CASE("speedup ratio maps to line counts") {
    CHECK(lines_for_speedup(320, 10.0) == 32);
    CHECK(lines_for_speedup(32, 10.0) == 3);
    CHECK(lines_for_speedup(32, 20.0) == 2);
    CHECK(lines_for_speedup(8, 100.0) == 1);
}

TEST_CASE("kernels wider than the frame wrap around") {
    Rng rng(9);
    const FrameGrid grid{8, 6};
    const auto plan = generate_plan(grid, 3, 3, SamplingStrategy::UniformRandom, 0);
    const ForwardModel model(make_gaussian_psf_px(0.5, 3.0), plan);
    REQUIRE(model.psf().kernel.rows() > grid.height_lines);
    const Matrix x = random_matrix(grid.pixels(), 3, rng);
    const Vector dense = testing::dense_forward(model) * testing::vec(x);
    CHECK((testing::vec(model.apply(x)) - dense).norm() <= 1e-12 * dense.norm());
    CHECK_THROWS_AS(ForwardModel(Psf{Matrix::Ones(2, 1)}, plan), ConfigError);
}

TEST_CASE("full plan with delta PSF returns the video rows") {
    Rng rng(4);
    const FrameGrid grid{6, 5};
    const auto plan = generate_plan(grid, 3, 6, SamplingStrategy::UniformRandom, 0);
    const ForwardModel model(Psf::delta(), plan);
    const VideoMatrix x(grid, random_matrix(grid.pixels(), 3, rng));
    const MeasurementSet y = forward_apply(x, model);
    CHECK(y.data == x.data());

    const Matrix ata = model.adjoint(model.apply(x.data()));
    CHECK(ata == x.data());
}

TEST_CASE("zero in, zero out") {
    const FrameGrid grid{8, 8};
    const auto plan = generate_plan(grid, 4, 3, SamplingStrategy::UniformRandom, 1);
    const ForwardModel model(make_gaussian_psf_px(0.5, 1.0), plan);
    CHECK(model.apply(Matrix::Zero(64, 4)).isZero(0.0));
    CHECK(model.adjoint(Matrix::Zero(24, 4)).isZero(0.0));
}

TEST_CASE("forward operator matches the dense oracle") {
    Rng rng(5);
    SUBCASE("8x8x4, L'=2, 3x1 kernel") {
        const FrameGrid grid{8, 8};
        const auto plan = generate_plan(grid, 4, 2, SamplingStrategy::UniformRandom, 11);
        const ForwardModel model(column_kernel({0.25, 0.5, 0.25}), plan);
        const Matrix a = testing::dense_forward(model);
        for (int trial = 0; trial < 5; ++trial) {
            const Matrix x = random_matrix(64, 4, rng);
            const Matrix y = model.apply(x);
            CHECK(rel_diff(testing::vec(y), a * testing::vec(x)) <= 1e-12);
        }
    }
    SUBCASE("asymmetric kernel catches flipped indexing") {
        const FrameGrid grid{6, 7};
        const auto plan = generate_plan(grid, 3, 4, SamplingStrategy::UniformRandom, 12);
        Psf psf;
        psf.kernel = random_matrix(3, 5, rng).cwiseAbs();
        const ForwardModel model(psf, plan);
        const Matrix x = random_matrix(42, 3, rng);
        CHECK(rel_diff(testing::vec(model.apply(x)), testing::dense_forward(model) * testing::vec(x)) <= 1e-12);
    }
}

TEST_CASE("forward operator is linear") {
    Rng rng(6);
    const FrameGrid grid{12, 9};
    const auto plan = generate_plan(grid, 5, 4, SamplingStrategy::UniformRandom, 3);
    const ForwardModel model(make_gaussian_psf_px(0.7, 1.3), plan);
    for (int trial = 0; trial < 10; ++trial) {
        const Matrix x1 = random_matrix(108, 5, rng), x2 = random_matrix(108, 5, rng);
        const double a = rng.normal(), b = rng.normal();
        const Matrix lhs = model.apply(a * x1 + b * x2);
        const Matrix rhs = a * model.apply(x1) + b * model.apply(x2);
        CHECK(rel_diff(lhs, rhs) <= 1e-12);
    }
}

TEST_CASE("adjoint identity on random pairs") {
    Rng rng(7);
    const FrameGrid grid{16, 16};
    for (int trial = 0; trial < 50; ++trial) {
        const auto L = rng.uniform_int(1, 16);
        const auto plan = generate_plan(grid, 8, L, SamplingStrategy::UniformRandom, trial);
        const ForwardModel model(make_gaussian_psf_px(rng.uniform(0.0, 1.0), rng.uniform(0.3, 1.8)), plan);
        const VideoMatrix x(grid, random_matrix(256, 8, rng));
        const MeasurementSet y{plan, random_matrix(model.rows_per_frame(), 8, rng)};
        const double lhs = (forward_apply(x, model).data.array() * y.data.array()).sum();
        const double rhs = (x.data().array() * adjoint_apply(y, model).data().array()).sum();
        CHECK(std::abs(lhs - rhs) <= 1e-10 * std::max(std::abs(lhs), std::abs(rhs)));
    }
}

TEST_CASE("wrappers check metadata") {
    const FrameGrid grid{8, 8};
    const auto plan = generate_plan(grid, 4, 2, SamplingStrategy::UniformRandom, 0);
    const auto other = generate_plan(grid, 4, 2, SamplingStrategy::UniformRandom, 1);
    const ForwardModel model(Psf::delta(), plan);
    CHECK_THROWS_AS(forward_apply(VideoMatrix::zeros(grid, 5), model), ShapeError);
    CHECK_THROWS_AS(forward_apply(VideoMatrix::zeros(FrameGrid{8, 4}, 4), model), ShapeError);
    CHECK_THROWS_AS(adjoint_apply(MeasurementSet{other, Matrix::Zero(16, 4)}, model), ShapeError);
}

TEST_CASE("operator norm of an orthonormal-row operator is one") {
    const FrameGrid grid{8, 8};
    const auto plan = generate_plan(grid, 4, 8, SamplingStrategy::UniformRandom, 0);
    const ForwardModel model(Psf::delta(), plan);
    CHECK(estimate_operator_norm(model, 5, 1) == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("operator norm of full-plan blur equals the peak Fourier symbol") {
    const FrameGrid grid{16, 8};
    const auto plan = generate_plan(grid, 3, 16, SamplingStrategy::UniformRandom, 0);
    const Psf psf = column_kernel({0.2, 0.5, 0.3});
    const ForwardModel model(psf, plan);
    // A^T A = B^T B is circulant; its eigenvalues are |DFT of the taps|^2.
    double peak = 0.0;
    for (int p = 0; p < grid.height_lines; ++p) {
        std::complex<double> symbol = 0.0;
        for (int i = 0; i < 3; ++i) {
            const double angle = -2.0 * std::numbers::pi * p * (i - 1) / grid.height_lines;
            symbol += psf.kernel(i, 0) * std::polar(1.0, angle);
        }
        peak = std::max(peak, std::norm(symbol));
    }
    CHECK(estimate_operator_norm(model, 200, 3) == doctest::Approx(peak).epsilon(1e-6));
}

TEST_CASE("operator norm estimate never exceeds the dense SVD norm and grows with iterations") {
    const FrameGrid grid{8, 8};
    for (int trial = 0; trial < 6; ++trial) {
        const auto plan = generate_plan(grid, 4, 1 + trial % 4, SamplingStrategy::UniformRandom, trial);
        const ForwardModel model(make_gaussian_psf_px(0.5 + 0.1 * trial, 1.0 + 0.2 * trial), plan);
        const Matrix a = testing::dense_forward(model);
        Eigen::BDCSVD<Matrix> svd(a);
        const double exact = svd.singularValues()(0) * svd.singularValues()(0);
        double prev = 0.0;
        for (int iters : {1, 2, 5, 10, 40, 150}) {
            const double est = estimate_operator_norm(model, iters, 17);
            CHECK(est <= exact + 1e-8);
            CHECK(est >= prev - 1e-12);
            prev = est;
        }
        CHECK(prev == doctest::Approx(exact).epsilon(1e-4));
    }
}
