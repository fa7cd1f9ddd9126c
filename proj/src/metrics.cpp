#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "nora/analysis.hpp"
#include "nora/errors.hpp"
#include "nora/random.hpp"

namespace nora {

double psnr(const Matrix& estimate, const Matrix& reference) {
    if (estimate.rows() != reference.rows() || estimate.cols() != reference.cols()) {
        throw ShapeError("PSNR inputs differ in shape");
    }
    if (reference.size() == 0) throw ShapeError("PSNR of empty inputs");
    const double mse = (estimate - reference).squaredNorm() / static_cast<double>(reference.size());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    const double peak = reference.maxCoeff();
    return 10.0 * std::log10(peak * peak / mse);
}

VideoMatrix median_filter_3d(const VideoMatrix& video, std::array<std::int64_t, 3> window) {
    for (auto w : window) {
        if (w < 1 || w % 2 == 0) throw ConfigError("median window sizes must be odd and positive");
    }
    const auto& g = video.grid();
    const auto H = g.height_lines, W = g.width_pixels, T = video.frames();
    const auto rh = window[0] / 2, rw = window[1] / 2, rt = window[2] / 2;
    const Matrix& x = video.data();
    Matrix out(x.rows(), x.cols());
    std::vector<double> buf(static_cast<std::size_t>(window[0] * window[1] * window[2]));
    const auto mid = static_cast<std::ptrdiff_t>(buf.size() / 2);
    for (std::int64_t t = 0; t < T; ++t) {
        for (std::int64_t h = 0; h < H; ++h) {
            for (std::int64_t w = 0; w < W; ++w) {
                std::size_t n = 0;
                for (auto dt = -rt; dt <= rt; ++dt) {
                    const auto tt = std::clamp<std::int64_t>(t + dt, 0, T - 1);
                    for (auto dh = -rh; dh <= rh; ++dh) {
                        const auto hh = std::clamp<std::int64_t>(h + dh, 0, H - 1);
                        for (auto dw = -rw; dw <= rw; ++dw) {
                            const auto ww = std::clamp<std::int64_t>(w + dw, 0, W - 1);
                            buf[n++] = x(hh * W + ww, tt);
                        }
                    }
                }
                std::nth_element(buf.begin(), buf.begin() + mid, buf.end());
                out(h * W + w, t) = buf[mid];
            }
        }
    }
    return VideoMatrix(g, std::move(out));
}

TraceSet make_trace_set(Matrix values, double frame_rate_hz) {
    TraceSet s;
    s.cell_ids.resize(values.rows());
    std::iota(s.cell_ids.begin(), s.cell_ids.end(), 0);
    s.values = std::move(values);
    s.frame_rate_hz = frame_rate_hz;
    return s;
}

TraceSet pals_traces(const VideoMatrix& video, const Scene& scene) {
    if (!(video.grid() == scene.grid)) throw ShapeError("scene grid differs from video grid");
    const Matrix p = scene.profiles();
    Matrix gram = p.transpose() * p;
    bool regularized = false;
    Eigen::ColPivHouseholderQR<Matrix> qr(gram);
    if (qr.rank() < gram.rows()) {
        gram.diagonal().array() += 1e-8 * gram.trace();
        regularized = true;
    }
    const Matrix coeffs = gram.ldlt().solve(p.transpose() * video.data());
    TraceSet out = make_trace_set(coeffs.topRows(scene.cells()), video.grid().frame_rate_hz);
    out.regularized = regularized;
    return out;
}

std::optional<double> pearson(const Eigen::Ref<const Eigen::RowVectorXd>& a,
                              const Eigen::Ref<const Eigen::RowVectorXd>& b) {
    if (a.size() != b.size()) throw ShapeError("correlated traces differ in length");
    if (a.size() < 2) return std::nullopt;
    const Eigen::RowVectorXd ca = a.array() - a.mean();
    const Eigen::RowVectorXd cb = b.array() - b.mean();
    const double na = ca.norm(), nb = cb.norm();
    // relative test so rounding residue of a constant trace counts as constant
    const double tiny = 1e-12 * std::sqrt(static_cast<double>(a.size()));
    if (na <= tiny * std::max(1.0, std::abs(a.mean())) ||
        nb <= tiny * std::max(1.0, std::abs(b.mean()))) {
        return std::nullopt;
    }
    return std::clamp(ca.dot(cb) / (na * nb), -1.0, 1.0);
}

CorrelationSummary trace_correlations(const TraceSet& estimate, const TraceSet& truth, int bins) {
    if (estimate.values.rows() != truth.values.rows() ||
        estimate.values.cols() != truth.values.cols()) {
        throw ShapeError("trace sets differ in shape");
    }
    if (bins < 1) throw ConfigError("histogram needs at least one bin");
    CorrelationSummary s;
    s.histogram.assign(bins, 0);
    for (int i = 0; i <= bins; ++i) s.bin_edges.push_back(-1.0 + 2.0 * i / bins);
    std::vector<double> valid;
    for (Eigen::Index k = 0; k < truth.values.rows(); ++k) {
        auto r = pearson(estimate.values.row(k), truth.values.row(k));
        s.per_cell.push_back(r);
        if (!r) {
            ++s.excluded;
            continue;
        }
        valid.push_back(*r);
        const int bin = std::min(bins - 1, static_cast<int>(std::floor((*r + 1.0) / 2.0 * bins)));
        ++s.histogram[bin];
    }
    if (!valid.empty()) {
        s.mean = std::accumulate(valid.begin(), valid.end(), 0.0) / static_cast<double>(valid.size());
        std::sort(valid.begin(), valid.end());
        const auto n = valid.size();
        s.median = n % 2 ? valid[n / 2] : 0.5 * (valid[n / 2 - 1] + valid[n / 2]);
    } else {
        s.mean = s.median = std::numeric_limits<double>::quiet_NaN();
    }
    return s;
}

TheoremBounds theorem_bounds(double pixels, double frames, double samples, double rank,
                             double mu_b2, double eps_noise, double beta, double c) {
    if (!(pixels > 0.0 && frames > 0.0 && samples > 0.0 && rank > 0.0)) {
        throw ConfigError("theorem bounds need positive N, T, M and R");
    }
    if (samples > pixels * frames) throw ConfigError("sample count exceeds N T");
    if (eps_noise < 0.0 || mu_b2 < 0.0) throw ConfigError("noise level and coherence must be nonnegative");
    const double nt = pixels * frames;
    const double log_nt = std::log(nt);
    TheoremBounds b;
    b.sample_requirement = c * beta * rank * (frames * mu_b2 + pixels) * log_nt * log_nt;
    b.error_bound = 4.0 * std::sqrt(std::min(frames, pixels) * (2.0 * nt + samples) / samples) * eps_noise;
    return b;
}

nlohmann::json to_json(const MetricsReport& r) {
    auto opt = [](const std::optional<double>& v) -> nlohmann::json {
        return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
    };
    nlohmann::json cells = nlohmann::json::array();
    for (const auto& c : r.per_cell_correlation) cells.push_back(opt(c));
    nlohmann::json j;
    j["psnr_db"] = std::isinf(r.psnr_db) ? nlohmann::json("inf") : nlohmann::json(r.psnr_db);
    j["per_cell_correlation"] = cells;
    j["mean_correlation"] = opt(r.mean_correlation);
    j["median_correlation"] = opt(r.median_correlation);
    j["excluded_cells"] = r.excluded_cells;
    j["correlation_histogram"] = r.correlation_histogram;
    j["mu_b2"] = r.mu_b2;
    j["mu_b2_unit_energy"] = r.mu_b2_unit_energy;
    j["eta"] = r.eta;
    j["theorem_error_bound"] = r.theorem_error_bound;
    j["theorem_error_bound_lines"] = r.theorem_error_bound_lines;
    j["measured_error"] = r.measured_error;
    j["relative_error"] = r.relative_error;
    j["noise_level"] = r.noise_level;
    j["noise_level_interpretation"] = "per-entry noise standard deviation";
    j["samples_pixels"] = r.samples_pixels;
    j["samples_lines"] = r.samples_lines;
    return j;
}

Matrix random_low_rank(std::int64_t rows, std::int64_t cols, std::int64_t rank, std::uint64_t seed) {
    if (rank < 1 || rank > std::min(rows, cols)) throw ConfigError("rank out of range");
    Rng rng(seed);
    Matrix u(rows, rank), v(cols, rank);
    for (Eigen::Index i = 0; i < u.size(); ++i) u.data()[i] = rng.normal();
    for (Eigen::Index i = 0; i < v.size(); ++i) v.data()[i] = rng.normal();
    return u * v.transpose();
}

}  // namespace nora
