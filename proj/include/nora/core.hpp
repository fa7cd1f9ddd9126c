#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace nora {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Raster geometry of one frame. Lines run along the slow-scan axis,
/// pixels along the fast-scan axis.
struct FrameGrid {
    std::int64_t height_lines = 1;
    std::int64_t width_pixels = 1;
    double pixel_pitch_um = 1.0;
    double frame_rate_hz = 30.0;

    std::int64_t pixels() const { return height_lines * width_pixels; }

    /// Throws ConfigError if any field is out of range.
    void validate() const;

    bool operator==(const FrameGrid&) const = default;
};

/// Pixels-by-time matrix. Column t holds frame t vectorized line-major:
/// entry (line, pixel) sits at index line * W + pixel.
class VideoMatrix {
public:
    VideoMatrix() = default;
    VideoMatrix(FrameGrid grid, Matrix data);

    static VideoMatrix zeros(const FrameGrid& grid, std::int64_t frames);

    const FrameGrid& grid() const { return grid_; }
    const Matrix& data() const { return data_; }
    std::int64_t frames() const { return data_.cols(); }

    /// Frame t as an H x W array.
    Matrix frame(std::int64_t t) const;

private:
    FrameGrid grid_;
    Matrix data_;
};

enum class SamplingStrategy : std::uint8_t {
    UniformRandom = 0,
    RotatingEvenlySpaced = 1,
};

std::string_view to_string(SamplingStrategy s);
SamplingStrategy parse_strategy(std::string_view name);

/// Per-frame slow-scan line selections. Each list is sorted ascending and
/// holds lines_per_frame distinct indices in [0, H).
struct SamplingPlan {
    FrameGrid grid;
    std::int64_t frames = 0;
    std::int64_t lines_per_frame = 0;
    std::vector<std::vector<std::int64_t>> line_indices;
    SamplingStrategy strategy = SamplingStrategy::UniformRandom;
    std::uint64_t seed = 0;

    std::int64_t rows_per_frame() const { return lines_per_frame * grid.width_pixels; }

    /// Throws ConfigError when lists are malformed.
    void validate() const;

    bool operator==(const SamplingPlan&) const = default;
};

/// Observed data: column t stacks the W pixels of each sampled line of
/// frame t in ascending line order.
struct MeasurementSet {
    SamplingPlan plan;
    Matrix data;

    std::int64_t total_samples() const { return data.size(); }
};

Vector frame_to_vector(const Matrix& frame, const FrameGrid& grid);
Matrix vector_to_frame(const Eigen::Ref<const Vector>& vec, const FrameGrid& grid);

/// Number of singular values above rel_threshold * sigma_max.
std::int64_t numerical_rank(const Matrix& m, double rel_threshold = 1e-8);

}  // namespace nora
