#include "nora/core.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "nora/errors.hpp"

namespace nora {

void FrameGrid::validate() const {
    if (height_lines < 1 || width_pixels < 1) {
        throw ConfigError("frame grid needs at least one line and one pixel, got " +
                          std::to_string(height_lines) + "x" + std::to_string(width_pixels));
    }
    if (!(pixel_pitch_um > 0.0) || !(frame_rate_hz > 0.0)) {
        throw ConfigError("pixel pitch and frame rate must be positive");
    }
}

VideoMatrix::VideoMatrix(FrameGrid grid, Matrix data) : grid_(grid), data_(std::move(data)) {
    grid_.validate();
    if (data_.rows() != grid_.pixels()) {
        throw ShapeError("video has " + std::to_string(data_.rows()) + " rows, grid needs " +
                         std::to_string(grid_.pixels()));
    }
    if (!data_.allFinite()) {
        throw NumericalError("video contains non-finite entries");
    }
}

VideoMatrix VideoMatrix::zeros(const FrameGrid& grid, std::int64_t frames) {
    return VideoMatrix(grid, Matrix::Zero(grid.pixels(), frames));
}

Matrix VideoMatrix::frame(std::int64_t t) const {
    if (t < 0 || t >= frames()) throw ShapeError("frame index out of range");
    return vector_to_frame(data_.col(t), grid_);
}

std::string_view to_string(SamplingStrategy s) {
    switch (s) {
        case SamplingStrategy::UniformRandom: return "uniform_random";
        case SamplingStrategy::RotatingEvenlySpaced: return "rotating_evenly_spaced";
    }
    return "unknown";
}

SamplingStrategy parse_strategy(std::string_view name) {
    if (name == "uniform_random" || name == "uniform") return SamplingStrategy::UniformRandom;
    if (name == "rotating_evenly_spaced" || name == "rotating") {
        return SamplingStrategy::RotatingEvenlySpaced;
    }
    throw ConfigError("unknown sampling strategy '" + std::string(name) + "'");
}

void SamplingPlan::validate() const {
    grid.validate();
    if (lines_per_frame < 1 || lines_per_frame > grid.height_lines) {
        throw ConfigError("lines per frame must lie in [1, H]");
    }
    if (static_cast<std::int64_t>(line_indices.size()) != frames) {
        throw ConfigError("plan holds " + std::to_string(line_indices.size()) +
                          " line lists for " + std::to_string(frames) + " frames");
    }
    for (const auto& lines : line_indices) {
        if (static_cast<std::int64_t>(lines.size()) != lines_per_frame) {
            throw ConfigError("line list has the wrong length");
        }
        for (std::size_t i = 0; i < lines.size(); ++i) {
            if (lines[i] < 0 || lines[i] >= grid.height_lines) {
                throw ConfigError("line index out of range");
            }
            if (i > 0 && lines[i] <= lines[i - 1]) {
                throw ConfigError("line list must be strictly ascending");
            }
        }
    }
}

Vector frame_to_vector(const Matrix& frame, const FrameGrid& grid) {
    if (frame.rows() != grid.height_lines || frame.cols() != grid.width_pixels) {
        throw ShapeError("frame is " + std::to_string(frame.rows()) + "x" +
                         std::to_string(frame.cols()) + ", grid is " +
                         std::to_string(grid.height_lines) + "x" +
                         std::to_string(grid.width_pixels));
    }
    Vector v(grid.pixels());
    const auto W = grid.width_pixels;
    for (std::int64_t line = 0; line < grid.height_lines; ++line) {
        for (std::int64_t px = 0; px < W; ++px) v(line * W + px) = frame(line, px);
    }
    return v;
}

Matrix vector_to_frame(const Eigen::Ref<const Vector>& vec, const FrameGrid& grid) {
    if (vec.size() != grid.pixels()) {
        throw ShapeError("vector length " + std::to_string(vec.size()) +
                         " does not match grid of " + std::to_string(grid.pixels()) + " pixels");
    }
    Matrix frame(grid.height_lines, grid.width_pixels);
    const auto W = grid.width_pixels;
    for (std::int64_t line = 0; line < grid.height_lines; ++line) {
        for (std::int64_t px = 0; px < W; ++px) frame(line, px) = vec(line * W + px);
    }
    return frame;
}

std::int64_t numerical_rank(const Matrix& m, double rel_threshold) {
    if (m.size() == 0) return 0;
    Eigen::BDCSVD<Matrix> svd(m);
    const Vector& s = svd.singularValues();
    if (s.size() == 0 || s(0) == 0.0) return 0;
    const double cut = rel_threshold * s(0);
    return std::count_if(s.data(), s.data() + s.size(), [cut](double v) { return v > cut; });
}

}  // namespace nora
