#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "nora/errors.hpp"
#include "nora/operators.hpp"
#include "nora/random.hpp"

namespace nora {

namespace {

std::vector<std::int64_t> draw_lines(Rng& rng, std::int64_t height, std::int64_t count) {
    std::vector<std::int64_t> pool(height);
    std::iota(pool.begin(), pool.end(), 0);
    // partial Fisher-Yates
    for (std::int64_t i = 0; i < count; ++i) {
        const auto j = rng.uniform_int(i, height - 1);
        std::swap(pool[i], pool[j]);
    }
    pool.resize(count);
    std::sort(pool.begin(), pool.end());
    return pool;
}

}  // namespace

SamplingPlan generate_plan(const FrameGrid& grid, std::int64_t frames,
                           std::int64_t lines_per_frame, SamplingStrategy strategy,
                           std::uint64_t seed) {
    grid.validate();
    const auto H = grid.height_lines;
    if (lines_per_frame < 1 || lines_per_frame > H) {
        throw ConfigError("lines per frame " + std::to_string(lines_per_frame) +
                          " outside [1, " + std::to_string(H) + "]");
    }
    if (frames < 1) throw ConfigError("plan needs at least one frame");

    SamplingPlan plan;
    plan.grid = grid;
    plan.frames = frames;
    plan.lines_per_frame = lines_per_frame;
    plan.strategy = strategy;
    plan.seed = seed;
    plan.line_indices.reserve(frames);

    if (strategy == SamplingStrategy::UniformRandom) {
        Rng rng(seed);
        for (std::int64_t t = 0; t < frames; ++t) {
            auto lines = draw_lines(rng, H, lines_per_frame);
            // consecutive frames must differ whenever that is possible
            while (lines_per_frame < H && t > 0 && lines == plan.line_indices.back()) {
                lines = draw_lines(rng, H, lines_per_frame);
            }
            plan.line_indices.push_back(std::move(lines));
        }
    } else {
        // Base lines floor(j H / L') spaced by floor or ceil of H / L', all
        // shifted by the same offset cycling through ceil(H / L') values, so
        // every line is visited once per cycle.
        const std::int64_t cycle = (H + lines_per_frame - 1) / lines_per_frame;
        for (std::int64_t t = 0; t < frames; ++t) {
            const std::int64_t offset = t % cycle;
            std::vector<std::int64_t> lines(lines_per_frame);
            for (std::int64_t j = 0; j < lines_per_frame; ++j) {
                lines[j] = (j * H / lines_per_frame + offset) % H;
            }
            std::sort(lines.begin(), lines.end());
            plan.line_indices.push_back(std::move(lines));
        }
    }
    return plan;
}

std::int64_t lines_for_speedup(std::int64_t height_lines, double speedup) {
    if (!(speedup > 0.0)) throw ConfigError("speedup ratio must be positive");
    const auto lines = static_cast<std::int64_t>(std::llround(height_lines / speedup));
    return std::clamp<std::int64_t>(lines, 1, height_lines);
}

}  // namespace nora
