#pragma once

#include <cstdint>
#include <filesystem>
#include <variant>

#include "nora/core.hpp"

namespace nora {

/// Binary container layout (all little-endian):
///
///   "NORA"  u8 version  u8 kind  u16 reserved
///   i64 H  i64 W  i64 T  i64 L'  i64 strategy  u64 seed  f64 frame_rate  f64 pixel_pitch
///   f32 payload[...]     column-major over time
///   u32 CRC32(payload bytes)
///
/// kind 1 = video (N x T), 2 = measurements (L'W x T), 3 = plan (L' x T line
/// indices). Video files store L' = 0 and strategy = 0. Measurement files do
/// not store line lists; the plan is regenerated from (strategy, seed).
enum class ContainerKind : std::uint8_t { Video = 1, Measurements = 2, Plan = 3 };

inline constexpr std::uint8_t kContainerVersion = 1;

struct ContainerHeader {
    ContainerKind kind = ContainerKind::Video;
    std::int64_t height = 0;
    std::int64_t width = 0;
    std::int64_t frames = 0;
    std::int64_t lines_per_frame = 0;
    std::int64_t strategy = 0;
    std::uint64_t seed = 0;
    double frame_rate_hz = 0.0;
    double pixel_pitch_um = 0.0;

    FrameGrid grid() const;
};

using ContainerObject = std::variant<VideoMatrix, MeasurementSet, SamplingPlan>;

void write_container(const std::filesystem::path& path, const VideoMatrix& video);
void write_container(const std::filesystem::path& path, const MeasurementSet& measurements);
void write_container(const std::filesystem::path& path, const SamplingPlan& plan);

ContainerObject read_container(const std::filesystem::path& path);
ContainerHeader read_container_header(const std::filesystem::path& path);

/// Typed readers; throw FormatError when the file holds another kind.
VideoMatrix read_video(const std::filesystem::path& path);
MeasurementSet read_measurements(const std::filesystem::path& path);
SamplingPlan read_plan(const std::filesystem::path& path);

/// Payload bytes of a container file (everything between header and CRC).
std::vector<std::uint8_t> read_container_payload(const std::filesystem::path& path);

/// Writes bytes to path via a sibling temporary file and an atomic rename.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);

}  // namespace nora
