#include "nora/container.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include <zlib.h>

#include "nora/errors.hpp"
#include "nora/operators.hpp"

namespace nora {

namespace fs = std::filesystem;

namespace {

constexpr std::array<char, 4> kMagic = {'N', 'O', 'R', 'A'};
constexpr std::size_t kHeaderBytes = 8 + 8 * 8;

class ByteWriter {
public:
    void raw(const void* p, std::size_t n) {
        const auto* b = static_cast<const char*>(p);
        out_.append(b, n);
    }
    void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
    void u16(std::uint16_t v) { le(v, 2); }
    void u32(std::uint32_t v) { le(v, 4); }
    void u64(std::uint64_t v) { le(v, 8); }
    void i64(std::int64_t v) { le(static_cast<std::uint64_t>(v), 8); }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }

    std::string& str() { return out_; }

private:
    void le(std::uint64_t v, int bytes) {
        for (int i = 0; i < bytes; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xffU));
    }
    std::string out_;
};

class ByteReader {
public:
    ByteReader(const std::string& data, std::size_t pos) : data_(data), pos_(pos) {}

    std::uint8_t u8() { return static_cast<std::uint8_t>(le(1)); }
    std::uint16_t u16() { return static_cast<std::uint16_t>(le(2)); }
    std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
    std::uint64_t u64() { return le(8); }
    std::int64_t i64() { return static_cast<std::int64_t>(le(8)); }
    double f64() { return std::bit_cast<double>(le(8)); }
    float f32() { return std::bit_cast<float>(static_cast<std::uint32_t>(le(4))); }

private:
    std::uint64_t le(int bytes) {
        if (pos_ + bytes > data_.size()) throw FormatError("container truncated");
        std::uint64_t v = 0;
        for (int i = 0; i < bytes; ++i) {
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
        }
        pos_ += bytes;
        return v;
    }
    const std::string& data_;
    std::size_t pos_;
};

std::uint32_t crc32_of(const char* p, std::size_t n) {
    uLong crc = crc32(0L, Z_NULL, 0);
    // zlib takes uInt lengths
    while (n > 0) {
        const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
        crc = crc32(crc, reinterpret_cast<const Bytef*>(p), chunk);
        p += chunk;
        n -= chunk;
    }
    return static_cast<std::uint32_t>(crc);
}

void write_header(ByteWriter& w, const ContainerHeader& h) {
    w.raw(kMagic.data(), kMagic.size());
    w.u8(kContainerVersion);
    w.u8(static_cast<std::uint8_t>(h.kind));
    w.u16(0);
    w.i64(h.height);
    w.i64(h.width);
    w.i64(h.frames);
    w.i64(h.lines_per_frame);
    w.i64(h.strategy);
    w.u64(h.seed);
    w.f64(h.frame_rate_hz);
    w.f64(h.pixel_pitch_um);
}

ContainerHeader header_for(const FrameGrid& g, ContainerKind kind, std::int64_t frames) {
    ContainerHeader h;
    h.kind = kind;
    h.height = g.height_lines;
    h.width = g.width_pixels;
    h.frames = frames;
    h.frame_rate_hz = g.frame_rate_hz;
    h.pixel_pitch_um = g.pixel_pitch_um;
    return h;
}

void check_finite(const Matrix& m) {
    if (!m.allFinite()) throw NumericalError("refusing to write non-finite data");
}

void write_with_payload(const fs::path& path, const ContainerHeader& header, const Matrix& payload) {
    check_finite(payload);
    ByteWriter w;
    w.str().reserve(kHeaderBytes + 4 * payload.size() + 4);
    write_header(w, header);
    const std::size_t start = w.str().size();
    for (Eigen::Index i = 0; i < payload.size(); ++i) w.f32(static_cast<float>(payload.data()[i]));
    const auto crc = crc32_of(w.str().data() + start, w.str().size() - start);
    w.u32(crc);
    write_file_atomic(path, w.str());
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
    std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError("read failure on '" + path.string() + "'");
    return data;
}

std::int64_t payload_rows(const ContainerHeader& h) {
    switch (h.kind) {
        case ContainerKind::Video: return h.height * h.width;
        case ContainerKind::Measurements: return h.lines_per_frame * h.width;
        case ContainerKind::Plan: return h.lines_per_frame;
    }
    throw FormatError("unknown container kind");
}

struct Parsed {
    ContainerHeader header;
    Matrix payload;
};

ContainerHeader parse_header(const std::string& data, const fs::path& path) {
    if (data.size() < kHeaderBytes + 4 || std::memcmp(data.data(), kMagic.data(), 4) != 0) {
        throw FormatError("'" + path.string() + "' is not a NORA container (bad magic)");
    }
    ByteReader r(data, 4);
    if (const auto version = r.u8(); version != kContainerVersion) {
        throw FormatError("unsupported container version " + std::to_string(version));
    }
    const auto kind = r.u8();
    if (kind < 1 || kind > 3) throw FormatError("unknown container kind " + std::to_string(kind));
    r.u16();
    ContainerHeader h;
    h.kind = static_cast<ContainerKind>(kind);
    h.height = r.i64();
    h.width = r.i64();
    h.frames = r.i64();
    h.lines_per_frame = r.i64();
    h.strategy = r.i64();
    h.seed = r.u64();
    h.frame_rate_hz = r.f64();
    h.pixel_pitch_um = r.f64();
    if (h.height < 1 || h.width < 1 || h.frames < 0 || h.lines_per_frame < 0 ||
        h.lines_per_frame > h.height) {
        throw FormatError("container header holds invalid dimensions");
    }
    if (h.strategy < 0 || h.strategy > 1) throw FormatError("unknown sampling strategy code");
    return h;
}

Parsed parse(const fs::path& path) {
    const std::string data = slurp(path);
    Parsed p;
    p.header = parse_header(data, path);
    const auto rows = payload_rows(p.header);
    const auto count = static_cast<std::size_t>(rows * p.header.frames);
    if (data.size() != kHeaderBytes + 4 * count + 4) {
        throw FormatError("container size does not match its header");
    }
    ByteReader r(data, kHeaderBytes);
    p.payload.resize(rows, p.header.frames);
    for (std::size_t i = 0; i < count; ++i) p.payload.data()[i] = r.f32();
    if (r.u32() != crc32_of(data.data() + kHeaderBytes, 4 * count)) {
        throw FormatError("payload checksum mismatch in '" + path.string() + "'");
    }
    return p;
}

SamplingPlan plan_from_header(const ContainerHeader& h) {
    return generate_plan(h.grid(), h.frames, h.lines_per_frame,
                         static_cast<SamplingStrategy>(h.strategy), h.seed);
}

}  // namespace

FrameGrid ContainerHeader::grid() const {
    return FrameGrid{height, width, pixel_pitch_um, frame_rate_hz};
}

void write_file_atomic(const fs::path& path, const std::string& bytes) {
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open '" + tmp.string() + "' for writing");
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        out.flush();
        if (!out) throw IoError("write failure on '" + tmp.string() + "'");
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) throw IoError("cannot rename '" + tmp.string() + "': " + ec.message());
}

void write_container(const fs::path& path, const VideoMatrix& video) {
    write_with_payload(path, header_for(video.grid(), ContainerKind::Video, video.frames()),
                       video.data());
}

void write_container(const fs::path& path, const MeasurementSet& m) {
    auto h = header_for(m.plan.grid, ContainerKind::Measurements, m.plan.frames);
    h.lines_per_frame = m.plan.lines_per_frame;
    h.strategy = static_cast<std::int64_t>(m.plan.strategy);
    h.seed = m.plan.seed;
    if (m.data.rows() != m.plan.rows_per_frame() || m.data.cols() != m.plan.frames) {
        throw ShapeError("measurement data does not match its plan");
    }
    write_with_payload(path, h, m.data);
}

void write_container(const fs::path& path, const SamplingPlan& plan) {
    plan.validate();
    auto h = header_for(plan.grid, ContainerKind::Plan, plan.frames);
    h.lines_per_frame = plan.lines_per_frame;
    h.strategy = static_cast<std::int64_t>(plan.strategy);
    h.seed = plan.seed;
    Matrix lines(plan.lines_per_frame, plan.frames);
    for (std::int64_t t = 0; t < plan.frames; ++t) {
        for (std::int64_t j = 0; j < plan.lines_per_frame; ++j) {
            lines(j, t) = static_cast<double>(plan.line_indices[t][j]);
        }
    }
    write_with_payload(path, h, lines);
}

ContainerHeader read_container_header(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
    std::string data(kHeaderBytes + 4, '\0');
    in.read(data.data(), static_cast<std::streamsize>(data.size()));
    data.resize(static_cast<std::size_t>(in.gcount()));
    return parse_header(data, path);
}

ContainerObject read_container(const fs::path& path) {
    Parsed p = parse(path);
    const auto& h = p.header;
    switch (h.kind) {
        case ContainerKind::Video:
            return VideoMatrix(h.grid(), std::move(p.payload));
        case ContainerKind::Measurements:
            return MeasurementSet{plan_from_header(h), std::move(p.payload)};
        case ContainerKind::Plan: {
            SamplingPlan plan;
            plan.grid = h.grid();
            plan.frames = h.frames;
            plan.lines_per_frame = h.lines_per_frame;
            plan.strategy = static_cast<SamplingStrategy>(h.strategy);
            plan.seed = h.seed;
            plan.line_indices.assign(h.frames, std::vector<std::int64_t>(h.lines_per_frame));
            for (std::int64_t t = 0; t < h.frames; ++t) {
                for (std::int64_t j = 0; j < h.lines_per_frame; ++j) {
                    plan.line_indices[t][j] = static_cast<std::int64_t>(p.payload(j, t));
                }
            }
            try {
                plan.validate();
            } catch (const ConfigError& e) {
                throw FormatError(std::string("plan container is malformed: ") + e.what());
            }
            return plan;
        }
    }
    throw FormatError("unknown container kind");
}

namespace {

template <typename T>
T read_as(const fs::path& path, const char* what) {
    auto obj = read_container(path);
    if (auto* v = std::get_if<T>(&obj)) return std::move(*v);
    throw FormatError("'" + path.string() + "' does not hold " + what);
}

}  // namespace

VideoMatrix read_video(const fs::path& path) { return read_as<VideoMatrix>(path, "a video"); }

MeasurementSet read_measurements(const fs::path& path) {
    return read_as<MeasurementSet>(path, "measurements");
}

SamplingPlan read_plan(const fs::path& path) { return read_as<SamplingPlan>(path, "a plan"); }

std::vector<std::uint8_t> read_container_payload(const fs::path& path) {
    const std::string data = slurp(path);
    parse_header(data, path);
    return {data.begin() + kHeaderBytes, data.end() - 4};
}

}  // namespace nora
