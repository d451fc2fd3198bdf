#ifndef MLSE_CONTAINER_HPP
#define MLSE_CONTAINER_HPP

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <zlib.h>

#include "mlse/errors.hpp"
#include "mlse/tensor.hpp"

namespace mlse {

/**
 * Tagged binary container shared by snapshots ("MLSE") and user models ("MLSV").
 *
 * Layout, little-endian throughout:
 *   4-byte tag, 0x01
 *   u32 format version
 *   u32 length + UTF-8 text block
 *   u32 tensor count
 *   per tensor: u32 length + UTF-8 name, u32 rank, rank x u32 dims, float32 payload
 *   u32 CRC-32 of every preceding byte
 */
inline constexpr std::uint32_t kContainerVersion = 1;

struct Container {
    std::string text;
    std::vector<std::pair<std::string, Tensor<float>>> tensors;
};

namespace io {

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline void put_string(std::vector<std::uint8_t>& out, std::string_view s) {
    put_u32(out, static_cast<std::uint32_t>(s.size()));
    out.insert(out.end(), s.begin(), s.end());
}

inline void put_f32(std::vector<std::uint8_t>& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }

inline std::uint32_t crc32_of(const std::uint8_t* data, std::size_t n) {
    uLong crc = crc32(0L, Z_NULL, 0);
    crc = crc32(crc, data, static_cast<uInt>(n));
    return static_cast<std::uint32_t>(crc);
}

/// Bounds-checked little-endian reader over a byte buffer.
class Reader {
public:
    Reader(const std::vector<std::uint8_t>& buf, std::size_t end) : buf_(buf), end_(end) {}

    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf_[pos_ + i]) << (8 * i);
        pos_ += 4;
        return v;
    }

    std::string string(const char* what) {
        const std::uint32_t n = u32(what);
        need(n, what);
        std::string s(reinterpret_cast<const char*>(buf_.data() + pos_), n);
        pos_ += n;
        return s;
    }

    float f32(const char* what) { return std::bit_cast<float>(u32(what)); }

    std::size_t pos() const { return pos_; }
    void skip(std::size_t n, const char* what) {
        need(n, what);
        pos_ += n;
    }

private:
    void need(std::size_t n, const char* what) const {
        if (end_ - pos_ < n) {
            throw FormatError(FormatError::Kind::Truncated, std::string("file ends inside ") + what);
        }
    }

    const std::vector<std::uint8_t>& buf_;
    std::size_t end_;
    std::size_t pos_ = 0;
};

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

/// Writes to a sibling temporary file, then renames over the target.
inline void write_file_atomic(const std::filesystem::path& path, const void* data, std::size_t n) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw IoError("cannot write " + tmp.string());
        }
        out.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
        if (!out) {
            throw IoError("write failed for " + tmp.string());
        }
    }
    std::filesystem::rename(tmp, path);
}

inline void write_text_atomic(const std::filesystem::path& path, std::string_view text) {
    write_file_atomic(path, text.data(), text.size());
}

} // namespace io

inline std::vector<std::uint8_t> encode_container(std::string_view tag, const Container& c) {
    if (tag.size() != 4) {
        throw ParameterError("container tag must have 4 bytes");
    }
    std::vector<std::uint8_t> out(tag.begin(), tag.end());
    out.push_back(0x01);
    io::put_u32(out, kContainerVersion);
    io::put_string(out, c.text);
    io::put_u32(out, static_cast<std::uint32_t>(c.tensors.size()));
    for (const auto& [name, t] : c.tensors) {
        io::put_string(out, name);
        io::put_u32(out, static_cast<std::uint32_t>(t.rank()));
        for (auto d : t.shape()) io::put_u32(out, static_cast<std::uint32_t>(d));
        for (float v : t.values()) io::put_f32(out, v);
    }
    io::put_u32(out, io::crc32_of(out.data(), out.size()));
    return out;
}

inline Container decode_container(std::string_view tag, const std::vector<std::uint8_t>& buf) {
    using Kind = FormatError::Kind;
    if (buf.size() < 5) {
        if (buf.size() >= 4 && std::memcmp(buf.data(), tag.data(), 4) != 0) {
            throw FormatError(Kind::BadMagic, "expected '" + std::string(tag) + "'");
        }
        throw FormatError(Kind::Truncated, "file shorter than its magic");
    }
    if (std::memcmp(buf.data(), tag.data(), 4) != 0 || buf[4] != 0x01) {
        throw FormatError(Kind::BadMagic, "expected '" + std::string(tag) + "' + 0x01");
    }
    const std::size_t body_end = buf.size() >= 4 ? buf.size() - 4 : 0;
    io::Reader r(buf, body_end < 5 ? 5 : body_end);
    r.skip(5, "magic");
    const std::uint32_t version = r.u32("version");
    if (version != kContainerVersion) {
        throw FormatError(Kind::UnsupportedVersion, "version " + std::to_string(version) + ", reader supports " +
                                                        std::to_string(kContainerVersion));
    }
    Container c;
    c.text = r.string("text block");
    const std::uint32_t count = r.u32("tensor count");
    for (std::uint32_t i = 0; i < count; ++i) {
        std::string name = r.string("tensor name");
        const std::uint32_t rank = r.u32("tensor rank");
        if (rank == 0 || rank > 8) {
            throw FormatError(Kind::Malformed, "tensor '" + name + "' has rank " + std::to_string(rank));
        }
        Shape shape;
        for (std::uint32_t k = 0; k < rank; ++k) {
            const std::uint32_t d = r.u32("tensor dims");
            if (d == 0) {
                throw FormatError(Kind::Malformed, "tensor '" + name + "' has a zero dimension");
            }
            shape.push_back(d);
        }
        const std::size_t n = shape_size(shape);
        std::vector<float> data;
        data.reserve(n);
        for (std::size_t k = 0; k < n; ++k) data.push_back(r.f32("tensor payload"));
        c.tensors.emplace_back(std::move(name), Tensor<float>(std::move(shape), std::move(data)));
    }
    if (buf.size() < r.pos() + 4) {
        throw FormatError(Kind::Truncated, "missing checksum");
    }
    if (buf.size() > r.pos() + 4) {
        throw FormatError(Kind::Malformed, "trailing bytes after checksum");
    }
    io::Reader tail(buf, buf.size());
    tail.skip(r.pos(), "body");
    const std::uint32_t stored = tail.u32("checksum");
    if (stored != io::crc32_of(buf.data(), r.pos())) {
        throw FormatError(Kind::ChecksumMismatch, "CRC-32 does not match contents");
    }
    return c;
}

inline void save_container(const std::filesystem::path& path, std::string_view tag, const Container& c) {
    const auto bytes = encode_container(tag, c);
    io::write_file_atomic(path, bytes.data(), bytes.size());
}

inline Container load_container(const std::filesystem::path& path, std::string_view tag) {
    return decode_container(tag, io::read_file(path));
}

/// Feature matrix file: "MLSF", u32 rows, u32 cols, row-major float32.
inline void save_feature_matrix(const std::filesystem::path& path, const Tensor<float>& m) {
    if (m.rank() != 2) {
        throw DimensionError("feature matrix must have rank 2");
    }
    std::vector<std::uint8_t> out{'M', 'L', 'S', 'F'};
    io::put_u32(out, static_cast<std::uint32_t>(m.dim(0)));
    io::put_u32(out, static_cast<std::uint32_t>(m.dim(1)));
    for (float v : m.values()) io::put_f32(out, v);
    io::write_file_atomic(path, out.data(), out.size());
}

inline Tensor<float> load_feature_matrix(const std::filesystem::path& path) {
    const auto buf = io::read_file(path);
    if (buf.size() < 4 || std::memcmp(buf.data(), "MLSF", 4) != 0) {
        throw FormatError(FormatError::Kind::BadMagic, "expected 'MLSF'");
    }
    io::Reader r(buf, buf.size());
    r.skip(4, "magic");
    const std::size_t rows = r.u32("rows");
    const std::size_t cols = r.u32("cols");
    if (rows == 0 || cols == 0) {
        throw FormatError(FormatError::Kind::Malformed, "empty feature matrix");
    }
    std::vector<float> data;
    data.reserve(rows * cols);
    for (std::size_t i = 0; i < rows * cols; ++i) data.push_back(r.f32("payload"));
    if (r.pos() != buf.size()) {
        throw FormatError(FormatError::Kind::Malformed, "trailing bytes");
    }
    return Tensor<float>({rows, cols}, std::move(data));
}

} // namespace mlse

#endif // MLSE_CONTAINER_HPP
