#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "gnaq/errors.hpp"
#include "gnaq/fp8.hpp"
#include "gnaq/matrix.hpp"
#include "gnaq/quantizer.hpp"

namespace gnaq {

// Binary model container. Layout (all integers little-endian):
//   offset 0   magic "GNAQ"
//   offset 4   u16 version (1)
//   offset 6   u16 flags: 0 = full precision, 1 = quantized
//   offset 8   u32 N (node count)
//   offset 12  u32 d (embedding dimension)
//   offset 16  u32 n (bit width; 0 in full-precision files)
//   offset 20  payload
// Full-precision payload: N*d fp32, row-major.
// Quantized payload, per node: ceil(d*n/8) packed code bytes, 2^n FP8 scale
// bytes, fp32 range_lo, fp32 range_hi.

inline constexpr char MODEL_MAGIC[4] = {'G', 'N', 'A', 'Q'};
inline constexpr std::uint16_t MODEL_VERSION = 1;
inline constexpr std::uint16_t MODEL_FLAG_FP = 0;
inline constexpr std::uint16_t MODEL_FLAG_QUANT = 1;
inline constexpr std::size_t MODEL_HEADER_BYTES = 20;

inline std::size_t packed_row_bytes(std::size_t d, std::size_t n_bits) {
    return (d * n_bits + 7) / 8;
}

// Payload sizes (headers excluded); the compression ratio compares these.
inline std::size_t fp_payload_bytes(std::size_t n_nodes, std::size_t d) {
    return n_nodes * d * 4;
}
inline std::size_t quant_payload_bytes(std::size_t n_nodes, std::size_t d,
                                       std::size_t n_bits) {
    return n_nodes * (packed_row_bytes(d, n_bits) + (std::size_t{1} << n_bits) + 8);
}

// Packs one row of codes, little-endian within the bitstream: the first code
// occupies the lowest bits of the first byte. Rows pad to a byte boundary.
inline std::vector<std::uint8_t> pack_codes(std::span<const std::uint8_t> codes,
                                            std::size_t n_bits) {
    const std::size_t limit = std::size_t{1} << n_bits;
    std::vector<std::uint8_t> out(packed_row_bytes(codes.size(), n_bits), 0);
    std::size_t bit = 0;
    for (std::uint8_t c : codes) {
        if (c >= limit)
            throw InputError("pack_codes: code " + std::to_string(c) + " needs more than " +
                             std::to_string(n_bits) + " bits");
        out[bit / 8] |= static_cast<std::uint8_t>(c << (bit % 8));
        const std::size_t spill = bit % 8 + n_bits;
        if (spill > 8) out[bit / 8 + 1] |= static_cast<std::uint8_t>(c >> (8 - bit % 8));
        bit += n_bits;
    }
    return out;
}

inline std::vector<std::uint8_t> unpack_codes(std::span<const std::uint8_t> bytes,
                                              std::size_t count, std::size_t n_bits) {
    if (bytes.size() < packed_row_bytes(count, n_bits))
        throw InputError("unpack_codes: byte buffer too short");
    const std::uint32_t mask = (1u << n_bits) - 1;
    std::vector<std::uint8_t> codes(count);
    std::size_t bit = 0;
    for (std::size_t k = 0; k < count; ++k) {
        std::uint32_t v = static_cast<std::uint32_t>(bytes[bit / 8]) >> (bit % 8);
        const std::size_t spill = bit % 8 + n_bits;
        if (spill > 8) v |= static_cast<std::uint32_t>(bytes[bit / 8 + 1]) << (8 - bit % 8);
        codes[k] = static_cast<std::uint8_t>(v & mask);
        bit += n_bits;
    }
    return codes;
}

namespace detail {

struct ByteWriter {
    std::vector<std::uint8_t> buf;
    void u8(std::uint8_t v) { buf.push_back(v); }
    void u16(std::uint16_t v) {
        buf.push_back(static_cast<std::uint8_t>(v & 0xFF));
        buf.push_back(static_cast<std::uint8_t>(v >> 8));
    }
    void u32(std::uint32_t v) {
        for (int s = 0; s < 32; s += 8) buf.push_back(static_cast<std::uint8_t>(v >> s));
    }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void bytes(std::span<const std::uint8_t> b) { buf.insert(buf.end(), b.begin(), b.end()); }
};

struct ByteReader {
    std::span<const std::uint8_t> buf;
    std::size_t pos = 0;

    void need(std::size_t n, const char* what) {
        if (pos + n > buf.size())
            throw FormatError(pos, std::string("truncated while reading ") + what);
    }
    std::uint8_t u8(const char* what) {
        need(1, what);
        return buf[pos++];
    }
    std::uint16_t u16(const char* what) {
        need(2, what);
        std::uint16_t v = static_cast<std::uint16_t>(buf[pos] | (buf[pos + 1] << 8));
        pos += 2;
        return v;
    }
    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int s = 0; s < 4; ++s) v |= static_cast<std::uint32_t>(buf[pos + s]) << (8 * s);
        pos += 4;
        return v;
    }
    float f32(const char* what) { return std::bit_cast<float>(u32(what)); }
    std::span<const std::uint8_t> bytes(std::size_t n, const char* what) {
        need(n, what);
        auto s = buf.subspan(pos, n);
        pos += n;
        return s;
    }
};

inline void write_file(const std::filesystem::path& path,
                       const std::vector<std::uint8_t>& buf) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size()));
    if (!out.flush()) throw InputError("write failed for " + path.string());
}

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw InputError("cannot open " + path.string());
    const auto size = in.tellg();
    in.seekg(0);
    std::vector<std::uint8_t> buf(static_cast<std::size_t>(size));
    in.read(reinterpret_cast<char*>(buf.data()), size);
    if (!in) throw InputError("read failed for " + path.string());
    return buf;
}

inline void write_header(ByteWriter& w, std::uint16_t flags, std::size_t n_nodes,
                         std::size_t d, std::size_t n_bits) {
    for (char c : MODEL_MAGIC) w.u8(static_cast<std::uint8_t>(c));
    w.u16(MODEL_VERSION);
    w.u16(flags);
    w.u32(static_cast<std::uint32_t>(n_nodes));
    w.u32(static_cast<std::uint32_t>(d));
    w.u32(static_cast<std::uint32_t>(n_bits));
}

}  // namespace detail

// Full-precision checkpoint: raw fp32 rows.
inline void save_model(const Matrix& table, const std::filesystem::path& path) {
    detail::ByteWriter w;
    w.buf.reserve(MODEL_HEADER_BYTES + fp_payload_bytes(table.rows(), table.cols()));
    detail::write_header(w, MODEL_FLAG_FP, table.rows(), table.cols(), 0);
    for (std::size_t r = 0; r < table.rows(); ++r)
        for (double v : table.row(r)) w.f32(static_cast<float>(v));
    detail::write_file(path, w.buf);
}

// Quantized checkpoint: packed codes, FP8 scales, fp32 ranges. FP8 rounding
// of the scales happens here, at export.
inline void save_model(const QuantizedModel& m, const std::filesystem::path& path) {
    detail::ByteWriter w;
    w.buf.reserve(MODEL_HEADER_BYTES + quant_payload_bytes(m.n_nodes(), m.d, m.n_bits));
    detail::write_header(w, MODEL_FLAG_QUANT, m.n_nodes(), m.d, m.n_bits);
    const std::size_t levels = m.n_levels();
    for (std::size_t i = 0; i < m.n_nodes(); ++i) {
        auto packed = pack_codes({m.codes.data() + i * m.d, m.d}, m.n_bits);
        w.bytes(packed);
        auto srow = m.scales.row(i);
        for (std::size_t v = 0; v < levels; ++v) w.u8(fp8_encode(srow[v]));
        w.f32(static_cast<float>(m.range_lo[i]));
        w.f32(static_cast<float>(m.range_hi[i]));
    }
    detail::write_file(path, w.buf);
}

struct LoadedModel {
    bool quantized = false;
    Matrix fp;             // valid when !quantized
    QuantizedModel quant;  // valid when quantized

    std::size_t n_nodes() const { return quantized ? quant.n_nodes() : fp.rows(); }
    std::size_t dim() const { return quantized ? quant.d : fp.cols(); }
};

inline LoadedModel load_model(const std::filesystem::path& path) {
    const std::vector<std::uint8_t> buf = detail::read_file(path);
    detail::ByteReader r{buf};

    for (char c : MODEL_MAGIC)
        if (r.u8("magic") != static_cast<std::uint8_t>(c))
            throw FormatError(r.pos - 1, "bad magic, not a model file");
    const std::uint16_t version = r.u16("version");
    if (version != MODEL_VERSION)
        throw FormatError(4, "unsupported version " + std::to_string(version));
    const std::uint16_t flags = r.u16("flags");
    if (flags != MODEL_FLAG_FP && flags != MODEL_FLAG_QUANT)
        throw FormatError(6, "unknown flags value " + std::to_string(flags));
    const std::uint32_t n_nodes = r.u32("node count");
    const std::uint32_t d = r.u32("dimension");
    const std::uint32_t n_bits = r.u32("bit width");
    if (n_nodes == 0 || d == 0) throw FormatError(8, "empty model dimensions");

    LoadedModel out;
    if (flags == MODEL_FLAG_FP) {
        if (n_bits != 0) throw FormatError(16, "full-precision file with nonzero bit width");
        out.fp = Matrix(n_nodes, d);
        for (std::size_t i = 0; i < n_nodes; ++i) {
            auto row = out.fp.row(i);
            for (std::size_t k = 0; k < d; ++k)
                row[k] = static_cast<double>(r.f32("embedding value"));
        }
    } else {
        if (n_bits < 1 || n_bits > 8) throw FormatError(16, "bit width outside [1, 8]");
        out.quantized = true;
        QuantizedModel& m = out.quant;
        m.n_bits = n_bits;
        m.d = d;
        m.codes.resize(std::size_t{n_nodes} * d);
        const std::size_t levels = m.n_levels();
        m.scales = Matrix(n_nodes, levels);
        m.range_lo.resize(n_nodes);
        m.range_hi.resize(n_nodes);
        const std::size_t row_bytes = packed_row_bytes(d, n_bits);
        for (std::size_t i = 0; i < n_nodes; ++i) {
            auto packed = r.bytes(row_bytes, "code row");
            auto codes = unpack_codes(packed, d, n_bits);
            std::memcpy(m.codes.data() + i * d, codes.data(), d);
            auto srow = m.scales.row(i);
            for (std::size_t v = 0; v < levels; ++v)
                srow[v] = fp8_decode(r.u8("scale byte"));
            m.range_lo[i] = static_cast<double>(r.f32("range lo"));
            m.range_hi[i] = static_cast<double>(r.f32("range hi"));
        }
    }
    if (r.pos != buf.size())
        throw FormatError(r.pos, "trailing bytes after payload");
    return out;
}

// In-memory view of what export would store: scales rounded through FP8.
inline QuantizedModel fp8_round_scales(const QuantizedModel& m) {
    QuantizedModel out = m;
    for (std::size_t i = 0; i < m.n_nodes(); ++i)
        for (double& v : out.scales.row(i)) v = fp8_round(v);
    return out;
}

}  // namespace gnaq
