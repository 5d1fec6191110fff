#pragma once

// Raster file formats: a baseline (Geo)TIFF codec and the ESRI ASCII grid.
//
// TIFF support covers what the pipeline produces and what typical elevation
// and imagery tiles use: classic little/big-endian files, strips or tiles,
// chunky or planar samples, 8/16/32-bit integers and 32/64-bit floats, no
// compression, PackBits, LZW or Deflate (horizontal predictor for integers).
// Georeferencing comes from ModelPixelScale + ModelTiepoint (or
// ModelTransformation) and the GDAL_NODATA tag. Writing is always classic
// little-endian, strip-organized, chunky, uint8 or float32.

#include "surfmap/raster.hpp"
#include "surfmap/util.hpp"

#include <zlib.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace surfmap {

enum class SampleType { UInt8, Float32 };

struct GeoTiffOptions {
    SampleType type = SampleType::Float32;
    std::optional<double> nodata;  ///< defaults: 255 for uint8, -9999 for float32
    bool deflate = false;
};

namespace tiff {

enum Tag : std::uint16_t {
    ImageWidth = 256,
    ImageLength = 257,
    BitsPerSample = 258,
    Compression = 259,
    Photometric = 262,
    StripOffsets = 273,
    SamplesPerPixel = 277,
    RowsPerStrip = 278,
    StripByteCounts = 279,
    PlanarConfig = 284,
    Predictor = 317,
    TileWidth = 322,
    TileLength = 323,
    TileOffsets = 324,
    TileByteCounts = 325,
    ExtraSamples = 338,
    SampleFormat = 339,
    ModelPixelScale = 33550,
    ModelTiepoint = 33922,
    ModelTransformation = 34264,
    GeoKeyDirectory = 34735,
    GeoDoubleParams = 34736,
    GeoAsciiParams = 34737,
    GdalNodata = 42113,
};

enum Type : std::uint16_t {
    BYTE = 1, ASCII = 2, SHORT = 3, LONG = 4, RATIONAL = 5, SBYTE = 6, UNDEFINED = 7,
    SSHORT = 8, SLONG = 9, SRATIONAL = 10, FLOAT = 11, DOUBLE = 12,
};

inline std::size_t type_size(std::uint16_t t) {
    switch (t) {
        case BYTE: case ASCII: case SBYTE: case UNDEFINED: return 1;
        case SHORT: case SSHORT: return 2;
        case LONG: case SLONG: case FLOAT: return 4;
        case RATIONAL: case SRATIONAL: case DOUBLE: return 8;
        default: return 0;
    }
}

class Reader {
public:
    explicit Reader(std::string bytes, std::string path) : buf_(std::move(bytes)), path_(std::move(path)) {
        if (buf_.size() < 8) fail("file too short");
        if (buf_[0] == 'I' && buf_[1] == 'I') big_ = false;
        else if (buf_[0] == 'M' && buf_[1] == 'M') big_ = true;
        else fail("not a TIFF file");
        const auto magic = u16(2);
        if (magic == 43) fail("BigTIFF is not supported");
        if (magic != 42) fail("bad TIFF magic");
        const std::size_t ifd = u32(4);
        const auto n = u16(ifd);
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t e = ifd + 2 + 12 * i;
            Entry en;
            en.type = u16(e + 2);
            en.count = u32(e + 4);
            const std::size_t bytes = type_size(en.type) * en.count;
            en.offset = bytes <= 4 ? e + 8 : u32(e + 8);
            if (type_size(en.type) == 0) continue;
            if (en.offset + bytes > buf_.size()) fail("tag data past end of file");
            entries_[u16(e)] = en;
        }
    }

    bool has(std::uint16_t tag) const { return entries_.count(tag) != 0; }

    std::vector<double> numbers(std::uint16_t tag) const {
        const auto it = entries_.find(tag);
        if (it == entries_.end()) fail("missing tag " + std::to_string(tag));
        const Entry& e = it->second;
        std::vector<double> out;
        out.reserve(e.count);
        for (std::size_t i = 0; i < e.count; ++i) {
            const std::size_t p = e.offset + i * type_size(e.type);
            switch (e.type) {
                case BYTE: case UNDEFINED: out.push_back(static_cast<unsigned char>(buf_[p])); break;
                case SBYTE: out.push_back(static_cast<signed char>(buf_[p])); break;
                case SHORT: out.push_back(u16(p)); break;
                case SSHORT: out.push_back(static_cast<std::int16_t>(u16(p))); break;
                case LONG: out.push_back(u32(p)); break;
                case SLONG: out.push_back(static_cast<std::int32_t>(u32(p))); break;
                case RATIONAL: out.push_back(static_cast<double>(u32(p)) / u32(p + 4)); break;
                case SRATIONAL:
                    out.push_back(static_cast<double>(static_cast<std::int32_t>(u32(p))) /
                                  static_cast<std::int32_t>(u32(p + 4)));
                    break;
                case FLOAT: { const auto b = u32(p); float f; std::memcpy(&f, &b, 4); out.push_back(f); break; }
                case DOUBLE: out.push_back(f64(p)); break;
                default: fail("unsupported tag type");
            }
        }
        return out;
    }

    std::uint64_t number(std::uint16_t tag, std::uint64_t fallback) const {
        if (!has(tag)) return fallback;
        return static_cast<std::uint64_t>(numbers(tag).at(0));
    }

    std::string ascii(std::uint16_t tag) const {
        const auto it = entries_.find(tag);
        if (it == entries_.end()) return {};
        std::string s = buf_.substr(it->second.offset, it->second.count);
        while (!s.empty() && s.back() == '\0') s.pop_back();
        return s;
    }

    std::string_view bytes(std::size_t offset, std::size_t count) const {
        if (offset + count > buf_.size()) fail("image data past end of file");
        return std::string_view(buf_).substr(offset, count);
    }

    bool big_endian() const { return big_; }
    [[noreturn]] void fail(const std::string& msg) const { throw IoError(path_ + ": " + msg); }

    std::uint16_t u16(std::size_t p) const {
        if (p + 2 > buf_.size()) fail("truncated");
        const auto a = static_cast<unsigned char>(buf_[p]);
        const auto b = static_cast<unsigned char>(buf_[p + 1]);
        return big_ ? static_cast<std::uint16_t>(a << 8 | b) : static_cast<std::uint16_t>(b << 8 | a);
    }
    std::uint32_t u32(std::size_t p) const {
        const std::uint32_t a = u16(p), b = u16(p + 2);
        return big_ ? (a << 16 | b) : (b << 16 | a);
    }
    double f64(std::size_t p) const {
        const std::uint64_t a = u32(p), b = u32(p + 4);
        const std::uint64_t v = big_ ? (a << 32 | b) : (b << 32 | a);
        double d;
        std::memcpy(&d, &v, 8);
        return d;
    }

private:
    struct Entry {
        std::uint16_t type = 0;
        std::size_t count = 0;
        std::size_t offset = 0;
    };
    std::string buf_;
    std::string path_;
    bool big_ = false;
    std::map<std::uint16_t, Entry> entries_;
};

inline std::string inflate_chunk(std::string_view in, std::size_t expected, const std::string& path) {
    std::string out(expected, '\0');
    z_stream zs{};
    if (inflateInit(&zs) != Z_OK) throw IoError(path + ": inflateInit failed");
    zs.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(in.data()));
    zs.avail_in = static_cast<uInt>(in.size());
    zs.next_out = reinterpret_cast<Bytef*>(out.data());
    zs.avail_out = static_cast<uInt>(out.size());
    const int rc = inflate(&zs, Z_FINISH);
    inflateEnd(&zs);
    if (rc != Z_STREAM_END && rc != Z_OK && rc != Z_BUF_ERROR) throw IoError(path + ": corrupt deflate stream");
    return out;
}

inline std::string deflate_chunk(std::string_view in) {
    uLongf bound = compressBound(static_cast<uLong>(in.size()));
    std::string out(bound, '\0');
    if (compress2(reinterpret_cast<Bytef*>(out.data()), &bound, reinterpret_cast<const Bytef*>(in.data()),
                  static_cast<uLong>(in.size()), 6) != Z_OK)
        throw std::runtime_error("deflate failed");
    out.resize(bound);
    return out;
}

inline std::string unpack_bits(std::string_view in, std::size_t expected) {
    std::string out;
    out.reserve(expected);
    std::size_t i = 0;
    while (i < in.size() && out.size() < expected) {
        const auto n = static_cast<signed char>(in[i++]);
        if (n >= 0) {
            const std::size_t len = static_cast<std::size_t>(n) + 1;
            out.append(in.substr(i, len));
            i += len;
        } else if (n != -128) {
            const std::size_t len = static_cast<std::size_t>(1 - n);
            if (i < in.size()) out.append(len, in[i++]);
        }
    }
    out.resize(expected, '\0');
    return out;
}

/// TIFF-flavoured LZW (MSB-first codes, early code-width change).
inline std::string lzw_decode(std::string_view in, std::size_t expected, const std::string& path) {
    std::vector<std::string> table;
    auto reset = [&] {
        table.assign(258, {});
        for (int i = 0; i < 256; ++i) table[static_cast<std::size_t>(i)] = std::string(1, static_cast<char>(i));
    };
    reset();
    std::string out;
    out.reserve(expected);
    std::size_t bitpos = 0;
    int width = 9;
    auto next = [&]() -> int {
        if (bitpos + static_cast<std::size_t>(width) > in.size() * 8) return 257;
        int code = 0;
        for (int b = 0; b < width; ++b, ++bitpos) {
            const auto byte = static_cast<unsigned char>(in[bitpos / 8]);
            code = (code << 1) | ((byte >> (7 - bitpos % 8)) & 1);
        }
        return code;
    };
    std::string prev;
    while (true) {
        const int code = next();
        if (code == 257) break;
        if (code == 256) {
            reset();
            width = 9;
            prev.clear();
            continue;
        }
        std::string entry;
        if (static_cast<std::size_t>(code) < table.size()) entry = table[static_cast<std::size_t>(code)];
        else if (static_cast<std::size_t>(code) == table.size() && !prev.empty()) entry = prev + prev[0];
        else throw IoError(path + ": corrupt LZW stream");
        out += entry;
        if (!prev.empty()) table.push_back(prev + entry[0]);
        prev = entry;
        const std::size_t next_size = table.size() + 1;
        if (next_size >= 2048) width = 12;
        else if (next_size >= 1024) width = 11;
        else if (next_size >= 512) width = 10;
        if (out.size() >= expected) break;
    }
    out.resize(expected, '\0');
    return out;
}

class Writer {
public:
    void add(std::uint16_t tag, std::uint16_t type, std::vector<std::uint8_t> payload, std::uint32_t count) {
        entries_.push_back({tag, type, count, std::move(payload)});
    }
    void add_shorts(std::uint16_t tag, const std::vector<std::uint16_t>& v) {
        std::vector<std::uint8_t> p;
        for (auto x : v) { p.push_back(static_cast<std::uint8_t>(x & 0xFF)); p.push_back(static_cast<std::uint8_t>(x >> 8)); }
        add(tag, SHORT, std::move(p), static_cast<std::uint32_t>(v.size()));
    }
    void add_longs(std::uint16_t tag, const std::vector<std::uint32_t>& v) {
        std::vector<std::uint8_t> p;
        for (auto x : v) for (int b = 0; b < 4; ++b) p.push_back(static_cast<std::uint8_t>(x >> (8 * b)));
        add(tag, LONG, std::move(p), static_cast<std::uint32_t>(v.size()));
    }
    void add_doubles(std::uint16_t tag, const std::vector<double>& v) {
        std::vector<std::uint8_t> p;
        for (double d : v) {
            std::uint64_t x;
            std::memcpy(&x, &d, 8);
            for (int b = 0; b < 8; ++b) p.push_back(static_cast<std::uint8_t>(x >> (8 * b)));
        }
        add(tag, DOUBLE, std::move(p), static_cast<std::uint32_t>(v.size()));
    }
    void add_ascii(std::uint16_t tag, const std::string& s) {
        std::vector<std::uint8_t> p(s.begin(), s.end());
        p.push_back(0);
        const auto count = static_cast<std::uint32_t>(p.size());
        add(tag, ASCII, std::move(p), count);
    }

    /// Lays out header, strips, IFD and out-of-line tag data. Strip offsets are patched in.
    std::string finish(const std::vector<std::string>& strips) {
        std::string out = "II";
        put16(out, 42);
        put32(out, 0);  // IFD offset, patched below
        std::vector<std::uint32_t> offsets, counts;
        for (const auto& s : strips) {
            if (out.size() % 2) out.push_back('\0');
            offsets.push_back(static_cast<std::uint32_t>(out.size()));
            counts.push_back(static_cast<std::uint32_t>(s.size()));
            out += s;
        }
        add_longs(StripOffsets, offsets);
        add_longs(StripByteCounts, counts);
        std::sort(entries_.begin(), entries_.end(), [](const auto& a, const auto& b) { return a.tag < b.tag; });
        if (out.size() % 2) out.push_back('\0');
        const auto ifd = static_cast<std::uint32_t>(out.size());
        std::memcpy(out.data() + 4, &ifd, 4);
        std::size_t extra = ifd + 2 + 12 * entries_.size() + 4;
        std::string ext;
        put16(out, static_cast<std::uint16_t>(entries_.size()));
        for (const auto& e : entries_) {
            put16(out, e.tag);
            put16(out, e.type);
            put32(out, e.count);
            if (e.payload.size() <= 4) {
                std::string v(e.payload.begin(), e.payload.end());
                v.resize(4, '\0');
                out += v;
            } else {
                put32(out, static_cast<std::uint32_t>(extra + ext.size()));
                ext.append(e.payload.begin(), e.payload.end());
                if (ext.size() % 2) ext.push_back('\0');
            }
        }
        put32(out, 0);
        out += ext;
        return out;
    }

private:
    struct Entry {
        std::uint16_t tag;
        std::uint16_t type;
        std::uint32_t count;
        std::vector<std::uint8_t> payload;
    };
    static void put16(std::string& s, std::uint16_t v) { s.push_back(static_cast<char>(v & 0xFF)); s.push_back(static_cast<char>(v >> 8)); }
    static void put32(std::string& s, std::uint32_t v) { for (int b = 0; b < 4; ++b) s.push_back(static_cast<char>((v >> (8 * b)) & 0xFF)); }
    std::vector<Entry> entries_;
};

inline std::optional<int> epsg_code(const std::string& crs) {
    if (crs.rfind("EPSG:", 0) != 0) return std::nullopt;
    try {
        const int code = std::stoi(crs.substr(5));
        if (code > 0 && code < 32767) return code;
    } catch (...) {
    }
    return std::nullopt;
}

}  // namespace tiff

/// Writes one or more co-registered bands as a single GeoTIFF.
inline void write_geotiff(const std::string& path, std::span<const Raster> bands, const GeoTiffOptions& opt = {}) {
    if (bands.empty()) throw std::invalid_argument("write_geotiff: no bands");
    const auto& g = bands.front().geometry();
    for (const auto& b : bands)
        if (!(b.geometry() == g)) throw std::invalid_argument("write_geotiff: bands differ in geometry");
    const bool u8 = opt.type == SampleType::UInt8;
    const double nodata = opt.nodata.value_or(u8 ? 255.0 : -9999.0);
    const auto spp = static_cast<std::uint16_t>(bands.size());
    const std::size_t bps = u8 ? 1 : 4;
    const std::size_t row_bytes = static_cast<std::size_t>(g.cols) * spp * bps;
    const int rows_per_strip = std::max<int>(1, static_cast<int>(65536 / std::max<std::size_t>(row_bytes, 1)));

    std::vector<std::string> strips;
    for (int r0 = 0; r0 < g.rows; r0 += rows_per_strip) {
        const int r1 = std::min(g.rows, r0 + rows_per_strip);
        std::string s;
        s.reserve(static_cast<std::size_t>(r1 - r0) * row_bytes);
        for (int r = r0; r < r1; ++r)
            for (int c = 0; c < g.cols; ++c)
                for (const auto& b : bands) {
                    const double v = b.valid(r, c) ? b.at(r, c) : nodata;
                    if (u8) {
                        s.push_back(static_cast<char>(static_cast<std::uint8_t>(std::clamp(std::round(v), 0.0, 255.0))));
                    } else {
                        const float f = static_cast<float>(v);
                        char tmp[4];
                        std::memcpy(tmp, &f, 4);
                        s.append(tmp, 4);
                    }
                }
        strips.push_back(opt.deflate ? tiff::deflate_chunk(s) : std::move(s));
    }

    tiff::Writer w;
    w.add_longs(tiff::ImageWidth, {static_cast<std::uint32_t>(g.cols)});
    w.add_longs(tiff::ImageLength, {static_cast<std::uint32_t>(g.rows)});
    w.add_shorts(tiff::BitsPerSample, std::vector<std::uint16_t>(spp, static_cast<std::uint16_t>(bps * 8)));
    w.add_shorts(tiff::Compression, {static_cast<std::uint16_t>(opt.deflate ? 8 : 1)});
    w.add_shorts(tiff::Photometric, {1});
    w.add_shorts(tiff::SamplesPerPixel, {spp});
    w.add_longs(tiff::RowsPerStrip, {static_cast<std::uint32_t>(rows_per_strip)});
    w.add_shorts(tiff::PlanarConfig, {1});
    if (spp > 1) w.add_shorts(tiff::ExtraSamples, std::vector<std::uint16_t>(spp - 1u, 0));
    w.add_shorts(tiff::SampleFormat, std::vector<std::uint16_t>(spp, static_cast<std::uint16_t>(u8 ? 1 : 3)));
    w.add_doubles(tiff::ModelPixelScale, {g.pixel_size, g.pixel_size, 0.0});
    w.add_doubles(tiff::ModelTiepoint, {0.0, 0.0, 0.0, g.origin_x, g.origin_y, 0.0});
    const auto code = tiff::epsg_code(g.crs_id);
    const std::string citation = g.crs_id + "|";
    w.add_shorts(tiff::GeoKeyDirectory,
                 {1, 1, 0, 4,
                  1024, 0, 1, 1,                                                    // projected model
                  1025, 0, 1, 1,                                                    // pixel is area
                  1026, tiff::GeoAsciiParams, static_cast<std::uint16_t>(citation.size()), 0,
                  3072, 0, 1, static_cast<std::uint16_t>(code.value_or(32767))});
    w.add_ascii(tiff::GeoAsciiParams, citation);
    w.add_ascii(tiff::GdalNodata, fmt_double(nodata));

    const std::string bytes = w.finish(strips);
    write_text_file(path, bytes);
}

inline void write_geotiff(const std::string& path, const Raster& band, const GeoTiffOptions& opt = {}) {
    write_geotiff(path, std::span<const Raster>(&band, 1), opt);
}

/// Reads every band of a GeoTIFF into rasters sharing one geometry.
inline std::vector<Raster> read_geotiff(const std::string& path) {
    const tiff::Reader rd(read_text_file(path), path);
    const auto width = static_cast<int>(rd.number(tiff::ImageWidth, 0));
    const auto height = static_cast<int>(rd.number(tiff::ImageLength, 0));
    if (width < 1 || height < 1) rd.fail("bad image size");
    const auto spp = static_cast<int>(rd.number(tiff::SamplesPerPixel, 1));
    const auto bits = rd.has(tiff::BitsPerSample) ? rd.numbers(tiff::BitsPerSample) : std::vector<double>{1.0};
    const int bps = static_cast<int>(bits.at(0));
    for (double b : bits)
        if (static_cast<int>(b) != bps) rd.fail("mixed bits per sample");
    const int fmt = static_cast<int>(rd.has(tiff::SampleFormat) ? rd.numbers(tiff::SampleFormat).at(0) : 1);
    const int compression = static_cast<int>(rd.number(tiff::Compression, 1));
    const int predictor = static_cast<int>(rd.number(tiff::Predictor, 1));
    const int planar = static_cast<int>(rd.number(tiff::PlanarConfig, 1));
    if (bps != 8 && bps != 16 && bps != 32 && bps != 64) rd.fail("unsupported bits per sample");
    if (fmt == 3 && bps != 32 && bps != 64) rd.fail("unsupported float width");
    if (predictor != 1 && !(predictor == 2 && fmt != 3)) rd.fail("unsupported predictor");
    const std::size_t bytes_per_sample = static_cast<std::size_t>(bps / 8);

    const bool tiled = rd.has(tiff::TileWidth);
    const int chunk_w = tiled ? static_cast<int>(rd.number(tiff::TileWidth, 0)) : width;
    const int chunk_h = tiled ? static_cast<int>(rd.number(tiff::TileLength, 0))
                              : static_cast<int>(std::min<std::uint64_t>(rd.number(tiff::RowsPerStrip, static_cast<std::uint64_t>(height)), static_cast<std::uint64_t>(height)));
    if (chunk_w < 1 || chunk_h < 1) rd.fail("bad chunk size");
    const auto offsets = rd.numbers(tiled ? tiff::TileOffsets : tiff::StripOffsets);
    const auto counts = rd.numbers(tiled ? tiff::TileByteCounts : tiff::StripByteCounts);
    const int across = (width + chunk_w - 1) / chunk_w;
    const int down = (height + chunk_h - 1) / chunk_h;
    const int planes = planar == 2 ? spp : 1;
    const int samples_in_chunk = planar == 2 ? 1 : spp;
    if (offsets.size() < static_cast<std::size_t>(across * down * planes) || counts.size() < offsets.size())
        rd.fail("chunk table too short");

    std::vector<double> data(static_cast<std::size_t>(width) * height * spp, 0.0);
    auto decode_sample = [&](const unsigned char* p) -> double {
        std::uint64_t v = 0;
        for (std::size_t b = 0; b < bytes_per_sample; ++b) {
            const std::size_t shift = rd.big_endian() ? 8 * (bytes_per_sample - 1 - b) : 8 * b;
            v |= static_cast<std::uint64_t>(p[b]) << shift;
        }
        if (fmt == 3) {
            if (bps == 32) { const auto u = static_cast<std::uint32_t>(v); float f; std::memcpy(&f, &u, 4); return f; }
            double d; std::memcpy(&d, &v, 8); return d;
        }
        if (fmt == 2) {
            switch (bps) {
                case 8: return static_cast<std::int8_t>(v);
                case 16: return static_cast<std::int16_t>(v);
                case 32: return static_cast<std::int32_t>(v);
                default: return static_cast<double>(static_cast<std::int64_t>(v));
            }
        }
        return static_cast<double>(v);
    };

    for (int plane = 0; plane < planes; ++plane)
        for (int ty = 0; ty < down; ++ty)
            for (int tx = 0; tx < across; ++tx) {
                const std::size_t k = static_cast<std::size_t>(plane * across * down + ty * across + tx);
                const std::size_t raw_size = static_cast<std::size_t>(chunk_w) * chunk_h * samples_in_chunk * bytes_per_sample;
                const auto raw = rd.bytes(static_cast<std::size_t>(offsets[k]), static_cast<std::size_t>(counts[k]));
                std::string chunk;
                switch (compression) {
                    case 1: chunk = std::string(raw); chunk.resize(raw_size, '\0'); break;
                    case 5: chunk = tiff::lzw_decode(raw, raw_size, path); break;
                    case 8: case 32946: chunk = tiff::inflate_chunk(raw, raw_size, path); break;
                    case 32773: chunk = tiff::unpack_bits(raw, raw_size); break;
                    default: rd.fail("unsupported compression " + std::to_string(compression));
                }
                const auto* p = reinterpret_cast<const unsigned char*>(chunk.data());
                const int rows_here = tiled ? chunk_h : std::min(chunk_h, height - ty * chunk_h);
                for (int r = 0; r < rows_here; ++r) {
                    const int gr = ty * chunk_h + r;
                    std::vector<double> prev(static_cast<std::size_t>(samples_in_chunk), 0.0);
                    for (int c = 0; c < chunk_w; ++c) {
                        const int gc = tx * chunk_w + c;
                        for (int s = 0; s < samples_in_chunk; ++s) {
                            const std::size_t off = ((static_cast<std::size_t>(r) * chunk_w + c) * samples_in_chunk + s) * bytes_per_sample;
                            double v = decode_sample(p + off);
                            if (predictor == 2) {
                                // Horizontal differencing wraps modulo the sample width.
                                const double mod = std::ldexp(1.0, bps);
                                v = std::fmod(v + prev[static_cast<std::size_t>(s)] + (fmt == 2 ? mod : 0.0), mod);
                                if (fmt == 2 && v >= mod / 2) v -= mod;
                                prev[static_cast<std::size_t>(s)] = v;
                            }
                            if (gr >= height || gc >= width) continue;
                            const int band = planar == 2 ? plane : s;
                            data[(static_cast<std::size_t>(band) * height + gr) * width + gc] = v;
                        }
                    }
                }
            }

    GridGeometry g;
    g.rows = height;
    g.cols = width;
    if (rd.has(tiff::ModelPixelScale) && rd.has(tiff::ModelTiepoint)) {
        const auto scale = rd.numbers(tiff::ModelPixelScale);
        const auto tie = rd.numbers(tiff::ModelTiepoint);
        if (scale.size() < 2 || tie.size() < 6) rd.fail("bad georeferencing tags");
        if (std::abs(scale[0] - scale[1]) > 1e-9 * scale[0]) rd.fail("non-square pixels are not supported");
        g.pixel_size = scale[0];
        g.origin_x = tie[3] - tie[0] * scale[0];
        g.origin_y = tie[4] + tie[1] * scale[1];
    } else if (rd.has(tiff::ModelTransformation)) {
        const auto m = rd.numbers(tiff::ModelTransformation);
        if (m.size() < 16 || m[1] != 0.0 || m[4] != 0.0) rd.fail("rotated rasters are not supported");
        if (std::abs(m[0] + m[5]) > 1e-9 * m[0]) rd.fail("non-square pixels are not supported");
        g.pixel_size = m[0];
        g.origin_x = m[3];
        g.origin_y = m[7];
    }
    std::string citation;
    int epsg = 0;
    if (rd.has(tiff::GeoKeyDirectory)) {
        const auto keys = rd.numbers(tiff::GeoKeyDirectory);
        const std::string params = rd.ascii(tiff::GeoAsciiParams);
        for (std::size_t i = 4; i + 3 < keys.size(); i += 4) {
            const int id = static_cast<int>(keys[i]);
            const int loc = static_cast<int>(keys[i + 1]);
            const auto cnt = static_cast<std::size_t>(keys[i + 2]);
            const auto val = static_cast<std::size_t>(keys[i + 3]);
            if (id == 1025 && loc == 0 && val == 2) {  // pixel-is-point: shift to corner
                g.origin_x -= 0.5 * g.pixel_size;
                g.origin_y += 0.5 * g.pixel_size;
            }
            if ((id == 1026 || id == 3073) && loc == tiff::GeoAsciiParams && citation.empty() && val < params.size()) {
                citation = params.substr(val, cnt);
                while (!citation.empty() && (citation.back() == '|' || citation.back() == '\0')) citation.pop_back();
            }
            if (id == 3072 && loc == 0 && val > 0 && val < 32767) epsg = static_cast<int>(val);
        }
    }
    g.crs_id = epsg != 0 ? "EPSG:" + std::to_string(epsg) : citation;
    g.validate();

    std::optional<double> nodata;
    if (const auto s = rd.ascii(tiff::GdalNodata); !s.empty()) nodata = parse_double(s);

    std::vector<Raster> bands;
    for (int b = 0; b < spp; ++b) {
        Raster r(g);
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double v = data[static_cast<std::size_t>(b) * g.size() + i];
            const bool nd = std::isnan(v) ||
                            (nodata && (v == *nodata || (fmt == 3 && bps == 32 &&
                                                         v == static_cast<double>(static_cast<float>(*nodata)))));
            if (nd) r.set_nodata(i, true);
            else r.values()[i] = v;
        }
        bands.push_back(std::move(r));
    }
    return bands;
}

/// ESRI ASCII grid (ncols, nrows, xllcorner|xllcenter, yllcorner|yllcenter, cellsize, NODATA_value).
inline Raster read_ascii_grid(const std::string& path, const std::string& crs_id = {}) {
    std::istringstream in(read_text_file(path));
    std::map<std::string, double> header;
    std::string key;
    std::streampos data_start = in.tellg();
    while (in >> key) {
        std::string lower = key;
        std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
        if (lower.empty() || !std::isalpha(static_cast<unsigned char>(lower[0]))) {
            in.clear();
            in.seekg(data_start);
            break;
        }
        std::string value;
        if (!(in >> value)) throw IoError(path + ": truncated header");
        header[lower] = parse_double(value);
        data_start = in.tellg();
    }
    auto need = [&](const char* k) {
        const auto it = header.find(k);
        if (it == header.end()) throw IoError(path + ": missing header field " + k);
        return it->second;
    };
    GridGeometry g;
    g.cols = static_cast<int>(need("ncols"));
    g.rows = static_cast<int>(need("nrows"));
    g.pixel_size = need("cellsize");
    g.crs_id = crs_id;
    if (header.count("xllcorner")) g.origin_x = header["xllcorner"];
    else g.origin_x = need("xllcenter") - 0.5 * g.pixel_size;
    const double yll = header.count("yllcorner") ? header["yllcorner"] : need("yllcenter") - 0.5 * g.pixel_size;
    g.origin_y = yll + g.rows * g.pixel_size;
    g.validate();
    const std::optional<double> nodata =
        header.count("nodata_value") ? std::optional<double>(header["nodata_value"]) : std::nullopt;
    Raster r(g);
    std::string tok;
    for (std::size_t i = 0; i < g.size(); ++i) {
        if (!(in >> tok)) throw IoError(path + ": expected " + std::to_string(g.size()) + " values");
        const double v = parse_double(tok);
        if ((nodata && v == *nodata) || std::isnan(v)) r.set_nodata(i, true);
        else r.values()[i] = v;
    }
    return r;
}

inline void write_ascii_grid(const std::string& path, const Raster& r, double nodata = -9999.0) {
    const auto& g = r.geometry();
    std::string s;
    s += "ncols " + std::to_string(g.cols) + "\n";
    s += "nrows " + std::to_string(g.rows) + "\n";
    s += "xllcorner " + fmt_double(g.origin_x) + "\n";
    s += "yllcorner " + fmt_double(g.min_y()) + "\n";
    s += "cellsize " + fmt_double(g.pixel_size) + "\n";
    s += "NODATA_value " + fmt_double(nodata) + "\n";
    for (int row = 0; row < g.rows; ++row) {
        for (int c = 0; c < g.cols; ++c) {
            if (c) s.push_back(' ');
            s += fmt_double(r.valid(row, c) ? r.at(row, c) : nodata);
        }
        s.push_back('\n');
    }
    write_text_file(path, s);
}

inline bool is_ascii_grid_path(const std::string& path) {
    auto ext = std::filesystem::path(path).extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
    return ext == ".asc" || ext == ".txt" || ext == ".grd";
}

/// First band of a GeoTIFF, or an ASCII grid (by extension).
inline Raster read_raster(const std::string& path, const std::string& crs_for_ascii = {}) {
    if (is_ascii_grid_path(path)) return read_ascii_grid(path, crs_for_ascii);
    auto bands = read_geotiff(path);
    return std::move(bands.front());
}

inline std::vector<Raster> read_raster_bands(const std::string& path, const std::string& crs_for_ascii = {}) {
    if (is_ascii_grid_path(path)) return {read_ascii_grid(path, crs_for_ascii)};
    return read_geotiff(path);
}

inline void write_raster(const std::string& path, const Raster& r, SampleType type = SampleType::Float32) {
    if (is_ascii_grid_path(path)) write_ascii_grid(path, r);
    else write_geotiff(path, r, GeoTiffOptions{type, std::nullopt, false});
}

}  // namespace surfmap
