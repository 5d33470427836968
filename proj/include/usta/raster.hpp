// raster.hpp
//
// Core raster value types and bit-exact file I/O.
//
//   RasterImage  H x W x C intensities in [0,1], channel-interleaved rows
//   ScalarMap    H x W values in [0,1] (difference images, confidences)
//   ChangeMap    H x W binary labels, 0 = unchanged, 1 = changed
//
// Supported formats: binary PGM (P5) / PPM (P6) with maxval 255, and the
// "USTAF1" raw float container for scalar maps:
//   16-byte header: magic "USTAF1\0\0", then H and W as u32 little-endian,
//   followed by H*W float32 little-endian values, row-major.

#pragma once

#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "errors.hpp"

namespace usta {

struct RasterImage {
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t channels = 0;
    std::vector<double> data; // index (y*W + x)*C + c

    RasterImage() = default;

    RasterImage(std::size_t h, std::size_t w, std::size_t c)
        : height(h), width(w), channels(c), data(h * w * c, 0.0) {
        check_dims();
    }

    RasterImage(std::size_t h, std::size_t w, std::size_t c,
                std::vector<double> values)
        : height(h), width(w), channels(c), data(std::move(values)) {
        check_dims();
        if (data.size() != height * width * channels)
            throw ShapeError("RasterImage: data length " +
                             std::to_string(data.size()) + " != H*W*C");
        for (double v : data)
            if (!(v >= 0.0 && v <= 1.0))
                throw ArgumentError("RasterImage: intensity outside [0,1]");
    }

    double& at(std::size_t y, std::size_t x, std::size_t c) {
        return data[(y * width + x) * channels + c];
    }
    double at(std::size_t y, std::size_t x, std::size_t c) const {
        return data[(y * width + x) * channels + c];
    }

private:
    void check_dims() const {
        if (height < 1 || width < 1 || channels < 1)
            throw ShapeError("RasterImage: H, W, C must all be >= 1");
    }
};

struct ScalarMap {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<double> data; // index y*W + x

    ScalarMap() = default;

    ScalarMap(std::size_t h, std::size_t w)
        : height(h), width(w), data(h * w, 0.0) {}

    ScalarMap(std::size_t h, std::size_t w, std::vector<double> values)
        : height(h), width(w), data(std::move(values)) {
        if (data.size() != height * width)
            throw ShapeError("ScalarMap: data length " +
                             std::to_string(data.size()) + " != H*W");
        for (double v : data)
            if (!(v >= 0.0 && v <= 1.0))
                throw ArgumentError("ScalarMap: value outside [0,1]");
    }

    double& at(std::size_t y, std::size_t x) { return data[y * width + x]; }
    double at(std::size_t y, std::size_t x) const { return data[y * width + x]; }
};

struct ChangeMap {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<std::uint8_t> data; // index y*W + x, each 0 or 1

    ChangeMap() = default;

    ChangeMap(std::size_t h, std::size_t w)
        : height(h), width(w), data(h * w, 0) {}

    ChangeMap(std::size_t h, std::size_t w, std::vector<std::uint8_t> labels)
        : height(h), width(w), data(std::move(labels)) {
        if (data.size() != height * width)
            throw ShapeError("ChangeMap: data length " +
                             std::to_string(data.size()) + " != H*W");
        for (std::uint8_t v : data)
            if (v > 1)
                throw ArgumentError("ChangeMap: label outside {0,1}");
    }

    std::uint8_t& at(std::size_t y, std::size_t x) { return data[y * width + x]; }
    std::uint8_t at(std::size_t y, std::size_t x) const { return data[y * width + x]; }
};

// ---------------------------------------------------------------------------
// PGM / PPM parsing
// ---------------------------------------------------------------------------

namespace detail {

struct ByteCursor {
    const std::uint8_t* bytes;
    std::size_t size;
    std::size_t pos = 0;

    bool eof() const { return pos >= size; }
    std::uint8_t peek() const { return bytes[pos]; }

    // PNM token separation: whitespace, with '#' comments running to newline.
    void skip_space_and_comments(const std::string& path) {
        for (;;) {
            while (!eof() && std::isspace(peek())) ++pos;
            if (!eof() && peek() == '#') {
                while (!eof() && peek() != '\n') ++pos;
                continue;
            }
            if (eof())
                throw ParseError(path + ": truncated header at byte offset " +
                                 std::to_string(pos));
            return;
        }
    }

    std::uint64_t parse_uint(const std::string& path, const char* what) {
        skip_space_and_comments(path);
        const std::size_t start = pos;
        std::uint64_t v = 0;
        while (!eof() && peek() >= '0' && peek() <= '9') {
            v = v * 10 + (peek() - '0');
            if (v > 0xFFFFFFFFull)
                throw ParseError(path + ": " + std::string(what) +
                                 " overflows at byte offset " + std::to_string(start));
            ++pos;
        }
        if (pos == start)
            throw ParseError(path + ": expected " + std::string(what) +
                             " at byte offset " + std::to_string(pos));
        return v;
    }
};

inline std::vector<std::uint8_t> slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError(path + ": cannot open for reading");
    f.seekg(0, std::ios::end);
    const std::streamoff n = f.tellg();
    f.seekg(0, std::ios::beg);
    std::vector<std::uint8_t> bytes(static_cast<std::size_t>(n));
    if (n > 0) f.read(reinterpret_cast<char*>(bytes.data()), n);
    if (!f) throw IoError(path + ": read failed");
    return bytes;
}

inline void spew(const std::string& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError(path + ": cannot open for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
    f.flush();
    if (!f) throw IoError(path + ": write failed");
}

inline void put_u32le(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v & 0xFF));
    out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xFF));
    out.push_back(static_cast<std::uint8_t>((v >> 16) & 0xFF));
    out.push_back(static_cast<std::uint8_t>((v >> 24) & 0xFF));
}

inline std::uint32_t get_u32le(const std::uint8_t* p) {
    return static_cast<std::uint32_t>(p[0]) |
           (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) |
           (static_cast<std::uint32_t>(p[3]) << 24);
}

} // namespace detail

inline RasterImage read_image(const std::string& path) {
    const auto bytes = detail::slurp(path);
    if (bytes.size() < 2)
        throw ParseError(path + ": truncated header at byte offset 0");
    if (bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6'))
        throw ParseError(path + ": unsupported magic number at byte offset 0");
    const std::size_t channels = (bytes[1] == '5') ? 1 : 3;

    detail::ByteCursor cur{bytes.data(), bytes.size(), 2};
    const std::uint64_t w = cur.parse_uint(path, "width");
    const std::uint64_t h = cur.parse_uint(path, "height");
    const std::size_t maxval_at = cur.pos;
    const std::uint64_t maxval = cur.parse_uint(path, "maxval");
    if (w < 1 || h < 1)
        throw ParseError(path + ": zero dimension at byte offset " +
                         std::to_string(maxval_at));
    if (maxval != 255)
        throw ParseError(path + ": maxval must be 255, at byte offset " +
                         std::to_string(maxval_at));
    if (cur.eof() || !std::isspace(cur.peek()))
        throw ParseError(path + ": expected whitespace after maxval at byte offset " +
                         std::to_string(cur.pos));
    ++cur.pos; // single separator byte before payload

    const std::size_t need = static_cast<std::size_t>(w) * h * channels;
    if (bytes.size() - cur.pos < need)
        throw ParseError(path + ": truncated payload at byte offset " +
                         std::to_string(bytes.size()) + " (expected " +
                         std::to_string(cur.pos + need) + " bytes)");

    RasterImage img(static_cast<std::size_t>(h), static_cast<std::size_t>(w), channels);
    for (std::size_t i = 0; i < need; ++i)
        img.data[i] = static_cast<double>(bytes[cur.pos + i]) / 255.0;
    return img;
}

inline void write_image(const RasterImage& img, const std::string& path) {
    if (img.channels != 1 && img.channels != 3)
        throw ArgumentError("write_image: only C=1 (PGM) or C=3 (PPM) supported");
    std::vector<std::uint8_t> out;
    const std::string header = std::string(img.channels == 1 ? "P5" : "P6") + "\n" +
                               std::to_string(img.width) + " " +
                               std::to_string(img.height) + "\n255\n";
    out.insert(out.end(), header.begin(), header.end());
    out.reserve(out.size() + img.data.size());
    for (double v : img.data) {
        const long b = std::lround(v * 255.0);
        out.push_back(static_cast<std::uint8_t>(b < 0 ? 0 : (b > 255 ? 255 : b)));
    }
    detail::spew(path, out);
}

inline void write_change_map(const ChangeMap& map, const std::string& path) {
    if (map.height < 1 || map.width < 1)
        throw ArgumentError("write_change_map: empty map");
    std::vector<std::uint8_t> out;
    const std::string header = "P5\n" + std::to_string(map.width) + " " +
                               std::to_string(map.height) + "\n255\n";
    out.insert(out.end(), header.begin(), header.end());
    out.reserve(out.size() + map.data.size());
    for (std::uint8_t v : map.data) out.push_back(v ? 255 : 0);
    detail::spew(path, out);
}

// Strict binary read: every payload byte must be 0 or 255.
inline ChangeMap read_change_map(const std::string& path) {
    const RasterImage img = read_image(path);
    if (img.channels != 1)
        throw ParseError(path + ": change map must be single-channel PGM");
    ChangeMap map(img.height, img.width);
    for (std::size_t i = 0; i < img.data.size(); ++i) {
        if (img.data[i] == 0.0) map.data[i] = 0;
        else if (img.data[i] == 1.0) map.data[i] = 1;
        else throw ParseError(path + ": non-binary pixel value in change map");
    }
    return map;
}

inline void write_scalar_map(const ScalarMap& map, const std::string& path) {
    if (map.height < 1 || map.width < 1)
        throw ArgumentError("write_scalar_map: empty map");
    std::vector<std::uint8_t> out;
    const char magic[8] = {'U', 'S', 'T', 'A', 'F', '1', '\0', '\0'};
    out.insert(out.end(), magic, magic + 8);
    detail::put_u32le(out, static_cast<std::uint32_t>(map.height));
    detail::put_u32le(out, static_cast<std::uint32_t>(map.width));
    out.reserve(out.size() + 4 * map.data.size());
    for (double v : map.data) {
        const float f = static_cast<float>(v);
        std::uint32_t u;
        std::memcpy(&u, &f, 4);
        detail::put_u32le(out, u);
    }
    detail::spew(path, out);
}

inline ScalarMap read_scalar_map(const std::string& path) {
    const auto bytes = detail::slurp(path);
    const char magic[8] = {'U', 'S', 'T', 'A', 'F', '1', '\0', '\0'};
    if (bytes.size() < 16 || std::memcmp(bytes.data(), magic, 8) != 0)
        throw ParseError(path + ": bad scalar map magic at byte offset 0");
    const std::uint32_t h = detail::get_u32le(bytes.data() + 8);
    const std::uint32_t w = detail::get_u32le(bytes.data() + 12);
    if (h < 1 || w < 1)
        throw ParseError(path + ": zero dimension at byte offset 8");
    const std::size_t count = static_cast<std::size_t>(h) * w;
    if (bytes.size() != 16 + 4 * count)
        throw ParseError(path + ": payload size " + std::to_string(bytes.size() - 16) +
                         " does not match header (expected " +
                         std::to_string(4 * count) + " bytes)");
    ScalarMap map(h, w);
    for (std::size_t i = 0; i < count; ++i) {
        const std::uint32_t u = detail::get_u32le(bytes.data() + 16 + 4 * i);
        float f;
        std::memcpy(&f, &u, 4);
        if (!(f >= 0.0f && f <= 1.0f))
            throw ParseError(path + ": value outside [0,1] at byte offset " +
                             std::to_string(16 + 4 * i));
        map.data[i] = static_cast<double>(f);
    }
    return map;
}

} // namespace usta
