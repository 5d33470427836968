// checkpoint.hpp
//
// "USTAW1" parameter checkpoint container.
//
//   magic "USTAW1" (6 bytes), then one record per array:
//     name_len u32 LE, name bytes,
//     rank u32 LE, dims u32 LE each,
//     values f64 LE, row-major.
//
// Records cover trainable parameters and batchnorm running statistics.
// Loading validates the full name/shape inventory in both directions.

#pragma once

#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "errors.hpp"
#include "raster.hpp" // byte I/O helpers

namespace usta {

struct NamedArray {
    std::string name;
    std::vector<std::size_t> shape;
    std::vector<double> values;
};

namespace detail {

inline void put_u64le(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i)
        out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}

inline std::uint64_t get_u64le(const std::uint8_t* p) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
}

} // namespace detail

inline void save_checkpoint(const std::vector<NamedArray>& arrays,
                            const std::string& path) {
    std::vector<std::uint8_t> out;
    const char magic[6] = {'U', 'S', 'T', 'A', 'W', '1'};
    out.insert(out.end(), magic, magic + 6);
    for (const NamedArray& a : arrays) {
        std::size_t numel = 1;
        for (std::size_t d : a.shape) numel *= d;
        if (numel != a.values.size())
            throw ArgumentError("save_checkpoint: '" + a.name +
                                "' values do not match its shape");
        detail::put_u32le(out, static_cast<std::uint32_t>(a.name.size()));
        out.insert(out.end(), a.name.begin(), a.name.end());
        detail::put_u32le(out, static_cast<std::uint32_t>(a.shape.size()));
        for (std::size_t d : a.shape)
            detail::put_u32le(out, static_cast<std::uint32_t>(d));
        for (double v : a.values) {
            std::uint64_t bits;
            std::memcpy(&bits, &v, 8);
            detail::put_u64le(out, bits);
        }
    }
    detail::spew(path, out);
}

inline std::vector<NamedArray> load_checkpoint(const std::string& path) {
    const auto bytes = detail::slurp(path);
    if (bytes.size() < 6 || std::memcmp(bytes.data(), "USTAW1", 6) != 0)
        throw ParseError(path + ": bad checkpoint magic");
    std::vector<NamedArray> arrays;
    std::size_t pos = 6;
    const auto need = [&](std::size_t n) {
        if (bytes.size() - pos < n)
            throw ParseError(path + ": truncated checkpoint at byte offset " +
                             std::to_string(pos));
    };
    while (pos < bytes.size()) {
        NamedArray a;
        need(4);
        const std::uint32_t name_len = detail::get_u32le(&bytes[pos]);
        pos += 4;
        need(name_len);
        a.name.assign(reinterpret_cast<const char*>(&bytes[pos]), name_len);
        pos += name_len;
        need(4);
        const std::uint32_t rank = detail::get_u32le(&bytes[pos]);
        pos += 4;
        if (rank > 8) throw ParseError(path + ": implausible rank for '" + a.name + "'");
        std::size_t numel = 1;
        for (std::uint32_t i = 0; i < rank; ++i) {
            need(4);
            const std::uint32_t d = detail::get_u32le(&bytes[pos]);
            pos += 4;
            a.shape.push_back(d);
            numel *= d;
        }
        need(8 * numel);
        a.values.resize(numel);
        for (std::size_t i = 0; i < numel; ++i) {
            const std::uint64_t bits = detail::get_u64le(&bytes[pos]);
            pos += 8;
            std::memcpy(&a.values[i], &bits, 8);
        }
        arrays.push_back(std::move(a));
    }
    return arrays;
}

} // namespace usta
