// testutil.hpp
//
// Shared helpers for the test suite: scratch file management and small
// random-data builders.

#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "usta/raster.hpp"
#include "usta/rng.hpp"

namespace testutil {

inline std::string tmp_path(const std::string& name) {
    const std::filesystem::path dir = "usta_test_tmp";
    std::filesystem::create_directories(dir);
    return (dir / name).string();
}

inline void write_bytes(const std::string& path, const std::vector<std::uint8_t>& b) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    f.write(reinterpret_cast<const char*>(b.data()),
            static_cast<std::streamsize>(b.size()));
}

inline std::vector<std::uint8_t> read_bytes(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

inline usta::RasterImage random_image(std::size_t h, std::size_t w, std::size_t c,
                                      std::uint64_t seed) {
    usta::Rng rng(seed);
    usta::RasterImage img(h, w, c);
    for (double& v : img.data) v = rng.uniform();
    return img;
}

inline usta::ScalarMap random_map(std::size_t h, std::size_t w, std::uint64_t seed) {
    usta::Rng rng(seed);
    usta::ScalarMap map(h, w);
    for (double& v : map.data) v = rng.uniform();
    return map;
}

inline usta::ChangeMap random_change_map(std::size_t h, std::size_t w,
                                         std::uint64_t seed, double p_one = 0.5) {
    usta::Rng rng(seed);
    usta::ChangeMap map(h, w);
    for (auto& v : map.data) v = rng.uniform() < p_one ? 1 : 0;
    return map;
}

} // namespace testutil
