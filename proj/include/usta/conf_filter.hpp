// conf_filter.hpp
//
// Neighborhood confidence filter and gate.
//
// filter: for every pixel with a full w x w neighborhood inside the map,
// the confidence is the fraction of neighborhood labels that agree with
// the center label (XNOR match, self included).  The border band of width
// (w-1)/2 is set to 0.  gate: keep confidences >= alpha, zero the rest.

#pragma once

#include "errors.hpp"
#include "raster.hpp"

namespace usta {

struct FilterConfig {
    std::size_t w = 5;  // odd neighborhood side, >= 3
    double alpha = 0.5; // gate threshold in [0,1]
};

inline ScalarMap filter(const ChangeMap& cm, std::size_t w) {
    if (w < 3 || w % 2 == 0)
        throw ArgumentError("filter: w must be odd and >= 3");
    ScalarMap pc(cm.height, cm.width);
    if (cm.height < w || cm.width < w) return pc; // no interior, all zero

    const std::size_t r = (w - 1) / 2;
    const double denom = static_cast<double>(w * w);
    for (std::size_t i = r; i + r < cm.height; ++i) {
        for (std::size_t j = r; j + r < cm.width; ++j) {
            const std::uint8_t center = cm.at(i, j);
            std::size_t match = 0;
            for (std::size_t di = i - r; di <= i + r; ++di) {
                const std::uint8_t* row = &cm.data[di * cm.width + (j - r)];
                for (std::size_t k = 0; k < w; ++k)
                    match += (row[k] == center);
            }
            pc.at(i, j) = static_cast<double>(match) / denom;
        }
    }
    return pc;
}

inline ScalarMap gate(const ScalarMap& pc, double alpha) {
    if (!(alpha >= 0.0 && alpha <= 1.0))
        throw ArgumentError("gate: alpha outside [0,1]");
    ScalarMap out(pc.height, pc.width);
    for (std::size_t i = 0; i < pc.data.size(); ++i)
        out.data[i] = pc.data[i] >= alpha ? pc.data[i] : 0.0;
    return out;
}

} // namespace usta
