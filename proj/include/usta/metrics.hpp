// metrics.hpp
//
// Confusion counts and Precision / Recall / F-measure between a predicted
// and a reference change map.  Degenerate ratios (0/0) evaluate to 0 and
// carry a flag instead of producing NaN.

#pragma once

#include <cstdint>
#include <cstdio>
#include <string>

#include "errors.hpp"
#include "raster.hpp"

namespace usta {

struct Confusion {
    std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;
};

struct Metric {
    double value = 0.0;
    bool degenerate = false;
};

inline Confusion confusion(const ChangeMap& pred, const ChangeMap& ref) {
    if (pred.height != ref.height || pred.width != ref.width)
        throw ShapeError("confusion: map dimensions differ");
    Confusion c;
    for (std::size_t i = 0; i < pred.data.size(); ++i) {
        const bool p = pred.data[i] != 0, r = ref.data[i] != 0;
        if (p && r) ++c.tp;
        else if (p && !r) ++c.fp;
        else if (!p && r) ++c.fn;
        else ++c.tn;
    }
    return c;
}

inline Metric precision(const Confusion& c) {
    const std::uint64_t d = c.tp + c.fp;
    if (d == 0) return {0.0, true};
    return {static_cast<double>(c.tp) / static_cast<double>(d), false};
}

inline Metric recall(const Confusion& c) {
    const std::uint64_t d = c.tp + c.fn;
    if (d == 0) return {0.0, true};
    return {static_cast<double>(c.tp) / static_cast<double>(d), false};
}

inline Metric fmeasure(const Confusion& c, double a) {
    if (!(a > 0.0)) throw ArgumentError("fmeasure: weight a must be > 0");
    const double pr = precision(c).value;
    const double rc = recall(c).value;
    if (pr + rc == 0.0) return {0.0, true};
    const double a2 = a * a;
    return {(a2 + 1.0) * pr * rc / (a2 * (pr + rc)), false};
}

inline Metric f1(const Confusion& c) { return fmeasure(c, 1.0); }

// CSV row "name,Pr,Rc,F1" with metrics as percentages at one decimal.
inline std::string format_metric_row(const std::string& name, const Confusion& c) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.1f,%.1f,%.1f", 100.0 * precision(c).value,
                  100.0 * recall(c).value, 100.0 * f1(c).value);
    return name.empty() ? std::string(buf) : name + "," + buf;
}

} // namespace usta
