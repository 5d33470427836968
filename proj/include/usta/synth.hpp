// synth.hpp
//
// Deterministic synthetic bitemporal scenes.  A scene is a smooth gradient
// background with sinusoidal texture, a set of solid shapes present in both
// epochs, and a set of change shapes inserted into x2, removed from x2, or
// recolored between the epochs until the changed area reaches the requested
// fraction.  The reference map marks exactly the pixels where the noiseless
// epochs differ; independent Gaussian noise is added afterwards.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "errors.hpp"
#include "raster.hpp"
#include "rng.hpp"

namespace usta {

struct SynthScene {
    RasterImage x1;
    RasterImage x2;
    ChangeMap ref;
};

namespace detail {

struct Shape {
    bool ellipse = false;
    std::size_t y0 = 0, x0 = 0, h = 1, w = 1; // bounding box, fully inside image
    double color[3] = {0, 0, 0};
};

inline bool shape_hit(const Shape& s, std::size_t y, std::size_t x) {
    if (y < s.y0 || y >= s.y0 + s.h || x < s.x0 || x >= s.x0 + s.w) return false;
    if (!s.ellipse) return true;
    const double cy = static_cast<double>(s.y0) + 0.5 * static_cast<double>(s.h);
    const double cx = static_cast<double>(s.x0) + 0.5 * static_cast<double>(s.w);
    const double ry = 0.5 * static_cast<double>(s.h);
    const double rx = 0.5 * static_cast<double>(s.w);
    const double dy = (static_cast<double>(y) + 0.5 - cy) / ry;
    const double dx = (static_cast<double>(x) + 0.5 - cx) / rx;
    return dy * dy + dx * dx <= 1.0;
}

inline void paint(std::vector<double>& img, std::size_t W, std::size_t C,
                  const Shape& s) {
    for (std::size_t y = s.y0; y < s.y0 + s.h; ++y)
        for (std::size_t x = s.x0; x < s.x0 + s.w; ++x) {
            if (!shape_hit(s, y, x)) continue;
            double* px = &img[(y * W + x) * C];
            for (std::size_t c = 0; c < C; ++c) px[c] = s.color[c];
        }
}

inline Shape random_shape(Rng& rng, std::size_t H, std::size_t W, double area) {
    Shape s;
    s.ellipse = rng.uniform() < 0.5;
    double box = area;
    if (s.ellipse) box *= 4.0 / 3.14159265358979323846;
    const double aspect = rng.uniform(0.5, 2.0);
    double sh = std::sqrt(box * aspect);
    double sw = box / sh;
    s.h = static_cast<std::size_t>(std::clamp(sh, 2.0, static_cast<double>(H)));
    s.w = static_cast<std::size_t>(std::clamp(sw, 2.0, static_cast<double>(W)));
    s.y0 = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(H - s.h)));
    s.x0 = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(W - s.w)));
    return s;
}

// mean color of the noiseless scene over the shape's bounding box
inline void region_mean(const std::vector<double>& img, std::size_t W,
                        std::size_t C, const Shape& s, double* mean) {
    for (std::size_t c = 0; c < C; ++c) mean[c] = 0.0;
    for (std::size_t y = s.y0; y < s.y0 + s.h; ++y)
        for (std::size_t x = s.x0; x < s.x0 + s.w; ++x)
            for (std::size_t c = 0; c < C; ++c) mean[c] += img[(y * W + x) * C + c];
    const double n = static_cast<double>(s.h * s.w);
    for (std::size_t c = 0; c < C; ++c) mean[c] /= n;
}

// offset each channel away from a reference color by a bounded step
inline void offset_color(Rng& rng, const double* ref, double lo, double hi,
                         double* out) {
    for (std::size_t c = 0; c < 3; ++c) {
        const double mag = rng.uniform(lo, hi);
        const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
        out[c] = std::clamp(ref[c] + sign * mag, 0.02, 0.98);
    }
}

} // namespace detail

inline SynthScene gen_scene(std::size_t h, std::size_t w, double change_fraction,
                            double noise_sigma, std::uint64_t seed) {
    if (h < 64 || w < 64 || h % 16 != 0 || w % 16 != 0)
        throw ConfigError("gen_scene: dims must be >= 64 and divisible by 16");
    if (!(change_fraction > 0.0 && change_fraction < 0.5))
        throw ConfigError("gen_scene: change_fraction outside (0, 0.5)");
    if (!(noise_sigma >= 0.0))
        throw ConfigError("gen_scene: noise_sigma must be >= 0");

    Rng rng(seed);
    const std::size_t C = 3, HW = h * w;
    std::vector<double> s1(HW * C); // noiseless epoch 1

    // gradient background with shared sinusoidal texture
    double base[3], gx[3], gy[3], tex_scale[3];
    for (std::size_t c = 0; c < C; ++c) {
        base[c] = rng.uniform(0.25, 0.55);
        gx[c] = rng.uniform(-0.2, 0.2);
        gy[c] = rng.uniform(-0.2, 0.2);
        tex_scale[c] = rng.uniform(0.5, 1.0);
    }
    const double amp = rng.uniform(0.02, 0.05);
    const double fy = rng.uniform(2.0, 6.0), fx = rng.uniform(2.0, 6.0);
    const double phase = rng.uniform(0.0, 6.28318530717958647692);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            const double u = static_cast<double>(x) / static_cast<double>(w - 1);
            const double v = static_cast<double>(y) / static_cast<double>(h - 1);
            const double t = amp * std::sin(6.28318530717958647692 * (fx * u + fy * v) + phase);
            double* px = &s1[(y * w + x) * C];
            for (std::size_t c = 0; c < C; ++c)
                px[c] = std::clamp(base[c] + gx[c] * u + gy[c] * v + tex_scale[c] * t,
                                   0.02, 0.98);
        }

    // static shapes, present in both epochs
    const std::size_t n_static = 8 + static_cast<std::size_t>(rng.uniform_int(0, 6));
    const double dim = static_cast<double>(std::min(h, w));
    for (std::size_t i = 0; i < n_static; ++i) {
        const double side = rng.uniform(dim / 32.0, dim / 6.0);
        detail::Shape s = detail::random_shape(rng, h, w, side * side);
        for (std::size_t c = 0; c < C; ++c) s.color[c] = rng.uniform(0.1, 0.9);
        detail::paint(s1, w, C, s);
    }
    std::vector<double> s2 = s1; // noiseless epoch 2

    // change shapes until the exact changed-pixel count reaches the target.
    // Contrast is calibrated against the change fraction: rare changes must
    // stand out for a global histogram threshold to lock onto them, while
    // abundant changes stay subtle so classical detection is not saturated.
    const double ramp = std::clamp((change_fraction - 0.04) / 0.08, 0.0, 1.0);
    const double mag_lo = 0.15 - 0.10 * ramp;
    const double mag_hi = 0.35 - 0.19 * ramp;
    const double target = change_fraction * static_cast<double>(HW);
    std::size_t changed = 0;
    auto count_changed = [&]() {
        std::size_t n = 0;
        for (std::size_t i = 0; i < HW; ++i) {
            const double* a = &s1[i * C];
            const double* b = &s2[i * C];
            if (a[0] != b[0] || a[1] != b[1] || a[2] != b[2]) ++n;
        }
        return n;
    };
    for (int iter = 0; iter < 500 && static_cast<double>(changed) < 0.97 * target;
         ++iter) {
        const double remaining = target - static_cast<double>(changed);
        const double share = rng.uniform(0.05, 0.25);
        const double area = std::max(16.0, std::min(remaining * rng.uniform(0.55, 0.95),
                                                    target * share));
        detail::Shape s = detail::random_shape(rng, h, w, area);
        double mean[3];
        detail::region_mean(s1, w, C, s, mean);
        const double op = rng.uniform();
        if (op < 0.4) { // insert into epoch 2
            detail::offset_color(rng, mean, mag_lo, mag_hi, s.color);
            detail::paint(s2, w, C, s);
        } else if (op < 0.7) { // remove: present only in epoch 1
            detail::offset_color(rng, mean, mag_lo, mag_hi, s.color);
            detail::paint(s1, w, C, s);
        } else { // recolor: both epochs, epoch-2 color offset from epoch 1's
            detail::offset_color(rng, mean, mag_lo, mag_hi, s.color);
            detail::paint(s1, w, C, s);
            detail::Shape s2shape = s;
            detail::offset_color(rng, s.color, mag_lo, mag_hi, s2shape.color);
            detail::paint(s2, w, C, s2shape);
        }
        changed = count_changed();
    }

    SynthScene scene;
    scene.ref = ChangeMap(h, w);
    for (std::size_t i = 0; i < HW; ++i) {
        const double* a = &s1[i * C];
        const double* b = &s2[i * C];
        scene.ref.data[i] = (a[0] != b[0] || a[1] != b[1] || a[2] != b[2]) ? 1 : 0;
    }

    for (double& v : s1) v = std::clamp(v + rng.normal(0.0, noise_sigma), 0.0, 1.0);
    for (double& v : s2) v = std::clamp(v + rng.normal(0.0, noise_sigma), 0.0, 1.0);
    scene.x1 = RasterImage(h, w, C, std::move(s1));
    scene.x2 = RasterImage(h, w, C, std::move(s2));
    return scene;
}

inline std::vector<SynthScene> gen_benchmark(std::uint64_t seed) {
    const double fractions[5] = {0.03, 0.05, 0.1, 0.15, 0.2};
    Rng rng(seed);
    std::vector<SynthScene> suite;
    suite.reserve(5);
    for (double f : fractions) suite.push_back(gen_scene(224, 224, f, 0.05, rng.next_u64()));
    return suite;
}

} // namespace usta
