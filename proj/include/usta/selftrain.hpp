// selftrain.hpp
//
// Self-training orchestration: classical pre-detection produces pseudo label I
// with a confidence gate, a teacher network trains on it, the teacher's own
// prediction becomes pseudo label II, and a freshly initialized student trains
// on the beta-weighted joint loss over both label sets.  Training data is cut
// into overlapping square crops, each emitted under six spatial transforms.
// Reference labels never enter any training path.

#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <string>
#include <vector>

#include "classical_di.hpp"
#include "conf_filter.hpp"
#include "errors.hpp"
#include "network.hpp"
#include "optim.hpp"
#include "raster.hpp"
#include "rng.hpp"
#include "tensor.hpp"
#include "threshold.hpp"

namespace usta {

// ---------------------------------------------------------------------------
// configuration
// ---------------------------------------------------------------------------

struct TrainConfig {
    std::size_t w = 5;
    double alpha = 0.5;
    double beta = 0.6;
    double lr = 0.0001;
    std::size_t batch_size = 8;
    std::size_t epochs_teacher = 30;
    std::size_t epochs_student = 30;
    std::size_t crop = 112;
    std::size_t stride = 56;
    std::size_t scale = 1;
    std::uint64_t seed = 0;
};

inline void validate(const TrainConfig& cfg) {
    if (cfg.w < 3 || cfg.w % 2 == 0)
        throw ConfigError("TrainConfig: w must be odd and >= 3");
    if (!(cfg.alpha >= 0.0 && cfg.alpha <= 1.0))
        throw ConfigError("TrainConfig: alpha outside [0,1]");
    if (!(cfg.beta >= 0.0 && cfg.beta <= 1.0))
        throw ConfigError("TrainConfig: beta outside [0,1]");
    if (!(cfg.lr > 0.0)) throw ConfigError("TrainConfig: lr must be > 0");
    if (cfg.batch_size < 1) throw ConfigError("TrainConfig: batch_size must be >= 1");
    if (cfg.crop < 16 || cfg.crop % 16 != 0)
        throw ConfigError("TrainConfig: crop must be a positive multiple of 16");
    if (cfg.stride < 1) throw ConfigError("TrainConfig: stride must be >= 1");
    if (cfg.scale < 1) throw ConfigError("TrainConfig: scale must be >= 1");
}

// Line-oriented "key = value" text; blank lines and #-comments are skipped,
// unknown or repeated keys are rejected so sweep-script typos surface early.
inline TrainConfig parse_train_config(const std::string& text) {
    TrainConfig cfg;
    std::vector<std::string> seen;
    std::size_t lineno = 0, pos = 0;
    auto trim = [](std::string s) {
        const auto a = s.find_first_not_of(" \t\r");
        if (a == std::string::npos) return std::string();
        const auto b = s.find_last_not_of(" \t\r");
        return s.substr(a, b - a + 1);
    };
    while (pos <= text.size()) {
        const auto nl = text.find('\n', pos);
        std::string line = text.substr(pos, nl == std::string::npos ? nl : nl - pos);
        pos = nl == std::string::npos ? text.size() + 1 : nl + 1;
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        const std::string where = " (line " + std::to_string(lineno) + ")";
        if (eq == std::string::npos)
            throw ConfigError("config: expected key = value" + where);
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));
        if (key.empty() || val.empty())
            throw ConfigError("config: expected key = value" + where);
        if (std::find(seen.begin(), seen.end(), key) != seen.end())
            throw ConfigError("config: repeated key '" + key + "'" + where);
        seen.push_back(key);
        auto as_count = [&](const char* name) {
            std::size_t used = 0;
            unsigned long long v = 0;
            try {
                v = std::stoull(val, &used);
            } catch (const std::exception&) {
                throw ConfigError("config: bad value for " + std::string(name) + where);
            }
            if (used != val.size() || val[0] == '-')
                throw ConfigError("config: bad value for " + std::string(name) + where);
            return static_cast<std::uint64_t>(v);
        };
        auto as_real = [&](const char* name) {
            std::size_t used = 0;
            double v = 0;
            try {
                v = std::stod(val, &used);
            } catch (const std::exception&) {
                throw ConfigError("config: bad value for " + std::string(name) + where);
            }
            if (used != val.size())
                throw ConfigError("config: bad value for " + std::string(name) + where);
            return v;
        };
        if (key == "w") cfg.w = static_cast<std::size_t>(as_count("w"));
        else if (key == "alpha") cfg.alpha = as_real("alpha");
        else if (key == "beta") cfg.beta = as_real("beta");
        else if (key == "lr") cfg.lr = as_real("lr");
        else if (key == "batch_size") cfg.batch_size = static_cast<std::size_t>(as_count("batch_size"));
        else if (key == "epochs_teacher") cfg.epochs_teacher = static_cast<std::size_t>(as_count("epochs_teacher"));
        else if (key == "epochs_student") cfg.epochs_student = static_cast<std::size_t>(as_count("epochs_student"));
        else if (key == "crop") cfg.crop = static_cast<std::size_t>(as_count("crop"));
        else if (key == "stride") cfg.stride = static_cast<std::size_t>(as_count("stride"));
        else if (key == "scale") cfg.scale = static_cast<std::size_t>(as_count("scale"));
        else if (key == "seed") cfg.seed = as_count("seed");
        else throw ConfigError("config: unknown key '" + key + "'" + where);
    }
    validate(cfg);
    return cfg;
}

// ---------------------------------------------------------------------------
// pre-detection
// ---------------------------------------------------------------------------

struct Predetection {
    ScalarMap di1;
    ChangeMap cm1;
    ScalarMap pc1s;
};

inline Predetection predetect(const RasterImage& x1, const RasterImage& x2,
                              const TrainConfig& cfg) {
    validate(cfg);
    Predetection p;
    p.di1 = cva(x1, x2);
    p.cm1 = otsu(p.di1).map;
    p.pc1s = gate(filter(p.cm1, cfg.w), cfg.alpha);
    return p;
}

// ---------------------------------------------------------------------------
// crops and augmentation
// ---------------------------------------------------------------------------

struct TrainSample {
    std::vector<double> x1;     // CHW planes, side = crop
    std::vector<double> x2;     // CHW planes, side = crop
    std::vector<double> label;  // crop x crop, values {0,1}
    std::vector<double> weight; // crop x crop, values [0,1]
};

struct TrainingSet {
    std::size_t crop = 0;
    std::size_t channels = 0;
    std::vector<TrainSample> samples;
};

namespace detail {

// variants in emission order: original, rot90, rot180, rot270, hflip, vflip
inline void tile_transform(const double* src, std::size_t planes, std::size_t n,
                           int variant, double* dst) {
    for (std::size_t p = 0; p < planes; ++p) {
        const double* s = src + p * n * n;
        double* d = dst + p * n * n;
        for (std::size_t y = 0; y < n; ++y)
            for (std::size_t x = 0; x < n; ++x) {
                std::size_t sy = y, sx = x;
                switch (variant) {
                    case 1: sy = n - 1 - x; sx = y; break;        // rot90
                    case 2: sy = n - 1 - y; sx = n - 1 - x; break; // rot180
                    case 3: sy = x; sx = n - 1 - y; break;         // rot270
                    case 4: sy = y; sx = n - 1 - x; break;         // hflip
                    case 5: sy = n - 1 - y; sx = x; break;         // vflip
                    default: break;
                }
                d[y * n + x] = s[sy * n + sx];
            }
    }
}

inline std::vector<std::size_t> tile_origins(std::size_t extent, std::size_t crop,
                                             std::size_t stride) {
    std::vector<std::size_t> origins;
    for (std::size_t o = 0; o + crop <= extent; o += stride) origins.push_back(o);
    if (origins.back() + crop < extent) origins.push_back(extent - crop);
    return origins;
}

} // namespace detail

inline TrainingSet make_training_set(const RasterImage& x1, const RasterImage& x2,
                                     const ChangeMap& cm, const ScalarMap& pcs,
                                     const TrainConfig& cfg) {
    validate(cfg);
    const std::size_t H = x1.height, W = x1.width, C = x1.channels;
    if (x2.height != H || x2.width != W || x2.channels != C ||
        cm.height != H || cm.width != W || pcs.height != H || pcs.width != W)
        throw ShapeError("make_training_set: input dimensions differ");
    const std::size_t n = cfg.crop;
    if (H < n || W < n)
        throw ConfigError("make_training_set: image smaller than the crop size");

    const auto ys = detail::tile_origins(H, n, cfg.stride);
    const auto xs = detail::tile_origins(W, n, cfg.stride);

    TrainingSet set;
    set.crop = n;
    set.channels = C;
    set.samples.reserve(ys.size() * xs.size() * 6);
    std::vector<double> t1(C * n * n), t2(C * n * n), tl(n * n), tw(n * n);
    for (std::size_t oy : ys)
        for (std::size_t ox : xs) {
            for (std::size_t c = 0; c < C; ++c)
                for (std::size_t y = 0; y < n; ++y)
                    for (std::size_t x = 0; x < n; ++x) {
                        t1[(c * n + y) * n + x] = x1.at(oy + y, ox + x, c);
                        t2[(c * n + y) * n + x] = x2.at(oy + y, ox + x, c);
                    }
            for (std::size_t y = 0; y < n; ++y)
                for (std::size_t x = 0; x < n; ++x) {
                    tl[y * n + x] = static_cast<double>(cm.at(oy + y, ox + x));
                    tw[y * n + x] = pcs.at(oy + y, ox + x);
                }
            for (int v = 0; v < 6; ++v) {
                TrainSample s;
                s.x1.resize(C * n * n);
                s.x2.resize(C * n * n);
                s.label.resize(n * n);
                s.weight.resize(n * n);
                detail::tile_transform(t1.data(), C, n, v, s.x1.data());
                detail::tile_transform(t2.data(), C, n, v, s.x2.data());
                detail::tile_transform(tl.data(), 1, n, v, s.label.data());
                detail::tile_transform(tw.data(), 1, n, v, s.weight.data());
                set.samples.push_back(std::move(s));
            }
        }
    return set;
}

// Eq. 3 / Eq. 5 confidence-weighted binary cross-entropy over one tile batch.
inline Tensor weighted_bce_loss(const Tensor& di, const std::vector<double>& cm,
                                const std::vector<double>& weights) {
    return weighted_bce(di, cm, weights, true);
}

// ---------------------------------------------------------------------------
// training loops
// ---------------------------------------------------------------------------

struct EpochRecord {
    std::size_t epoch = 0;
    double loss = 0.0;
    double seconds = 0.0;
};

struct LabelSet {
    ChangeMap cm;
    ScalarMap pcs;
};

struct TrainResult {
    ChangeDetector net;
    std::vector<EpochRecord> log;
};

// Generalized trainer behind both network stages: minimizes
// sum_k coeffs[k] * weighted_bce(prediction, labels_k, weights_k) with Adam
// over seeded shuffled batches.  All label sets ride the same tiles in the
// same order, so coefficients mix losses over identical pixels.
inline TrainResult train_on_labels(const RasterImage& x1, const RasterImage& x2,
                                   const std::vector<LabelSet>& sets,
                                   const std::vector<double>& coeffs,
                                   const TrainConfig& cfg, std::size_t epochs,
                                   Rng& rng,
                                   BranchMode mode = BranchMode::composite) {
    validate(cfg);
    if (sets.empty() || sets.size() != coeffs.size())
        throw ArgumentError("train_on_labels: one coefficient per label set");

    NetworkConfig nc;
    nc.scale = cfg.scale;
    nc.branch_mode = mode;
    nc.input_channels = x1.channels;
    TrainResult result{ChangeDetector::build(nc, rng), {}};

    std::vector<TrainingSet> data;
    data.reserve(sets.size());
    for (const auto& s : sets)
        data.push_back(make_training_set(x1, x2, s.cm, s.pcs, cfg));

    auto params = result.net.parameters();
    AdamState opt;
    opt.lr = cfg.lr;

    const std::size_t S = data[0].samples.size(), C = x1.channels, n = cfg.crop;
    std::vector<std::size_t> order(S);
    for (std::size_t i = 0; i < S; ++i) order[i] = i;

    result.log.reserve(epochs);
    for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        rng.shuffle(order);
        double loss_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t b0 = 0; b0 < S; b0 += cfg.batch_size) {
            const std::size_t nb = std::min(cfg.batch_size, S - b0);
            Tensor xa = Tensor::zeros({nb, C, n, n});
            Tensor xb = Tensor::zeros({nb, C, n, n});
            for (std::size_t i = 0; i < nb; ++i) {
                const TrainSample& s = data[0].samples[order[b0 + i]];
                std::copy(s.x1.begin(), s.x1.end(),
                          xa.data().begin() + i * C * n * n);
                std::copy(s.x2.begin(), s.x2.end(),
                          xb.data().begin() + i * C * n * n);
            }
            Tensor pred = result.net.forward(xa, xb, BnMode::train);
            Tensor loss;
            std::vector<double> lab(nb * n * n), wt(nb * n * n);
            for (std::size_t k = 0; k < data.size(); ++k) {
                for (std::size_t i = 0; i < nb; ++i) {
                    const TrainSample& s = data[k].samples[order[b0 + i]];
                    std::copy(s.label.begin(), s.label.end(),
                              lab.begin() + i * n * n);
                    std::copy(s.weight.begin(), s.weight.end(),
                              wt.begin() + i * n * n);
                }
                Tensor term = scale(weighted_bce_loss(pred, lab, wt), coeffs[k]);
                loss = k == 0 ? term : add(loss, term);
            }
            for (auto& p : params) p.zero_grad();
            loss.backward();
            adam_step(params, opt);
            loss_sum += loss.item();
            ++batches;
        }
        const auto t1 = std::chrono::steady_clock::now();
        result.log.push_back({epoch, loss_sum / static_cast<double>(batches),
                              std::chrono::duration<double>(t1 - t0).count()});
    }
    return result;
}

// ---------------------------------------------------------------------------
// pipeline stages
// ---------------------------------------------------------------------------

struct TeacherResult {
    ChangeDetector net;
    ScalarMap di1;
    ChangeMap cm1;
    ScalarMap pc1s;
    std::vector<EpochRecord> log;
};

inline TeacherResult train_teacher(const RasterImage& x1, const RasterImage& x2,
                                   const TrainConfig& cfg, Rng& rng,
                                   BranchMode mode = BranchMode::composite) {
    Predetection p = predetect(x1, x2, cfg);
    TrainResult r = train_on_labels(x1, x2, {{p.cm1, p.pc1s}}, {1.0}, cfg,
                                    cfg.epochs_teacher, rng, mode);
    return {std::move(r.net), std::move(p.di1), std::move(p.cm1),
            std::move(p.pc1s), std::move(r.log)};
}

struct PseudoLabel2 {
    ScalarMap di2;
    ChangeMap cm2;
    ScalarMap pc2s;
};

inline PseudoLabel2 pseudo_label_2(ChangeDetector& teacher, const RasterImage& x1,
                                   const RasterImage& x2, const TrainConfig& cfg) {
    validate(cfg);
    auto [di2, cm2] = teacher.predict_change_map(x1, x2);
    ScalarMap pc2s = gate(filter(cm2, cfg.w), cfg.alpha);
    return {std::move(di2), std::move(cm2), std::move(pc2s)};
}

struct StudentResult {
    ChangeDetector net;
    std::vector<EpochRecord> log;
};

inline StudentResult train_student(const RasterImage& x1, const RasterImage& x2,
                                   const ChangeMap& cm1, const ScalarMap& pc1s,
                                   const ChangeMap& cm2, const ScalarMap& pc2s,
                                   const TrainConfig& cfg, Rng& rng,
                                   BranchMode mode = BranchMode::composite) {
    TrainResult r = train_on_labels(x1, x2, {{cm1, pc1s}, {cm2, pc2s}},
                                    {cfg.beta, 1.0 - cfg.beta}, cfg,
                                    cfg.epochs_student, rng, mode);
    return {std::move(r.net), std::move(r.log)};
}

// ---------------------------------------------------------------------------
// full pipeline
// ---------------------------------------------------------------------------

struct UstaResult {
    ScalarMap di1;
    ChangeMap cm1;
    ScalarMap pc1s;
    ScalarMap di2;
    ChangeMap cm2;
    ScalarMap pc2s;
    ScalarMap final_di;
    ChangeMap final_map;
    ChangeDetector teacher;
    ChangeDetector student;
    std::vector<EpochRecord> teacher_log;
    std::vector<EpochRecord> student_log;
};

inline UstaResult run_usta(const RasterImage& x1, const RasterImage& x2,
                           const TrainConfig& cfg,
                           BranchMode mode = BranchMode::composite) {
    Rng rng(cfg.seed);
    TeacherResult t = train_teacher(x1, x2, cfg, rng, mode);
    PseudoLabel2 p2 = pseudo_label_2(t.net, x1, x2, cfg);
    StudentResult s = train_student(x1, x2, t.cm1, t.pc1s, p2.cm2, p2.pc2s, cfg,
                                    rng, mode);
    auto [final_di, final_map] = s.net.predict_change_map(x1, x2);
    UstaResult r;
    r.di1 = std::move(t.di1);
    r.cm1 = std::move(t.cm1);
    r.pc1s = std::move(t.pc1s);
    r.di2 = std::move(p2.di2);
    r.cm2 = std::move(p2.cm2);
    r.pc2s = std::move(p2.pc2s);
    r.final_di = std::move(final_di);
    r.final_map = std::move(final_map);
    r.teacher = std::move(t.net);
    r.student = std::move(s.net);
    r.teacher_log = std::move(t.log);
    r.student_log = std::move(s.log);
    return r;
}

// one log record per line: stage,epoch,loss,seconds
inline std::string format_training_log(const std::vector<EpochRecord>& teacher,
                                       const std::vector<EpochRecord>& student) {
    std::string out;
    char buf[128];
    for (const auto& e : teacher) {
        std::snprintf(buf, sizeof buf, "teacher,%zu,%.9g,%.3f\n", e.epoch, e.loss,
                      e.seconds);
        out += buf;
    }
    for (const auto& e : student) {
        std::snprintf(buf, sizeof buf, "student,%zu,%.9g,%.3f\n", e.epoch, e.loss,
                      e.seconds);
        out += buf;
    }
    return out;
}

} // namespace usta
