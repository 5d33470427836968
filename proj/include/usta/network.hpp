#pragma once

// ---------------------------------------------------------------------------
// composite-branch change-detection network: shared low-level encoder, twin
// high-level encoder branches, twin skip-connected decoders, fusion head
// ---------------------------------------------------------------------------

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "usta/checkpoint.hpp"
#include "usta/errors.hpp"
#include "usta/raster.hpp"
#include "usta/rng.hpp"
#include "usta/tensor.hpp"
#include "usta/threshold.hpp"

namespace usta {

enum class BranchMode { composite, single, dual };

inline BranchMode parse_branch_mode(const std::string& s) {
    if (s == "composite") return BranchMode::composite;
    if (s == "single") return BranchMode::single;
    if (s == "double") return BranchMode::dual;
    throw ConfigError("branch_mode must be composite, single, or double, got '" +
                      s + "'");
}

inline const char* branch_mode_name(BranchMode m) {
    switch (m) {
        case BranchMode::composite: return "composite";
        case BranchMode::single: return "single";
        default: return "double";
    }
}

struct NetworkConfig {
    std::size_t base_width = 64;
    std::size_t scale = 1;
    BranchMode branch_mode = BranchMode::composite;
    std::size_t input_channels = 3;
};

namespace detail {

// one Convolution-BatchNorm-ReLU unit
struct ConvBn {
    Tensor weight;
    Tensor bias;
    Tensor gamma;
    Tensor beta;
    BatchNormState stats;
};

// two consecutive Convolution-BatchNorm-ReLU units
struct DConvBlock {
    ConvBn c0;
    ConvBn c1;
};

struct TConvBlock {
    Tensor weight; // (IC, OC, 2, 2)
};

struct SharedEncoder {
    DConvBlock d1, d2, d3;
};

struct BranchEncoder {
    DConvBlock d4, d5;
};

struct BranchDecoder {
    TConvBlock t6, t7, t8, t9;
    DConvBlock d6, d7, d8, d9;
};

struct FusionHead {
    Tensor w10, b10;
    Tensor w11, b11;
};

inline ConvBn make_conv_bn(std::size_t in_c, std::size_t out_c, std::size_t k,
                           Rng& rng) {
    ConvBn u;
    u.weight = xavier_init({out_c, in_c, k, k}, rng);
    u.bias = Tensor::zeros({out_c}, true);
    u.gamma = Tensor::from_data({out_c}, std::vector<double>(out_c, 1.0), true);
    u.beta = Tensor::zeros({out_c}, true);
    u.stats = BatchNormState(out_c);
    return u;
}

inline DConvBlock make_dconv(std::size_t in_c, std::size_t out_c, Rng& rng) {
    DConvBlock b;
    b.c0 = make_conv_bn(in_c, out_c, 3, rng);
    b.c1 = make_conv_bn(out_c, out_c, 3, rng);
    return b;
}

inline TConvBlock make_tconv(std::size_t in_c, std::size_t out_c, Rng& rng) {
    TConvBlock t;
    t.weight = xavier_init({in_c, out_c, 2, 2}, rng);
    return t;
}

inline Tensor dconv_fwd(DConvBlock& b, const Tensor& x, BnMode mode) {
    Tensor h = relu(batchnorm(conv2d(x, b.c0.weight, b.c0.bias, 1), b.c0.gamma,
                              b.c0.beta, b.c0.stats, mode));
    return relu(batchnorm(conv2d(h, b.c1.weight, b.c1.bias, 1), b.c1.gamma,
                          b.c1.beta, b.c1.stats, mode));
}

// activations one branch produces on its way down, kept for skip connections
struct EncoderTrace {
    Tensor a1, a2, a3; // shared-depth activations
    Tensor a4;         // branch-depth activation
    Tensor bottom;     // DConv5 output
};

inline EncoderTrace encode(SharedEncoder& s, BranchEncoder& e, const Tensor& x,
                           BnMode mode) {
    EncoderTrace t;
    t.a1 = dconv_fwd(s.d1, x, mode);
    t.a2 = dconv_fwd(s.d2, maxpool2(t.a1), mode);
    t.a3 = dconv_fwd(s.d3, maxpool2(t.a2), mode);
    t.a4 = dconv_fwd(e.d4, maxpool2(t.a3), mode);
    t.bottom = dconv_fwd(e.d5, maxpool2(t.a4), mode);
    return t;
}

inline Tensor decode(BranchDecoder& d, const EncoderTrace& t, BnMode mode) {
    Tensor y = dconv_fwd(d.d6, concat_channels(tconv2(t.bottom, d.t6.weight), t.a4), mode);
    y = dconv_fwd(d.d7, concat_channels(tconv2(y, d.t7.weight), t.a3), mode);
    y = dconv_fwd(d.d8, concat_channels(tconv2(y, d.t8.weight), t.a2), mode);
    y = dconv_fwd(d.d9, concat_channels(tconv2(y, d.t9.weight), t.a1), mode);
    return y;
}

} // namespace detail

class ChangeDetector {
  public:
    ChangeDetector() = default;

    static ChangeDetector build(const NetworkConfig& cfg, Rng& rng) {
        validate(cfg);
        ChangeDetector net;
        net.cfg_ = cfg;
        const std::size_t w1 = scaled(cfg, cfg.base_width);
        const std::size_t w2 = scaled(cfg, cfg.base_width * 2);
        const std::size_t w3 = scaled(cfg, cfg.base_width * 4);
        const std::size_t w4 = scaled(cfg, cfg.base_width * 8);
        const std::size_t w5 = scaled(cfg, cfg.base_width * 16);
        const std::size_t wh = scaled(cfg, cfg.base_width / 4);

        net.shared_a_ = make_shared_encoder(cfg.input_channels, w1, w2, w3, rng);
        net.enc_a_ = make_branch_encoder(w3, w4, w5, rng);
        net.dec_a_ = make_branch_decoder(w1, w2, w3, w4, w5, rng);
        switch (cfg.branch_mode) {
            case BranchMode::single:
                net.shared_b_ = net.shared_a_;
                net.enc_b_ = net.enc_a_;
                net.dec_b_ = net.dec_a_;
                break;
            case BranchMode::composite:
                net.shared_b_ = net.shared_a_;
                net.enc_b_ = make_branch_encoder(w3, w4, w5, rng);
                net.dec_b_ = make_branch_decoder(w1, w2, w3, w4, w5, rng);
                break;
            case BranchMode::dual:
                net.shared_b_ =
                    make_shared_encoder(cfg.input_channels, w1, w2, w3, rng);
                net.enc_b_ = make_branch_encoder(w3, w4, w5, rng);
                net.dec_b_ = make_branch_decoder(w1, w2, w3, w4, w5, rng);
                break;
        }
        net.fuse_ = std::make_shared<detail::FusionHead>();
        net.fuse_->w10 = xavier_init({wh, 2 * w1, 1, 1}, rng);
        net.fuse_->b10 = Tensor::zeros({wh}, true);
        net.fuse_->w11 = xavier_init({1, wh, 1, 1}, rng);
        net.fuse_->b11 = Tensor::zeros({1}, true);
        return net;
    }

    const NetworkConfig& config() const { return cfg_; }

    Tensor forward(const Tensor& x1, const Tensor& x2, BnMode mode) {
        require_built();
        check_input(x1, "x1");
        check_input(x2, "x2");
        if (x1.shape() != x2.shape())
            throw ShapeError("forward: x1 and x2 shapes differ");
        detail::EncoderTrace ta = detail::encode(*shared_a_, *enc_a_, x1, mode);
        detail::EncoderTrace tb = detail::encode(*shared_b_, *enc_b_, x2, mode);
        Tensor ya = detail::decode(*dec_a_, ta, mode);
        Tensor yb = detail::decode(*dec_b_, tb, mode);
        Tensor h = conv2d(concat_channels(ya, yb), fuse_->w10, fuse_->b10, 0);
        return sigmoid(conv2d(h, fuse_->w11, fuse_->b11, 0));
    }

    std::pair<ScalarMap, ChangeMap> predict_change_map(const RasterImage& x1,
                                                       const RasterImage& x2) {
        require_built();
        if (x1.height != x2.height || x1.width != x2.width ||
            x1.channels != x2.channels)
            throw ShapeError("predict_change_map: image shapes differ");
        if (x1.channels != cfg_.input_channels)
            throw ShapeError("predict_change_map: expected " +
                             std::to_string(cfg_.input_channels) +
                             " channels, got " + std::to_string(x1.channels));
        const std::size_t H = x1.height, W = x1.width;
        const std::size_t PH = pad_to_16(H), PW = pad_to_16(W);
        if (PH > 2 * H - 1 || PW > 2 * W - 1)
            throw ShapeError(
                "predict_change_map: image too small to reflect-pad to a "
                "multiple of 16");

        NoGradGuard guard;
        Tensor t1 = to_tensor(x1, PH, PW);
        Tensor t2 = to_tensor(x2, PH, PW);
        Tensor out = forward(t1, t2, BnMode::eval);

        ScalarMap di(H, W);
        const double* od = out.data().data();
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t x = 0; x < W; ++x) di.at(y, x) = od[y * PW + x];
        return {di, fixed_threshold(di, 0.5)};
    }

    // trainable tensors with dotted names, aliased groups listed once
    std::vector<std::pair<std::string, Tensor>> named_parameters() {
        require_built();
        std::vector<std::pair<std::string, Tensor>> out;
        visit_groups([&](const std::string& prefix, detail::SharedEncoder& s) {
            add_dconv(out, prefix + ".dconv1", s.d1);
            add_dconv(out, prefix + ".dconv2", s.d2);
            add_dconv(out, prefix + ".dconv3", s.d3);
        },
        [&](const std::string& prefix, detail::BranchEncoder& e) {
            add_dconv(out, prefix + ".dconv4", e.d4);
            add_dconv(out, prefix + ".dconv5", e.d5);
        },
        [&](const std::string& prefix, detail::BranchDecoder& d) {
            out.emplace_back(prefix + ".tconv6.weight", d.t6.weight);
            add_dconv(out, prefix + ".dconv6", d.d6);
            out.emplace_back(prefix + ".tconv7.weight", d.t7.weight);
            add_dconv(out, prefix + ".dconv7", d.d7);
            out.emplace_back(prefix + ".tconv8.weight", d.t8.weight);
            add_dconv(out, prefix + ".dconv8", d.d8);
            out.emplace_back(prefix + ".tconv9.weight", d.t9.weight);
            add_dconv(out, prefix + ".dconv9", d.d9);
        });
        out.emplace_back("fuse.conv10.weight", fuse_->w10);
        out.emplace_back("fuse.conv10.bias", fuse_->b10);
        out.emplace_back("fuse.conv11.weight", fuse_->w11);
        out.emplace_back("fuse.conv11.bias", fuse_->b11);
        return out;
    }

    std::vector<Tensor> parameters() {
        std::vector<Tensor> out;
        for (auto& [name, t] : named_parameters()) out.push_back(t);
        return out;
    }

    std::size_t parameter_count() {
        std::size_t n = 0;
        for (auto& [name, t] : named_parameters()) n += t.numel();
        return n;
    }

    // parameters plus batchnorm running statistics, for checkpointing
    std::vector<NamedArray> state_arrays() {
        std::vector<NamedArray> out;
        for (auto& [name, t] : named_parameters())
            out.push_back({name, t.shape(), t.data()});
        for (auto& [name, stats] : named_stats()) {
            const std::size_t c = stats->running_mean.size();
            out.push_back({name + ".running_mean", {c}, stats->running_mean});
            out.push_back({name + ".running_var", {c}, stats->running_var});
        }
        return out;
    }

    void load_state_arrays(const std::vector<NamedArray>& arrays) {
        std::vector<std::pair<std::string, std::vector<double>*>> slots;
        std::vector<std::vector<std::size_t>> shapes;
        for (auto& [name, t] : named_parameters()) {
            slots.emplace_back(name, &t.data());
            shapes.push_back(t.shape());
        }
        for (auto& [name, stats] : named_stats()) {
            const std::size_t c = stats->running_mean.size();
            slots.emplace_back(name + ".running_mean", &stats->running_mean);
            shapes.push_back({c});
            slots.emplace_back(name + ".running_var", &stats->running_var);
            shapes.push_back({c});
        }
        if (arrays.size() != slots.size())
            throw ParseError("checkpoint: expected " +
                             std::to_string(slots.size()) + " arrays, got " +
                             std::to_string(arrays.size()));
        for (std::size_t i = 0; i < slots.size(); ++i) {
            const NamedArray* found = nullptr;
            for (const auto& a : arrays)
                if (a.name == slots[i].first) {
                    found = &a;
                    break;
                }
            if (!found)
                throw ParseError("checkpoint: missing array '" +
                                 slots[i].first + "'");
            if (found->shape != shapes[i])
                throw ParseError("checkpoint: shape mismatch for '" +
                                 slots[i].first + "'");
            *slots[i].second = found->values;
        }
    }

    void save(const std::string& path) { save_checkpoint(state_arrays(), path); }
    void load(const std::string& path) { load_state_arrays(load_checkpoint(path)); }

  private:
    NetworkConfig cfg_;
    std::shared_ptr<detail::SharedEncoder> shared_a_, shared_b_;
    std::shared_ptr<detail::BranchEncoder> enc_a_, enc_b_;
    std::shared_ptr<detail::BranchDecoder> dec_a_, dec_b_;
    std::shared_ptr<detail::FusionHead> fuse_;

    static void validate(const NetworkConfig& cfg) {
        if (cfg.scale < 1) throw ConfigError("NetworkConfig: scale must be >= 1");
        if (cfg.input_channels < 1)
            throw ConfigError("NetworkConfig: input_channels must be >= 1");
        if (cfg.base_width < 4 || cfg.base_width % 4 != 0)
            throw ConfigError(
                "NetworkConfig: base_width must be a positive multiple of 4");
    }

    static std::size_t scaled(const NetworkConfig& cfg, std::size_t w) {
        const std::size_t s = w / cfg.scale;
        if (s < 1)
            throw ConfigError("NetworkConfig: scale " +
                              std::to_string(cfg.scale) +
                              " exceeds layer width " + std::to_string(w));
        return s;
    }

    static std::size_t pad_to_16(std::size_t n) { return ((n + 15) / 16) * 16; }

    static std::shared_ptr<detail::SharedEncoder> make_shared_encoder(
        std::size_t in_c, std::size_t w1, std::size_t w2, std::size_t w3,
        Rng& rng) {
        auto s = std::make_shared<detail::SharedEncoder>();
        s->d1 = detail::make_dconv(in_c, w1, rng);
        s->d2 = detail::make_dconv(w1, w2, rng);
        s->d3 = detail::make_dconv(w2, w3, rng);
        return s;
    }

    static std::shared_ptr<detail::BranchEncoder> make_branch_encoder(
        std::size_t w3, std::size_t w4, std::size_t w5, Rng& rng) {
        auto e = std::make_shared<detail::BranchEncoder>();
        e->d4 = detail::make_dconv(w3, w4, rng);
        e->d5 = detail::make_dconv(w4, w5, rng);
        return e;
    }

    static std::shared_ptr<detail::BranchDecoder> make_branch_decoder(
        std::size_t w1, std::size_t w2, std::size_t w3, std::size_t w4,
        std::size_t w5, Rng& rng) {
        auto d = std::make_shared<detail::BranchDecoder>();
        d->t6 = detail::make_tconv(w5, w4, rng);
        d->d6 = detail::make_dconv(2 * w4, w4, rng);
        d->t7 = detail::make_tconv(w4, w3, rng);
        d->d7 = detail::make_dconv(2 * w3, w3, rng);
        d->t8 = detail::make_tconv(w3, w2, rng);
        d->d8 = detail::make_dconv(2 * w2, w2, rng);
        d->t9 = detail::make_tconv(w2, w1, rng);
        d->d9 = detail::make_dconv(2 * w1, w1, rng);
        return d;
    }

    void require_built() const {
        if (!fuse_) throw StateError("ChangeDetector: not built");
    }

    void check_input(const Tensor& x, const char* which) const {
        const auto& s = x.shape();
        if (s.size() != 4)
            throw ShapeError(std::string("forward: ") + which +
                             " must be (B,C,H,W)");
        if (s[1] != cfg_.input_channels)
            throw ShapeError(std::string("forward: ") + which + " has " +
                             std::to_string(s[1]) + " channels, expected " +
                             std::to_string(cfg_.input_channels));
        if (s[2] % 16 != 0 || s[3] % 16 != 0)
            throw ShapeError(std::string("forward: ") + which +
                             " spatial dims must be divisible by 16");
    }

    // mirror-extend on the bottom/right edge, never repeating the edge row
    Tensor to_tensor(const RasterImage& img, std::size_t PH,
                     std::size_t PW) const {
        const std::size_t H = img.height, W = img.width, C = img.channels;
        Tensor t = Tensor::zeros({1, C, PH, PW});
        double* td = t.data().data();
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t y = 0; y < PH; ++y) {
                const std::size_t sy = y < H ? y : 2 * H - 2 - y;
                for (std::size_t x = 0; x < PW; ++x) {
                    const std::size_t sx = x < W ? x : 2 * W - 2 - x;
                    td[(c * PH + y) * PW + x] = img.at(sy, sx, c);
                }
            }
        return t;
    }

    static void add_unit(std::vector<std::pair<std::string, Tensor>>& out,
                         const std::string& prefix, detail::ConvBn& u) {
        out.emplace_back(prefix + ".weight", u.weight);
        out.emplace_back(prefix + ".bias", u.bias);
        out.emplace_back(prefix + ".bn.gamma", u.gamma);
        out.emplace_back(prefix + ".bn.beta", u.beta);
    }

    static void add_dconv(std::vector<std::pair<std::string, Tensor>>& out,
                          const std::string& prefix, detail::DConvBlock& b) {
        add_unit(out, prefix + ".0", b.c0);
        add_unit(out, prefix + ".1", b.c1);
    }

    // invoke the callbacks once per distinct parameter group, honoring aliasing
    template <class FS, class FE, class FD>
    void visit_groups(FS&& on_shared, FE&& on_enc, FD&& on_dec) {
        on_shared("shared", *shared_a_);
        if (shared_b_ != shared_a_) on_shared("shared_b", *shared_b_);
        on_enc("enc_a", *enc_a_);
        if (enc_b_ != enc_a_) on_enc("enc_b", *enc_b_);
        on_dec("dec_a", *dec_a_);
        if (dec_b_ != dec_a_) on_dec("dec_b", *dec_b_);
    }

    std::vector<std::pair<std::string, BatchNormState*>> named_stats() {
        std::vector<std::pair<std::string, BatchNormState*>> out;
        auto add_block = [&](const std::string& prefix, detail::DConvBlock& b) {
            out.emplace_back(prefix + ".0.bn", &b.c0.stats);
            out.emplace_back(prefix + ".1.bn", &b.c1.stats);
        };
        visit_groups([&](const std::string& p, detail::SharedEncoder& s) {
            add_block(p + ".dconv1", s.d1);
            add_block(p + ".dconv2", s.d2);
            add_block(p + ".dconv3", s.d3);
        },
        [&](const std::string& p, detail::BranchEncoder& e) {
            add_block(p + ".dconv4", e.d4);
            add_block(p + ".dconv5", e.d5);
        },
        [&](const std::string& p, detail::BranchDecoder& d) {
            add_block(p + ".dconv6", d.d6);
            add_block(p + ".dconv7", d.d7);
            add_block(p + ".dconv8", d.d8);
            add_block(p + ".dconv9", d.d9);
        });
        return out;
    }
};

inline ChangeDetector build(const NetworkConfig& cfg, Rng& rng) {
    return ChangeDetector::build(cfg, rng);
}

} // namespace usta
