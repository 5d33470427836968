#include <catch2/catch_amalgamated.hpp>

#include <map>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "testutil.hpp"
#include "usta/network.hpp"

using namespace usta;

namespace {

std::map<std::string, std::vector<std::size_t>> shape_table(ChangeDetector& net) {
    std::map<std::string, std::vector<std::size_t>> m;
    for (auto& [name, t] : net.named_parameters()) m[name] = t.shape();
    return m;
}

Tensor random_input(std::size_t b, std::size_t c, std::size_t hw, Rng& rng) {
    Tensor t = Tensor::zeros({b, c, hw, hw});
    for (double& v : t.data()) v = rng.uniform();
    return t;
}

} // namespace

TEST_CASE("full-width build matches the published channel counts", "[network]") {
    Rng rng(11);
    NetworkConfig cfg;
    cfg.scale = 1;
    ChangeDetector net = ChangeDetector::build(cfg, rng);
    auto s = shape_table(net);

    using V = std::vector<std::size_t>;
    CHECK(s.at("shared.dconv1.0.weight") == V{64, 3, 3, 3});
    CHECK(s.at("shared.dconv1.1.weight") == V{64, 64, 3, 3});
    CHECK(s.at("shared.dconv2.0.weight") == V{128, 64, 3, 3});
    CHECK(s.at("shared.dconv3.0.weight") == V{256, 128, 3, 3});
    CHECK(s.at("enc_a.dconv4.0.weight") == V{512, 256, 3, 3});
    CHECK(s.at("enc_a.dconv5.0.weight") == V{1024, 512, 3, 3});
    CHECK(s.at("enc_b.dconv5.1.weight") == V{1024, 1024, 3, 3});
    CHECK(s.at("dec_a.tconv6.weight") == V{1024, 512, 2, 2});
    CHECK(s.at("dec_a.dconv6.0.weight") == V{512, 1024, 3, 3});
    CHECK(s.at("dec_a.tconv7.weight") == V{512, 256, 2, 2});
    CHECK(s.at("dec_a.dconv7.0.weight") == V{256, 512, 3, 3});
    CHECK(s.at("dec_a.tconv8.weight") == V{256, 128, 2, 2});
    CHECK(s.at("dec_a.dconv8.0.weight") == V{128, 256, 3, 3});
    CHECK(s.at("dec_b.tconv9.weight") == V{128, 64, 2, 2});
    CHECK(s.at("dec_b.dconv9.0.weight") == V{64, 128, 3, 3});
    CHECK(s.at("fuse.conv10.weight") == V{16, 128, 1, 1});
    CHECK(s.at("fuse.conv11.weight") == V{1, 16, 1, 1});
    CHECK(s.at("shared.dconv1.0.bn.gamma") == V{64});

    // pooling chain 112 -> 56 -> 28 -> 14 -> 7, mirrored back up to 112
    std::size_t side = 112;
    for (int level = 0; level < 4; ++level) side /= 2;
    CHECK(side == 7);

    NoGradGuard guard;
    Tensor x1 = random_input(1, 3, 112, rng);
    Tensor x2 = random_input(1, 3, 112, rng);
    Tensor y = net.forward(x1, x2, BnMode::eval);
    CHECK(y.shape() == V{1, 1, 112, 112});
    for (double v : y.data()) {
        REQUIRE(v > 0.0);
        REQUIRE(v < 1.0);
    }
}

TEST_CASE("scale divides every width and rejects overscale", "[network]") {
    Rng rng(12);
    NetworkConfig cfg;
    cfg.scale = 8;
    cfg.input_channels = 3;
    ChangeDetector net = ChangeDetector::build(cfg, rng);
    auto s = shape_table(net);

    using V = std::vector<std::size_t>;
    CHECK(s.at("shared.dconv1.0.weight") == V{8, 3, 3, 3});
    CHECK(s.at("enc_a.dconv5.0.weight") == V{128, 64, 3, 3});
    CHECK(s.at("fuse.conv10.weight") == V{2, 16, 1, 1});
    CHECK(s.at("fuse.conv11.weight") == V{1, 2, 1, 1});

    NoGradGuard guard;
    Tensor x1 = random_input(1, 3, 32, rng);
    Tensor x2 = random_input(1, 3, 32, rng);
    Tensor y = net.forward(x1, x2, BnMode::eval);
    CHECK(y.shape() == V{1, 1, 32, 32});

    NetworkConfig bad = cfg;
    bad.scale = 32; // head width 16 would land below one channel
    CHECK_THROWS_AS(ChangeDetector::build(bad, rng), ConfigError);
}

TEST_CASE("branch modes alias parameter groups as advertised", "[network]") {
    NetworkConfig cfg;
    cfg.scale = 16;
    Rng r1(5), r2(5), r3(5);
    cfg.branch_mode = BranchMode::single;
    ChangeDetector single = ChangeDetector::build(cfg, r1);
    cfg.branch_mode = BranchMode::composite;
    ChangeDetector composite = ChangeDetector::build(cfg, r2);
    cfg.branch_mode = BranchMode::dual;
    ChangeDetector dual = ChangeDetector::build(cfg, r3);

    CHECK(single.parameter_count() < composite.parameter_count());
    CHECK(composite.parameter_count() < dual.parameter_count());

    auto has_prefix = [](ChangeDetector& net, const std::string& prefix) {
        for (auto& [name, t] : net.named_parameters())
            if (name.rfind(prefix, 0) == 0) return true;
        return false;
    };
    CHECK_FALSE(has_prefix(single, "enc_b."));
    CHECK_FALSE(has_prefix(single, "dec_b."));
    CHECK_FALSE(has_prefix(single, "shared_b."));
    CHECK(has_prefix(composite, "enc_b."));
    CHECK(has_prefix(composite, "dec_b."));
    CHECK_FALSE(has_prefix(composite, "shared_b."));
    CHECK(has_prefix(dual, "shared_b."));
}

TEST_CASE("branch A and branch B expose identical shape lists", "[network]") {
    Rng rng(6);
    NetworkConfig cfg;
    cfg.scale = 16;
    cfg.branch_mode = BranchMode::composite;
    ChangeDetector net = ChangeDetector::build(cfg, rng);

    std::vector<std::vector<std::size_t>> a_shapes, b_shapes;
    for (auto& [name, t] : net.named_parameters()) {
        if (name.rfind("enc_a.", 0) == 0 || name.rfind("dec_a.", 0) == 0)
            a_shapes.push_back(t.shape());
        if (name.rfind("enc_b.", 0) == 0 || name.rfind("dec_b.", 0) == 0)
            b_shapes.push_back(t.shape());
    }
    REQUIRE(!a_shapes.empty());
    CHECK(a_shapes == b_shapes);
}

TEST_CASE("fully shared branches make the forward input-symmetric", "[network]") {
    Rng rng(7);
    NetworkConfig cfg;
    cfg.scale = 16;
    cfg.branch_mode = BranchMode::single;
    ChangeDetector net = ChangeDetector::build(cfg, rng);

    NoGradGuard guard;
    Tensor x = random_input(1, 3, 16, rng);
    Tensor ab = net.forward(x, x, BnMode::eval);
    Tensor ba = net.forward(x, x, BnMode::eval);
    CHECK(ab.data() == ba.data());
}

TEST_CASE("eval forward is bitwise repeatable", "[network]") {
    Rng rng(8);
    NetworkConfig cfg;
    cfg.scale = 16;
    ChangeDetector net = ChangeDetector::build(cfg, rng);

    NoGradGuard guard;
    Tensor x1 = random_input(2, 3, 16, rng);
    Tensor x2 = random_input(2, 3, 16, rng);
    Tensor first = net.forward(x1, x2, BnMode::eval);
    Tensor second = net.forward(x1, x2, BnMode::eval);
    CHECK(first.data() == second.data());
}

TEST_CASE("forward validates shapes", "[network]") {
    Rng rng(9);
    NetworkConfig cfg;
    cfg.scale = 16;
    ChangeDetector net = ChangeDetector::build(cfg, rng);

    NoGradGuard guard;
    Tensor ok = random_input(1, 3, 16, rng);
    Tensor odd = random_input(1, 3, 24, rng); // 24 is not a multiple of 16
    Tensor thin = random_input(1, 2, 16, rng);
    CHECK_THROWS_AS(net.forward(ok, odd, BnMode::eval), ShapeError);
    CHECK_THROWS_AS(net.forward(odd, odd, BnMode::eval), ShapeError);
    CHECK_THROWS_AS(net.forward(thin, thin, BnMode::eval), ShapeError);
    CHECK_THROWS_AS(net.forward(ok, random_input(2, 3, 16, rng), BnMode::eval),
                    ShapeError);
}

TEST_CASE("prediction pads awkward sizes and crops back", "[network]") {
    Rng rng(10);
    NetworkConfig cfg;
    cfg.scale = 16;
    ChangeDetector net = ChangeDetector::build(cfg, rng);

    RasterImage x1 = testutil::random_image(30, 30, 3, 100);
    RasterImage x2 = testutil::random_image(30, 30, 3, 101);
    auto [di, cm] = net.predict_change_map(x1, x2);
    CHECK(di.height == 30);
    CHECK(di.width == 30);
    CHECK(cm.height == 30);
    CHECK(cm.width == 30);

    ChangeMap again = fixed_threshold(di, 0.5);
    CHECK(cm.data == again.data);

    RasterImage t1 = testutil::random_image(9, 17, 3, 102);
    RasterImage t2 = testutil::random_image(9, 17, 3, 103);
    auto [di2, cm2] = net.predict_change_map(t1, t2);
    CHECK(di2.height == 9);
    CHECK(di2.width == 17);

    RasterImage small1 = testutil::random_image(8, 16, 3, 104);
    RasterImage small2 = testutil::random_image(8, 16, 3, 105);
    CHECK_THROWS_AS(net.predict_change_map(small1, small2), ShapeError);

    RasterImage gray1 = testutil::random_image(32, 32, 1, 106);
    RasterImage gray2 = testutil::random_image(32, 32, 1, 107);
    CHECK_THROWS_AS(net.predict_change_map(gray1, gray2), ShapeError);
}

TEST_CASE("untrained nets emit mixed change maps", "[network]") {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        Rng rng(seed);
        NetworkConfig cfg;
        cfg.scale = 8;
        ChangeDetector net = ChangeDetector::build(cfg, rng);
        RasterImage x1 = testutil::random_image(32, 32, 3, 200 + seed);
        RasterImage x2 = testutil::random_image(32, 32, 3, 300 + seed);
        auto [di, cm] = net.predict_change_map(x1, x2);
        std::size_t changed = 0;
        for (std::uint8_t v : cm.data) changed += v;
        CHECK(changed > 0);
        CHECK(changed < cm.data.size());
    }
}

TEST_CASE("end-to-end gradients match finite differences", "[network]") {
    Rng rng(13);
    NetworkConfig cfg;
    cfg.scale = 16;
    ChangeDetector net = ChangeDetector::build(cfg, rng);

    Tensor x1 = random_input(2, 3, 16, rng);
    Tensor x2 = random_input(2, 3, 16, rng);
    std::vector<double> target(2 * 16 * 16);
    std::vector<double> weight(2 * 16 * 16);
    for (double& v : target) v = rng.uniform() < 0.4 ? 1.0 : 0.0;
    for (double& v : weight) {
        const double u = rng.uniform();
        v = u < 0.25 ? 0.0 : (u < 0.5 ? 0.6 : 1.0);
    }

    std::vector<Tensor> params = net.parameters();
    auto make_loss = [&]() {
        return weighted_bce(net.forward(x1, x2, BnMode::train), target, weight);
    };
    // step 1e-6: wider steps cross ReLU/pool kinks downstream of the
    // perturbed weight, polluting the quotient with non-gradient slope
    const double err = oracle::gradcheck(params, make_loss, 701, 1e-6);
    CHECK(err <= 1e-4);
}

TEST_CASE("checkpoints round-trip the full state", "[network]") {
    NetworkConfig cfg;
    cfg.scale = 16;
    Rng r1(21), r2(22);
    ChangeDetector saved = ChangeDetector::build(cfg, r1);

    // leave distinct running stats behind before saving
    {
        Rng rx(23);
        Tensor x1 = random_input(2, 3, 16, rx);
        Tensor x2 = random_input(2, 3, 16, rx);
        NoGradGuard guard;
        saved.forward(x1, x2, BnMode::train);
    }
    const std::string path = testutil::tmp_path("net_roundtrip.ckpt");
    saved.save(path);

    ChangeDetector loaded = ChangeDetector::build(cfg, r2);
    loaded.load(path);

    Rng rx(24);
    NoGradGuard guard;
    Tensor x1 = random_input(1, 3, 16, rx);
    Tensor x2 = random_input(1, 3, 16, rx);
    Tensor a = saved.forward(x1, x2, BnMode::eval);
    Tensor b = loaded.forward(x1, x2, BnMode::eval);
    CHECK(a.data() == b.data());

    NetworkConfig other = cfg;
    other.scale = 8;
    Rng r3(25);
    ChangeDetector mismatched = ChangeDetector::build(other, r3);
    CHECK_THROWS_AS(mismatched.load(path), ParseError);
}
