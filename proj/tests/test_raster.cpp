#include <catch2/catch_amalgamated.hpp>

#include "usta/raster.hpp"

#include "testutil.hpp"

using namespace usta;
using testutil::read_bytes;
using testutil::tmp_path;
using testutil::write_bytes;

TEST_CASE("pgm read scales bytes into [0,1]", "[raster]") {
    const auto path = tmp_path("basic.pgm");
    write_bytes(path, {'P', '5', '\n', '2', ' ', '2', '\n', '2', '5', '5', '\n',
                       0, 255, 128, 64});
    const RasterImage img = read_image(path);
    REQUIRE(img.height == 2);
    REQUIRE(img.width == 2);
    REQUIRE(img.channels == 1);
    REQUIRE(img.data[0] == 0.0);
    REQUIRE(img.data[1] == 1.0);
    REQUIRE(img.data[2] == 128.0 / 255.0);
    REQUIRE(img.data[3] == 64.0 / 255.0);
}

TEST_CASE("ppm read yields three channels", "[raster]") {
    const auto path = tmp_path("basic.ppm");
    write_bytes(path, {'P', '6', '\n', '1', ' ', '1', '\n', '2', '5', '5', '\n',
                       255, 0, 0});
    const RasterImage img = read_image(path);
    REQUIRE(img.channels == 3);
    REQUIRE(img.data == std::vector<double>{1.0, 0.0, 0.0});
}

TEST_CASE("unsupported magic is rejected", "[raster]") {
    const auto path = tmp_path("bad_magic.pbm");
    write_bytes(path, {'P', '4', '\n', '1', ' ', '1', '\n', 0});
    REQUIRE_THROWS_AS(read_image(path), ParseError);
}

TEST_CASE("header comments and whitespace are tolerated", "[raster]") {
    const auto path = tmp_path("comments.pgm");
    std::vector<std::uint8_t> bytes;
    const std::string header = "P5\n# a comment\n 2\t1 # trailing\n255\n";
    bytes.insert(bytes.end(), header.begin(), header.end());
    bytes.push_back(10);
    bytes.push_back(20);
    write_bytes(path, bytes);
    const RasterImage img = read_image(path);
    REQUIRE(img.height == 1);
    REQUIRE(img.width == 2);
    REQUIRE(img.data[0] == 10.0 / 255.0);
}

TEST_CASE("truncated payload names an offset", "[raster]") {
    const auto path = tmp_path("short.pgm");
    write_bytes(path, {'P', '5', '\n', '2', ' ', '2', '\n', '2', '5', '5', '\n', 7});
    try {
        read_image(path);
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        REQUIRE(std::string(e.what()).find("byte offset") != std::string::npos);
    }
}

TEST_CASE("maxval other than 255 is rejected", "[raster]") {
    const auto path = tmp_path("maxval.pgm");
    write_bytes(path, {'P', '5', '\n', '1', ' ', '1', '\n', '6', '5', '\n', 3});
    REQUIRE_THROWS_AS(read_image(path), ParseError);
}

TEST_CASE("change map writes 0/255 payload", "[raster]") {
    const auto path = tmp_path("cm.pgm");
    write_change_map(ChangeMap(1, 2, {0, 1}), path);
    const auto bytes = read_bytes(path);
    REQUIRE(bytes.size() >= 2);
    REQUIRE(bytes[bytes.size() - 2] == 0);
    REQUIRE(bytes[bytes.size() - 1] == 255);
}

TEST_CASE("change map round-trips", "[raster]") {
    const auto path = tmp_path("cm_rt.pgm");
    const ChangeMap cm = testutil::random_change_map(9, 7, 42);
    write_change_map(cm, path);
    const ChangeMap back = read_change_map(path);
    REQUIRE(back.height == cm.height);
    REQUIRE(back.width == cm.width);
    REQUIRE(back.data == cm.data);
}

TEST_CASE("empty change map cannot be written", "[raster]") {
    REQUIRE_THROWS_AS(write_change_map(ChangeMap(), tmp_path("never.pgm")),
                      ArgumentError);
}

TEST_CASE("scalar map container is 20 bytes for one value", "[raster]") {
    const auto path = tmp_path("one.ustaf");
    write_scalar_map(ScalarMap(1, 1, {0.5}), path);
    const auto bytes = read_bytes(path);
    REQUIRE(bytes.size() == 20);
    REQUIRE(bytes[0] == 'U');
    REQUIRE(bytes[5] == '1');
    const ScalarMap back = read_scalar_map(path);
    REQUIRE(back.data[0] == 0.5);
}

TEST_CASE("scalar map payload size must match header", "[raster]") {
    const auto path = tmp_path("mismatch.ustaf");
    std::vector<std::uint8_t> bytes = {'U', 'S', 'T', 'A', 'F', '1', 0, 0,
                                       2,   0,   0,   0,   3,   0,   0, 0};
    bytes.resize(bytes.size() + 4 * 5); // header claims 6 values, give 5
    write_bytes(path, bytes);
    REQUIRE_THROWS_AS(read_scalar_map(path), ParseError);
}

TEST_CASE("scalar map of zeros round-trips", "[raster]") {
    const auto path = tmp_path("zeros.ustaf");
    const ScalarMap map(2, 3);
    write_scalar_map(map, path);
    const ScalarMap back = read_scalar_map(path);
    REQUIRE(back.height == 2);
    REQUIRE(back.width == 3);
    REQUIRE(back.data == map.data);
}

TEST_CASE("scalar map round-trip is lossless at 32-bit precision", "[raster]") {
    const auto path = tmp_path("rt.ustaf");
    const ScalarMap map = testutil::random_map(5, 4, 7);
    write_scalar_map(map, path);
    const ScalarMap a = read_scalar_map(path);
    write_scalar_map(a, path);
    const ScalarMap b = read_scalar_map(path);
    REQUIRE(a.data == b.data); // second pass exact: floats already 32-bit
    for (std::size_t i = 0; i < map.data.size(); ++i)
        REQUIRE(a.data[i] == Catch::Approx(map.data[i]).margin(1e-7));
}

TEST_CASE("image read-write-read is idempotent", "[raster]") {
    const auto path = tmp_path("idem.ppm");
    write_image(testutil::random_image(6, 5, 3, 11), path);
    const RasterImage first = read_image(path);
    write_image(first, tmp_path("idem2.ppm"));
    const RasterImage second = read_image(tmp_path("idem2.ppm"));
    REQUIRE(first.data == second.data);
    for (double v : first.data) {
        REQUIRE(v >= 0.0);
        REQUIRE(v <= 1.0);
    }
}

TEST_CASE("raster type invariants are enforced", "[raster]") {
    REQUIRE_THROWS_AS(RasterImage(0, 3, 1), ShapeError);
    REQUIRE_THROWS_AS(RasterImage(1, 1, 1, {1.5}), ArgumentError);
    REQUIRE_THROWS_AS(ScalarMap(2, 2, {0.0, 0.1, 0.2}), ShapeError);
    REQUIRE_THROWS_AS(ChangeMap(1, 1, {2}), ArgumentError);
    REQUIRE_THROWS_AS(read_image(tmp_path("does_not_exist.pgm")), IoError);
}
