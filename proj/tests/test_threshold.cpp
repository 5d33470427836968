#include <catch2/catch_amalgamated.hpp>

#include "usta/threshold.hpp"

#include <algorithm>

#include "oracles.hpp"
#include "testutil.hpp"

using namespace usta;

TEST_CASE("otsu separates a bimodal map", "[threshold]") {
    std::vector<double> v(100, 0.1);
    std::fill(v.begin() + 50, v.end(), 0.9);
    const OtsuResult r = otsu(ScalarMap(10, 10, v));
    REQUIRE(r.threshold > 0.1);
    REQUIRE(r.threshold < 0.9);
    std::size_t ones = 0;
    for (std::size_t i = 0; i < 100; ++i) {
        if (r.map.data[i]) ++ones;
        REQUIRE(r.map.data[i] == (v[i] == 0.9 ? 1 : 0));
    }
    REQUIRE(ones == 50);
}

TEST_CASE("otsu matches the exhaustive-search oracle", "[threshold]") {
    for (std::uint64_t seed = 1; seed <= 25; ++seed) {
        const ScalarMap map = testutil::random_map(32, 32, seed);
        const OtsuResult got = otsu(map);
        const oracle::OtsuOracleResult want = oracle::otsu_exhaustive(map);
        REQUIRE(got.threshold == want.threshold);
        const ChangeMap expect = fixed_threshold(map, want.threshold);
        REQUIRE(got.map.data == expect.data);
    }
}

TEST_CASE("otsu on a constant map returns the sentinel", "[threshold]") {
    const OtsuResult r = otsu(ScalarMap(4, 4, std::vector<double>(16, 0.37)));
    REQUIRE(r.threshold == 1.0);
    for (auto v : r.map.data) REQUIRE(v == 0);
}

TEST_CASE("fixed threshold boundary is inclusive", "[threshold]") {
    const ScalarMap map(1, 3, {0.49, 0.5, 0.51});
    REQUIRE(fixed_threshold(map, 0.5).data == std::vector<std::uint8_t>{0, 1, 1});
    REQUIRE(fixed_threshold(map, 0.0).data == std::vector<std::uint8_t>{1, 1, 1});
    REQUIRE(fixed_threshold(map, 1.0).data == std::vector<std::uint8_t>{0, 0, 0});
    REQUIRE_THROWS_AS(fixed_threshold(map, 1.5), ArgumentError);
    REQUIRE_THROWS_AS(fixed_threshold(map, -0.1), ArgumentError);
}

TEST_CASE("otsu labeling equals fixed threshold at its own threshold", "[threshold]") {
    for (std::uint64_t seed = 30; seed < 36; ++seed) {
        const ScalarMap map = testutil::random_map(17, 23, seed);
        const OtsuResult r = otsu(map);
        REQUIRE(r.map.data == fixed_threshold(map, r.threshold).data);
    }
}

TEST_CASE("raising the threshold never adds positives", "[threshold]") {
    const ScalarMap map = testutil::random_map(16, 16, 99);
    const ChangeMap lo = fixed_threshold(map, 0.3);
    const ChangeMap hi = fixed_threshold(map, 0.7);
    for (std::size_t i = 0; i < map.data.size(); ++i)
        if (hi.data[i]) REQUIRE(lo.data[i]);
}

TEST_CASE("otsu threshold ignores pixel order", "[threshold]") {
    ScalarMap map = testutil::random_map(16, 16, 123);
    const double t = otsu(map).threshold;
    Rng rng(7);
    rng.shuffle(map.data);
    REQUIRE(otsu(map).threshold == t);
}

TEST_CASE("otsu rejects an empty map", "[threshold]") {
    REQUIRE_THROWS_AS(otsu(ScalarMap()), ArgumentError);
}
