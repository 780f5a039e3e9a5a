#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "keyreg/geometry.hpp"
#include "support/oracles.hpp"

using namespace keyreg;

namespace {

constexpr double kPi = 3.14159265358979323846;

double max_entry_diff(const Homography& a, const Homography& b) {
    double m = 0.0;
    for (int k = 0; k < 9; ++k) m = std::max(m, std::abs(a.m()[k] - b.m()[k]));
    return m;
}

Homography random_homography(Rng& rng) {
    HomographySampleRanges r;  // full default ranges
    return sample_homography(r, {50.0, 40.0}, rng);
}

}  // namespace

TEST_CASE("constructors produce the expected matrices") {
    const Homography id;
    CHECK(max_entry_diff(id, Homography::identity()) == 0.0);
    for (int k = 0; k < 9; ++k)
        CHECK(id.m()[k] == (k % 4 == 0 ? 1.0 : 0.0));

    const Homography t = Homography::translation(3.5, -2.0);
    CHECK(t.at(0, 2) == 3.5);
    CHECK(t.at(1, 2) == -2.0);

    const Homography r = Homography::rotation(kPi / 2.0);
    const Vec2 p = apply(r, {1.0, 0.0});
    CHECK(p.x == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(p.y == doctest::Approx(1.0));

    const Homography s = Homography::scaling(2.5);
    CHECK(s.at(0, 0) == 2.5);
    CHECK(s.at(1, 1) == 2.5);

    const Homography sh = Homography::shearing(0.2, -0.1);
    CHECK(sh.at(0, 1) == 0.2);
    CHECK(sh.at(1, 0) == -0.1);
}

TEST_CASE("construction normalizes the bottom-right entry") {
    const Homography h({2, 0, 0, 0, 2, 0, 0, 0, 2});
    CHECK(h.m()[8] == 1.0);
    CHECK(h.at(0, 0) == 1.0);
}

TEST_CASE("singular matrices are rejected") {
    CHECK_THROWS_AS(Homography({1, 2, 3, 2, 4, 6, 0, 0, 1}), std::invalid_argument);
    CHECK_THROWS_AS(Homography({0, 0, 0, 0, 0, 0, 0, 0, 0}), std::invalid_argument);
}

TEST_CASE("inverse agrees with the adjugate route") {
    Rng rng(41);
    for (int trial = 0; trial < 200; ++trial) {
        const Homography h = random_homography(rng);
        const Homography inv = h.inverse();
        const Homography inv_oracle = oracle::inverse_adjugate(h);
        CHECK(max_entry_diff(inv, inv_oracle) < 1e-9);
        CHECK(max_entry_diff(h * inv, Homography::identity()) < 1e-9);
    }
}

TEST_CASE("composition applies right-to-left") {
    Rng rng(42);
    for (int trial = 0; trial < 100; ++trial) {
        const Homography a = random_homography(rng);
        const Homography b = random_homography(rng);
        const Vec2 p{rng.uniform(-30.0, 30.0), rng.uniform(-30.0, 30.0)};
        const auto direct = oracle::project(a, *oracle::project(b, p));
        const Vec2 composed = apply(a * b, p);
        REQUIRE(direct.has_value());
        CHECK(composed.x == doctest::Approx(direct->x).epsilon(1e-9));
        CHECK(composed.y == doctest::Approx(direct->y).epsilon(1e-9));
    }
}

TEST_CASE("apply rejects points mapped to infinity") {
    // bottom row (0.1, 0, 1): x = -10 has zero denominator
    const Homography h({1, 0, 0, 0, 1, 0, 0.1, 0, 1});
    CHECK_THROWS_AS(apply(h, {-10.0, 0.0}), std::domain_error);
    CHECK_NOTHROW(apply(h, {5.0, 3.0}));
}

TEST_CASE("compose_pair of a transform with itself is the identity") {
    Rng rng(43);
    for (int trial = 0; trial < 200; ++trial) {
        const Homography g = random_homography(rng);
        CHECK(max_entry_diff(compose_pair(g, g), Homography::identity()) < 1e-9);
    }
}

TEST_CASE("compose_pair relates the two warped views") {
    // q = g'(p), r = g(p)  =>  compose_pair(g', g) maps r to q
    Rng rng(44);
    const Homography g = random_homography(rng);
    const Homography gp = random_homography(rng);
    const Homography h = compose_pair(gp, g);
    for (int trial = 0; trial < 20; ++trial) {
        const Vec2 p{rng.uniform(0.0, 100.0), rng.uniform(0.0, 80.0)};
        const Vec2 q = apply(gp, p);
        const Vec2 r = apply(g, p);
        const Vec2 mapped = apply(h, r);
        CHECK(mapped.x == doctest::Approx(q.x).epsilon(1e-9));
        CHECK(mapped.y == doctest::Approx(q.y).epsilon(1e-9));
    }
}

TEST_CASE("sampled factors respect their ranges") {
    HomographySampleRanges r;
    Rng rng(45);
    for (int trial = 0; trial < 500; ++trial) {
        const HomographyFactors f = sample_factors(r, rng);
        CHECK(std::abs(f.rot_deg) <= r.rot_max_deg);
        CHECK(f.scale >= r.scale_min);
        CHECK(f.scale <= r.scale_max);
        CHECK(f.shear_x >= r.shear_min);
        CHECK(f.shear_x <= r.shear_max);
        CHECK(std::abs(f.persp_x) >= r.persp_min);
        CHECK(std::abs(f.persp_x) <= r.persp_max);
        CHECK(std::abs(f.persp_y) <= r.persp_max);
        CHECK(std::abs(f.trans_x) <= r.trans_max_x);
        CHECK(std::abs(f.trans_y) <= r.trans_max_y);
    }
}

TEST_CASE("range validation rejects nonsense") {
    HomographySampleRanges r;
    r.scale_min = -0.1;
    CHECK_THROWS_AS(r.validate(), std::invalid_argument);
    r = HomographySampleRanges{};
    r.scale_min = 1.4;  // above scale_max
    CHECK_THROWS_AS(r.validate(), std::invalid_argument);
    r = HomographySampleRanges{};
    r.persp_min = -1e-5;
    CHECK_THROWS_AS(r.validate(), std::invalid_argument);
    r = HomographySampleRanges{};
    r.trans_max_x = -1.0;
    CHECK_THROWS_AS(r.validate(), std::invalid_argument);
    r = HomographySampleRanges{};
    r.rot_max_deg = 90.0;
    CHECK_THROWS_AS(r.validate(), std::invalid_argument);
    CHECK_NOTHROW(HomographySampleRanges{}.validate());
    CHECK_NOTHROW(HomographySampleRanges::identity_only().validate());
}

TEST_CASE("identity-only ranges always sample the identity") {
    Rng rng(46);
    for (int trial = 0; trial < 10; ++trial) {
        const Homography g =
            sample_homography(HomographySampleRanges::identity_only(), {31.5, 31.5}, rng);
        CHECK(max_entry_diff(g, Homography::identity()) < 1e-12);
    }
}

TEST_CASE("factor composition pivots on the center") {
    const Vec2 center{20.0, 30.0};

    HomographyFactors f;  // all neutral
    f.trans_x = 4.0;
    f.trans_y = -7.0;
    const Homography t = compose_factors(f, center);
    CHECK(max_entry_diff(t, Homography::translation(4.0, -7.0)) < 1e-12);

    f = HomographyFactors{};
    f.rot_deg = 90.0;
    const Homography r = compose_factors(f, center);
    const Vec2 fixed = apply(r, center);
    CHECK(fixed.x == doctest::Approx(center.x).epsilon(1e-12));
    CHECK(fixed.y == doctest::Approx(center.y).epsilon(1e-12));
    // center + (5, 0) rotates to center + (0, 5)
    const Vec2 moved = apply(r, {center.x + 5.0, center.y});
    CHECK(moved.x == doctest::Approx(center.x).epsilon(1e-9));
    CHECK(moved.y == doctest::Approx(center.y + 5.0));

    f = HomographyFactors{};
    f.persp_x = 3e-4;
    f.persp_y = -2e-4;
    const Homography p = compose_factors(f, center);
    // the projective row is conjugated by the centering translation:
    // bottom row stays (px, py) but the matrix is re-normalized
    const double denom = 1.0 - f.persp_x * center.x - f.persp_y * center.y;
    CHECK(p.at(2, 0) == doctest::Approx(3e-4 / denom).epsilon(1e-12));
    CHECK(p.at(2, 1) == doctest::Approx(-2e-4 / denom).epsilon(1e-12));
    const Vec2 still = apply(p, center);
    CHECK(still.x == doctest::Approx(center.x).epsilon(1e-9));
    CHECK(still.y == doctest::Approx(center.y).epsilon(1e-9));
}

TEST_CASE("sampling is deterministic per seed") {
    HomographySampleRanges r;
    Rng rng1(47), rng2(47);
    for (int trial = 0; trial < 5; ++trial) {
        const Homography a = sample_homography(r, {10, 10}, rng1);
        const Homography b = sample_homography(r, {10, 10}, rng2);
        CHECK(max_entry_diff(a, b) == 0.0);
    }
}

TEST_CASE("identity warp reproduces the image") {
    Rng rng(48);
    GrayImage img(17, 13);
    for (double& v : img.pix) v = rng.uniform();
    const GrayImage out = warp_image(img, Homography::identity(), 17, 13);
    CHECK(out.pix == img.pix);
}

TEST_CASE("integer translation warp shifts content and fills with black") {
    Rng rng(49);
    GrayImage img(20, 10);
    for (double& v : img.pix) v = rng.uniform(0.1, 1.0);
    const GrayImage out = warp_image(img, Homography::translation(5.0, 0.0), 20, 10);
    for (int y = 0; y < 10; ++y) {
        for (int x = 5; x < 20; ++x) CHECK(out.at(x, y) == img.at(x - 5, y));
        for (int x = 0; x < 5; ++x) CHECK(out.at(x, y) == 0.0);
    }
}

TEST_CASE("fractional translation warp averages neighbors") {
    GrayImage img(8, 3);
    for (int y = 0; y < 3; ++y)
        for (int x = 0; x < 8; ++x) img.at(x, y) = x * 0.1;
    const GrayImage out = warp_image(img, Homography::translation(0.5, 0.0), 8, 3);
    for (int x = 2; x < 8; ++x)
        CHECK(out.at(x, 1) ==
              doctest::Approx((img.at(x - 1, 1) + img.at(x, 1)) / 2.0).epsilon(1e-12));
}

TEST_CASE("warp output dimensions are validated") {
    GrayImage img(4, 4);
    CHECK_THROWS_AS(warp_image(img, Homography::identity(), 0, 4), std::invalid_argument);
}

TEST_CASE("flip/scale decomposition") {
    const FlipScale plain = failure_decompose(Homography::scaling(3.0));
    CHECK_FALSE(plain.flip);
    CHECK(plain.scale == doctest::Approx(3.0));

    const FlipScale rot = failure_decompose(Homography::rotation(0.7));
    CHECK_FALSE(rot.flip);
    CHECK(rot.scale == doctest::Approx(1.0));

    // horizontal mirror: negative determinant
    const FlipScale mir = failure_decompose(Homography({-1, 0, 0, 0, 1, 0, 0, 0, 1}));
    CHECK(mir.flip);
    CHECK(mir.scale == doctest::Approx(1.0));

    const FlipScale rs = failure_decompose(Homography::rotation(0.3) * Homography::scaling(2.0));
    CHECK_FALSE(rs.flip);
    CHECK(rs.scale == doctest::Approx(2.0));
}

TEST_CASE("homography files round-trip exactly") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "keyreg_test_geometry";
    fs::create_directories(dir);
    const std::string path = (dir / "h.txt").string();

    Rng rng(50);
    for (int trial = 0; trial < 20; ++trial) {
        const Homography h = random_homography(rng);
        write_homography(h, path);
        const Homography back = read_homography(path);
        CHECK(max_entry_diff(h, back) == 0.0);  // 17 digits reproduce doubles
    }
    fs::remove_all(dir);
}

TEST_CASE("homography reader rejects broken files") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "keyreg_test_geometry2";
    fs::create_directories(dir);
    const std::string path = (dir / "h.txt").string();

    CHECK_THROWS_AS(read_homography((dir / "missing.txt").string()), std::runtime_error);

    {
        FILE* f = std::fopen(path.c_str(), "w");
        std::fputs("1 0 0 0 1", f);  // too few numbers
        std::fclose(f);
    }
    CHECK_THROWS_AS(read_homography(path), std::runtime_error);

    {
        FILE* f = std::fopen(path.c_str(), "w");
        std::fputs("1 0 0 0 1 0 zero 0 1", f);
        std::fclose(f);
    }
    CHECK_THROWS_AS(read_homography(path), std::runtime_error);
    fs::remove_all(dir);
}
