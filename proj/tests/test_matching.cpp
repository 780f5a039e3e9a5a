#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "keyreg/matching.hpp"
#include "keyreg/rng.hpp"
#include "support/oracles.hpp"

using namespace keyreg;

namespace {

Descriptor unit_at(int k, double v = 1.0) {
    Descriptor d{};
    d[k] = v;
    return d;
}

std::vector<Descriptor> random_set(Rng& rng, int n, bool with_zeros, bool with_dups) {
    std::vector<Descriptor> out(n);
    for (int i = 0; i < n; ++i)
        for (int k = 0; k < 16; ++k) out[i][k] = rng.uniform(0.05, 1.0);
    if (with_zeros && n > 1) out[rng.uniform_int(n)] = Descriptor{};
    if (with_dups && n > 3) {
        const int src = static_cast<int>(rng.uniform_int(n));
        int dst = static_cast<int>(rng.uniform_int(n));
        if (dst == src) dst = (dst + 1) % n;
        out[dst] = out[src];  // exact duplicate forces distance ties
    }
    return out;
}

bool same_matches(const std::vector<Match>& a, const std::vector<Match>& b) {
    if (a.size() != b.size()) return false;
    for (size_t k = 0; k < a.size(); ++k)
        if (a[k].idx_a != b[k].idx_a || a[k].idx_b != b[k].idx_b ||
            a[k].dist != b[k].dist)
            return false;
    return true;
}

}  // namespace

TEST_CASE("nearest_two ranks candidates and resolves ties to the lower index") {
    std::vector<Descriptor> set = {unit_at(0), unit_at(1), unit_at(2)};
    const NearestTwo r = nearest_two(unit_at(0, 0.9), set);
    CHECK(r.i1 == 0);
    CHECK(r.d1 == doctest::Approx(0.1).epsilon(1e-12));
    // candidates 1 and 2 are equidistant from the query; the lower index wins
    CHECK(r.i2 == 1);
    CHECK(r.d2 == doctest::Approx(std::sqrt(0.81 + 1.0)).epsilon(1e-12));

    // a zero descriptor never participates
    set[0] = Descriptor{};
    const NearestTwo r2 = nearest_two(unit_at(0, 0.9), set);
    CHECK(r2.i1 == 1);
    CHECK(r2.i2 == 2);

    const NearestTwo r3 = nearest_two(unit_at(0), {Descriptor{}, Descriptor{}});
    CHECK(r3.i1 == -1);
    CHECK(r3.i2 == -1);
    CHECK(std::isinf(r3.d1));
    CHECK(std::isinf(r3.d2));

    const NearestTwo r4 = nearest_two(unit_at(0), {unit_at(3)});
    CHECK(r4.i1 == 0);
    CHECK(r4.i2 == -1);
    CHECK(std::isinf(r4.d2));
}

TEST_CASE("cross-check keeps exactly the mutual nearest neighbors") {
    // a0 <-> b1 mutual; a1 -> b1 but b1 -> a0, so a1 drops out
    std::vector<Descriptor> a = {unit_at(0), unit_at(0, 0.7)};
    std::vector<Descriptor> b = {unit_at(5), unit_at(0, 0.95)};
    const std::vector<Match> m = cross_check_match(a, b);
    REQUIRE(m.size() == 1);
    CHECK(m[0].idx_a == 0);
    CHECK(m[0].idx_b == 1);
    CHECK(m[0].dist == doctest::Approx(0.05).epsilon(1e-9));

    CHECK(cross_check_match({}, b).empty());
    CHECK(cross_check_match(a, {}).empty());
    // zero descriptors on either side never match
    CHECK(cross_check_match({Descriptor{}}, {Descriptor{}}).empty());
}

TEST_CASE("cross-check agrees with the rescanning oracle on random sets") {
    Rng rng(300);
    for (int trial = 0; trial < 100; ++trial) {
        const int na = 1 + static_cast<int>(rng.uniform_int(30));
        const int nb = 1 + static_cast<int>(rng.uniform_int(30));
        const auto a = random_set(rng, na, trial % 2 == 0, trial % 3 == 0);
        const auto b = random_set(rng, nb, trial % 2 == 1, trial % 3 == 1);
        CAPTURE(trial);
        CHECK(same_matches(cross_check_match(a, b), oracle::cross_check(a, b)));
    }
}

TEST_CASE("cross-check output is ordered by the a-side index") {
    Rng rng(301);
    const auto a = random_set(rng, 25, false, false);
    const auto b = random_set(rng, 25, false, false);
    const std::vector<Match> m = cross_check_match(a, b);
    REQUIRE(m.size() > 1);
    for (size_t k = 1; k < m.size(); ++k) CHECK(m[k - 1].idx_a < m[k].idx_a);
}

TEST_CASE("ratio-test matching agrees with the oracle and applies its edge rules") {
    Rng rng(302);
    for (int trial = 0; trial < 100; ++trial) {
        const int na = 1 + static_cast<int>(rng.uniform_int(30));
        const int nb = 1 + static_cast<int>(rng.uniform_int(30));
        const auto a = random_set(rng, na, trial % 2 == 0, trial % 3 == 0);
        const auto b = random_set(rng, nb, trial % 2 == 1, trial % 3 == 1);
        const double t = rng.uniform(0.05, 1.0);
        CAPTURE(trial);
        CHECK(same_matches(nndr_match(a, b, t), oracle::nndr(a, b, t)));
    }

    // a lone usable candidate counts as ratio 0 and passes any threshold
    const std::vector<Descriptor> one = {unit_at(3)};
    const std::vector<Match> lone = nndr_match({unit_at(0)}, one, 0.05);
    REQUIRE(lone.size() == 1);
    CHECK(lone[0].idx_b == 0);

    // two exact duplicates at distance zero: ratio treated as 1, rejected
    // even at the permissive end
    const std::vector<Descriptor> q = {unit_at(2)};
    const std::vector<Descriptor> dup = {unit_at(2), unit_at(2)};
    CHECK(nndr_match(q, dup, 1.0).empty());

    // staged ratios around the threshold: distances 0.25 and 0.5 are exact
    // in binary, so d1/d2 is exactly 0.5
    std::vector<Descriptor> spaced = {unit_at(0, 0.75), unit_at(0, 0.5)};
    CHECK(nndr_match({unit_at(0)}, spaced, 0.51).size() == 1);
    CHECK(nndr_match({unit_at(0)}, spaced, 0.5).empty());  // strict <

    CHECK_THROWS_AS(nndr_match(q, dup, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(nndr_match(q, dup, 1.1), std::invalid_argument);
    CHECK_THROWS_AS(nndr_match(q, dup, -0.3), std::invalid_argument);
}

TEST_CASE("verify labels matches against the ground-truth map") {
    const std::vector<Keypoint> kps_a = {{10, 10, 1.0}, {20, 20, 1.0}, {30, 30, 1.0}};
    const std::vector<Keypoint> kps_b = {{12, 10, 1.0}, {28, 20, 1.0}, {33, 34, 1.0}};
    const std::vector<Match> matches = {{0, 0, 0.1}, {1, 1, 0.1}, {2, 2, 0.1}};
    const Homography id;
    const std::vector<Verdict> v = verify(matches, kps_a, kps_b, id, 3.0);
    REQUIRE(v.size() == 3);
    CHECK(v[0].true_positive);    // offset 2 px
    CHECK(!v[1].true_positive);   // offset 8 px
    CHECK(!v[2].true_positive);   // offset 5 px
    CHECK(count_true_positives(v) == 1);
    CHECK(v[0].match.idx_a == 0);

    // boundary: the tolerance is inclusive
    const std::vector<Verdict> vb =
        verify({{0, 0, 0.0}}, {{0, 0, 1.0}}, {{3, 0, 1.0}}, id, 3.0);
    CHECK(vb[0].true_positive);
    const std::vector<Verdict> vc =
        verify({{0, 0, 0.0}}, {{0, 0, 1.0}}, {{4, 0, 1.0}}, id, 3.0);
    CHECK(!vc[0].true_positive);

    // a keypoint mapped past the horizon can never be a true positive
    const Homography tilt({1, 0, 0, 0, 1, 0, 0.1, 0, 1});
    const std::vector<Verdict> vh =
        verify({{0, 0, 0.0}}, {{-10, 5, 1.0}}, {{0, 0, 1.0}}, tilt, 1e9);
    CHECK(!vh[0].true_positive);

    // out-of-range indices surface as an error rather than silence
    CHECK_THROWS_AS(verify({{5, 0, 0.0}}, kps_a, kps_b, id, 3.0), std::out_of_range);
}
