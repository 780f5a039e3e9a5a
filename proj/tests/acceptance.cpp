#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "keyreg/mosaic.hpp"
#include "keyreg/training.hpp"
#include "keyreg/util.hpp"
#include "support/detectors.hpp"
#include "support/oracles.hpp"
#include "support/textures.hpp"

namespace fs = std::filesystem;
using namespace keyreg;

// Release gate. Each case checks one criterion end to end and prints a single
// [PASS]/[FAIL] line with the key numbers, so a run of this binary doubles as
// the release report. The hard thresholds live next to their checks.

namespace {

struct Stopwatch {
    std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
    double secs() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
};

void report(const char* tag, bool ok, double secs, const std::string& detail) {
    std::printf("[%s] %s: %s (%.1fs)\n", ok ? "PASS" : "FAIL", tag, detail.c_str(), secs);
    std::fflush(stdout);
}

int ri(Rng& rng, int lo, int hi) {  // uniform in [lo, hi]
    return lo + static_cast<int>(rng.uniform_int(static_cast<uint64_t>(hi - lo + 1)));
}

bool same_keypoints(const std::vector<Keypoint>& a, const std::vector<Keypoint>& b) {
    if (a.size() != b.size()) return false;
    for (size_t k = 0; k < a.size(); ++k)
        if (a[k].x != b[k].x || a[k].y != b[k].y || a[k].score != b[k].score) return false;
    return true;
}

bool same_matches(const std::vector<Match>& a, const std::vector<Match>& b) {
    if (a.size() != b.size()) return false;
    for (size_t k = 0; k < a.size(); ++k)
        if (a[k].idx_a != b[k].idx_a || a[k].idx_b != b[k].idx_b || a[k].dist != b[k].dist)
            return false;
    return true;
}

std::vector<std::vector<double>*> trainables(UnetParams& p) {
    std::vector<std::vector<double>*> out;
    walk_trainable(p, [&](const std::string&, std::vector<double>& v,
                          const std::vector<uint32_t>&) { out.push_back(&v); });
    return out;
}

}  // namespace

TEST_CASE("A1: every layer and the masked objective pass finite differences") {
    Stopwatch sw;
    const UnetPlan plan{{2, 4, 8, 16}};
    const int n_seeds = 50;
    const int per_tensor = 3;
    // central differences straddle a relu kink when some pre-activation sits
    // within about |J|*delta of zero; 1e-7 keeps that band negligible while
    // cancellation noise stays orders of magnitude below the tolerance
    const double delta = 1e-7;

    double worst = 0.0;
    int net_probes = 0, loss_probes = 0, failures = 0;
    for (int seed = 0; seed < n_seeds; ++seed) {
        Rng rng(900 + seed);
        UnetParams params = UnetParams::init(plan, rng);
        Tensor4 x(2, 1, 16, 16);
        for (double& v : x.data) v = rng.uniform();
        GrayImage r0(16, 16), r1(16, 16), m0(16, 16), m1(16, 16);
        for (double& v : r0.pix) v = rng.coin(0.1) ? 1.0 : 0.0;
        for (double& v : r1.pix) v = rng.coin(0.1) ? 1.0 : 0.0;
        for (double& v : m0.pix) v = rng.coin(0.2) ? 1.0 : 0.0;
        for (double& v : m1.pix) v = rng.coin(0.2) ? 1.0 : 0.0;
        m0.pix[0] = 1.0;  // keep both masks trainable
        m1.pix[0] = 1.0;

        // scalar objective: train-mode forward, masked loss summed over the
        // two batch images -- the exact composition a training step uses
        auto loss_of = [&](UnetParams& p) {
            UnetCache c;
            const Tensor4 s = unet_forward_train(p, x, c);
            return masked_loss(tensor_to_image(s, 0), r0, m0)->loss +
                   masked_loss(tensor_to_image(s, 1), r1, m1)->loss;
        };

        UnetParams run = params;
        UnetCache cache;
        const Tensor4 s = unet_forward_train(run, x, cache);
        const auto l0 = masked_loss(tensor_to_image(s, 0), r0, m0);
        const auto l1 = masked_loss(tensor_to_image(s, 1), r1, m1);
        REQUIRE(l0.has_value());
        REQUIRE(l1.has_value());
        Tensor4 ds(2, 1, 16, 16);
        for (int i = 0; i < 16 * 16; ++i) {
            ds.data[i] = l0->dL_dS.pix[i];
            ds.data[16 * 16 + i] = l1->dL_dS.pix[i];
        }
        const UnetParams grads = unet_backward(params, cache, ds);

        UnetParams scratch = params;
        auto sv = trainables(scratch);
        const UnetParams& cg = grads;
        std::vector<const std::vector<double>*> gv;
        walk_trainable(cg, [&](const std::string&, const std::vector<double>& v,
                               const std::vector<uint32_t>&) { gv.push_back(&v); });

        // sampled entries of every trainable tensor, so each conv, norm and
        // the head see gradient checks at every level of the net
        for (size_t t = 0; t < sv.size(); ++t) {
            for (int k = 0; k < per_tensor; ++k) {
                const size_t j = rng.uniform_int(sv[t]->size());
                const double keep = (*sv[t])[j];
                (*sv[t])[j] = keep + delta;
                const double up = loss_of(scratch);
                (*sv[t])[j] = keep - delta;
                const double dn = loss_of(scratch);
                (*sv[t])[j] = keep;
                const double fd = (up - dn) / (2.0 * delta);
                const double an = (*gv[t])[j];
                const double err = std::abs(an - fd) / std::max({1.0, std::abs(an), std::abs(fd)});
                worst = std::max(worst, err);
                ++net_probes;
                if (err > 1e-4) ++failures;
            }
        }

        // the masked objective itself, differentiated against its score input
        const GrayImage s0 = tensor_to_image(s, 0);
        for (int k = 0; k < 4; ++k) {
            const size_t j = rng.uniform_int(s0.pix.size());
            GrayImage pert = s0;
            pert.pix[j] = s0.pix[j] + delta;
            const double up = masked_loss(pert, r0, m0)->loss;
            pert.pix[j] = s0.pix[j] - delta;
            const double dn = masked_loss(pert, r0, m0)->loss;
            const double fd = (up - dn) / (2.0 * delta);
            const double an = l0->dL_dS.pix[j];
            const double err = std::abs(an - fd) / std::max({1.0, std::abs(an), std::abs(fd)});
            worst = std::max(worst, err);
            ++loss_probes;
            if (err > 1e-4) ++failures;
        }
    }

    CHECK(net_probes == n_seeds * 82 * per_tensor);
    CHECK(loss_probes == n_seeds * 4);
    CHECK(failures == 0);
    CHECK(worst <= 1e-4);
    const double secs = sw.secs();
    CHECK(secs < 60.0);

    char buf[160];
    std::snprintf(buf, sizeof(buf), "worst rel err %.2e over %d net + %d loss probes, %d seeds",
                  worst, net_probes, loss_probes, n_seeds);
    report("A1 gradients", failures == 0 && worst <= 1e-4 && secs < 60.0, secs, buf);
}

TEST_CASE("A2: fast paths match brute-force reconstructions") {
    Stopwatch sw;
    int mismatches = 0;
    auto tally = [&](bool same) {
        if (!same) ++mismatches;
        return same;
    };

    for (int trial = 0; trial < 100; ++trial) {
        CAPTURE(trial);
        Rng rng(2000 + trial);

        // supression on random maps, every third one quantized for ties
        const int w = ri(rng, 8, 64), h = ri(rng, 8, 64);
        ScoreMap map(w, h);
        for (double& v : map.pix) {
            v = rng.uniform();
            if (trial % 3 == 0) v = std::floor(v * 5.0) / 5.0;
        }
        const int window = ri(rng, 1, 6);
        const double threshold = (trial % 2 == 0) ? 0.0 : 0.3;
        const int max_kp = ri(rng, 1, 30);
        CHECK(tally(same_keypoints(nms(map, window, threshold, max_kp),
                                   oracle::nms(map, window, threshold, max_kp))));

        // descriptor matching, with zero rows and duplicates sprinkled in
        const int na = ri(rng, 1, 30), nb = ri(rng, 1, 30);
        std::vector<Descriptor> da(na), db(nb);
        for (auto& d : da)
            for (int k = 0; k < 16; ++k) d[k] = rng.uniform(0.05, 1.0);
        for (auto& d : db)
            for (int k = 0; k < 16; ++k) d[k] = rng.uniform(0.05, 1.0);
        if (trial % 2 == 0) da[rng.uniform_int(na)] = Descriptor{};
        if (trial % 2 == 1) db[rng.uniform_int(nb)] = Descriptor{};
        if (trial % 3 == 0 && na > 3) da[ri(rng, 0, na - 2) + 1] = da[0];
        CHECK(tally(same_matches(cross_check_match(da, db), oracle::cross_check(da, db))));
        const double t = rng.uniform(0.05, 1.0);
        CHECK(tally(same_matches(nndr_match(da, db, t), oracle::nndr(da, db, t))));

        // reward construction, repeatability and coverage share one scene
        HomographySampleRanges mild;
        mild.scale_min = 0.9;
        mild.scale_max = 1.1;
        mild.persp_min = 1e-7;
        mild.persp_max = 1e-4;
        mild.trans_max_x = 5.0;
        mild.trans_max_y = 5.0;
        mild.shear_min = -0.05;
        mild.shear_max = 0.05;
        mild.rot_max_deg = 10.0;
        const Homography hom = sample_homography(mild, {w / 2.0, h / 2.0}, rng);

        const int n = ri(rng, 1, 30);
        std::vector<Keypoint> kps_a, kps_b;
        std::vector<Match> matches;
        std::vector<int> perm(n);
        for (int k = 0; k < n; ++k) perm[k] = k;
        rng.shuffle(perm);
        for (int k = 0; k < n; ++k) {
            kps_a.push_back({ri(rng, 0, w - 1), ri(rng, 0, h - 1), 1.0});
            kps_b.push_back({ri(rng, 0, w - 1), ri(rng, 0, h - 1), 1.0});
            matches.push_back({k, perm[k], 0.1});
        }
        const std::vector<Verdict> verdicts = verify(matches, kps_a, kps_b, hom, 3.0);
        for (PairSide side : {PairSide::a, PairSide::b}) {
            const auto& kps = side == PairSide::a ? kps_a : kps_b;
            const RewardMap got = build_reward(kps, verdicts, side, w, h);
            const GrayImage want = oracle::reward(matches, kps_a, kps_b, hom, 3.0, side, w, h);
            CHECK(tally(got.pix == want.pix));
        }

        const double rep = repeatability(kps_a, kps_b, hom, w, h, 3.0);
        CHECK(tally(std::abs(rep - oracle::repeatability(kps_a, kps_b, hom, w, h, 3.0)) <=
                    1e-12));

        const double radius = rng.uniform(2.0, 30.0);
        const double cov = coverage_fraction(kps_a, w, h, radius);
        CHECK(tally(std::abs(cov - oracle::coverage(kps_a, w, h, radius)) <= 1e-12));
    }

    const double secs = sw.secs();
    CHECK(secs < 30.0);

    char buf[160];
    std::snprintf(buf, sizeof(buf), "6 components x 100 instances, %d mismatches", mismatches);
    report("A2 oracle equivalence", mismatches == 0 && secs < 30.0, secs, buf);
}

TEST_CASE("A3: homography recovery is exact and outlier-robust") {
    Stopwatch sw;

    // pair composition against the identity
    double worst_compose = 0.0;
    for (int k = 0; k < 1000; ++k) {
        Rng rng(3000 + k);
        const Homography g = sample_homography(HomographySampleRanges{}, {128.0, 128.0}, rng);
        const Homography c = compose_pair(g, g);
        for (int i = 0; i < 9; ++i) {
            const double want = (i % 4 == 0) ? 1.0 : 0.0;
            worst_compose = std::max(worst_compose, std::abs(c.m()[i] - want));
        }
    }
    CHECK(worst_compose <= 1e-9);

    // direct fits from clean correspondences
    HomographySampleRanges mild;
    mild.scale_min = 0.85;
    mild.scale_max = 1.15;
    mild.persp_min = 1e-7;
    mild.persp_max = 2e-4;
    mild.trans_max_x = 20.0;
    mild.trans_max_y = 20.0;
    mild.shear_min = -0.05;
    mild.shear_max = 0.05;
    mild.rot_max_deg = 15.0;
    double worst_fit = 0.0;
    for (int k = 0; k < 100; ++k) {
        Rng rng(3100 + k);
        const Homography hom = sample_homography(mild, {100.0, 100.0}, rng);
        const int n = 8 + static_cast<int>(rng.uniform_int(13));
        std::vector<Vec2> from, to;
        for (int i = 0; i < n; ++i) {
            const Vec2 p{rng.uniform(0.0, 200.0), rng.uniform(0.0, 200.0)};
            from.push_back(p);
            to.push_back(apply(hom, p));
        }
        const Homography est = dlt_homography(from, to);
        for (int i = 0; i < n; ++i) {
            const Vec2 q = apply(est, from[i]);
            worst_fit = std::max(worst_fit, std::hypot(q.x - to[i].x, q.y - to[i].y));
        }
    }
    CHECK(worst_fit <= 1e-6);

    // robust recovery with a third of the correspondences corrupted. The
    // planted models map the integer keypoint grid onto itself (integer
    // translations, optionally doubled), so the clean correspondences carry
    // no rounding error and the refit must land on the model itself.
    int recovered = 0;
    double worst_corner = 0.0;
    for (int k = 0; k < 100; ++k) {
        Rng rng(3200 + k);
        const Homography planted =
            (k % 2 == 0)
                ? Homography::translation(ri(rng, -10, 10), ri(rng, -10, 10))
                : Homography::translation(ri(rng, -10, 10), ri(rng, -10, 10)) *
                      Homography::scaling(2.0);
        std::vector<Keypoint> kps_a, kps_b;
        std::vector<Match> matches;
        int i = 0;
        for (int gy = 0; gy < 5; ++gy)
            for (int gx = 0; gx < 6; ++gx, ++i) {
                const Keypoint a{4 + 11 * gx, 4 + 11 * gy, 1.0};
                const Vec2 q = apply(planted, {double(a.x), double(a.y)});
                Keypoint b{static_cast<int>(std::lround(q.x)),
                           static_cast<int>(std::lround(q.y)), 1.0};
                if (i % 3 == 0) {  // 10 of 30 pushed far off the model
                    b.x += 40 + 3 * (i % 5);
                    b.y -= 35 + 2 * (i % 4);
                }
                kps_a.push_back(a);
                kps_b.push_back(b);
                matches.push_back({i, i, 0.0});
            }
        Rng rrng(derive_seed(3300, std::to_string(k)));
        const auto res = ransac_homography(matches, kps_a, kps_b, RansacConfig{1000, 1.0}, rrng);
        if (!res) continue;
        double corner = 0.0;
        for (const Vec2 c : {Vec2{0, 0}, Vec2{63, 0}, Vec2{0, 63}, Vec2{63, 63}}) {
            const Vec2 got = apply(res->h, c);
            const Vec2 want = apply(planted, c);
            corner = std::max(corner, std::hypot(got.x - want.x, got.y - want.y));
        }
        worst_corner = std::max(worst_corner, corner);
        if (corner < 0.5) ++recovered;
    }
    CHECK(recovered >= 99);

    const double secs = sw.secs();
    CHECK(secs < 30.0);

    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "compose %.1e, fit %.1e px, robust recovery %d/100 (worst corner %.1e px)",
                  worst_compose, worst_fit, recovered, worst_corner);
    report("A3 geometry estimation",
           worst_compose <= 1e-9 && worst_fit <= 1e-6 && recovered >= 99 && secs < 30.0, secs,
           buf);
}

TEST_CASE("A4: mining balance and the masked objective closed form") {
    Stopwatch sw;
    bool ok = true;

    // ten keypoints on distinct pixels of a 16x16 map
    const std::vector<Keypoint> kps = {{1, 2, 1.0},  {4, 2, 1.0},  {7, 3, 1.0},  {10, 5, 1.0},
                                       {13, 7, 1.0}, {2, 9, 1.0},  {5, 11, 1.0}, {8, 12, 1.0},
                                       {11, 14, 1.0}, {14, 1, 1.0}};
    auto make_verdicts = [&](const std::vector<int>& tp, const std::vector<int>& fp) {
        std::vector<Verdict> out;
        for (int i : tp) out.push_back({{i, i, 0.0}, true});
        for (int i : fp) out.push_back({{i, i, 0.0}, false});
        return out;
    };
    auto mask_sum = [](const GrayImage& m) {
        double s = 0.0;
        for (double v : m.pix) s += v;
        return s;
    };

    Rng rng(4000);

    // no true positives: nothing is mined and the objective has no support
    const auto none = make_verdicts({}, {0, 1, 2, 3, 4});
    const MiningMask m_none = build_mask(kps, none, PairSide::a, rng, 16, 16);
    ok = ok && mask_sum(m_none) == 0.0;
    CHECK(mask_sum(m_none) == 0.0);
    GrayImage s_any(16, 16, 0.3), r_any(16, 16);
    CHECK(!masked_loss(s_any, r_any, m_none).has_value());

    // false-positive majority: exactly |TP| of them are sampled
    const auto majority = make_verdicts({0, 1}, {2, 3, 4, 5, 6});
    for (int round = 0; round < 10; ++round) {
        const MiningMask m = build_mask(kps, majority, PairSide::a, rng, 16, 16);
        ok = ok && mask_sum(m) == 4.0;
        CHECK(mask_sum(m) == 4.0);
        CHECK(m.at(1, 2) == 1.0);  // both true positives always present
        CHECK(m.at(4, 2) == 1.0);
        int mined = 0;
        for (int i : {2, 3, 4, 5, 6}) mined += m.at(kps[i].x, kps[i].y) == 1.0 ? 1 : 0;
        ok = ok && mined == 2;
        CHECK(mined == 2);  // and the mined pixels come from the fp set
    }

    // false-positive minority and exact balance: everything is kept
    for (const auto& [tp, fp] : {std::pair<std::vector<int>, std::vector<int>>{{0, 1, 2, 3}, {4, 5}},
                                 {{0, 1, 2}, {3, 4, 5}}}) {
        const auto verdicts = make_verdicts(tp, fp);
        const MiningMask m = build_mask(kps, verdicts, PairSide::a, rng, 16, 16);
        ok = ok && mask_sum(m) == double(tp.size() + fp.size());
        CHECK(mask_sum(m) == double(tp.size() + fp.size()));
        for (int i : tp) CHECK(m.at(kps[i].x, kps[i].y) == 1.0);
        for (int i : fp) CHECK(m.at(kps[i].x, kps[i].y) == 1.0);
    }

    // the objective against its closed form on random inputs
    double worst = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        GrayImage s(16, 16), r(16, 16), m(16, 16);
        for (double& v : s.pix) v = rng.uniform();
        for (double& v : r.pix) v = rng.coin(0.2) ? 1.0 : 0.0;
        for (double& v : m.pix) v = rng.coin(0.3) ? 1.0 : 0.0;
        m.pix[rng.uniform_int(m.pix.size())] = 1.0;

        double sum_m = 0.0, num = 0.0;
        for (size_t k = 0; k < m.pix.size(); ++k) {
            sum_m += m.pix[k];
            num += (s.pix[k] - r.pix[k]) * (s.pix[k] - r.pix[k]) * m.pix[k];
        }
        const auto got = masked_loss(s, r, m);
        REQUIRE(got.has_value());
        worst = std::max(worst, std::abs(got->loss - num / sum_m));
        for (size_t k = 0; k < m.pix.size(); ++k)
            worst = std::max(worst, std::abs(got->dL_dS.pix[k] -
                                             2.0 * (s.pix[k] - r.pix[k]) * m.pix[k] / sum_m));

        // an all-ones mask reduces the objective to the plain mean
        GrayImage ones(16, 16, 1.0);
        const auto plain = masked_loss(s, r, ones);
        REQUIRE(plain.has_value());
        double mse = 0.0;
        for (size_t k = 0; k < s.pix.size(); ++k)
            mse += (s.pix[k] - r.pix[k]) * (s.pix[k] - r.pix[k]);
        mse /= double(s.pix.size());
        worst = std::max(worst, std::abs(plain->loss - mse));
    }
    ok = ok && worst <= 1e-12;
    CHECK(worst <= 1e-12);

    char buf[160];
    std::snprintf(buf, sizeof(buf), "mining sums exact, objective within %.1e of closed form",
                  worst);
    report("A4 mining and objective", ok, sw.secs(), buf);
}

TEST_CASE("A5: training lifts matching and registration quality") {
    Stopwatch sw;

    std::vector<GrayImage> bases, held;
    Rng brng(2024);
    for (int i = 0; i < 20; ++i) bases.push_back(testsup::textured_base(64, 64, brng));
    Rng hrng(9090);
    for (int i = 0; i < 10; ++i) held.push_back(testsup::textured_base(64, 64, hrng));

    TrainConfig cfg;
    cfg.plan = UnetPlan{{2, 4, 8, 16}};
    cfg.batch_size = 5;
    cfg.crop = 64;
    cfg.epochs = 30;
    cfg.steps_per_epoch = 10;  // 300 steps total
    cfg.adam.lr = 7e-4;
    cfg.nms_window = 10;
    cfg.max_kp = 200;
    cfg.seed = 7;
    cfg.ranges.scale_min = 0.9;
    cfg.ranges.scale_max = 1.1;
    cfg.ranges.persp_min = 1e-7;
    cfg.ranges.persp_max = 5e-4;
    cfg.ranges.trans_max_x = 16.0;
    cfg.ranges.trans_max_y = 16.0;
    cfg.ranges.shear_min = -0.05;
    cfg.ranges.shear_max = 0.05;
    cfg.ranges.rot_max_deg = 5.0;
    cfg.aug = AugmentationConfig::disabled();

    Rng init_rng(derive_seed(cfg.seed, "init"));
    const UnetParams untrained = UnetParams::init(cfg.plan, init_rng);
    UnetParams params = untrained;
    AdamState adam = AdamState::create(cfg.plan);

    std::vector<double> tp, loss;
    TrainHooks hooks;
    hooks.on_step = [&](const StepRecord& r) {
        tp.push_back(r.n_tp);
        loss.push_back(r.updated ? r.loss : -1.0);  // -1 marks skipped updates
    };
    train(bases, cfg, params, adam, 0, hooks);
    REQUIRE(tp.size() == 300);

    auto mean_range = [](const std::vector<double>& v, size_t lo, size_t hi) {
        double s = 0.0;
        int n = 0;
        for (size_t i = lo; i < hi && i < v.size(); ++i)
            if (v[i] >= 0.0) {
                s += v[i];
                ++n;
            }
        return n > 0 ? s / n : 0.0;
    };
    const double tp_first = mean_range(tp, 0, 50);
    const double tp_last = mean_range(tp, tp.size() - 50, tp.size());
    const double loss_first = mean_range(loss, 0, 50);
    const double loss_last = mean_range(loss, loss.size() - 50, loss.size());
    CHECK(tp_first > 0.0);
    CHECK(tp_last >= 2.0 * tp_first);
    CHECK(loss_last < loss_first);

    // registration quality on held-out pairs, trained against untrained
    EvalConfig ecfg;
    ecfg.nms_window = 10;
    ecfg.max_kp = 200;
    int acc_trained = 0, acc_untrained = 0;
    for (int i = 0; i < 50; ++i) {
        Rng prng(derive_seed(4444, "held/" + std::to_string(i)));
        const GrayImage& base = held[prng.uniform_int(held.size())];
        const PairSample pair = generate_pair(base, cfg.crop, cfg.ranges, cfg.aug, prng);
        Rng er1(derive_seed(5151, std::to_string(i)));
        Rng er2(derive_seed(5252, std::to_string(i)));
        if (evaluate_pair(params, pair.a, pair.b, pair.h, ecfg, er1).reg.cls ==
            RegClass::acceptable)
            ++acc_trained;
        if (evaluate_pair(untrained, pair.a, pair.b, pair.h, ecfg, er2).reg.cls ==
            RegClass::acceptable)
            ++acc_untrained;
    }
    const int gap_pp = 2 * (acc_trained - acc_untrained);  // 50 pairs -> percent
    CHECK(gap_pp >= 30);

    const double secs = sw.secs();
    CHECK(secs < 600.0);

    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "tp/pair %.2f->%.2f (%.2fx), loss %.3f->%.3f, acceptable %d%% vs %d%%",
                  tp_first, tp_last, tp_last / std::max(tp_first, 1e-9), loss_first, loss_last,
                  2 * acc_trained, 2 * acc_untrained);
    report("A5 training effect",
           tp_first > 0.0 && tp_last >= 2.0 * tp_first && loss_last < loss_first &&
               gap_pp >= 30 && secs < 600.0,
           secs, buf);
}

TEST_CASE("A6: verdict boundaries on crafted registrations") {
    Stopwatch sw;
    bool ok = true;

    // a perfect estimate scores zero on both error statistics
    Rng rng(6000);
    const Homography gt = sample_homography(HomographySampleRanges{}, {50.0, 50.0}, rng);
    const RegistrationResult exact = classify_registration(gt, gt, 100, 100);
    ok = ok && exact.cls == RegClass::acceptable;
    CHECK(exact.cls == RegClass::acceptable);
    REQUIRE(exact.mee.has_value());
    REQUIRE(exact.mae.has_value());
    CHECK(*exact.mee == 0.0);
    CHECK(*exact.mae == 0.0);

    // a uniform 12 px offset crosses the median gate but not the failure one
    const RegistrationResult off =
        classify_registration(Homography::translation(12.0, 0.0), Homography::identity(), 100, 100);
    ok = ok && off.cls == RegClass::inaccurate;
    CHECK(off.cls == RegClass::inaccurate);
    REQUIRE(off.mee.has_value());
    REQUIRE(off.mae.has_value());
    CHECK(*off.mee == doctest::Approx(12.0).epsilon(1e-12));
    CHECK(*off.mae == doctest::Approx(12.0).epsilon(1e-12));

    // a five-fold scale trips the decomposition gate outright
    const RegistrationResult blown =
        classify_registration(Homography::scaling(5.0), Homography::identity(), 100, 100);
    ok = ok && blown.cls == RegClass::failed;
    CHECK(blown.cls == RegClass::failed);
    CHECK(!blown.mee.has_value());
    CHECK(!blown.mae.has_value());

    report("A6 verdict boundaries", ok, sw.secs(),
           "exact -> acceptable (0, 0); 12 px -> inaccurate (12, 12); scale 5 -> failed");
}

TEST_CASE("A7: a ten-frame chain registers without drift and halts on a blank") {
    Stopwatch sw;

    Rng rng(777);
    const GrayImage base = testsup::textured_base(260, 160, rng);
    auto crop = [&](int x0, int y0) {
        GrayImage out(64, 64);
        for (int y = 0; y < 64; ++y)
            for (int x = 0; x < 64; ++x)
                out.pix[static_cast<size_t>(y) * 64 + x] =
                    base.pix[static_cast<size_t>(y0 + y) * base.width + (x0 + x)];
        return out;
    };

    // varied integer steps across the base, all crops inside its bounds
    const int dx[] = {16, 12, 18, 10, 14, 16, 12, 15, 11};
    const int dy[] = {8, -6, 4, 10, -8, 6, 8, -5, 7};
    std::vector<int> cx{8}, cy{48};
    for (int k = 0; k < 9; ++k) {
        cx.push_back(cx.back() + dx[k]);
        cy.push_back(cy.back() + dy[k]);
    }
    std::vector<GrayImage> frames;
    for (int k = 0; k < 10; ++k) frames.push_back(crop(cx[k], cy[k]));

    MosaicConfig cfg;
    cfg.nms_window = 6;
    cfg.max_kp = 300;
    // sub-half-pixel gate: keeps the refits on the integer-exact repeats only
    // (see the chain tests for the border-straggler rationale)
    cfg.ransac.inlier_thresh = 0.25;
    cfg.seed = 99;

    const UnetParams detector = testsup::intensity_detector();
    const MosaicState st = register_sequence(frames, detector, cfg);
    CHECK(st.frames_registered == 10);
    CHECK(!st.failure_index.has_value());
    REQUIRE(st.h_to_first.size() == 10);

    double worst_drift = 0.0;
    for (int k = 0; k < 10; ++k) {
        const double tx = cx[k] - cx[0], ty = cy[k] - cy[0];
        for (const Vec2 c : {Vec2{0, 0}, Vec2{63, 0}, Vec2{0, 63}, Vec2{63, 63}}) {
            const Vec2 p = apply(st.h_to_first[k], c);
            worst_drift = std::max(worst_drift, std::hypot(p.x - (c.x + tx), p.y - (c.y + ty)));
        }
    }
    CHECK(worst_drift < 2.0);

    // a featureless frame stops the chain at its own (1-based) index
    std::vector<GrayImage> broken = frames;
    broken[4] = GrayImage(64, 64, 0.5);
    const MosaicState halted = register_sequence(broken, detector, cfg);
    const bool halt_ok = halted.failure_index.has_value() && *halted.failure_index == 5 &&
                         halted.frames_registered == 4;
    REQUIRE(halted.failure_index.has_value());
    CHECK(*halted.failure_index == 5);
    CHECK(halted.frames_registered == 4);

    char buf[160];
    std::snprintf(buf, sizeof(buf), "10 frames, drift %.1e px; blank frame halts at index 5",
                  worst_drift);
    report("A7 sequential chain",
           st.frames_registered == 10 && !st.failure_index && worst_drift < 2.0 && halt_ok,
           sw.secs(), buf);
}

TEST_CASE("A8: command-line runs are bit-reproducible") {
    Stopwatch sw;

    const fs::path dir = fs::temp_directory_path() / "keyreg_acceptance";
    fs::remove_all(dir);
    fs::create_directories(dir / "tr");
    fs::create_directories(dir / "gp");

    const char* bin = std::getenv("KEYREG_BIN");
    REQUIRE(bin != nullptr);
    auto run_cli = [&](const std::string& args) {
        const std::string cmd = std::string(bin) + " " + args + " >" +
                                (dir / "cli_output.txt").string() + " 2>&1";
        const int rc = std::system(cmd.c_str());
        REQUIRE(rc != -1);
        return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
    };
    auto make_bases = [&](const fs::path& sub, int n, int size, uint64_t seed) {
        Rng brng(seed);
        std::ofstream manifest(sub / "bases.txt");
        for (int i = 0; i < n; ++i) {
            const std::string name = "base_" + std::to_string(i) + ".pgm";
            save_image(testsup::textured_base(size, size, brng), (sub / name).string());
            manifest << name << "\n";
        }
        return sub / "bases.txt";
    };
    auto same_bytes = [&](const fs::path& a, const fs::path& b) {
        return read_file(a.string()) == read_file(b.string());
    };

    // training twice from one seed: logs and final weights byte-identical
    const fs::path tr_manifest = make_bases(dir / "tr", 3, 48, 8800);
    const std::string train_args =
        "--log-level 0 train --bases " + tr_manifest.string() +
        " --plan 1 2 3 4 --batch 1 --crop 32 --epochs 2 --steps-per-epoch 2"
        " --checkpoint-every 1 --identity-ranges --no-aug --seed 11"
        " --nms-window 3 --max-kp 30";
    CHECK(run_cli(train_args + " --out " + (dir / "tr" / "run1").string()) == 0);
    CHECK(run_cli(train_args + " --out " + (dir / "tr" / "run2").string()) == 0);
    bool train_same = true;
    for (const char* name : {"log.jsonl", "checkpoint_final.bin", "checkpoint_epoch_0001.bin",
                             "checkpoint_epoch_0002.bin"}) {
        CAPTURE(name);
        const bool same = same_bytes(dir / "tr" / "run1" / name, dir / "tr" / "run2" / name);
        train_same = train_same && same;
        CHECK(same);
    }

    // pair generation twice from one seed: every artifact byte-identical
    const fs::path gp_manifest = make_bases(dir / "gp", 2, 96, 8801);
    const std::string gen_args =
        "gen-pairs --bases " + gp_manifest.string() +
        " --count 2 --crop 64 --seed 5 --no-aug --scale-min 0.9 --scale-max 1.1"
        " --rot-max 10 --persp-max 1e-4 --trans-x 4 --trans-y 4"
        " --shear-min -0.05 --shear-max 0.05";
    CHECK(run_cli(gen_args + " --out " + (dir / "gp" / "run1").string()) == 0);
    CHECK(run_cli(gen_args + " --out " + (dir / "gp" / "run2").string()) == 0);
    bool gen_same = true;
    for (const char* name : {"pair_000000_a.pgm", "pair_000000_b.pgm", "pair_000000_h.txt",
                             "pair_000001_a.pgm", "pair_000001_b.pgm", "pair_000001_h.txt",
                             "config.json"}) {
        CAPTURE(name);
        const bool same = same_bytes(dir / "gp" / "run1" / name, dir / "gp" / "run2" / name);
        gen_same = gen_same && same;
        CHECK(same);
    }

    fs::remove_all(dir);

    report("A8 reproducibility", train_same && gen_same, sw.secs(),
           "train rerun and gen-pairs rerun byte-identical");
}
