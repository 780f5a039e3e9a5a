#include "keyreg/registration.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace keyreg {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::optional<Vec2> apply_safe(const Homography& h, Vec2 p) {
    try {
        return apply(h, p);
    } catch (const std::domain_error&) {
        return std::nullopt;
    }
}

double dist(Vec2 a, Vec2 b) {
    const double dx = a.x - b.x, dy = a.y - b.y;
    return std::sqrt(dx * dx + dy * dy);
}

Vec2 kp_pos(const Keypoint& kp) {
    return {static_cast<double>(kp.x), static_cast<double>(kp.y)};
}

// real point inside [0, w-1] x [0, h-1]
bool in_image(Vec2 p, int w, int h) {
    return p.x >= 0.0 && p.x <= w - 1.0 && p.y >= 0.0 && p.y <= h - 1.0;
}

}  // namespace

Homography dlt_homography(const std::vector<Vec2>& from, const std::vector<Vec2>& to) {
    if (from.size() != to.size())
        throw std::invalid_argument("dlt: point count mismatch");
    const size_t n = from.size();
    if (n < 4) throw std::invalid_argument("dlt: need at least 4 correspondences");

    // Condition each set: centroid to the origin, RMS radius to sqrt(2).
    auto normalizer = [](const std::vector<Vec2>& pts) {
        Vec2 c{0, 0};
        for (Vec2 p : pts) {
            c.x += p.x;
            c.y += p.y;
        }
        c.x /= pts.size();
        c.y /= pts.size();
        double rms = 0.0;
        for (Vec2 p : pts) {
            const double dx = p.x - c.x, dy = p.y - c.y;
            rms += dx * dx + dy * dy;
        }
        rms = std::sqrt(rms / pts.size());
        if (rms == 0.0) throw std::runtime_error("dlt: degenerate sample");
        const double s = std::sqrt(2.0) / rms;
        return Homography::scaling(s) * Homography::translation(-c.x, -c.y);
    };
    const Homography t_from = normalizer(from);
    const Homography t_to = normalizer(to);

    Eigen::MatrixXd a(2 * n, 9);
    for (size_t i = 0; i < n; ++i) {
        const Vec2 p = apply(t_from, from[i]);
        const Vec2 q = apply(t_to, to[i]);
        a.row(2 * i) << -p.x, -p.y, -1, 0, 0, 0, q.x * p.x, q.x * p.y, q.x;
        a.row(2 * i + 1) << 0, 0, 0, -p.x, -p.y, -1, q.y * p.x, q.y * p.y, q.y;
    }

    Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
    const auto& sv = svd.singularValues();
    // a homography is determined only when the system has rank 8
    if (sv(7) <= 1e-9 * sv(0)) throw std::runtime_error("dlt: degenerate sample");
    const Eigen::VectorXd hv = svd.matrixV().col(8);

    std::array<double, 9> hm;
    for (int k = 0; k < 9; ++k) hm[k] = hv(k);
    try {
        const Homography h_norm(hm);
        return t_to.inverse() * h_norm * t_from;
    } catch (const std::invalid_argument&) {
        throw std::runtime_error("dlt: degenerate sample");
    }
}

std::optional<RansacResult> ransac_homography(const std::vector<Match>& matches,
                                              const std::vector<Keypoint>& kps_a,
                                              const std::vector<Keypoint>& kps_b,
                                              const RansacConfig& cfg, Rng& rng) {
    const int n = static_cast<int>(matches.size());
    if (n < 4) return std::nullopt;
    if (cfg.iters < 1 || cfg.inlier_thresh <= 0)
        throw std::invalid_argument("ransac: bad configuration");

    std::vector<Vec2> from(n), to(n);
    for (int i = 0; i < n; ++i) {
        from[i] = kp_pos(kps_a.at(matches[i].idx_a));
        to[i] = kp_pos(kps_b.at(matches[i].idx_b));
    }

    auto collect_inliers = [&](const Homography& h) {
        std::vector<int> inl;
        for (int i = 0; i < n; ++i) {
            const auto q = apply_safe(h, from[i]);
            if (q && dist(*q, to[i]) <= cfg.inlier_thresh) inl.push_back(i);
        }
        return inl;
    };

    std::vector<int> best_inliers;
    std::optional<Homography> best_h;
    int sample[4];
    for (int it = 0; it < cfg.iters; ++it) {
        for (int k = 0; k < 4; ++k) {
            bool fresh;
            do {
                sample[k] = static_cast<int>(rng.uniform_int(n));
                fresh = true;
                for (int j = 0; j < k; ++j) fresh = fresh && sample[j] != sample[k];
            } while (!fresh);
        }
        std::vector<Vec2> sf, st;
        for (int k = 0; k < 4; ++k) {
            sf.push_back(from[sample[k]]);
            st.push_back(to[sample[k]]);
        }
        Homography h;
        try {
            h = dlt_homography(sf, st);
        } catch (const std::runtime_error&) {
            continue;  // degenerate minimal sample
        }
        std::vector<int> inl = collect_inliers(h);
        if (inl.size() > best_inliers.size()) {
            best_inliers = std::move(inl);
            best_h = h;
        }
    }
    if (!best_h || best_inliers.size() < 4) return std::nullopt;

    std::vector<Vec2> rf, rt;
    for (int i : best_inliers) {
        rf.push_back(from[i]);
        rt.push_back(to[i]);
    }
    try {
        return RansacResult{dlt_homography(rf, rt), best_inliers};
    } catch (const std::runtime_error&) {
        return RansacResult{*best_h, best_inliers};  // keep the raw hypothesis
    }
}

const char* reg_class_name(RegClass c) {
    switch (c) {
        case RegClass::failed: return "failed";
        case RegClass::inaccurate: return "inaccurate";
        case RegClass::acceptable: return "acceptable";
    }
    return "?";
}

RegistrationResult classify_registration(const std::optional<Homography>& h_est,
                                         const Homography& h_gt, int img_w, int img_h) {
    RegistrationResult res;
    res.h_est = h_est;
    if (!h_est) return res;  // failed
    const FlipScale fs = failure_decompose(*h_est);
    if (fs.flip || fs.scale > 4.0 || fs.scale < 0.1) return res;  // failed

    const double xs[3] = {0.25, 0.5, 0.75};
    const double ys[2] = {0.25, 0.75};
    std::array<double, 6> d;
    int k = 0;
    for (double ry : ys) {
        for (double rx : xs) {
            const Vec2 c{rx * img_w, ry * img_h};
            const auto pe = apply_safe(*h_est, c);
            const auto pg = apply_safe(h_gt, c);
            d[k++] = (pe && pg) ? dist(*pe, *pg) : kInf;
        }
    }
    std::sort(d.begin(), d.end());
    res.mee = (d[2] + d[3]) / 2.0;
    res.mae = d[5];
    res.cls = (*res.mee < 10.0 && *res.mae < 30.0) ? RegClass::acceptable
                                                   : RegClass::inaccurate;
    return res;
}

// Shared-region restriction used by repeatability and m_score: keypoints of
// one image whose ground-truth image lands inside the other.
static void shared_region(const std::vector<Keypoint>& kps_a,
                          const std::vector<Keypoint>& kps_b, const Homography& h_gt,
                          int img_w, int img_h, std::vector<Vec2>& p_mapped,
                          std::vector<Vec2>& p_prime) {
    const Homography h_inv = h_gt.inverse();
    for (const Keypoint& kp : kps_a) {
        const auto q = apply_safe(h_gt, kp_pos(kp));
        if (q && in_image(*q, img_w, img_h)) p_mapped.push_back(*q);
    }
    for (const Keypoint& kp : kps_b) {
        const auto q = apply_safe(h_inv, kp_pos(kp));
        if (q && in_image(*q, img_w, img_h)) p_prime.push_back(kp_pos(kp));
    }
}

double repeatability(const std::vector<Keypoint>& kps_a,
                     const std::vector<Keypoint>& kps_b, const Homography& h_gt,
                     int img_w, int img_h, double eps) {
    std::vector<Vec2> pa_mapped, pb;  // P already mapped into I' coordinates
    shared_region(kps_a, kps_b, h_gt, img_w, img_h, pa_mapped, pb);
    if (pa_mapped.empty() && pb.empty()) return 0.0;

    int count = 0;
    for (const Vec2& q : pa_mapped)
        for (const Vec2& b : pb)
            if (dist(q, b) < eps) {
                ++count;
                break;
            }
    for (const Vec2& b : pb)
        for (const Vec2& q : pa_mapped)
            if (dist(q, b) < eps) {
                ++count;
                break;
            }
    return static_cast<double>(count) / (pa_mapped.size() + pb.size());
}

double m_score(int n_tp, const std::vector<Keypoint>& kps_a,
               const std::vector<Keypoint>& kps_b, const Homography& h_gt,
               int img_w, int img_h) {
    if (n_tp < 0) throw std::invalid_argument("m_score: negative count");
    std::vector<Vec2> pa_mapped, pb;
    shared_region(kps_a, kps_b, h_gt, img_w, img_h, pa_mapped, pb);
    const size_t denom = pa_mapped.size() + pb.size();
    if (denom == 0) return 0.0;
    return std::min(1.0, static_cast<double>(n_tp) / denom);
}

double coverage_fraction(const std::vector<Keypoint>& tp_kps, int img_w, int img_h,
                         double radius) {
    if (radius <= 0) throw std::invalid_argument("coverage: radius must be positive");
    std::vector<char> covered(static_cast<size_t>(img_w) * img_h, 0);
    const int r = static_cast<int>(std::ceil(radius));
    const double r2 = radius * radius;
    for (const Keypoint& kp : tp_kps) {
        const int y0 = std::max(0, kp.y - r), y1 = std::min(img_h - 1, kp.y + r);
        const int x0 = std::max(0, kp.x - r), x1 = std::min(img_w - 1, kp.x + r);
        for (int y = y0; y <= y1; ++y) {
            const double dy = y - kp.y;
            for (int x = x0; x <= x1; ++x) {
                const double dx = x - kp.x;
                if (dx * dx + dy * dy <= r2)
                    covered[static_cast<size_t>(y) * img_w + x] = 1;
            }
        }
    }
    size_t count = 0;
    for (char c : covered) count += c;
    return static_cast<double>(count) / (static_cast<double>(img_w) * img_h);
}

std::vector<double> default_auc_grid() {
    std::vector<double> grid;
    for (int i = 1; i <= 20; ++i) grid.push_back(i * 0.05);
    return grid;
}

double auc_nndr(const std::vector<Descriptor>& desc_a,
                const std::vector<Descriptor>& desc_b,
                const std::vector<Keypoint>& kps_a,
                const std::vector<Keypoint>& kps_b, const Homography& h_gt,
                double eps, const std::vector<double>& t_grid) {
    if (t_grid.empty()) throw std::invalid_argument("auc: empty threshold grid");
    for (size_t i = 0; i < t_grid.size(); ++i)
        if (t_grid[i] <= 0.0 || t_grid[i] > 1.0 ||
            (i > 0 && t_grid[i] <= t_grid[i - 1]))
            throw std::invalid_argument("auc: grid must increase within (0, 1]");

    // The nearest-neighbor candidate of each query is threshold-independent;
    // sweeping t only re-filters by ratio.
    struct Cand {
        double ratio;
        bool tp;
    };
    std::vector<Cand> cands;
    for (int i = 0; i < static_cast<int>(desc_a.size()); ++i) {
        if (is_zero_descriptor(desc_a[i])) continue;
        const NearestTwo r = nearest_two(desc_a[i], desc_b);
        if (r.i1 < 0) continue;
        double ratio;
        if (r.i2 < 0)
            ratio = 0.0;
        else if (r.d2 == 0.0)
            ratio = 1.0;
        else
            ratio = r.d1 / r.d2;
        const std::vector<Verdict> v =
            verify({{i, r.i1, r.d1}}, kps_a, kps_b, h_gt, eps);
        cands.push_back({ratio, v[0].true_positive});
    }

    struct Pt {
        double x, y;
    };
    std::vector<Pt> pts;
    int c_max = 0;
    std::vector<std::pair<int, int>> counts;  // (tp, fp) per threshold
    for (double t : t_grid) {
        int tp = 0, fp = 0;
        for (const Cand& c : cands) {
            if (c.ratio < t) (c.tp ? tp : fp) += 1;
        }
        counts.push_back({tp, fp});
        c_max = std::max(c_max, tp + fp);
    }
    if (c_max == 0) return 0.0;
    for (auto [tp, fp] : counts) {
        const double x = tp + fp > 0 ? static_cast<double>(fp) / (tp + fp) : 0.0;
        const double y = static_cast<double>(tp) / c_max;
        pts.push_back({x, y});
    }
    std::sort(pts.begin(), pts.end(), [](const Pt& a, const Pt& b) {
        return a.x != b.x ? a.x < b.x : a.y < b.y;
    });
    double y_max = 0.0;
    for (const Pt& p : pts) y_max = std::max(y_max, p.y);
    std::vector<Pt> curve;
    curve.push_back({0.0, 0.0});
    curve.insert(curve.end(), pts.begin(), pts.end());
    curve.push_back({1.0, y_max});
    double area = 0.0;
    for (size_t i = 1; i < curve.size(); ++i)
        area += (curve[i].x - curve[i - 1].x) * (curve[i].y + curve[i - 1].y) / 2.0;
    return area;
}

PairMetrics evaluate_pair(const UnetParams& params, const GrayImage& img_a,
                          const GrayImage& img_b, const Homography& h_gt,
                          const EvalConfig& cfg, Rng& rng) {
    const ScoreMap s_a = unet_score_map(params, img_a);
    const ScoreMap s_b = unet_score_map(params, img_b);
    const std::vector<Keypoint> kps_a = nms(s_a, cfg.nms_window, cfg.nms_threshold, cfg.max_kp);
    const std::vector<Keypoint> kps_b = nms(s_b, cfg.nms_window, cfg.nms_threshold, cfg.max_kp);
    const std::vector<Descriptor> desc_a = describe_all(img_a, kps_a);
    const std::vector<Descriptor> desc_b = describe_all(img_b, kps_b);

    const std::vector<Match> matches = nndr_match(desc_a, desc_b, cfg.nndr_t);
    const std::vector<Verdict> verdicts = verify(matches, kps_a, kps_b, h_gt, cfg.eps);

    PairMetrics pm;
    pm.n_kp_a = static_cast<int>(kps_a.size());
    pm.n_kp_b = static_cast<int>(kps_b.size());
    pm.n_matches = static_cast<int>(matches.size());
    pm.n_tp = count_true_positives(verdicts);

    const auto rr = ransac_homography(matches, kps_a, kps_b, cfg.ransac, rng);
    pm.reg = classify_registration(rr ? std::optional<Homography>(rr->h) : std::nullopt,
                                   h_gt, img_a.width, img_a.height);

    pm.repeatability = repeatability(kps_a, kps_b, h_gt, img_b.width, img_b.height, cfg.eps);
    pm.m_score = m_score(pm.n_tp, kps_a, kps_b, h_gt, img_b.width, img_b.height);
    std::vector<Keypoint> tp_kps;
    for (const Verdict& v : verdicts)
        if (v.true_positive) tp_kps.push_back(kps_a.at(v.match.idx_a));
    pm.coverage = coverage_fraction(tp_kps, img_a.width, img_a.height);
    pm.auc = auc_nndr(desc_a, desc_b, kps_a, kps_b, h_gt, cfg.eps);
    return pm;
}

}  // namespace keyreg
