#include "keyreg/matching.hpp"

#include <cmath>
#include <stdexcept>

namespace keyreg {

static double l2_dist(const Descriptor& a, const Descriptor& b) {
    double acc = 0.0;
    for (size_t k = 0; k < a.size(); ++k) {
        const double d = a[k] - b[k];
        acc += d * d;
    }
    return std::sqrt(acc);
}

NearestTwo nearest_two(const Descriptor& query, const std::vector<Descriptor>& set) {
    NearestTwo r;
    for (int j = 0; j < static_cast<int>(set.size()); ++j) {
        if (is_zero_descriptor(set[j])) continue;
        const double d = l2_dist(query, set[j]);
        if (d < r.d1) {
            r.i2 = r.i1;
            r.d2 = r.d1;
            r.i1 = j;
            r.d1 = d;
        } else if (d < r.d2) {
            r.i2 = j;
            r.d2 = d;
        }
    }
    return r;
}

std::vector<Match> cross_check_match(const std::vector<Descriptor>& desc_a,
                                     const std::vector<Descriptor>& desc_b) {
    const int na = static_cast<int>(desc_a.size());
    const int nb = static_cast<int>(desc_b.size());
    std::vector<int> nn_b(na, -1);  // nearest in B of each usable a
    std::vector<double> d_b(na, 0.0);
    for (int i = 0; i < na; ++i) {
        if (is_zero_descriptor(desc_a[i])) continue;
        const NearestTwo r = nearest_two(desc_a[i], desc_b);
        nn_b[i] = r.i1;
        d_b[i] = r.d1;
    }
    std::vector<int> nn_a(nb, -1);
    for (int j = 0; j < nb; ++j) {
        if (is_zero_descriptor(desc_b[j])) continue;
        nn_a[j] = nearest_two(desc_b[j], desc_a).i1;
    }
    std::vector<Match> out;
    for (int i = 0; i < na; ++i)
        if (nn_b[i] >= 0 && nn_a[nn_b[i]] == i) out.push_back({i, nn_b[i], d_b[i]});
    return out;
}

std::vector<Match> nndr_match(const std::vector<Descriptor>& desc_a,
                              const std::vector<Descriptor>& desc_b, double t) {
    if (!(t > 0.0 && t <= 1.0))
        throw std::invalid_argument("nndr_match: ratio threshold must be in (0, 1]");
    std::vector<Match> out;
    for (int i = 0; i < static_cast<int>(desc_a.size()); ++i) {
        if (is_zero_descriptor(desc_a[i])) continue;
        const NearestTwo r = nearest_two(desc_a[i], desc_b);
        if (r.i1 < 0) continue;
        double ratio;
        if (r.i2 < 0)
            ratio = 0.0;  // lone candidate
        else if (r.d2 == 0.0)
            ratio = 1.0;  // exact duplicates both ways
        else
            ratio = r.d1 / r.d2;
        if (ratio < t) out.push_back({i, r.i1, r.d1});
    }
    return out;
}

std::vector<Verdict> verify(const std::vector<Match>& matches,
                            const std::vector<Keypoint>& kps_a,
                            const std::vector<Keypoint>& kps_b,
                            const Homography& h_gt, double eps) {
    std::vector<Verdict> out;
    out.reserve(matches.size());
    for (const Match& m : matches) {
        const Keypoint& a = kps_a.at(m.idx_a);
        const Keypoint& b = kps_b.at(m.idx_b);
        bool tp = false;
        try {
            const Vec2 p = apply(h_gt, {static_cast<double>(a.x), static_cast<double>(a.y)});
            const double dx = p.x - b.x, dy = p.y - b.y;
            tp = std::sqrt(dx * dx + dy * dy) <= eps;
        } catch (const std::domain_error&) {
            // mapped past the horizon: cannot be within eps of anything
        }
        out.push_back({m, tp});
    }
    return out;
}

int count_true_positives(const std::vector<Verdict>& verdicts) {
    int n = 0;
    for (const Verdict& v : verdicts) n += v.true_positive ? 1 : 0;
    return n;
}

}  // namespace keyreg
