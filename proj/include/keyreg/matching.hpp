#pragma once

#include <limits>
#include <vector>

#include "keyreg/features.hpp"
#include "keyreg/geometry.hpp"

namespace keyreg {

struct Match {
    int idx_a = -1, idx_b = -1;
    double dist = 0.0;  // descriptor L2 distance
};

struct Verdict {
    Match match;
    bool true_positive = false;
};

// Nearest and second-nearest usable neighbors of `query` in `set`; zero
// descriptors never participate. Missing candidates keep index -1 and
// distance +inf. Ties resolve to the lower index.
struct NearestTwo {
    int i1 = -1, i2 = -1;
    double d1 = std::numeric_limits<double>::infinity();
    double d2 = std::numeric_limits<double>::infinity();
};
NearestTwo nearest_two(const Descriptor& query, const std::vector<Descriptor>& set);

// Mutual nearest neighbors under L2, ordered by idx_a.
std::vector<Match> cross_check_match(const std::vector<Descriptor>& desc_a,
                                     const std::vector<Descriptor>& desc_b);

// Nearest-neighbor distance-ratio test: keep (i, nn(i)) iff d1/d2 < t.
// A lone usable candidate in B counts as d2 = +inf (ratio 0, kept);
// d2 = 0 counts as ratio 1 (rejected below t = 1). t must be in (0, 1].
std::vector<Match> nndr_match(const std::vector<Descriptor>& desc_a,
                              const std::vector<Descriptor>& desc_b, double t);

// Labels each match true-positive iff |h_gt * kp_a - kp_b| <= eps.
std::vector<Verdict> verify(const std::vector<Match>& matches,
                            const std::vector<Keypoint>& kps_a,
                            const std::vector<Keypoint>& kps_b,
                            const Homography& h_gt, double eps = 3.0);

int count_true_positives(const std::vector<Verdict>& verdicts);

}  // namespace keyreg
