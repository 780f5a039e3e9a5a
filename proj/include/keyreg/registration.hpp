#pragma once

#include <optional>
#include <vector>

#include "keyreg/geometry.hpp"
#include "keyreg/matching.hpp"
#include "keyreg/net.hpp"

namespace keyreg {

// Hartley-normalized direct linear transform. Throws std::runtime_error
// ("degenerate sample") when the correspondence set does not determine a
// homography (rank < 8) or the result is not invertible.
Homography dlt_homography(const std::vector<Vec2>& from, const std::vector<Vec2>& to);

struct RansacConfig {
    int iters = 1000;
    double inlier_thresh = 3.0;  // px reprojection
};

struct RansacResult {
    Homography h;
    std::vector<int> inliers;  // indices into the match list
};

// Random 4-point DLT hypotheses scored by reprojection inliers, final refit
// on the best inlier set. nullopt when < 4 matches or no model reaches 4
// inliers.
std::optional<RansacResult> ransac_homography(const std::vector<Match>& matches,
                                              const std::vector<Keypoint>& kps_a,
                                              const std::vector<Keypoint>& kps_b,
                                              const RansacConfig& cfg, Rng& rng);

enum class RegClass { failed, inaccurate, acceptable };

struct RegistrationResult {
    std::optional<Homography> h_est;
    RegClass cls = RegClass::failed;
    std::optional<double> mee, mae;  // px, absent when failed
};

const char* reg_class_name(RegClass c);

// Failure: no estimate, a flip, or linear scale outside [0.1, 4]. Otherwise
// distances between the two maps at six fixed interior points
// ({1/4,1/2,3/4} x {1/4,3/4} of the image) give MEE (median) and MAE (max);
// acceptable iff MEE < 10 and MAE < 30.
RegistrationResult classify_registration(const std::optional<Homography>& h_est,
                                         const Homography& h_gt, int img_w, int img_h);

// Fraction of keypoints (restricted to the shared region) that have a
// counterpart within eps under the ground truth, counted in both directions
// over |P| + |P'|.
double repeatability(const std::vector<Keypoint>& kps_a,
                     const std::vector<Keypoint>& kps_b, const Homography& h_gt,
                     int img_w, int img_h, double eps = 3.0);

// n_tp over the total keypoints in the shared region (same filter as
// repeatability).
double m_score(int n_tp, const std::vector<Keypoint>& kps_a,
               const std::vector<Keypoint>& kps_b, const Homography& h_gt,
               int img_w, int img_h);

// Fraction of image area covered by fixed-radius disks at TP keypoints.
double coverage_fraction(const std::vector<Keypoint>& tp_kps, int img_w, int img_h,
                         double radius = 25.0);

std::vector<double> default_auc_grid();  // 0.05, 0.10, ..., 1.00

// Area under the match ROC traced by sweeping the NNDR threshold over the
// grid: x = FP/(TP+FP), y = TP / max_t(TP+FP), closed by (0,0) and (1, y_max).
double auc_nndr(const std::vector<Descriptor>& desc_a,
                const std::vector<Descriptor>& desc_b,
                const std::vector<Keypoint>& kps_a,
                const std::vector<Keypoint>& kps_b, const Homography& h_gt,
                double eps = 3.0,
                const std::vector<double>& t_grid = default_auc_grid());

struct EvalConfig {
    int nms_window = 10;
    double nms_threshold = 0.0;
    int max_kp = 1000;
    double nndr_t = 0.8;
    double eps = 3.0;
    RansacConfig ransac;
};

struct PairMetrics {
    RegistrationResult reg;
    double repeatability = 0.0, m_score = 0.0, coverage = 0.0, auc = 0.0;
    int n_kp_a = 0, n_kp_b = 0, n_matches = 0, n_tp = 0;
};

// Full per-pair evaluation: detect, describe, NNDR-match, RANSAC, classify
// against the ground truth, plus the detector metrics.
PairMetrics evaluate_pair(const UnetParams& params, const GrayImage& img_a,
                          const GrayImage& img_b, const Homography& h_gt,
                          const EvalConfig& cfg, Rng& rng);

}  // namespace keyreg
