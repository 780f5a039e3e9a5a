#pragma once

#include <array>
#include <string>
#include <vector>

#include "keyreg/image.hpp"

namespace keyreg {

// Detector output: per-pixel keypoint probabilities.
using ScoreMap = GrayImage;

struct Keypoint {
    int x = 0, y = 0;  // pixel center
    double score = 0.0;
};

// 128-d root-SIFT vector; all-zero for flat patches, otherwise unit L2 norm.
using Descriptor = std::array<double, 128>;

bool is_zero_descriptor(const Descriptor& d);

// Greedy non-maximum suppression: candidates with score >= threshold are
// visited by descending score (ties by row-major pixel index); each accepted
// keypoint suppresses everything within Chebyshev distance <= window. At most
// max_kp keypoints, returned by descending score.
std::vector<Keypoint> nms(const ScoreMap& map, int window, double threshold, int max_kp);

// Rotation-dependent root-SIFT over a 16x16 patch centered at the keypoint
// (patch axes fixed to the image axes). Gradients are central differences
// with replicated borders; magnitudes are Gaussian-weighted (sigma 8) and
// binned into a 4x4 spatial grid x 8 orientations with bilinear/linear
// interpolation; then L2-normalize, clamp at 0.2, re-L2-normalize,
// L1-normalize, element-wise sqrt.
Descriptor describe(const GrayImage& img, const Keypoint& kp);

std::vector<Descriptor> describe_all(const GrayImage& img, const std::vector<Keypoint>& kps);

// `x y score d0 .. d127` per line.
std::string format_keypoint_file(const std::vector<Keypoint>& kps,
                                 const std::vector<Descriptor>& descs);

}  // namespace keyreg
