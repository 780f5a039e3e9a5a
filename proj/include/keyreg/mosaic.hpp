#pragma once

#include <optional>
#include <vector>

#include "keyreg/registration.hpp"

namespace keyreg {

struct MosaicConfig {
    int nms_window = 10;
    double nms_threshold = 0.0;
    int max_kp = 1000;
    double eps = 3.0;
    RansacConfig ransac;
    uint64_t seed = 0;
};

struct MosaicState {
    // h_to_first[k] maps frame-k coordinates into frame-0 coordinates, for
    // every registered frame (h_to_first[0] = identity).
    std::vector<Homography> h_to_first;
    int frames_registered = 0;
    std::optional<int> failure_index;  // 1-based index of the frame that broke the chain
    // canvas = frame-0 coordinate range covering all registered frames
    double offset_x = 0.0, offset_y = 0.0;
    int canvas_w = 0, canvas_h = 0;
};

// Chains consecutive frame registrations (cross-checked matches + RANSAC);
// an increment counts as failed on < 4 matches, no RANSAC model, a flip, or
// scale outside [0.1, 4] — the chain stops at the first failure.
MosaicState register_sequence(const std::vector<GrayImage>& frames,
                              const UnetParams& params, const MosaicConfig& cfg);

// Warps every registered frame into the canvas, feather-blending overlaps
// with distance-to-border weights. Uncovered pixels stay 0.
GrayImage render(const MosaicState& state, const std::vector<GrayImage>& frames);

}  // namespace keyreg
