#include "keyreg/mosaic.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace keyreg {

namespace {

struct FrameFeatures {
    std::vector<Keypoint> kps;
    std::vector<Descriptor> descs;
};

FrameFeatures detect(const UnetParams& params, const GrayImage& frame,
                     const MosaicConfig& cfg) {
    FrameFeatures f;
    const ScoreMap s = unet_score_map(params, frame);
    f.kps = nms(s, cfg.nms_window, cfg.nms_threshold, cfg.max_kp);
    f.descs = describe_all(frame, f.kps);
    return f;
}

bool increment_ok(const std::optional<RansacResult>& rr) {
    if (!rr) return false;
    const FlipScale fs = failure_decompose(rr->h);
    return !fs.flip && fs.scale <= 4.0 && fs.scale >= 0.1;
}

}  // namespace

MosaicState register_sequence(const std::vector<GrayImage>& frames,
                              const UnetParams& params, const MosaicConfig& cfg) {
    if (frames.empty()) throw std::invalid_argument("mosaic: no frames");

    MosaicState st;
    st.h_to_first.push_back(Homography::identity());
    st.frames_registered = 1;

    FrameFeatures prev = detect(params, frames[0], cfg);
    for (size_t k = 1; k < frames.size(); ++k) {
        FrameFeatures cur = detect(params, frames[k], cfg);
        // matches from frame k to frame k-1, so the increment maps k -> k-1
        const std::vector<Match> matches = cross_check_match(cur.descs, prev.descs);
        std::optional<RansacResult> rr;
        if (matches.size() >= 4) {
            Rng rng(derive_seed(cfg.seed, "mosaic/ransac/" + std::to_string(k)));
            rr = ransac_homography(matches, cur.kps, prev.kps, cfg.ransac, rng);
        }
        if (!increment_ok(rr)) {
            st.failure_index = static_cast<int>(k) + 1;  // 1-based frame number
            break;
        }
        st.h_to_first.push_back(st.h_to_first.back() * rr->h);
        st.frames_registered += 1;
        prev = std::move(cur);
    }

    // canvas bounds: union of the registered frames' warped corners
    double min_x = 0.0, min_y = 0.0, max_x = 0.0, max_y = 0.0;
    bool first = true;
    for (int k = 0; k < st.frames_registered; ++k) {
        const double w = frames[k].width - 1.0, h = frames[k].height - 1.0;
        const Vec2 corners[4] = {{0, 0}, {w, 0}, {0, h}, {w, h}};
        for (const Vec2& c : corners) {
            const Vec2 p = apply(st.h_to_first[k], c);
            if (first) {
                min_x = max_x = p.x;
                min_y = max_y = p.y;
                first = false;
            } else {
                min_x = std::min(min_x, p.x);
                min_y = std::min(min_y, p.y);
                max_x = std::max(max_x, p.x);
                max_y = std::max(max_y, p.y);
            }
        }
    }
    st.offset_x = std::floor(min_x);
    st.offset_y = std::floor(min_y);
    st.canvas_w = static_cast<int>(std::ceil(max_x - st.offset_x)) + 1;
    st.canvas_h = static_cast<int>(std::ceil(max_y - st.offset_y)) + 1;
    return st;
}

GrayImage render(const MosaicState& state, const std::vector<GrayImage>& frames) {
    if (static_cast<int>(frames.size()) < state.frames_registered)
        throw std::invalid_argument("mosaic render: fewer frames than registered");
    GrayImage canvas(state.canvas_w, state.canvas_h);
    std::vector<double> wsum(canvas.pix.size(), 0.0);

    for (int k = 0; k < state.frames_registered; ++k) {
        const GrayImage& frame = frames[k];
        const Homography to_canvas = state.h_to_first[k];
        const Homography from_canvas = to_canvas.inverse();
        for (int y = 0; y < canvas.height; ++y) {
            for (int x = 0; x < canvas.width; ++x) {
                const Vec2 p{x + state.offset_x, y + state.offset_y};
                Vec2 q;
                try {
                    q = apply(from_canvas, p);
                } catch (const std::domain_error&) {
                    continue;
                }
                if (q.x < 0.0 || q.y < 0.0 || q.x > frame.width - 1.0 ||
                    q.y > frame.height - 1.0)
                    continue;
                // feather: weight by distance to the nearest frame edge so
                // seams fade out (epsilon keeps lone edge pixels visible)
                const double border = std::min(std::min(q.x, frame.width - 1.0 - q.x),
                                               std::min(q.y, frame.height - 1.0 - q.y));
                const double wgt = border + 1e-6;
                const size_t idx = static_cast<size_t>(y) * canvas.width + x;
                canvas.pix[idx] += wgt * frame.sample_bilinear(q.x, q.y);
                wsum[idx] += wgt;
            }
        }
    }
    for (size_t i = 0; i < canvas.pix.size(); ++i)
        if (wsum[i] > 0.0) canvas.pix[i] /= wsum[i];
    return canvas;
}

}  // namespace keyreg
