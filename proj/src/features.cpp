#include "keyreg/features.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <numeric>
#include <stdexcept>

namespace keyreg {

bool is_zero_descriptor(const Descriptor& d) {
    for (double v : d)
        if (v != 0.0) return false;
    return true;
}

std::vector<Keypoint> nms(const ScoreMap& map, int window, double threshold, int max_kp) {
    if (window < 1) throw std::invalid_argument("nms: window must be >= 1");
    if (max_kp < 0) throw std::invalid_argument("nms: max_kp must be >= 0");

    std::vector<int> order;  // candidate pixel indices
    order.reserve(map.pix.size());
    for (int i = 0; i < static_cast<int>(map.pix.size()); ++i)
        if (map.pix[i] >= threshold) order.push_back(i);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        if (map.pix[a] != map.pix[b]) return map.pix[a] > map.pix[b];
        return a < b;
    });

    // Accepted keypoints mark their Chebyshev neighborhood in a grid, making
    // the suppression test O(1) per candidate.
    std::vector<char> suppressed(map.pix.size(), 0);
    std::vector<Keypoint> out;
    for (int idx : order) {
        if (static_cast<int>(out.size()) >= max_kp) break;
        if (suppressed[idx]) continue;
        const int x = idx % map.width, y = idx / map.width;
        out.push_back({x, y, map.pix[idx]});
        const int y0 = std::max(0, y - window), y1 = std::min(map.height - 1, y + window);
        const int x0 = std::max(0, x - window), x1 = std::min(map.width - 1, x + window);
        for (int yy = y0; yy <= y1; ++yy)
            std::fill(suppressed.begin() + (static_cast<size_t>(yy) * map.width + x0),
                      suppressed.begin() + (static_cast<size_t>(yy) * map.width + x1 + 1),
                      char(1));
    }
    return out;
}

Descriptor describe(const GrayImage& img, const Keypoint& kp) {
    constexpr int kPatch = 16;
    constexpr double kSigma = 8.0;
    constexpr double kClamp = 0.2;
    constexpr int kCells = 4, kOri = 8;

    Descriptor hist{};
    for (int j = 0; j < kPatch; ++j) {
        for (int i = 0; i < kPatch; ++i) {
            const int px = kp.x - kPatch / 2 + i;
            const int py = kp.y - kPatch / 2 + j;
            const double gx =
                0.5 * (img.at_clamped(px + 1, py) - img.at_clamped(px - 1, py));
            const double gy =
                0.5 * (img.at_clamped(px, py + 1) - img.at_clamped(px, py - 1));
            const double mag = std::sqrt(gx * gx + gy * gy);
            if (mag == 0.0) continue;

            const double du = i - (kPatch - 1) / 2.0;  // patch-center relative
            const double dv = j - (kPatch - 1) / 2.0;
            const double wgt = std::exp(-(du * du + dv * dv) / (2.0 * kSigma * kSigma));

            // cell coordinates in [-0.5, 3.5]; bilinear between neighbors
            const double cu = (du + kPatch / 2.0) / (kPatch / kCells) - 0.5;
            const double cv = (dv + kPatch / 2.0) / (kPatch / kCells) - 0.5;
            const int cu0 = static_cast<int>(std::floor(cu));
            const int cv0 = static_cast<int>(std::floor(cv));
            const double fu = cu - cu0, fv = cv - cv0;

            // orientation in [0, 8), linear between the two nearest bins
            const double theta = std::atan2(gy, gx);
            double ob = (theta + std::numbers::pi) / (2.0 * std::numbers::pi / kOri);
            if (ob >= kOri) ob -= kOri;
            const int ob0 = static_cast<int>(std::floor(ob));
            const double fo = ob - ob0;

            const double contrib = mag * wgt;
            for (int dy2 = 0; dy2 < 2; ++dy2) {
                const int cy = cv0 + dy2;
                if (cy < 0 || cy >= kCells) continue;
                const double wy = dy2 ? fv : 1.0 - fv;
                for (int dx2 = 0; dx2 < 2; ++dx2) {
                    const int cx = cu0 + dx2;
                    if (cx < 0 || cx >= kCells) continue;
                    const double wx = dx2 ? fu : 1.0 - fu;
                    for (int do2 = 0; do2 < 2; ++do2) {
                        const int ob1 = (ob0 + do2) % kOri;
                        const double wo = do2 ? fo : 1.0 - fo;
                        hist[(cy * kCells + cx) * kOri + ob1] += contrib * wy * wx * wo;
                    }
                }
            }
        }
    }

    double norm = std::sqrt(std::inner_product(hist.begin(), hist.end(), hist.begin(), 0.0));
    if (norm == 0.0) return Descriptor{};  // flat patch
    for (double& v : hist) v = std::min(v / norm, kClamp);
    norm = std::sqrt(std::inner_product(hist.begin(), hist.end(), hist.begin(), 0.0));
    for (double& v : hist) v /= norm;

    const double l1 = std::accumulate(hist.begin(), hist.end(), 0.0);
    for (double& v : hist) v = std::sqrt(v / l1);
    return hist;
}

std::vector<Descriptor> describe_all(const GrayImage& img, const std::vector<Keypoint>& kps) {
    std::vector<Descriptor> out(kps.size());
    for (size_t k = 0; k < kps.size(); ++k) out[k] = describe(img, kps[k]);
    return out;
}

std::string format_keypoint_file(const std::vector<Keypoint>& kps,
                                 const std::vector<Descriptor>& descs) {
    if (kps.size() != descs.size())
        throw std::invalid_argument("keypoint file: count mismatch");
    std::string out;
    char buf[64];
    for (size_t k = 0; k < kps.size(); ++k) {
        std::snprintf(buf, sizeof(buf), "%d %d %.17g", kps[k].x, kps[k].y, kps[k].score);
        out += buf;
        for (double v : descs[k]) {
            std::snprintf(buf, sizeof(buf), " %.17g", v);
            out += buf;
        }
        out += '\n';
    }
    return out;
}

}  // namespace keyreg
