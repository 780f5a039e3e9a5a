#pragma once

#include <algorithm>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace keyreg {

// Single-channel image, values in [0, 1], row-major.
struct GrayImage {
    int width = 0;
    int height = 0;
    std::vector<double> pix;

    GrayImage() = default;
    GrayImage(int w, int h, double fill = 0.0)
        : width(w), height(h), pix(static_cast<std::size_t>(w) * h, fill) {
        if (w < 1 || h < 1)
            throw std::invalid_argument("image dimensions must be >= 1");
    }

    double& at(int x, int y) { return pix[static_cast<std::size_t>(y) * width + x]; }
    double at(int x, int y) const { return pix[static_cast<std::size_t>(y) * width + x]; }

    // replicate-border read
    double at_clamped(int x, int y) const {
        x = std::clamp(x, 0, width - 1);
        y = std::clamp(y, 0, height - 1);
        return at(x, y);
    }

    bool contains(double x, double y) const {
        return x >= 0.0 && y >= 0.0 && x <= width - 1.0 && y <= height - 1.0;
    }

    // Bilinear sample; taps outside the image contribute the fill value 0.
    double sample_bilinear(double x, double y) const;
};

// Interleaved RGB, values in [0, 1].
struct RgbImage {
    int width = 0;
    int height = 0;
    std::vector<double> pix;  // r, g, b per pixel

    RgbImage() = default;
    RgbImage(int w, int h)
        : width(w), height(h), pix(static_cast<std::size_t>(w) * h * 3, 0.0) {
        if (w < 1 || h < 1)
            throw std::invalid_argument("image dimensions must be >= 1");
    }

    double& at(int x, int y, int c) {
        return pix[(static_cast<std::size_t>(y) * width + x) * 3 + c];
    }
    double at(int x, int y, int c) const {
        return pix[(static_cast<std::size_t>(y) * width + x) * 3 + c];
    }
};

using AnyImage = std::variant<GrayImage, RgbImage>;

// Malformed file contents; the message names the byte offset of the
// offending input.
class PnmError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// PGM (P2/P5) and PPM (P6) with maxval 255. 8-bit values map to [0,1]
// as v/255.
AnyImage load_image(const std::string& path);
GrayImage load_gray(const std::string& path);

// Quantizes as round(v*255) clamped to [0,255]; writes P5 / P6.
void save_image(const GrayImage& img, const std::string& path);
void save_image(const RgbImage& img, const std::string& path);

}  // namespace keyreg
