#pragma once

#include "keyreg/image.hpp"
#include "keyreg/rng.hpp"

namespace keyreg {

// Appearance augmentation. Each enabled transform fires independently
// with probability 0.5 (invert uses its own probability), in the fixed
// order noise -> contrast -> illumination -> gamma -> blur -> invert.
struct AugmentationConfig {
    bool noise_enabled = true;
    double noise_sigma_min = 0.0;
    double noise_sigma_max = 0.06;

    bool contrast_enabled = true;
    double contrast_gain_min = 0.5;
    double contrast_gain_max = 1.5;

    bool illumination_enabled = true;
    double illumination_offset_min = -0.25;
    double illumination_offset_max = 0.25;

    bool gamma_enabled = true;
    double gamma_min = 0.5;
    double gamma_max = 1.8;

    bool blur_enabled = true;
    int blur_len_min = 3;  // odd
    int blur_len_max = 9;  // odd

    bool invert_enabled = true;
    double invert_prob = 0.5;

    void validate() const;
    static AugmentationConfig disabled();
};

GrayImage augment(const GrayImage& img, const AugmentationConfig& cfg, Rng& rng);

// Contrast-limited adaptive histogram equalization on the 8-bit
// quantization of the image; clip_limit is in multiples of the mean
// bin count.
GrayImage clahe(const GrayImage& img, int tiles_x, int tiles_y, double clip_limit);

GrayImage bilateral(const GrayImage& img, double sigma_space, double sigma_range, int radius);

GrayImage green_channel(const RgbImage& img);

// Test-time pipeline: green channel -> CLAHE (8x8 tiles, clip 2.0) ->
// bilateral (sigma_space 5, sigma_range 0.1, radius 7).
GrayImage preprocess(const RgbImage& img);
GrayImage preprocess_gray(const GrayImage& img);

struct CropResult {
    GrayImage image;
    int x = 0;  // offset of the crop in the source
    int y = 0;
};

CropResult random_crop(const GrayImage& img, int size, Rng& rng);

}  // namespace keyreg
