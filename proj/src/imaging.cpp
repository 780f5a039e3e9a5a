#include "keyreg/imaging.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace keyreg {

namespace {

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

void clamp_all(GrayImage& img) {
    for (double& v : img.pix) v = clamp01(v);
}

// Odd-length horizontal box average with replicated borders; a crude
// motion-blur stand-in that keeps the augmentation cheap.
GrayImage box_blur_h(const GrayImage& img, int len) {
    GrayImage out(img.width, img.height);
    int half = len / 2;
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            double acc = 0.0;
            for (int k = -half; k <= half; ++k) {
                int xx = std::clamp(x + k, 0, img.width - 1);
                acc += img.at(xx, y);
            }
            out.at(x, y) = acc / len;
        }
    }
    return out;
}

}  // namespace

void AugmentationConfig::validate() const {
    if (noise_sigma_min < 0 || noise_sigma_max < noise_sigma_min)
        throw std::invalid_argument("augment: bad noise sigma range");
    if (contrast_gain_min <= 0 || contrast_gain_max < contrast_gain_min)
        throw std::invalid_argument("augment: bad contrast gain range");
    if (illumination_offset_max < illumination_offset_min)
        throw std::invalid_argument("augment: bad illumination range");
    if (gamma_min <= 0 || gamma_max < gamma_min)
        throw std::invalid_argument("augment: bad gamma range");
    if (blur_len_min < 1 || blur_len_max < blur_len_min ||
        blur_len_min % 2 == 0 || blur_len_max % 2 == 0)
        throw std::invalid_argument("augment: blur lengths must be odd and ordered");
    if (invert_prob < 0 || invert_prob > 1)
        throw std::invalid_argument("augment: invert_prob outside [0,1]");
}

AugmentationConfig AugmentationConfig::disabled() {
    AugmentationConfig cfg;
    cfg.noise_enabled = false;
    cfg.contrast_enabled = false;
    cfg.illumination_enabled = false;
    cfg.gamma_enabled = false;
    cfg.blur_enabled = false;
    cfg.invert_enabled = false;
    return cfg;
}

GrayImage augment(const GrayImage& img, const AugmentationConfig& cfg, Rng& rng) {
    cfg.validate();
    GrayImage out = img;

    if (cfg.noise_enabled && rng.coin(0.5)) {
        double sigma = rng.uniform(cfg.noise_sigma_min, cfg.noise_sigma_max);
        for (double& v : out.pix) v = clamp01(v + rng.normal(0.0, sigma));
    }
    if (cfg.contrast_enabled && rng.coin(0.5)) {
        double gain = rng.uniform(cfg.contrast_gain_min, cfg.contrast_gain_max);
        for (double& v : out.pix) v = clamp01(0.5 + gain * (v - 0.5));
    }
    if (cfg.illumination_enabled && rng.coin(0.5)) {
        double off = rng.uniform(cfg.illumination_offset_min, cfg.illumination_offset_max);
        for (double& v : out.pix) v = clamp01(v + off);
    }
    if (cfg.gamma_enabled && rng.coin(0.5)) {
        double g = rng.uniform(cfg.gamma_min, cfg.gamma_max);
        for (double& v : out.pix) v = std::pow(clamp01(v), g);
    }
    if (cfg.blur_enabled && rng.coin(0.5)) {
        // uniform over the odd lengths in [min, max]
        int steps = (cfg.blur_len_max - cfg.blur_len_min) / 2 + 1;
        int len = cfg.blur_len_min + 2 * static_cast<int>(rng.uniform_int(steps));
        out = box_blur_h(out, len);
        clamp_all(out);
    }
    if (cfg.invert_enabled && rng.coin(cfg.invert_prob)) {
        for (double& v : out.pix) v = 1.0 - v;
    }
    return out;
}

GrayImage clahe(const GrayImage& img, int tiles_x, int tiles_y, double clip_limit) {
    if (tiles_x < 1 || tiles_y < 1)
        throw std::invalid_argument("clahe: need at least one tile per axis");
    if (clip_limit <= 0)
        throw std::invalid_argument("clahe: clip_limit must be positive");
    if (img.width < tiles_x || img.height < tiles_y)
        throw std::invalid_argument("clahe: image smaller than tile grid");

    constexpr int kBins = 256;
    const int tw = (img.width + tiles_x - 1) / tiles_x;
    const int th = (img.height + tiles_y - 1) / tiles_y;

    auto quant = [](double v) {
        int q = static_cast<int>(std::lround(clamp01(v) * 255.0));
        return std::clamp(q, 0, 255);
    };

    // Per-tile clipped-histogram CDF mapping bin -> [0,1].
    std::vector<std::vector<double>> maps(static_cast<size_t>(tiles_x) * tiles_y,
                                          std::vector<double>(kBins, 0.0));
    for (int ty = 0; ty < tiles_y; ++ty) {
        for (int tx = 0; tx < tiles_x; ++tx) {
            int x0 = tx * tw, x1 = std::min(img.width, x0 + tw);
            int y0 = ty * th, y1 = std::min(img.height, y0 + th);
            long long npix = static_cast<long long>(x1 - x0) * (y1 - y0);

            std::vector<double> hist(kBins, 0.0);
            for (int y = y0; y < y1; ++y)
                for (int x = x0; x < x1; ++x)
                    hist[quant(img.at(x, y))] += 1.0;

            // Clip and redistribute the excess uniformly (single pass).
            double limit = clip_limit * static_cast<double>(npix) / kBins;
            double excess = 0.0;
            for (double& h : hist) {
                if (h > limit) {
                    excess += h - limit;
                    h = limit;
                }
            }
            double add = excess / kBins;
            for (double& h : hist) h += add;

            std::vector<double>& m = maps[static_cast<size_t>(ty) * tiles_x + tx];
            double cum = 0.0;
            for (int b = 0; b < kBins; ++b) {
                cum += hist[b];
                m[b] = cum / static_cast<double>(npix);
            }
        }
    }

    // Bilinear blend between the four surrounding tile mappings, with
    // tile centers as the interpolation knots (clamped at the borders).
    GrayImage out(img.width, img.height);
    for (int y = 0; y < img.height; ++y) {
        double fy = (y - th / 2.0) / th;
        int ty0 = std::clamp(static_cast<int>(std::floor(fy)), 0, tiles_y - 1);
        int ty1 = std::min(ty0 + 1, tiles_y - 1);
        double wy = std::clamp(fy - ty0, 0.0, 1.0);
        for (int x = 0; x < img.width; ++x) {
            double fx = (x - tw / 2.0) / tw;
            int tx0 = std::clamp(static_cast<int>(std::floor(fx)), 0, tiles_x - 1);
            int tx1 = std::min(tx0 + 1, tiles_x - 1);
            double wx = std::clamp(fx - tx0, 0.0, 1.0);

            int b = quant(img.at(x, y));
            double v00 = maps[static_cast<size_t>(ty0) * tiles_x + tx0][b];
            double v01 = maps[static_cast<size_t>(ty0) * tiles_x + tx1][b];
            double v10 = maps[static_cast<size_t>(ty1) * tiles_x + tx0][b];
            double v11 = maps[static_cast<size_t>(ty1) * tiles_x + tx1][b];
            double top = v00 + wx * (v01 - v00);
            double bot = v10 + wx * (v11 - v10);
            out.at(x, y) = top + wy * (bot - top);
        }
    }
    return out;
}

GrayImage bilateral(const GrayImage& img, double sigma_space, double sigma_range, int radius) {
    if (sigma_space <= 0 || sigma_range <= 0)
        throw std::invalid_argument("bilateral: sigmas must be positive");
    if (radius < 0)
        throw std::invalid_argument("bilateral: radius must be non-negative");

    std::vector<double> spatial((2 * radius + 1) * (2 * radius + 1));
    for (int dy = -radius; dy <= radius; ++dy)
        for (int dx = -radius; dx <= radius; ++dx)
            spatial[(dy + radius) * (2 * radius + 1) + (dx + radius)] =
                std::exp(-(dx * dx + dy * dy) / (2.0 * sigma_space * sigma_space));

    GrayImage out(img.width, img.height);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            double center = img.at(x, y);
            double acc = 0.0, wsum = 0.0;
            for (int dy = -radius; dy <= radius; ++dy) {
                int yy = std::clamp(y + dy, 0, img.height - 1);
                for (int dx = -radius; dx <= radius; ++dx) {
                    int xx = std::clamp(x + dx, 0, img.width - 1);
                    double v = img.at(xx, yy);
                    double dr = v - center;
                    double w = spatial[(dy + radius) * (2 * radius + 1) + (dx + radius)] *
                               std::exp(-dr * dr / (2.0 * sigma_range * sigma_range));
                    acc += w * v;
                    wsum += w;
                }
            }
            out.at(x, y) = acc / wsum;  // wsum >= center tap weight 1
        }
    }
    return out;
}

GrayImage green_channel(const RgbImage& img) {
    GrayImage out(img.width, img.height);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            out.at(x, y) = img.at(x, y, 1);
    return out;
}

GrayImage preprocess(const RgbImage& img) {
    return preprocess_gray(green_channel(img));
}

GrayImage preprocess_gray(const GrayImage& img) {
    GrayImage eq = clahe(img, 8, 8, 2.0);
    return bilateral(eq, 5.0, 0.1, 7);
}

CropResult random_crop(const GrayImage& img, int size, Rng& rng) {
    if (size <= 0) throw std::invalid_argument("random_crop: size must be positive");
    if (size > img.width || size > img.height)
        throw std::invalid_argument("random_crop: crop larger than image");
    CropResult r;
    r.x = static_cast<int>(rng.uniform_int(img.width - size + 1));
    r.y = static_cast<int>(rng.uniform_int(img.height - size + 1));
    r.image = GrayImage(size, size);
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x)
            r.image.at(x, y) = img.at(r.x + x, r.y + y);
    return r;
}

}  // namespace keyreg
