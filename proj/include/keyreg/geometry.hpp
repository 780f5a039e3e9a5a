#pragma once

#include <array>
#include <string>

#include "keyreg/image.hpp"
#include "keyreg/rng.hpp"

namespace keyreg {

struct Vec2 {
    double x = 0.0;
    double y = 0.0;
};

// 3x3 projective transform, row-major. Stored normalized so m[8] == 1
// whenever the bottom-right entry is away from zero. Construction rejects
// singular matrices.
class Homography {
public:
    Homography();  // identity
    explicit Homography(const std::array<double, 9>& m);

    static Homography identity() { return Homography(); }
    static Homography translation(double tx, double ty);
    static Homography rotation(double radians);  // about the origin
    static Homography scaling(double s);
    static Homography shearing(double shx, double shy);

    const std::array<double, 9>& m() const { return m_; }
    double at(int row, int col) const { return m_[row * 3 + col]; }

    double det() const;
    Homography inverse() const;

    // composition: (a * b)(p) = a(b(p))
    Homography operator*(const Homography& rhs) const;

private:
    std::array<double, 9> m_;
    void normalize();
    void check_invertible() const;
};

// Projective point map. Throws std::domain_error("point at infinity")
// when the denominator vanishes.
Vec2 apply(const Homography& h, Vec2 p);

// The transform relating the two warped images of a pair: g' composed
// with the inverse of g.
Homography compose_pair(const Homography& g_prime, const Homography& g);

// Per-factor sampling ranges. Defaults follow the trained setup: scale
// 0.7..1.3, perspective 1e-6..8e-4, translation up to 100 px, shear
// -0.2..0.2, rotation up to 25 degrees.
struct HomographySampleRanges {
    double scale_min = 0.7;
    double scale_max = 1.3;
    double persp_min = 1e-6;
    double persp_max = 8e-4;
    double trans_max_x = 100.0;
    double trans_max_y = 100.0;
    double shear_min = -0.2;
    double shear_max = 0.2;
    double rot_max_deg = 25.0;

    void validate() const;  // throws std::invalid_argument
    static HomographySampleRanges identity_only();
};

// The factors actually drawn for one sample, kept for bookkeeping.
struct HomographyFactors {
    double rot_deg = 0.0;
    double scale = 1.0;
    double shear_x = 0.0;
    double shear_y = 0.0;
    double persp_x = 0.0;  // signed, lands in m[2][0]
    double persp_y = 0.0;  // signed, lands in m[2][1]
    double trans_x = 0.0;
    double trans_y = 0.0;
};

HomographyFactors sample_factors(const HomographySampleRanges& ranges, Rng& rng);

// T * P * Sh * Sc * Rot with the projective part and the linear factors
// pivoting on `center`; translation is applied last.
Homography compose_factors(const HomographyFactors& f, Vec2 center);

Homography sample_homography(const HomographySampleRanges& ranges, Vec2 center, Rng& rng);

// Inverse-mapped bilinear warp; samples falling outside the source read
// as 0 (black fill).
GrayImage warp_image(const GrayImage& src, const Homography& h, int out_w, int out_h);

// Flip/scale summary of the affine part, used by the registration
// failure rules.
struct FlipScale {
    bool flip = false;
    double scale = 1.0;
};

FlipScale failure_decompose(const Homography& h);

// Text format: 9 ASCII floats, row-major, whitespace separated. The
// writer emits 17 significant digits.
Homography read_homography(const std::string& path);
void write_homography(const Homography& h, const std::string& path);

}  // namespace keyreg
