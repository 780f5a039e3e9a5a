#include "keyreg/geometry.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "keyreg/util.hpp"

namespace keyreg {

namespace {
constexpr double kSingularTol = 1e-12;
constexpr double kInfinityTol = 1e-12;
}  // namespace

Homography::Homography() : m_{1, 0, 0, 0, 1, 0, 0, 0, 1} {}

Homography::Homography(const std::array<double, 9>& m) : m_(m) {
    check_invertible();
    normalize();
}

void Homography::normalize() {
    if (std::abs(m_[8]) > kSingularTol) {
        const double inv = 1.0 / m_[8];
        for (double& v : m_)
            v *= inv;
        m_[8] = 1.0;  // m8 * (1/m8) can round away from 1; pin the canonical form
    }
}

double Homography::det() const {
    return m_[0] * (m_[4] * m_[8] - m_[5] * m_[7]) -
           m_[1] * (m_[3] * m_[8] - m_[5] * m_[6]) +
           m_[2] * (m_[3] * m_[7] - m_[4] * m_[6]);
}

void Homography::check_invertible() const {
    double scale = 0.0;
    for (double v : m_)
        scale = std::max(scale, std::abs(v));
    if (scale == 0.0 || std::abs(det()) <= kSingularTol * scale * scale * scale)
        throw std::invalid_argument("non-invertible transform");
}

Homography Homography::translation(double tx, double ty) {
    return Homography({1, 0, tx, 0, 1, ty, 0, 0, 1});
}

Homography Homography::rotation(double radians) {
    const double c = std::cos(radians);
    const double s = std::sin(radians);
    return Homography({c, -s, 0, s, c, 0, 0, 0, 1});
}

Homography Homography::scaling(double s) {
    return Homography({s, 0, 0, 0, s, 0, 0, 0, 1});
}

Homography Homography::shearing(double shx, double shy) {
    return Homography({1, shx, 0, shy, 1, 0, 0, 0, 1});
}

// Gauss-Jordan with partial pivoting (the adjugate route is reserved for
// test oracles).
Homography Homography::inverse() const {
    double a[3][6];
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) {
            a[r][c] = m_[r * 3 + c];
            a[r][c + 3] = (r == c) ? 1.0 : 0.0;
        }
    }
    for (int col = 0; col < 3; ++col) {
        int pivot = col;
        for (int r = col + 1; r < 3; ++r)
            if (std::abs(a[r][col]) > std::abs(a[pivot][col]))
                pivot = r;
        if (std::abs(a[pivot][col]) <= kSingularTol)
            throw std::invalid_argument("non-invertible transform");
        if (pivot != col)
            for (int c = 0; c < 6; ++c)
                std::swap(a[pivot][c], a[col][c]);
        const double inv = 1.0 / a[col][col];
        for (int c = 0; c < 6; ++c)
            a[col][c] *= inv;
        for (int r = 0; r < 3; ++r) {
            if (r == col)
                continue;
            const double f = a[r][col];
            for (int c = 0; c < 6; ++c)
                a[r][c] -= f * a[col][c];
        }
    }
    std::array<double, 9> out;
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c)
            out[r * 3 + c] = a[r][c + 3];
    return Homography(out);
}

Homography Homography::operator*(const Homography& rhs) const {
    std::array<double, 9> out{};
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) {
            double s = 0.0;
            for (int k = 0; k < 3; ++k)
                s += m_[r * 3 + k] * rhs.m_[k * 3 + c];
            out[r * 3 + c] = s;
        }
    return Homography(out);
}

Vec2 apply(const Homography& h, Vec2 p) {
    const auto& m = h.m();
    const double w = m[6] * p.x + m[7] * p.y + m[8];
    if (std::abs(w) <= kInfinityTol)
        throw std::domain_error("point at infinity");
    return {(m[0] * p.x + m[1] * p.y + m[2]) / w, (m[3] * p.x + m[4] * p.y + m[5]) / w};
}

Homography compose_pair(const Homography& g_prime, const Homography& g) {
    return g_prime * g.inverse();
}

void HomographySampleRanges::validate() const {
    if (!(scale_min > 0.0))
        throw std::invalid_argument("scale_min must be > 0");
    if (scale_min > scale_max || persp_min > persp_max || shear_min > shear_max)
        throw std::invalid_argument("range minimum exceeds maximum");
    if (persp_min < 0.0 || trans_max_x < 0.0 || trans_max_y < 0.0)
        throw std::invalid_argument("negative magnitude range");
    if (rot_max_deg < 0.0 || rot_max_deg >= 90.0)
        throw std::invalid_argument("rot_max_deg must lie in [0, 90)");
}

HomographySampleRanges HomographySampleRanges::identity_only() {
    HomographySampleRanges r;
    r.scale_min = r.scale_max = 1.0;
    r.persp_min = r.persp_max = 0.0;
    r.trans_max_x = r.trans_max_y = 0.0;
    r.shear_min = r.shear_max = 0.0;
    r.rot_max_deg = 0.0;
    return r;
}

HomographyFactors sample_factors(const HomographySampleRanges& ranges, Rng& rng) {
    ranges.validate();
    HomographyFactors f;
    f.rot_deg = rng.uniform(-ranges.rot_max_deg, ranges.rot_max_deg);
    f.scale = rng.uniform(ranges.scale_min, ranges.scale_max);
    f.shear_x = rng.uniform(ranges.shear_min, ranges.shear_max);
    f.shear_y = rng.uniform(ranges.shear_min, ranges.shear_max);
    const double px = rng.uniform(ranges.persp_min, ranges.persp_max);
    const double py = rng.uniform(ranges.persp_min, ranges.persp_max);
    f.persp_x = rng.coin() ? px : -px;
    f.persp_y = rng.coin() ? py : -py;
    f.trans_x = rng.uniform(-ranges.trans_max_x, ranges.trans_max_x);
    f.trans_y = rng.uniform(-ranges.trans_max_y, ranges.trans_max_y);
    return f;
}

Homography compose_factors(const HomographyFactors& f, Vec2 center) {
    const Homography rot = Homography::rotation(f.rot_deg * M_PI / 180.0);
    const Homography sc = Homography::scaling(f.scale);
    const Homography sh = Homography::shearing(f.shear_x, f.shear_y);
    const Homography persp({1, 0, 0, 0, 1, 0, f.persp_x, f.persp_y, 1});
    const Homography to_center = Homography::translation(center.x, center.y);
    const Homography from_center = Homography::translation(-center.x, -center.y);
    const Homography trans = Homography::translation(f.trans_x, f.trans_y);
    return trans * to_center * persp * sh * sc * rot * from_center;
}

Homography sample_homography(const HomographySampleRanges& ranges, Vec2 center, Rng& rng) {
    return compose_factors(sample_factors(ranges, rng), center);
}

GrayImage warp_image(const GrayImage& src, const Homography& h, int out_w, int out_h) {
    if (out_w < 1 || out_h < 1)
        throw std::invalid_argument("output dimensions must be >= 1");
    const Homography inv = h.inverse();
    const auto& m = inv.m();
    GrayImage out(out_w, out_h);
    for (int y = 0; y < out_h; ++y) {
        for (int x = 0; x < out_w; ++x) {
            const double w = m[6] * x + m[7] * y + m[8];
            if (std::abs(w) <= kInfinityTol)
                continue;
            const double sx = (m[0] * x + m[1] * y + m[2]) / w;
            const double sy = (m[3] * x + m[4] * y + m[5]) / w;
            out.at(x, y) = src.sample_bilinear(sx, sy);
        }
    }
    return out;
}

FlipScale failure_decompose(const Homography& h) {
    const auto& m = h.m();
    const double det_a = m[0] * m[4] - m[1] * m[3];
    return {det_a < 0.0, std::sqrt(std::abs(det_a))};
}

Homography read_homography(const std::string& path) {
    std::ifstream f(path);
    if (!f)
        throw std::runtime_error("cannot open homography file '" + path + "'");
    std::array<double, 9> m;
    for (double& v : m)
        if (!(f >> v))
            throw std::runtime_error("homography file '" + path + "' needs 9 numbers");
    return Homography(m);
}

void write_homography(const Homography& h, const std::string& path) {
    char buf[64];
    std::string out;
    const auto& m = h.m();
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) {
            std::snprintf(buf, sizeof(buf), "%.17g", m[r * 3 + c]);
            out += buf;
            out += c == 2 ? '\n' : ' ';
        }
    }
    write_file_atomic(path, out);
}

}  // namespace keyreg
