#include "keyreg/image.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace keyreg {

double GrayImage::sample_bilinear(double x, double y) const {
    if (x < -1.0 || y < -1.0 || x > width || y > height)
        return 0.0;
    const int x0 = static_cast<int>(std::floor(x));
    const int y0 = static_cast<int>(std::floor(y));
    const double fx = x - x0;
    const double fy = y - y0;
    auto tap = [&](int xi, int yi) -> double {
        if (xi < 0 || yi < 0 || xi >= width || yi >= height)
            return 0.0;
        return at(xi, yi);
    };
    const double v00 = tap(x0, y0);
    const double v10 = tap(x0 + 1, y0);
    const double v01 = tap(x0, y0 + 1);
    const double v11 = tap(x0 + 1, y0 + 1);
    return (1 - fy) * ((1 - fx) * v00 + fx * v10) + fy * ((1 - fx) * v01 + fx * v11);
}

namespace {

class PnmParser {
public:
    explicit PnmParser(const std::string& path) : path_(path) {
        std::ifstream f(path, std::ios::binary);
        if (!f)
            throw PnmError("cannot open '" + path + "'");
        std::ostringstream ss;
        ss << f.rdbuf();
        data_ = ss.str();
    }

    [[noreturn]] void fail(const std::string& what) const {
        throw PnmError("malformed PNM '" + path_ + "': " + what + " at byte " +
                       std::to_string(pos_));
    }

    // skips whitespace and '#' comments
    void skip_space() {
        while (pos_ < data_.size()) {
            const char c = data_[pos_];
            if (c == '#') {
                while (pos_ < data_.size() && data_[pos_] != '\n')
                    ++pos_;
            } else if (std::isspace(static_cast<unsigned char>(c))) {
                ++pos_;
            } else {
                break;
            }
        }
    }

    int next_int() {
        skip_space();
        if (pos_ >= data_.size() || !std::isdigit(static_cast<unsigned char>(data_[pos_])))
            fail("expected integer");
        long v = 0;
        while (pos_ < data_.size() && std::isdigit(static_cast<unsigned char>(data_[pos_]))) {
            v = v * 10 + (data_[pos_] - '0');
            if (v > 1u << 30)
                fail("integer out of range");
            ++pos_;
        }
        return static_cast<int>(v);
    }

    std::string magic() {
        if (data_.size() < 2 || data_[0] != 'P')
            fail("missing PNM magic");
        pos_ = 2;
        return data_.substr(0, 2);
    }

    // raw payload after the single whitespace byte terminating the header
    const unsigned char* raw(std::size_t count) {
        if (pos_ >= data_.size() || !std::isspace(static_cast<unsigned char>(data_[pos_])))
            fail("expected whitespace before raster");
        ++pos_;
        if (data_.size() - pos_ < count)
            fail("truncated raster");
        return reinterpret_cast<const unsigned char*>(data_.data()) + pos_;
    }

private:
    std::string path_;
    std::string data_;
    std::size_t pos_ = 0;
};

}  // namespace

AnyImage load_image(const std::string& path) {
    PnmParser p(path);
    const std::string magic = p.magic();
    if (magic != "P2" && magic != "P5" && magic != "P6")
        p.fail("unsupported magic '" + magic + "'");
    const int w = p.next_int();
    const int h = p.next_int();
    if (w < 1 || h < 1)
        p.fail("bad dimensions");
    const int maxval = p.next_int();
    if (maxval != 255)
        throw PnmError("unsupported maxval " + std::to_string(maxval) + " in '" + path +
                       "' (only 255 is supported)");

    if (magic == "P2") {
        GrayImage img(w, h);
        for (std::size_t i = 0; i < img.pix.size(); ++i) {
            const int v = p.next_int();
            if (v > 255)
                p.fail("sample exceeds maxval");
            img.pix[i] = v / 255.0;
        }
        return img;
    }
    if (magic == "P5") {
        GrayImage img(w, h);
        const unsigned char* raw = p.raw(img.pix.size());
        for (std::size_t i = 0; i < img.pix.size(); ++i)
            img.pix[i] = raw[i] / 255.0;
        return img;
    }
    RgbImage img(w, h);
    const unsigned char* raw = p.raw(img.pix.size());
    for (std::size_t i = 0; i < img.pix.size(); ++i)
        img.pix[i] = raw[i] / 255.0;
    return img;
}

GrayImage load_gray(const std::string& path) {
    AnyImage any = load_image(path);
    if (std::holds_alternative<RgbImage>(any))
        throw PnmError("'" + path + "' is a color image, expected grayscale");
    return std::get<GrayImage>(std::move(any));
}

namespace {

unsigned char quantize(double v) {
    const double q = std::round(v * 255.0);
    return static_cast<unsigned char>(std::clamp(q, 0.0, 255.0));
}

void write_file(const std::string& path, const std::string& header,
                const std::vector<double>& pix) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f)
        throw std::runtime_error("cannot write '" + path + "'");
    f << header;
    std::string raster(pix.size(), '\0');
    for (std::size_t i = 0; i < pix.size(); ++i)
        raster[i] = static_cast<char>(quantize(pix[i]));
    f.write(raster.data(), static_cast<std::streamsize>(raster.size()));
    if (!f)
        throw std::runtime_error("write failed for '" + path + "'");
}

}  // namespace

void save_image(const GrayImage& img, const std::string& path) {
    write_file(path,
               "P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n",
               img.pix);
}

void save_image(const RgbImage& img, const std::string& path) {
    write_file(path,
               "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n",
               img.pix);
}

}  // namespace keyreg
