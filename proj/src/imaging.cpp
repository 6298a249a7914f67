#include "cxr/imaging.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>

#include "cxr/error.hpp"
#include "cxr/random.hpp"

namespace cxr {

Image::Image(int w, int h, std::uint8_t fill) : width(w), height(h) {
    if (w <= 0 || h <= 0) throw Error(ErrorCode::InvalidInput, "image dimensions must be positive");
    data.assign(std::size_t(w) * h, fill);
}

Image::Image(int w, int h, std::vector<std::uint8_t> pixels) : width(w), height(h), data(std::move(pixels)) {
    if (w <= 0 || h <= 0) throw Error(ErrorCode::InvalidInput, "image dimensions must be positive");
    if (data.size() != std::size_t(w) * h)
        throw Error(ErrorCode::InvalidInput, "pixel buffer length does not match width x height");
}

AugmentParams AugmentParams::sample(std::uint64_t seed) {
    Rng rng(seed);
    AugmentParams p;
    p.brightness_delta = int(rng.uniform_int(-64, 64));
    p.contrast_factor = rng.uniform(0.5, 2.0);
    p.hflip = rng.bernoulli(0.5);
    p.rotation_deg = rng.uniform(-15.0, 15.0);
    p.seed = seed;
    return p;
}

namespace {

std::uint8_t clamp_u8(double v) {
    return std::uint8_t(std::clamp(std::lround(v), 0L, 255L));
}

class PgmHeaderReader {
  public:
    explicit PgmHeaderReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    void skip_space_and_comments() {
        while (pos_ < bytes_.size()) {
            if (std::isspace(bytes_[pos_])) {
                ++pos_;
            } else if (bytes_[pos_] == '#') {
                while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
            } else {
                break;
            }
        }
    }

    long read_int(const char* field) {
        skip_space_and_comments();
        long v = 0;
        std::size_t digits = 0;
        while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
            v = v * 10 + (bytes_[pos_] - '0');
            if (v > 1'000'000) throw Error(ErrorCode::ParseMalformedHeader, std::string("PGM ") + field + " too large");
            ++pos_;
            ++digits;
        }
        if (digits == 0) throw Error(ErrorCode::ParseMalformedHeader, std::string("PGM header missing ") + field);
        return v;
    }

    std::size_t& pos() { return pos_; }

  private:
    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

Image parse_pgm(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5')
        throw Error(ErrorCode::ParseMalformedHeader, "not a binary PGM (missing P5 magic)");
    PgmHeaderReader reader(bytes.subspan(2));
    const long w = reader.read_int("width");
    const long h = reader.read_int("height");
    const long maxval = reader.read_int("maxval");
    if (w <= 0 || h <= 0) throw Error(ErrorCode::ParseMalformedHeader, "PGM dimensions must be positive");
    if (maxval != 255) throw Error(ErrorCode::ParseBadMaxval, "PGM maxval " + std::to_string(maxval) + " != 255");
    std::size_t pos = 2 + reader.pos();
    if (pos >= bytes.size() || !std::isspace(bytes[pos]))
        throw Error(ErrorCode::ParseTruncated, "PGM ends before pixel data");
    ++pos;
    const std::size_t need = std::size_t(w) * std::size_t(h);
    if (bytes.size() - pos < need)
        throw Error(ErrorCode::ParseTruncated, "PGM pixel data truncated: expected " + std::to_string(need) +
                                                   " bytes, found " + std::to_string(bytes.size() - pos));
    return Image(int(w), int(h), std::vector<std::uint8_t>(bytes.begin() + long(pos), bytes.begin() + long(pos + need)));
}

Image load_pgm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_pgm(bytes);
}

std::vector<std::uint8_t> encode_pgm(const Image& img) {
    const std::string header = "P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    out.insert(out.end(), img.data.begin(), img.data.end());
    return out;
}

void save_pgm(const Image& img, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
    const auto bytes = encode_pgm(img);
    out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
    if (!out) throw Error(ErrorCode::Io, "short write to " + path.string());
}

PadLayout pad_layout(int src_w, int src_h, int target) {
    if (target <= 0) throw Error(ErrorCode::InvalidInput, "resize target must be positive");
    if (src_w <= 0 || src_h <= 0) throw Error(ErrorCode::InvalidInput, "cannot resize a zero-dimension image");
    PadLayout l;
    l.target = target;
    if (src_w >= src_h) {
        l.scaled_w = target;
        l.scaled_h = std::clamp(int(std::lround(double(src_h) * target / src_w)), 1, target);
    } else {
        l.scaled_h = target;
        l.scaled_w = std::clamp(int(std::lround(double(src_w) * target / src_h)), 1, target);
    }
    l.offset_x = (target - l.scaled_w) / 2;
    l.offset_y = (target - l.scaled_h) / 2;
    return l;
}

Image resize_bilinear(const Image& img, int out_w, int out_h) {
    if (img.empty() || out_w <= 0 || out_h <= 0) throw Error(ErrorCode::InvalidInput, "zero-dimension resize");
    if (out_w == img.width && out_h == img.height) return img;
    Image out(out_w, out_h);
    const double rx = double(img.width) / out_w;
    const double ry = double(img.height) / out_h;
    for (int y = 0; y < out_h; ++y) {
        const double sy = std::clamp((y + 0.5) * ry - 0.5, 0.0, double(img.height - 1));
        const int y0 = int(sy);
        const int y1 = std::min(y0 + 1, img.height - 1);
        const double fy = sy - y0;
        for (int x = 0; x < out_w; ++x) {
            const double sx = std::clamp((x + 0.5) * rx - 0.5, 0.0, double(img.width - 1));
            const int x0 = int(sx);
            const int x1 = std::min(x0 + 1, img.width - 1);
            const double fx = sx - x0;
            const double top = img.at(x0, y0) * (1 - fx) + img.at(x1, y0) * fx;
            const double bot = img.at(x0, y1) * (1 - fx) + img.at(x1, y1) * fx;
            out.at(x, y) = clamp_u8(top * (1 - fy) + bot * fy);
        }
    }
    return out;
}

Image resize_pad(const Image& img, int target, std::uint8_t pad_value) {
    const PadLayout l = pad_layout(img.width, img.height, target);
    const Image scaled = resize_bilinear(img, l.scaled_w, l.scaled_h);
    if (l.scaled_w == target && l.scaled_h == target) return scaled;
    Image out(target, target, pad_value);
    for (int y = 0; y < l.scaled_h; ++y)
        std::copy_n(scaled.data.begin() + std::ptrdiff_t(y) * l.scaled_w, l.scaled_w,
                    out.data.begin() + std::ptrdiff_t(y + l.offset_y) * target + l.offset_x);
    return out;
}

Tensor normalize(const Image& img, double mean, double std) {
    if (!(std > 0.0)) throw Error(ErrorCode::InvalidConfig, "normalization std must be positive");
    Tensor t(1, img.height, img.width);
    std::transform(img.data.begin(), img.data.end(), t.values.begin(),
                   [&](std::uint8_t v) { return (v / 255.0 - mean) / std; });
    return t;
}

Image hflip(const Image& img) {
    Image out = img;
    for (int y = 0; y < img.height; ++y) {
        auto row = out.data.begin() + std::ptrdiff_t(y) * img.width;
        std::reverse(row, row + img.width);
    }
    return out;
}

Image crop(const Image& img, const Rect& r) {
    if (r.empty() || r.x < 0 || r.y < 0 || r.right() > img.width || r.bottom() > img.height)
        throw Error(ErrorCode::InvalidBox, "crop rectangle outside image");
    Image out(r.w, r.h);
    for (int y = 0; y < r.h; ++y)
        std::copy_n(img.data.begin() + std::ptrdiff_t(r.y + y) * img.width + r.x, r.w,
                    out.data.begin() + std::ptrdiff_t(y) * r.w);
    return out;
}

namespace {

Image rotate(const Image& img, double degrees) {
    const double theta = degrees * std::numbers::pi / 180.0;
    const double c = std::cos(theta);
    const double s = std::sin(theta);
    const double cx = (img.width - 1) / 2.0;
    const double cy = (img.height - 1) / 2.0;
    Image out(img.width, img.height, 0);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            // inverse map: rotate the output coordinate by -theta
            const double dx = x - cx;
            const double dy = y - cy;
            const double sx = c * dx + s * dy + cx;
            const double sy = -s * dx + c * dy + cy;
            if (sx < -0.5 || sy < -0.5 || sx > img.width - 0.5 || sy > img.height - 0.5) continue;
            const double csx = std::clamp(sx, 0.0, double(img.width - 1));
            const double csy = std::clamp(sy, 0.0, double(img.height - 1));
            const int x0 = int(csx);
            const int y0 = int(csy);
            const int x1 = std::min(x0 + 1, img.width - 1);
            const int y1 = std::min(y0 + 1, img.height - 1);
            const double fx = csx - x0;
            const double fy = csy - y0;
            const double top = img.at(x0, y0) * (1 - fx) + img.at(x1, y0) * fx;
            const double bot = img.at(x0, y1) * (1 - fx) + img.at(x1, y1) * fx;
            out.at(x, y) = clamp_u8(top * (1 - fy) + bot * fy);
        }
    }
    return out;
}

}  // namespace

Image augment(const Image& img, const AugmentParams& p) {
    if (p.brightness_delta < -64 || p.brightness_delta > 64)
        throw Error(ErrorCode::InvalidConfig, "brightness_delta outside [-64, 64]");
    if (!(p.contrast_factor >= 0.5 && p.contrast_factor <= 2.0))
        throw Error(ErrorCode::InvalidConfig, "contrast_factor outside [0.5, 2.0]");
    if (!(p.rotation_deg >= -15.0 && p.rotation_deg <= 15.0))
        throw Error(ErrorCode::InvalidConfig, "rotation_deg outside [-15, 15]");
    if (img.empty()) throw Error(ErrorCode::InvalidInput, "cannot augment an empty image");

    Image out = img;
    if (p.contrast_factor != 1.0 || p.brightness_delta != 0) {
        for (auto& v : out.data) {
            const std::uint8_t contrasted = clamp_u8(128.0 + p.contrast_factor * (double(v) - 128.0));
            v = clamp_u8(double(contrasted) + p.brightness_delta);
        }
    }
    if (p.hflip) out = hflip(out);
    if (p.rotation_deg != 0.0) out = rotate(out, p.rotation_deg);
    return out;
}

}  // namespace cxr
