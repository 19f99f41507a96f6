#pragma once

// Minimal Netpbm PGM (P5 binary / P2 ASCII) reader and P5 writer.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "mose/error.hpp"
#include "mose/tensor.hpp"

namespace mose::pgm {

struct Image {
    std::size_t width = 0;
    std::size_t height = 0;
    unsigned maxval = 255;
    std::vector<std::uint16_t> pixels;  // row-major
};

/// Writes P5. Values above 255 use two big-endian bytes, as the format requires.
inline void write(const std::filesystem::path& path, const Image& img, const std::string& comment = {}) {
    if (img.maxval == 0 || img.maxval > 65535) throw FormatError("pgm: maxval out of range");
    if (img.pixels.size() != img.width * img.height) throw FormatError("pgm: pixel count mismatch");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    out << "P5\n";
    if (!comment.empty()) {
        std::istringstream lines(comment);
        for (std::string line; std::getline(lines, line);) out << "# " << line << "\n";
    }
    out << img.width << " " << img.height << "\n" << img.maxval << "\n";
    for (std::uint16_t v : img.pixels) {
        if (v > img.maxval) throw FormatError("pgm: pixel exceeds maxval");
        if (img.maxval > 255) out.put(static_cast<char>(v >> 8));
        out.put(static_cast<char>(v & 0xff));
    }
    if (!out) throw Error("write failed for " + path.string());
}

namespace detail {
class HeaderReader {
public:
    HeaderReader(const std::vector<char>& bytes) : bytes_(bytes) {}

    unsigned long next_number() {
        skip_space_and_comments();
        if (pos_ >= bytes_.size() || !std::isdigit(static_cast<unsigned char>(bytes_[pos_]))) {
            throw FormatError("pgm: expected number at offset " + std::to_string(pos_));
        }
        unsigned long v = 0;
        while (pos_ < bytes_.size() && std::isdigit(static_cast<unsigned char>(bytes_[pos_]))) {
            v = v * 10 + static_cast<unsigned long>(bytes_[pos_++] - '0');
            if (v > 1'000'000'000UL) throw FormatError("pgm: number too large");
        }
        return v;
    }

    std::size_t pos() const { return pos_; }
    void advance(std::size_t n) { pos_ += n; }

private:
    void skip_space_and_comments() {
        while (pos_ < bytes_.size()) {
            const char c = bytes_[pos_];
            if (c == '#') {
                while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
            } else if (std::isspace(static_cast<unsigned char>(c))) {
                ++pos_;
            } else {
                break;
            }
        }
    }

    const std::vector<char>& bytes_;
    std::size_t pos_ = 2;
};
}  // namespace detail

inline Image read(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path.string());
    const std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '2')) {
        throw FormatError("pgm: bad magic in " + path.string());
    }
    const bool binary = bytes[1] == '5';
    detail::HeaderReader hdr(bytes);
    Image img;
    img.width = hdr.next_number();
    img.height = hdr.next_number();
    img.maxval = static_cast<unsigned>(hdr.next_number());
    if (img.width == 0 || img.height == 0 || img.maxval == 0 || img.maxval > 65535) {
        throw FormatError("pgm: invalid header in " + path.string());
    }
    const std::size_t count = img.width * img.height;
    img.pixels.resize(count);
    if (binary) {
        hdr.advance(1);  // single whitespace after maxval
        const std::size_t bpp = img.maxval > 255 ? 2 : 1;
        if (bytes.size() < hdr.pos() + count * bpp) {
            throw FormatError("pgm: truncated raster in " + path.string() + " at offset " + std::to_string(bytes.size()));
        }
        const auto* raw = reinterpret_cast<const unsigned char*>(bytes.data() + hdr.pos());
        for (std::size_t i = 0; i < count; ++i) {
            img.pixels[i] = bpp == 2 ? static_cast<std::uint16_t>((raw[2 * i] << 8) | raw[2 * i + 1]) : raw[i];
        }
    } else {
        for (std::size_t i = 0; i < count; ++i) img.pixels[i] = static_cast<std::uint16_t>(hdr.next_number());
    }
    for (std::uint16_t v : img.pixels)
        if (v > img.maxval) throw FormatError("pgm: pixel exceeds maxval in " + path.string());
    return img;
}

/// Tensor [H, W] or [1, H, W] with values in [0, 1] -> 8-bit image (round to nearest).
inline Image from_unit_tensor(const Tensor& t, unsigned maxval = 255) {
    const std::size_t h = t.dim(t.rank() - 2), w = t.dim(t.rank() - 1);
    Image img{w, h, maxval, std::vector<std::uint16_t>(h * w)};
    for (std::size_t i = 0; i < h * w; ++i) {
        const double v = std::clamp(t[i], 0.0, 1.0);
        img.pixels[i] = static_cast<std::uint16_t>(std::lround(v * maxval));
    }
    return img;
}

inline Tensor to_unit_tensor(const Image& img, Shape shape) {
    Tensor t(std::move(shape));
    if (t.size() != img.pixels.size()) throw DimensionError("pgm: image size does not match requested shape");
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<double>(img.pixels[i]) / img.maxval;
    return t;
}

struct Range {
    double min = 0.0;
    double max = 0.0;
};

/// Min-max normalizes a 2-D map to 0..255 and writes it. The original range goes
/// into a header comment and a sidecar "<path>.range" text file ("min max").
/// A constant map is written as all zeros.
inline Range write_heatmap(const std::filesystem::path& path, const Tensor& map) {
    if (map.rank() < 2) throw DimensionError("heatmap: expected a 2-D map");
    const auto [lo, hi] = std::minmax_element(map.data().begin(), map.data().end());
    const Range r{*lo, *hi};
    const std::size_t h = map.dim(map.rank() - 2), w = map.dim(map.rank() - 1);
    Image img{w, h, 255, std::vector<std::uint16_t>(h * w, 0)};
    const double span = r.max - r.min;
    if (span > 0.0) {
        for (std::size_t i = 0; i < h * w; ++i) {
            img.pixels[i] = static_cast<std::uint16_t>(std::lround((map[i] - r.min) / span * 255.0));
        }
    }
    std::ostringstream range;
    range.precision(17);
    range << r.min << " " << r.max;
    write(path, img, "heatmap min-max normalized; range " + range.str());
    std::ofstream side(path.string() + ".range");
    side << range.str() << "\n";
    return r;
}

}  // namespace mose::pgm
