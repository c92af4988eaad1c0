#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include "cbn/io.hpp"

namespace cbn::io {
namespace {

class HeaderReader {
public:
    HeaderReader(const std::string& data, const fs::path& path) : data_(data), path_(path) {}

    int next_int(const char* what) {
        skip_space();
        std::size_t start = pos_;
        while (pos_ < data_.size() && std::isdigit(static_cast<unsigned char>(data_[pos_]))) ++pos_;
        if (start == pos_) throw IoError(path_.string() + ": malformed header (" + what + ")");
        return std::stoi(data_.substr(start, pos_ - start));
    }
    std::string magic() {
        if (data_.size() < 2) throw IoError(path_.string() + ": file too short");
        pos_ = 2;
        return data_.substr(0, 2);
    }
    // Single whitespace byte separating the header from binary data.
    std::size_t raster_start() {
        if (pos_ >= data_.size()) throw IoError(path_.string() + ": missing raster");
        return pos_ + 1;
    }
    std::size_t pos() const { return pos_; }

private:
    void skip_space() {
        while (pos_ < data_.size()) {
            if (data_[pos_] == '#') {
                while (pos_ < data_.size() && data_[pos_] != '\n') ++pos_;
            } else if (std::isspace(static_cast<unsigned char>(data_[pos_]))) {
                ++pos_;
            } else {
                break;
            }
        }
    }

    const std::string& data_;
    const fs::path& path_;
    std::size_t pos_ = 0;
};

std::uint8_t to_byte(double v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace

ColorImage from_rgb(const Image& r, const Image& g, const Image& b) {
    ColorImage out{Image(r.width(), r.height()), Image(r.width(), r.height()),
                   Image(r.width(), r.height())};
    for (std::size_t i = 0; i < r.size(); ++i) {
        const double R = r.pixels()[i], G = g.pixels()[i], B = b.pixels()[i];
        out.y.pixels()[i] = 0.299 * R + 0.587 * G + 0.114 * B;
        out.cb.pixels()[i] = 0.5 - 0.168736 * R - 0.331264 * G + 0.5 * B;
        out.cr.pixels()[i] = 0.5 + 0.5 * R - 0.418688 * G - 0.081312 * B;
    }
    return out;
}

void to_rgb(const ColorImage& img, Image& r, Image& g, Image& b) {
    r = Image(img.y.width(), img.y.height());
    g = r;
    b = r;
    for (std::size_t i = 0; i < img.y.size(); ++i) {
        const double Y = img.y.pixels()[i];
        const double Cb = img.cb.pixels()[i] - 0.5, Cr = img.cr.pixels()[i] - 0.5;
        r.pixels()[i] = Y + 1.402 * Cr;
        g.pixels()[i] = Y - 0.344136 * Cb - 0.714136 * Cr;
        b.pixels()[i] = Y + 1.772 * Cb;
    }
}

ColorImage read_image(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open image " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    const std::string data = buf.str();

    HeaderReader hdr(data, path);
    const std::string magic = hdr.magic();
    if (magic != "P2" && magic != "P3" && magic != "P5" && magic != "P6")
        throw IoError(path.string() + ": unsupported image format '" + magic + "'");
    const int w = hdr.next_int("width");
    const int h = hdr.next_int("height");
    const int maxval = hdr.next_int("maxval");
    if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 65535)
        throw IoError(path.string() + ": invalid image header");
    const bool color = magic == "P3" || magic == "P6";
    const int channels = color ? 3 : 1;
    const std::size_t count = static_cast<std::size_t>(w) * h * channels;
    std::vector<double> values(count);

    if (magic == "P5" || magic == "P6") {
        const std::size_t bytes = maxval < 256 ? 1 : 2;
        const std::size_t start = hdr.raster_start();
        if (data.size() < start + count * bytes) throw IoError(path.string() + ": truncated raster");
        const auto* p = reinterpret_cast<const unsigned char*>(data.data()) + start;
        for (std::size_t i = 0; i < count; ++i)
            values[i] = bytes == 1 ? p[i] : (p[2 * i] << 8) | p[2 * i + 1];
    } else {
        for (std::size_t i = 0; i < count; ++i) values[i] = hdr.next_int("sample");
    }

    auto plane = [&](int c) {
        Image img(w, h);
        for (std::size_t i = 0; i < img.size(); ++i)
            img.pixels()[i] = values[i * channels + c] / static_cast<double>(maxval);
        return img;
    };
    if (!color) return ColorImage{plane(0), {}, {}};
    return from_rgb(plane(0), plane(1), plane(2));
}

void write_image(const fs::path& path, const ColorImage& img) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write image " + path.string());
    const int w = img.y.width(), h = img.y.height();
    if (!img.is_color()) {
        out << "P5\n" << w << ' ' << h << "\n255\n";
        for (double v : img.y.pixels()) out.put(static_cast<char>(to_byte(v)));
    } else {
        Image r, g, b;
        to_rgb(img, r, g, b);
        out << "P6\n" << w << ' ' << h << "\n255\n";
        for (std::size_t i = 0; i < r.size(); ++i) {
            out.put(static_cast<char>(to_byte(r.pixels()[i])));
            out.put(static_cast<char>(to_byte(g.pixels()[i])));
            out.put(static_cast<char>(to_byte(b.pixels()[i])));
        }
    }
    if (!out) throw IoError("failed writing image " + path.string());
}

void write_pgm(const fs::path& path, const Image& y) { write_image(path, ColorImage{y, {}, {}}); }

std::string sanitize_name(const std::string& name) {
    std::string out;
    for (char c : name) {
        const bool ok = std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '_' || c == '-';
        out.push_back(ok ? c : '_');
    }
    if (out.empty() || out == "." || out == "..") out = "_" + out;
    return out;
}

}  // namespace cbn::io
