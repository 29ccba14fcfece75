#pragma once

// Grayscale images in [0,1] and binary PGM (P5, 8-bit) I/O.

#include <cstdint>
#include <fstream>
#include <sstream>

#include "sfrf/tensor.hpp"

namespace sfrf {

struct Image {
    Tensor pixels;  // H×W, values in [0, 1]

    Image() = default;
    Image(std::size_t h, std::size_t w) : pixels(Tensor({h, w})) {}
    explicit Image(Tensor t) : pixels(std::move(t)) {
        if (pixels.rank() != 2) throw std::invalid_argument("Image expects an H×W tensor");
    }

    std::size_t height() const { return pixels.shape[0]; }
    std::size_t width() const { return pixels.shape[1]; }
    double& at(std::size_t y, std::size_t x) { return pixels.at2(y, x); }
    double at(std::size_t y, std::size_t x) const { return pixels.at2(y, x); }

    void clamp() {
        for (auto& v : pixels.data) v = std::min(1.0, std::max(0.0, v));
    }
    bool in_range() const {
        for (double v : pixels.data)
            if (!(v >= 0.0 && v <= 1.0)) return false;
        return true;
    }
};

class PgmError : public std::runtime_error {
public:
    PgmError(const std::string& path, std::size_t offset, const std::string& what)
        : std::runtime_error(path + " (byte " + std::to_string(offset) + "): " + what) {}
};

namespace pgm_detail {

inline std::size_t stream_offset(std::istream& in) {
    const auto pos = in.tellg();
    return pos == std::istream::pos_type(-1) ? 0 : static_cast<std::size_t>(pos);
}

// Skips whitespace and '#' comments, returns the next token.
inline std::string next_token(std::istream& in, const std::string& path,
                              const std::string& field) {
    for (;;) {
        const int c = in.peek();
        if (c == EOF)
            throw PgmError(path, stream_offset(in), "truncated header, missing " + field);
        if (c == '#') {
            std::string line;
            std::getline(in, line);
            continue;
        }
        if (std::isspace(c)) {
            in.get();
            continue;
        }
        break;
    }
    std::string tok;
    while (in.peek() != EOF && !std::isspace(in.peek())) tok += static_cast<char>(in.get());
    return tok;
}

}  // namespace pgm_detail

inline Image read_pgm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw PgmError(path, 0, "cannot open file");
    const std::string magic = pgm_detail::next_token(in, path, "magic");
    if (magic != "P5") throw PgmError(path, 0, "bad magic '" + magic + "', expected P5");
    auto parse_num = [&](const std::string& field) {
        const std::string tok = pgm_detail::next_token(in, path, field);
        try {
            return std::stoul(tok);
        } catch (...) {
            throw PgmError(path, static_cast<std::size_t>(in.tellg()),
                           "invalid " + field + " '" + tok + "'");
        }
    };
    const std::size_t w = parse_num("width");
    const std::size_t h = parse_num("height");
    const std::size_t maxval = parse_num("maxval");
    if (maxval != 255)
        throw PgmError(path, static_cast<std::size_t>(in.tellg()),
                       "maxval must be 255, got " + std::to_string(maxval));
    in.get();  // the single whitespace byte before the payload
    if (w == 0 || h == 0)
        throw PgmError(path, static_cast<std::size_t>(in.tellg()), "zero image extent");

    Image img(h, w);
    std::vector<unsigned char> row(w);
    for (std::size_t y = 0; y < h; ++y) {
        in.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(w));
        if (static_cast<std::size_t>(in.gcount()) != w)
            throw PgmError(path, pgm_detail::stream_offset(in),
                           "truncated payload at row " + std::to_string(y));
        for (std::size_t x = 0; x < w; ++x)
            img.at(y, x) = static_cast<double>(row[x]) / 255.0;
    }
    return img;
}

inline std::uint8_t quantize8(double v) {
    const double c = std::min(1.0, std::max(0.0, v));
    return static_cast<std::uint8_t>(c * 255.0 + 0.5);
}

inline void write_pgm(const Image& img, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw PgmError(path, 0, "cannot open file for writing");
    out << "P5\n" << img.width() << " " << img.height() << "\n255\n";
    std::vector<unsigned char> row(img.width());
    for (std::size_t y = 0; y < img.height(); ++y) {
        for (std::size_t x = 0; x < img.width(); ++x) row[x] = quantize8(img.at(y, x));
        out.write(reinterpret_cast<char*>(row.data()),
                  static_cast<std::streamsize>(row.size()));
    }
    if (!out) throw PgmError(path, 0, "short write");
}

}  // namespace sfrf
