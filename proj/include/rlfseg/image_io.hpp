// SPDX-License-Identifier: Apache-2.0
//
// 8-bit binary netpbm files: P6 (RGB) for images, P5 (gray) for masks.
#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "rlfseg/codec.hpp"
#include "rlfseg/errors.hpp"

namespace rlfseg::io {

inline unsigned char to_byte(float v) {
    return static_cast<unsigned char>(std::lround(std::clamp(v, 0.f, 1.f) * 255.f));
}

/// Writes to a sibling temp file and renames it into place.
inline void write_atomic(const std::filesystem::path& path, const std::string& bytes) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw DataError("cannot write " + tmp.string());
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw DataError("write failed: " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

inline void write_ppm(const std::filesystem::path& path, const RgbImage& img) {
    const int h = img.height(), w = img.width();
    std::string s = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
    s.reserve(s.size() + static_cast<std::size_t>(3) * h * w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) s.push_back(static_cast<char>(to_byte(img.at(c, y, x))));
    write_atomic(path, s);
}

inline void write_pgm(const std::filesystem::path& path, const MaskImage& m) {
    std::string s = "P5\n" + std::to_string(m.width()) + " " + std::to_string(m.height()) + "\n255\n";
    for (float v : m.data) s.push_back(static_cast<char>(to_byte(v)));
    write_atomic(path, s);
}

namespace detail {

struct Netpbm {
    int channels = 0, width = 0, height = 0;
    std::vector<unsigned char> pixels;
};

inline Netpbm read_netpbm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open image " + path.string());
    std::string magic;
    int maxval = 0;
    Netpbm r;
    in >> magic >> r.width >> r.height >> maxval;
    if (!in || (magic != "P5" && magic != "P6") || maxval != 255 || r.width <= 0 || r.height <= 0)
        throw DataError("not an 8-bit P5/P6 image: " + path.string());
    in.get();
    r.channels = magic == "P6" ? 3 : 1;
    r.pixels.resize(static_cast<std::size_t>(r.channels) * r.width * r.height);
    in.read(reinterpret_cast<char*>(r.pixels.data()), static_cast<std::streamsize>(r.pixels.size()));
    if (in.gcount() != static_cast<std::streamsize>(r.pixels.size())) throw DataError("truncated image: " + path.string());
    return r;
}

} // namespace detail

inline RgbImage read_ppm(const std::filesystem::path& path) {
    const auto p = detail::read_netpbm(path);
    if (p.channels != 3) throw DataError("expected RGB image: " + path.string());
    RgbImage img(p.height, p.width);
    for (int y = 0; y < p.height; ++y)
        for (int x = 0; x < p.width; ++x)
            for (int c = 0; c < 3; ++c)
                img.at(c, y, x) = static_cast<float>(p.pixels[(static_cast<std::size_t>(y) * p.width + x) * 3 + c]) / 255.f;
    return img;
}

inline MaskImage read_pgm(const std::filesystem::path& path) {
    const auto p = detail::read_netpbm(path);
    if (p.channels != 1) throw DataError("expected gray image: " + path.string());
    MaskImage m(p.height, p.width);
    for (std::size_t i = 0; i < p.pixels.size(); ++i) m.data[i] = static_cast<float>(p.pixels[i]) / 255.f;
    return m;
}

} // namespace rlfseg::io
