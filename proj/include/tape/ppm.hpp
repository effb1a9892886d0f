#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "tape/errors.hpp"
#include "tape/tensor.hpp"

namespace tape {

// Binary P6 PPM, maxval 255. Pixel values map to [0,1] via v/255.

inline Tensor read_ppm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("read_ppm: cannot open " + path);
    std::string magic;
    in >> magic;
    if (magic != "P6") throw format_error("read_ppm: not a P6 PPM: " + path);
    auto skip_ws_comments = [&in]() {
        while (true) {
            int c = in.peek();
            if (c == '#') {
                std::string line;
                std::getline(in, line);
            } else if (std::isspace(c)) {
                in.get();
            } else {
                break;
            }
        }
    };
    skip_ws_comments();
    int w = 0, h = 0, maxval = 0;
    in >> w;
    skip_ws_comments();
    in >> h;
    skip_ws_comments();
    in >> maxval;
    if (!in || w <= 0 || h <= 0) throw format_error("read_ppm: bad header in " + path);
    if (maxval != 255) throw format_error("read_ppm: only maxval 255 supported: " + path);
    in.get();  // single whitespace after maxval
    std::vector<unsigned char> raw(static_cast<std::size_t>(w) * h * 3);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (static_cast<std::size_t>(in.gcount()) != raw.size())
        throw format_error("read_ppm: truncated pixel data in " + path);
    std::vector<double> data(raw.size());
    // interleaved RGB -> planar [3,H,W]
    std::size_t hw = static_cast<std::size_t>(w) * h;
    for (std::size_t p = 0; p < hw; ++p)
        for (int c = 0; c < 3; ++c)
            data[static_cast<std::size_t>(c) * hw + p] = raw[p * 3 + c] / 255.0;
    return Tensor({3, h, w}, std::move(data));
}

inline void write_ppm(const std::string& path, const Tensor& image) {
    if (image.rank() != 3 || image.dim(0) != 3)
        throw dim_error("write_ppm: expected [3,H,W] tensor");
    int h = image.dim(1), w = image.dim(2);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("write_ppm: cannot open " + path);
    out << "P6\n" << w << " " << h << "\n255\n";
    std::size_t hw = static_cast<std::size_t>(w) * h;
    std::vector<unsigned char> raw(hw * 3);
    for (std::size_t p = 0; p < hw; ++p)
        for (int c = 0; c < 3; ++c) {
            double v = image.data()[static_cast<std::size_t>(c) * hw + p];
            v = std::clamp(v, 0.0, 1.0);
            raw[p * 3 + c] = static_cast<unsigned char>(std::lround(v * 255.0));
        }
    out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!out) throw io_error("write_ppm: write failed for " + path);
}

}  // namespace tape
