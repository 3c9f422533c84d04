#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

#include <zlib.h>

#include "perx/volume.hpp"

namespace perx {

namespace {

void put_u32be(std::vector<unsigned char>& out, std::uint32_t v) {
    out.push_back(static_cast<unsigned char>(v >> 24));
    out.push_back(static_cast<unsigned char>(v >> 16));
    out.push_back(static_cast<unsigned char>(v >> 8));
    out.push_back(static_cast<unsigned char>(v));
}

void write_chunk(std::ofstream& f, const char type[4], const std::vector<unsigned char>& payload) {
    std::vector<unsigned char> head;
    put_u32be(head, static_cast<std::uint32_t>(payload.size()));
    f.write(reinterpret_cast<const char*>(head.data()), 4);
    f.write(type, 4);
    if (!payload.empty())
        f.write(reinterpret_cast<const char*>(payload.data()),
                static_cast<std::streamsize>(payload.size()));
    uLong crc = crc32(0L, reinterpret_cast<const Bytef*>(type), 4);
    if (!payload.empty()) crc = crc32(crc, payload.data(), static_cast<uInt>(payload.size()));
    std::vector<unsigned char> tail;
    put_u32be(tail, static_cast<std::uint32_t>(crc));
    f.write(reinterpret_cast<const char*>(tail.data()), 4);
}

}  // namespace

void save_image_png(const Image2D& img, const std::string& path) {
    if (img.h < 1 || img.w < 1) throw ParameterError("empty image");
    std::ofstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot open for write: " + path);

    double lo = *std::min_element(img.pix.begin(), img.pix.end());
    double hi = *std::max_element(img.pix.begin(), img.pix.end());
    double scale = hi > lo ? 255.0 / (hi - lo) : 0.0;

    // filter byte 0 per scanline
    std::vector<unsigned char> raw;
    raw.reserve(static_cast<size_t>(img.h) * (img.w + 1));
    for (int r = 0; r < img.h; ++r) {
        raw.push_back(0);
        for (int c = 0; c < img.w; ++c) {
            double v = (img.at(r, c) - lo) * scale;
            raw.push_back(static_cast<unsigned char>(std::clamp(v, 0.0, 255.0) + 0.5));
        }
    }
    uLongf bound = compressBound(static_cast<uLong>(raw.size()));
    std::vector<unsigned char> zdata(bound);
    if (compress2(zdata.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
        throw FormatError("zlib compression failed for " + path);
    zdata.resize(bound);

    static const unsigned char sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
    f.write(reinterpret_cast<const char*>(sig), 8);

    std::vector<unsigned char> ihdr;
    put_u32be(ihdr, static_cast<std::uint32_t>(img.w));
    put_u32be(ihdr, static_cast<std::uint32_t>(img.h));
    ihdr.push_back(8);   // bit depth
    ihdr.push_back(0);   // grayscale
    ihdr.push_back(0);   // deflate
    ihdr.push_back(0);   // filter method
    ihdr.push_back(0);   // no interlace
    write_chunk(f, "IHDR", ihdr);
    write_chunk(f, "IDAT", zdata);
    write_chunk(f, "IEND", {});
    if (!f) throw FormatError("write failed: " + path);
}

}  // namespace perx
