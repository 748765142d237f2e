#pragma once

// Minimal 8-bit PNG writer for previews. Emits a valid zlib stream built from
// stored (uncompressed) deflate blocks, so there is no external dependency.
// Values are clamped to [0,1] and gamma-encoded as v^(1/gamma); normal maps
// use the (n+1)/2 encoding with gamma 1.

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "darkflash/image.hpp"

namespace darkflash {

namespace detail {

inline uint32_t crc32_update(uint32_t crc, const uint8_t* data, size_t len) {
    static const auto table = [] {
        std::array<uint32_t, 256> t{};
        for (uint32_t i = 0; i < 256; ++i) {
            uint32_t c = i;
            for (int k = 0; k < 8; ++k)
                c = (c & 1) ? 0xedb88320u ^ (c >> 1) : (c >> 1);
            t[i] = c;
        }
        return t;
    }();
    for (size_t i = 0; i < len; ++i)
        crc = table[(crc ^ data[i]) & 0xffu] ^ (crc >> 8);
    return crc;
}

inline void put_be32(std::vector<uint8_t>& out, uint32_t v) {
    out.push_back(static_cast<uint8_t>(v >> 24));
    out.push_back(static_cast<uint8_t>(v >> 16));
    out.push_back(static_cast<uint8_t>(v >> 8));
    out.push_back(static_cast<uint8_t>(v));
}

inline void put_chunk(std::vector<uint8_t>& out, const char tag[4],
                      const std::vector<uint8_t>& payload) {
    put_be32(out, static_cast<uint32_t>(payload.size()));
    const size_t crc_start = out.size();
    out.insert(out.end(), tag, tag + 4);
    out.insert(out.end(), payload.begin(), payload.end());
    uint32_t crc = crc32_update(0xffffffffu, out.data() + crc_start, out.size() - crc_start);
    put_be32(out, crc ^ 0xffffffffu);
}

// zlib wrapper around stored deflate blocks.
inline std::vector<uint8_t> zlib_stored(const std::vector<uint8_t>& raw) {
    std::vector<uint8_t> z;
    z.push_back(0x78);
    z.push_back(0x01);
    size_t pos = 0;
    do {
        const size_t n = std::min<size_t>(raw.size() - pos, 65535);
        const bool final = (pos + n == raw.size());
        z.push_back(final ? 1 : 0);
        z.push_back(static_cast<uint8_t>(n & 0xff));
        z.push_back(static_cast<uint8_t>(n >> 8));
        z.push_back(static_cast<uint8_t>(~n & 0xff));
        z.push_back(static_cast<uint8_t>((~n >> 8) & 0xff));
        z.insert(z.end(), raw.begin() + pos, raw.begin() + pos + n);
        pos += n;
    } while (pos < raw.size());

    uint32_t a = 1, b = 0;
    for (uint8_t byte : raw) {
        a = (a + byte) % 65521;
        b = (b + a) % 65521;
    }
    put_be32(z, (b << 16) | a);
    return z;
}

inline void write_png_bytes(const std::string& path, int width, int height,
                            int channels, const std::vector<uint8_t>& pixels) {
    std::vector<uint8_t> png = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};

    std::vector<uint8_t> ihdr;
    put_be32(ihdr, static_cast<uint32_t>(width));
    put_be32(ihdr, static_cast<uint32_t>(height));
    ihdr.push_back(8);                                   // bit depth
    ihdr.push_back(channels == 1 ? 0 : 2);               // gray or truecolor
    ihdr.push_back(0);
    ihdr.push_back(0);
    ihdr.push_back(0);
    put_chunk(png, "IHDR", ihdr);

    std::vector<uint8_t> raw;
    raw.reserve(static_cast<size_t>(height) * (1 + static_cast<size_t>(width) * channels));
    for (int y = 0; y < height; ++y) {
        raw.push_back(0);  // filter: none
        const uint8_t* row = &pixels[static_cast<size_t>(y) * width * channels];
        raw.insert(raw.end(), row, row + static_cast<size_t>(width) * channels);
    }
    put_chunk(png, "IDAT", zlib_stored(raw));
    put_chunk(png, "IEND", {});

    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw std::runtime_error("cannot open PNG file for writing: " + path);
    out.write(reinterpret_cast<const char*>(png.data()),
              static_cast<std::streamsize>(png.size()));
    if (!out)
        throw std::runtime_error("failed writing PNG: " + path);
}

inline uint8_t encode_u8(double v, double inv_gamma) {
    v = std::min(std::max(v, 0.0), 1.0);
    return static_cast<uint8_t>(std::lround(255.0 * std::pow(v, inv_gamma)));
}

}  // namespace detail

inline void write_png_preview(const std::string& path, const ImageGrid& grid,
                              double gamma = 2.2) {
    if (!(gamma > 0.0))
        throw std::invalid_argument("gamma must be positive");
    const int out_channels = (grid.channels == 1) ? 1 : 3;
    const double inv_gamma = 1.0 / gamma;
    std::vector<uint8_t> pixels(static_cast<size_t>(grid.width) * grid.height * out_channels);
    size_t i = 0;
    for (int y = 0; y < grid.height; ++y)
        for (int x = 0; x < grid.width; ++x)
            for (int c = 0; c < out_channels; ++c)
                pixels[i++] = detail::encode_u8(grid.at(x, y, c), inv_gamma);
    detail::write_png_bytes(path, grid.width, grid.height, out_channels, pixels);
}

// Normals go out as (n+1)/2 with no gamma; invalid pixels render black.
inline void write_normal_preview(const std::string& path, const NormalMap& normals) {
    ImageGrid grid(normals.width, normals.height, 3);
    for (int y = 0; y < normals.height; ++y)
        for (int x = 0; x < normals.width; ++x) {
            if (!normals.is_valid(x, y)) continue;
            const Vec3 n = normals.at(x, y);
            grid.at(x, y, 0) = static_cast<float>(0.5 * (n.x + 1.0));
            grid.at(x, y, 1) = static_cast<float>(0.5 * (n.y + 1.0));
            grid.at(x, y, 2) = static_cast<float>(0.5 * (n.z + 1.0));
        }
    write_png_preview(path, grid, 1.0);
}

}  // namespace darkflash
