#pragma once

// Portable float map I/O. "PF" = 3-channel, "Pf" = 1-channel, scanlines
// bottom-to-top, scale line sign selects endianness (negative = little).
// Writes are always little-endian with scale -1.0 and round-trip bit-exact.
// 4-channel grids are split across two files: <path>.rgb.pfm + <path>.nir.pfm.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include "darkflash/image.hpp"

namespace darkflash {

namespace detail {

inline uint32_t byteswap32(uint32_t v) {
    return ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
}

inline std::string next_pfm_token(std::istream& in) {
    std::string tok;
    char ch;
    while (in.get(ch)) {
        if (ch == ' ' || ch == '\n' || ch == '\r' || ch == '\t') {
            if (!tok.empty()) return tok;
        } else {
            tok.push_back(ch);
        }
    }
    if (!tok.empty()) return tok;
    throw std::runtime_error("malformed PFM header: unexpected end of file");
}

inline ImageGrid read_pfm_single(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw std::runtime_error("cannot open PFM file: " + path);

    const std::string magic = next_pfm_token(in);
    int channels;
    if (magic == "PF")
        channels = 3;
    else if (magic == "Pf")
        channels = 1;
    else
        throw std::runtime_error("malformed PFM header in " + path + ": bad magic '" + magic + "'");

    long w, h;
    double scale;
    try {
        w = std::stol(next_pfm_token(in));
        h = std::stol(next_pfm_token(in));
        scale = std::stod(next_pfm_token(in));
    } catch (const std::exception&) {
        throw std::runtime_error("malformed PFM header in " + path);
    }
    if (w <= 0 || h <= 0 || w > 65536 || h > 65536 || w * h > 100'000'000L)
        throw std::runtime_error("PFM dimension overflow in " + path);
    if (scale == 0.0)
        throw std::runtime_error("malformed PFM header in " + path + ": zero scale");

    ImageGrid grid(static_cast<int>(w), static_cast<int>(h), channels);
    const size_t row_floats = static_cast<size_t>(w) * channels;
    std::vector<uint32_t> row(row_floats);
    const bool file_little = scale < 0.0;
    const bool host_little = (std::endian::native == std::endian::little);

    // PFM stores the bottom scanline first.
    for (long y = h - 1; y >= 0; --y) {
        in.read(reinterpret_cast<char*>(row.data()),
                static_cast<std::streamsize>(row_floats * sizeof(uint32_t)));
        if (!in)
            throw std::runtime_error("truncated PFM payload in " + path);
        float* dst = &grid.data[static_cast<size_t>(y) * row_floats];
        for (size_t i = 0; i < row_floats; ++i) {
            uint32_t bits = row[i];
            if (file_little != host_little) bits = byteswap32(bits);
            std::memcpy(&dst[i], &bits, sizeof(float));
        }
    }
    grid.require_finite(("PFM payload in " + path).c_str());
    return grid;
}

inline void write_pfm_single(const std::string& path, const ImageGrid& grid) {
    grid.require_finite("write_pfm input");
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw std::runtime_error("cannot open PFM file for writing: " + path);
    out << (grid.channels == 3 ? "PF" : "Pf") << "\n"
        << grid.width << " " << grid.height << "\n"
        << "-1.0\n";

    const size_t row_floats = static_cast<size_t>(grid.width) * grid.channels;
    const bool host_little = (std::endian::native == std::endian::little);
    std::vector<uint32_t> row(row_floats);
    for (int y = grid.height - 1; y >= 0; --y) {
        const float* src = &grid.data[static_cast<size_t>(y) * row_floats];
        for (size_t i = 0; i < row_floats; ++i) {
            uint32_t bits;
            std::memcpy(&bits, &src[i], sizeof(uint32_t));
            if (!host_little) bits = byteswap32(bits);
            row[i] = bits;
        }
        out.write(reinterpret_cast<const char*>(row.data()),
                  static_cast<std::streamsize>(row_floats * sizeof(uint32_t)));
    }
    if (!out)
        throw std::runtime_error("failed writing PFM payload: " + path);
}

}  // namespace detail

inline void write_pfm(const std::string& path, const ImageGrid& grid) {
    if (grid.channels == 4) {
        ImageGrid rgb = extract_rgb(grid);
        ImageGrid nir = extract_channel(grid, 3);
        detail::write_pfm_single(path + ".rgb.pfm", rgb);
        detail::write_pfm_single(path + ".nir.pfm", nir);
        return;
    }
    detail::write_pfm_single(path, grid);
}

inline ImageGrid read_pfm(const std::string& path) {
    if (std::filesystem::exists(path))
        return detail::read_pfm_single(path);

    const std::string rgb_path = path + ".rgb.pfm";
    const std::string nir_path = path + ".nir.pfm";
    if (std::filesystem::exists(rgb_path) && std::filesystem::exists(nir_path)) {
        ImageGrid rgb = detail::read_pfm_single(rgb_path);
        ImageGrid nir = detail::read_pfm_single(nir_path);
        if (rgb.channels != 3 || nir.channels != 1 ||
            rgb.width != nir.width || rgb.height != nir.height)
            throw std::runtime_error("mismatched 4-channel PFM pair at " + path);
        ImageGrid out(rgb.width, rgb.height, 4);
        for (int y = 0; y < out.height; ++y)
            for (int x = 0; x < out.width; ++x) {
                for (int c = 0; c < 3; ++c) out.at(x, y, c) = rgb.at(x, y, c);
                out.at(x, y, 3) = nir.at(x, y, 0);
            }
        return out;
    }
    throw std::runtime_error("cannot open PFM file: " + path);
}

}  // namespace darkflash
