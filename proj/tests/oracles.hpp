#pragma once

// Test-side reference implementations, kept independent of the library code
// paths they check.

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "darkflash/geometry.hpp"
#include "darkflash/image.hpp"
#include "darkflash/synth.hpp"

namespace oracles {

// --------------------------------------------------------------------------
// A second PFM reader, written against the format description rather than
// shared with darkflash::read_pfm. Little-endian files only.
// --------------------------------------------------------------------------
inline darkflash::ImageGrid read_pfm_reference(const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) throw std::runtime_error("reference reader: cannot open " + path);
    char magic[3] = {};
    int w = 0, h = 0;
    float scale = 0.0f;
    if (std::fscanf(f, "%2s %d %d %f", magic, &w, &h, &scale) != 4) {
        std::fclose(f);
        throw std::runtime_error("reference reader: bad header");
    }
    std::fgetc(f);  // single whitespace after the scale
    const int channels = std::strcmp(magic, "PF") == 0 ? 3 : 1;
    if (scale >= 0.0f) {
        std::fclose(f);
        throw std::runtime_error("reference reader handles little-endian only");
    }
    darkflash::ImageGrid grid(w, h, channels);
    for (int y = h - 1; y >= 0; --y) {
        const size_t n = static_cast<size_t>(w) * channels;
        if (std::fread(&grid.data[static_cast<size_t>(y) * n], sizeof(float), n, f) != n) {
            std::fclose(f);
            throw std::runtime_error("reference reader: short read");
        }
    }
    std::fclose(f);
    return grid;
}

// --------------------------------------------------------------------------
// Minimal PNG parser for the subset the library writes (8-bit gray/RGB,
// stored deflate blocks). Returns raw pixel bytes and checks CRCs.
// --------------------------------------------------------------------------
struct DecodedPng {
    int width = 0, height = 0, channels = 0;
    std::vector<uint8_t> pixels;
};

inline DecodedPng decode_png_stored(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                               std::istreambuf_iterator<char>());

    const auto be32 = [&](size_t pos) {
        return (uint32_t(bytes.at(pos)) << 24) | (uint32_t(bytes.at(pos + 1)) << 16) |
               (uint32_t(bytes.at(pos + 2)) << 8) | uint32_t(bytes.at(pos + 3));
    };
    const uint8_t sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    if (bytes.size() < 8 || std::memcmp(bytes.data(), sig, 8) != 0)
        throw std::runtime_error("bad PNG signature");

    const auto crc32 = [](const uint8_t* data, size_t len) {
        uint32_t table[256];
        for (uint32_t i = 0; i < 256; ++i) {
            uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
            table[i] = c;
        }
        uint32_t crc = 0xffffffffu;
        for (size_t i = 0; i < len; ++i) crc = table[(crc ^ data[i]) & 0xffu] ^ (crc >> 8);
        return crc ^ 0xffffffffu;
    };

    DecodedPng out;
    std::vector<uint8_t> idat;
    size_t pos = 8;
    while (pos + 8 <= bytes.size()) {
        const uint32_t len = be32(pos);
        const std::string tag(bytes.begin() + pos + 4, bytes.begin() + pos + 8);
        if (crc32(&bytes[pos + 4], len + 4) != be32(pos + 8 + len))
            throw std::runtime_error("PNG chunk CRC mismatch in " + tag);
        if (tag == "IHDR") {
            out.width = static_cast<int>(be32(pos + 8));
            out.height = static_cast<int>(be32(pos + 12));
            if (bytes[pos + 16] != 8) throw std::runtime_error("expected 8-bit PNG");
            out.channels = bytes[pos + 17] == 0 ? 1 : 3;
        } else if (tag == "IDAT") {
            idat.insert(idat.end(), bytes.begin() + pos + 8, bytes.begin() + pos + 8 + len);
        }
        pos += 12 + len;
        if (tag == "IEND") break;
    }

    // inflate stored blocks: 2-byte zlib header, then (final, len, nlen, data)*
    std::vector<uint8_t> raw;
    size_t z = 2;
    while (z < idat.size() - 4) {
        const uint8_t header = idat.at(z++);
        if ((header & 0x06) != 0) throw std::runtime_error("expected stored deflate block");
        const uint16_t len = idat.at(z) | (idat.at(z + 1) << 8);
        const uint16_t nlen = idat.at(z + 2) | (idat.at(z + 3) << 8);
        if (static_cast<uint16_t>(~len) != nlen) throw std::runtime_error("bad stored block");
        z += 4;
        raw.insert(raw.end(), idat.begin() + z, idat.begin() + z + len);
        z += len;
        if (header & 1) break;
    }

    const size_t stride = 1 + static_cast<size_t>(out.width) * out.channels;
    if (raw.size() != stride * out.height)
        throw std::runtime_error("unexpected PNG payload size");
    for (int y = 0; y < out.height; ++y) {
        if (raw[static_cast<size_t>(y) * stride] != 0)
            throw std::runtime_error("expected filter type 0");
        out.pixels.insert(out.pixels.end(), raw.begin() + y * stride + 1,
                          raw.begin() + (y + 1) * stride);
    }
    return out;
}

// --------------------------------------------------------------------------
// Exhaustive shadow occlusion oracle: replays the exact sample set of
// compute_shadow_map but finds each sample's cell by scanning every depth
// cell's footprint instead of projecting and rounding.
// --------------------------------------------------------------------------
inline darkflash::ImageGrid shadow_map_exhaustive(const darkflash::DepthMap& depth,
                                                  const darkflash::Camera& cam,
                                                  const darkflash::PointLight& light) {
    darkflash::ImageGrid shadow(depth.width, depth.height, 1);
    for (int y = 0; y < depth.height; ++y)
        for (int x = 0; x < depth.width; ++x) {
            if (!depth.is_valid(x, y)) continue;
            bool occluded = false;
            for (const darkflash::ShadowSample& s :
                 darkflash::shadow_ray_samples(depth, cam, light, x, y)) {
                for (int qy = 0; qy < depth.height && !occluded; ++qy) {
                    if (!(s.v >= qy - 0.5 && s.v < qy + 0.5)) continue;
                    for (int qx = 0; qx < depth.width; ++qx) {
                        if (!(s.u >= qx - 0.5 && s.u < qx + 0.5)) continue;
                        if (depth.is_valid(qx, qy) &&
                            s.depth > static_cast<double>(depth.at(qx, qy)) +
                                          darkflash::kShadowBias) {
                            occluded = true;
                        }
                        break;  // only one cell can contain the sample
                    }
                }
                if (occluded) break;
            }
            shadow.at(x, y, 0) = occluded ? 0.0f : 1.0f;
        }
    return shadow;
}

// --------------------------------------------------------------------------
// Dense fusion reference: assemble the normal equations as a full matrix and
// solve by Gaussian elimination with partial pivoting.
// --------------------------------------------------------------------------
inline std::vector<double> solve_dense(std::vector<std::vector<double>> A,
                                       std::vector<double> b) {
    const size_t n = b.size();
    for (size_t col = 0; col < n; ++col) {
        size_t pivot = col;
        for (size_t r = col + 1; r < n; ++r)
            if (std::abs(A[r][col]) > std::abs(A[pivot][col])) pivot = r;
        std::swap(A[col], A[pivot]);
        std::swap(b[col], b[pivot]);
        if (std::abs(A[col][col]) < 1e-14) throw std::runtime_error("singular system");
        for (size_t r = 0; r < n; ++r) {
            if (r == col) continue;
            const double f = A[r][col] / A[col][col];
            for (size_t c = col; c < n; ++c) A[r][c] -= f * A[col][c];
            b[r] -= f * b[col];
        }
    }
    std::vector<double> x(n);
    for (size_t i = 0; i < n; ++i) x[i] = b[i] / A[i][i];
    return x;
}

}  // namespace oracles
