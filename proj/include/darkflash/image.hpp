#pragma once

// Raster containers. ImageGrid is the interchange type: row-major scanlines,
// channel-interleaved float32, linear intensity with 1.0 = sensor saturation.

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "darkflash/geometry.hpp"

namespace darkflash {

struct ImageGrid {
    int width = 0;
    int height = 0;
    int channels = 0;  // 1, 3 or 4 (R, G, B, NIR)
    std::vector<float> data;

    ImageGrid() = default;
    ImageGrid(int w, int h, int c, float fill = 0.0f) : width(w), height(h), channels(c) {
        if (w <= 0 || h <= 0)
            throw std::invalid_argument("image dimensions must be positive");
        if (c != 1 && c != 3 && c != 4)
            throw std::invalid_argument("channel count must be 1, 3 or 4");
        data.assign(static_cast<size_t>(w) * h * c, fill);
    }

    float& at(int x, int y, int c) {
        return data[(static_cast<size_t>(y) * width + x) * channels + c];
    }
    float at(int x, int y, int c) const {
        return data[(static_cast<size_t>(y) * width + x) * channels + c];
    }

    bool same_shape(const ImageGrid& o) const {
        return width == o.width && height == o.height && channels == o.channels;
    }

    void require_finite(const char* what) const {
        for (float v : data)
            if (!std::isfinite(v))
                throw std::runtime_error(std::string(what) + ": non-finite sample");
    }
};

// Per-pixel unit normals in camera coordinates with a validity mask. Normals
// are stored in double precision; file I/O narrows to float32.
struct NormalMap {
    int width = 0;
    int height = 0;
    std::vector<double> n;        // 3 per pixel
    std::vector<uint8_t> valid;

    NormalMap() = default;
    NormalMap(int w, int h) : width(w), height(h) {
        if (w <= 0 || h <= 0)
            throw std::invalid_argument("normal map dimensions must be positive");
        n.assign(static_cast<size_t>(w) * h * 3, 0.0);
        valid.assign(static_cast<size_t>(w) * h, 0);
    }

    size_t index(int x, int y) const { return static_cast<size_t>(y) * width + x; }

    Vec3 at(int x, int y) const {
        const size_t i = index(x, y) * 3;
        return {n[i], n[i + 1], n[i + 2]};
    }
    void set(int x, int y, const Vec3& v) {
        const size_t i = index(x, y) * 3;
        n[i] = v.x;
        n[i + 1] = v.y;
        n[i + 2] = v.z;
    }
    bool is_valid(int x, int y) const { return valid[index(x, y)] != 0; }
    void set_valid(int x, int y, bool ok) { valid[index(x, y)] = ok ? 1 : 0; }

    // Valid pixels must be unit within 1e-5 and camera-facing (n.z > 0).
    void check_invariants() const {
        for (int y = 0; y < height; ++y)
            for (int x = 0; x < width; ++x) {
                if (!is_valid(x, y)) continue;
                const Vec3 v = at(x, y);
                if (std::abs(norm(v) - 1.0) > 1e-5)
                    throw std::runtime_error("normal map holds non-unit normal");
                if (!(v.z > 0.0))
                    throw std::runtime_error("normal map holds non-camera-facing normal");
            }
    }
};

// Depth in meters along the optical axis; values <= 0 mark invalid pixels,
// valid values must stay in (0, 100].
struct DepthMap {
    int width = 0;
    int height = 0;
    std::vector<float> depth;

    DepthMap() = default;
    DepthMap(int w, int h, float fill = 0.0f) : width(w), height(h) {
        if (w <= 0 || h <= 0)
            throw std::invalid_argument("depth map dimensions must be positive");
        depth.assign(static_cast<size_t>(w) * h, fill);
    }

    float& at(int x, int y) { return depth[static_cast<size_t>(y) * width + x]; }
    float at(int x, int y) const { return depth[static_cast<size_t>(y) * width + x]; }
    bool is_valid(int x, int y) const { return at(x, y) > 0.0f; }

    void check_invariants() const {
        for (float d : depth)
            if (d > 0.0f && !(d <= 100.0f))
                throw std::runtime_error("valid depth out of (0, 100] m range");
    }
};

enum class SegClass : uint8_t {
    background = 0,
    head = 1,
    hair = 2,
    body = 3,
    upper_arm = 4,
    lower_arm = 5,
};

inline bool is_clothing(SegClass c) {
    return c == SegClass::body || c == SegClass::upper_arm || c == SegClass::lower_arm;
}

struct SegmentationMap {
    int width = 0;
    int height = 0;
    std::vector<uint8_t> labels;

    SegmentationMap() = default;
    SegmentationMap(int w, int h, SegClass fill = SegClass::background)
        : width(w), height(h) {
        if (w <= 0 || h <= 0)
            throw std::invalid_argument("segmentation dimensions must be positive");
        labels.assign(static_cast<size_t>(w) * h, static_cast<uint8_t>(fill));
    }

    SegClass at(int x, int y) const {
        return static_cast<SegClass>(labels[static_cast<size_t>(y) * width + x]);
    }
    void set(int x, int y, SegClass c) {
        labels[static_cast<size_t>(y) * width + x] = static_cast<uint8_t>(c);
    }
};

// Channel helpers used at module boundaries (relighting works on RGB only).

inline ImageGrid extract_rgb(const ImageGrid& g) {
    if (g.channels < 3)
        throw std::invalid_argument("extract_rgb needs a 3- or 4-channel image");
    ImageGrid out(g.width, g.height, 3);
    for (int y = 0; y < g.height; ++y)
        for (int x = 0; x < g.width; ++x)
            for (int c = 0; c < 3; ++c)
                out.at(x, y, c) = g.at(x, y, c);
    return out;
}

inline ImageGrid extract_channel(const ImageGrid& g, int channel) {
    if (channel < 0 || channel >= g.channels)
        throw std::invalid_argument("channel index out of range");
    ImageGrid out(g.width, g.height, 1);
    for (int y = 0; y < g.height; ++y)
        for (int x = 0; x < g.width; ++x)
            out.at(x, y, 0) = g.at(x, y, channel);
    return out;
}

}  // namespace darkflash
