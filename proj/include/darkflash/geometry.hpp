#pragma once

// Camera-space geometry shared by every module. Coordinates are camera
// coordinates: x right, y up, z toward the camera, so visible surfaces sit
// at negative z and a camera-facing normal has n.z > 0. Depth values are
// positive distances along the optical axis (depth d <=> z = -d).

#include <array>
#include <cmath>
#include <stdexcept>
#include <string>

namespace darkflash {

struct Vec3 {
    double x = 0.0, y = 0.0, z = 0.0;

    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator-() const { return {-x, -y, -z}; }
    Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
    Vec3 operator/(double s) const { return {x / s, y / s, z / s}; }
    Vec3& operator+=(const Vec3& o) { x += o.x; y += o.y; z += o.z; return *this; }
};

inline Vec3 operator*(double s, const Vec3& v) { return v * s; }

inline double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }

inline Vec3 cross(const Vec3& a, const Vec3& b) {
    return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}

inline double norm(const Vec3& v) { return std::sqrt(dot(v, v)); }

inline Vec3 normalized(const Vec3& v) {
    const double n = norm(v);
    if (n <= 0.0)
        throw std::invalid_argument("cannot normalize zero vector");
    return v / n;
}

// Per-channel quantities (albedo, light intensity, pixel values) are ordered
// R, G, B, NIR everywhere.
using Channels = std::array<double, 4>;

inline Channels operator*(const Channels& a, double s) {
    return {a[0] * s, a[1] * s, a[2] * s, a[3] * s};
}

struct PointLight {
    Vec3 position;          // meters, camera coordinates
    Channels intensity{};   // per-channel L >= 0; zero channels model NIR-only or visible-only sources

    void validate() const {
        for (double c : intensity)
            if (!(c >= 0.0))
                throw std::invalid_argument("light intensity must be >= 0 per channel");
    }
};

struct Camera {
    double fx = 0.0, fy = 0.0;  // focal lengths, pixels
    double cx = 0.0, cy = 0.0;  // principal point, pixels
    int width = 0, height = 0;

    void validate() const {
        if (!(fx > 0.0) || !(fy > 0.0))
            throw std::invalid_argument("camera focal lengths must be positive");
        if (width <= 0 || height <= 0)
            throw std::invalid_argument("camera resolution must be positive");
        if (cx < 0.0 || cx > width - 1 || cy < 0.0 || cy > height - 1)
            throw std::invalid_argument("principal point must lie inside the image");
    }
};

// Camera with the principal point centered and a focal length proportional to
// the width; used by the synthetic scenes unless a config overrides it.
inline Camera default_camera(int width, int height) {
    Camera cam;
    cam.fx = cam.fy = 0.8 * width;
    cam.cx = 0.5 * (width - 1);
    cam.cy = 0.5 * (height - 1);
    cam.width = width;
    cam.height = height;
    return cam;
}

// Pixel (px, py) at positive depth -> 3D point. Pixel y grows downward while
// camera y points up, hence the sign flip.
inline Vec3 unproject(const Camera& cam, double px, double py, double depth) {
    if (!(depth > 0.0))
        throw std::invalid_argument("unproject requires positive depth, got " + std::to_string(depth));
    return {depth * (px - cam.cx) / cam.fx,
            -depth * (py - cam.cy) / cam.fy,
            -depth};
}

struct PixelCoord {
    double px = 0.0, py = 0.0;
    double depth = 0.0;
};

// Inverse of unproject for points in front of the camera (z < 0).
inline PixelCoord project(const Camera& cam, const Vec3& p) {
    const double depth = -p.z;
    if (!(depth > 0.0))
        throw std::invalid_argument("cannot project point at or behind the camera plane");
    return {cam.fx * p.x / depth + cam.cx,
            -cam.fy * p.y / depth + cam.cy,
            depth};
}

struct LightSample {
    Vec3 l;          // unit, surface point -> light
    Vec3 v;          // unit, surface point -> camera
    double falloff;  // 1 / squared distance to the light
};

inline LightSample light_dir_and_view(const Camera& cam, double px, double py,
                                      double depth, const PointLight& light) {
    const Vec3 point = unproject(cam, px, py, depth);
    const Vec3 to_light = light.position - point;
    const double dist = norm(to_light);
    if (dist < 1e-6)
        throw std::invalid_argument("light source coincides with surface point");
    return {to_light / dist, normalized(-point), 1.0 / (dist * dist)};
}

}  // namespace darkflash
