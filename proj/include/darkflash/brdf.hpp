#pragma once

// Image formation model: a Lambertian diffuse term plus a normalized
// Blinn-Phong specular lobe, evaluated per channel (R, G, B, NIR), and the
// per-pixel intensity I = f(l, v, n) * max(n.l, 0) * L. Both the cosine and
// the highlight terms are clamped at zero. The half vector is (v+l)/|v+l| by
// default; a mode switch selects the (n+l)/|n+l| variant instead.

#include <array>
#include <cmath>
#include <optional>

#include "darkflash/geometry.hpp"
#include "darkflash/image.hpp"

namespace darkflash {

struct Material {
    Channels albedo{};              // dimensionless reflectance, >= 0
    double specular_intensity = 0.0;  // rho >= 0, channel-uniform (white highlight)
    double specular_exponent = 30.0;  // m > 0

    void validate() const {
        for (double a : albedo)
            if (!(a >= 0.0)) throw std::invalid_argument("albedo must be >= 0");
        if (!(specular_intensity >= 0.0))
            throw std::invalid_argument("specular intensity must be >= 0");
        if (!(specular_exponent > 0.0))
            throw std::invalid_argument("specular exponent must be positive");
    }
};

struct ShadePoint {
    Vec3 n, l, v;    // unit
    Channels L{};    // light intensity per channel, falloff already folded in
};

enum class HalfVectorMode {
    view_light,    // h = (v+l)/|v+l|
    normal_light,  // h = (n+l)/|n+l|
};

enum class FalloffMode {
    inverse_square,  // light intensity multiplied by 1/r^2 at render time
    constant,        // intensity used as-is
};

struct RenderOptions {
    HalfVectorMode halfvector = HalfVectorMode::view_light;
    FalloffMode falloff = FalloffMode::inverse_square;
};

inline Vec3 half_vector(const Vec3& l, const Vec3& v) {
    const Vec3 sum = l + v;
    const double len = norm(sum);
    if (len < 1e-9)
        throw std::invalid_argument("degenerate half vector: l = -v");
    return sum / len;
}

namespace detail {
inline void require_unit(const Vec3& v, const char* name) {
    if (std::abs(norm(v) - 1.0) > 1e-4)
        throw std::invalid_argument(std::string(name) + " must be a unit vector");
}

inline double highlight_alignment(const Vec3& n, const Vec3& l, const Vec3& v,
                                  HalfVectorMode mode) {
    if (mode == HalfVectorMode::view_light)
        return dot(n, half_vector(l, v));
    const Vec3 sum = n + l;
    const double len = norm(sum);
    if (len < 1e-9)
        throw std::invalid_argument("degenerate half vector: n = -l");
    return dot(n, sum) / len;
}
}  // namespace detail

// Ratio of reflected to incident light per channel. The specular lobe is
// channel-uniform.
inline Channels reflectance(const Material& mat, const Vec3& n, const Vec3& l,
                            const Vec3& v,
                            HalfVectorMode mode = HalfVectorMode::view_light) {
    detail::require_unit(n, "n");
    detail::require_unit(l, "l");
    detail::require_unit(v, "v");
    const double ndh = std::max(detail::highlight_alignment(n, l, v, mode), 0.0);
    const double k = (mat.specular_exponent + 2.0) / (2.0 * 3.14159265358979323846);
    const double spec = mat.specular_intensity * k * std::pow(ndh, mat.specular_exponent);
    return {mat.albedo[0] + spec, mat.albedo[1] + spec, mat.albedo[2] + spec,
            mat.albedo[3] + spec};
}

// Observed intensity at a point: reflectance * cosine * light intensity.
// Exact zeros when the light is behind the surface.
inline Channels shade(const Material& mat, const ShadePoint& sp,
                      HalfVectorMode mode = HalfVectorMode::view_light) {
    const double ndl = dot(sp.n, sp.l);
    if (ndl <= 0.0) return {0.0, 0.0, 0.0, 0.0};
    const Channels f = reflectance(mat, sp.n, sp.l, sp.v, mode);
    return {f[0] * ndl * sp.L[0], f[1] * ndl * sp.L[1], f[2] * ndl * sp.L[2],
            f[3] * ndl * sp.L[3]};
}

struct ShadeGradients {
    std::array<Vec3, 4> d_n{};        // dI_c / dn, n treated as a free 3-vector
    Channels d_albedo{};              // diagonal dI_c / da_c
    Channels d_log_rho{};             // dI_c / d log(rho)
};

inline ShadeGradients shade_gradients(const Material& mat, const ShadePoint& sp,
                                      HalfVectorMode mode = HalfVectorMode::view_light) {
    ShadeGradients g;
    const double ndl = dot(sp.n, sp.l);
    if (ndl <= 0.0) return g;  // clamped region: all partials zero

    const double k = (mat.specular_exponent + 2.0) / (2.0 * 3.14159265358979323846);
    const double m = mat.specular_exponent;
    const double rho = mat.specular_intensity;

    double ndh;
    Vec3 d_ndh;  // gradient of the (unclamped) alignment w.r.t. n
    if (mode == HalfVectorMode::view_light) {
        const Vec3 h = half_vector(sp.l, sp.v);
        ndh = dot(sp.n, h);
        d_ndh = h;
    } else {
        const Vec3 sum = sp.n + sp.l;
        const double len = norm(sum);
        if (len < 1e-9)
            throw std::invalid_argument("degenerate half vector: n = -l");
        ndh = dot(sp.n, sum) / len;
        // d/dn [ n.(n+l) / |n+l| ]
        d_ndh = (sp.n * 2.0 + sp.l) / len - sum * (dot(sp.n, sum) / (len * len * len));
    }

    const double spec_clamped = ndh > 0.0 ? std::pow(ndh, m) : 0.0;
    const double spec = rho * k * spec_clamped;
    const Vec3 d_spec_dn =
        ndh > 0.0 ? d_ndh * (rho * k * m * std::pow(ndh, m - 1.0)) : Vec3{};

    for (int c = 0; c < 4; ++c) {
        const double f_c = mat.albedo[c] + spec;
        g.d_albedo[c] = ndl * sp.L[c];
        g.d_log_rho[c] = spec * ndl * sp.L[c];
        g.d_n[c] = (d_spec_dn * ndl + sp.l * f_c) * sp.L[c];
    }
    return g;
}

// Per-pixel inputs for an image-wide render: normals and material maps plus
// the depth used to derive l, v and the falloff. specular is a 1-channel map
// of linear rho values.
struct ShadingMaps {
    const NormalMap* normals = nullptr;
    const ImageGrid* albedo = nullptr;    // 4-channel
    const ImageGrid* specular = nullptr;  // 1-channel linear rho
    const DepthMap* depth = nullptr;
    double specular_exponent = 30.0;
};

inline ImageGrid render(const ShadingMaps& maps, const Camera& camera,
                        const PointLight& light, const RenderOptions& options,
                        const ImageGrid* shadow = nullptr) {
    const NormalMap& normals = *maps.normals;
    const ImageGrid& albedo = *maps.albedo;
    const ImageGrid& specular = *maps.specular;
    const DepthMap& depth = *maps.depth;
    if (normals.width != albedo.width || normals.height != albedo.height ||
        albedo.channels != 4 || specular.channels != 1 ||
        specular.width != albedo.width || specular.height != albedo.height ||
        depth.width != albedo.width || depth.height != albedo.height)
        throw std::invalid_argument("render: map dimensions disagree");
    if (shadow && (shadow->width != albedo.width || shadow->height != albedo.height ||
                   shadow->channels != 1))
        throw std::invalid_argument("render: shadow map dimensions disagree");

    ImageGrid out(albedo.width, albedo.height, 4);
    for (int y = 0; y < out.height; ++y) {
        for (int x = 0; x < out.width; ++x) {
            if (!normals.is_valid(x, y) || !depth.is_valid(x, y)) continue;
            if (shadow && shadow->at(x, y, 0) <= 0.0f) continue;

            const LightSample ls = light_dir_and_view(camera, x, y, depth.at(x, y), light);
            const double scale = options.falloff == FalloffMode::inverse_square
                                     ? ls.falloff : 1.0;
            Material mat;
            for (int c = 0; c < 4; ++c) mat.albedo[c] = albedo.at(x, y, c);
            mat.specular_intensity = specular.at(x, y, 0);
            mat.specular_exponent = maps.specular_exponent;

            ShadePoint sp{normals.at(x, y), ls.l, ls.v, light.intensity * scale};
            const Channels I = shade(mat, sp, options.halfvector);
            for (int c = 0; c < 4; ++c) out.at(x, y, c) = static_cast<float>(I[c]);
        }
    }
    return out;
}

}  // namespace darkflash
