#pragma once

// Synthetic scene generation with exact ground truth: analytic sphere and
// bumpfield scenes, the light rig (4 visible + 4 NIR corner lights and a
// near-camera NIR flash), binary shadow maps, degraded "stereo" depth and
// the normals derived from it, and the OLAT render set.

#include <algorithm>
#include <string>
#include <vector>

#include "darkflash/brdf.hpp"
#include "darkflash/geometry.hpp"
#include "darkflash/image.hpp"
#include "darkflash/rng.hpp"

namespace darkflash {

struct SceneTruth {
    DepthMap depth;
    NormalMap normals;       // analytic surface normals
    ImageGrid albedo;        // 4-channel
    ImageGrid specular;      // 1-channel linear rho
    SegmentationMap segmentation;
    Camera camera;
};

inline ShadingMaps truth_maps(const SceneTruth& t, double specular_exponent = 30.0) {
    return {&t.normals, &t.albedo, &t.specular, &t.depth, specular_exponent};
}

struct LightRig {
    std::vector<PointLight> visible;  // 4 corner lights, RGB intensity
    std::vector<PointLight> nir;      // 4 corner lights, NIR intensity
    PointLight flash;                 // near-camera NIR source

    void validate() const {
        if (visible.size() != 4 || nir.size() != 4)
            throw std::invalid_argument("rig must hold exactly 4 visible and 4 NIR lights");
        if (norm(flash.position) > 0.05)
            throw std::invalid_argument("flash must sit within 0.05 m of the camera origin");
    }
};

// Corner lights on a 1.5 m x 0.8 m rectangle around the camera at the
// origin; NIR lights sit 0.05 m inboard of each visible light. Intensities
// are tuned so a mid-albedo subject ~1.1 m away renders around half of
// sensor saturation under inverse-square falloff.
inline LightRig default_rig() {
    LightRig rig;
    const double hw = 0.75, hh = 0.40;
    const Channels vis_intensity{2.0, 2.0, 2.0, 0.0};
    const Channels nir_intensity{0.0, 0.0, 0.0, 1.8};
    for (double sy : {-1.0, 1.0})
        for (double sx : {-1.0, 1.0}) {
            rig.visible.push_back({{sx * hw, sy * hh, 0.0}, vis_intensity});
            rig.nir.push_back({{sx * (hw - 0.05), sy * hh, 0.0}, nir_intensity});
        }
    rig.flash = {{0.02, 0.0, 0.0}, {0.0, 0.0, 0.0, 1.2}};
    rig.validate();
    return rig;
}

// Albedo/rho painted in vertical bands; band index = x * count / width.
struct MaterialBands {
    std::vector<Channels> albedo;
    std::vector<double> rho;

    void validate() const {
        if (albedo.empty() || albedo.size() != rho.size())
            throw std::invalid_argument("material bands need matching albedo and rho lists");
    }
    int band_of(int x, int width) const {
        const int b = static_cast<int>(static_cast<long>(x) * albedo.size() / width);
        return std::min<int>(b, static_cast<int>(albedo.size()) - 1);
    }
};

// Two bands whose boundary coincides with the bumpfield's body/head split,
// so the albedo step never lies inside the clothing region that the
// piecewise-constancy prior acts on.
inline MaterialBands default_bands() {
    MaterialBands b;
    b.albedo = {{0.55, 0.35, 0.25, 0.60}, {0.3, 0.45, 0.55, 0.5}};
    b.rho = {0.0, 0.0};
    return b;
}

namespace detail {

constexpr double kNormalValidZ = 0.05;  // grazing normals are marked invalid

inline void paint_materials(SceneTruth& scene, const MaterialBands& bands) {
    for (int y = 0; y < scene.camera.height; ++y)
        for (int x = 0; x < scene.camera.width; ++x) {
            if (!scene.depth.is_valid(x, y)) continue;
            const int b = bands.band_of(x, scene.camera.width);
            for (int c = 0; c < 4; ++c)
                scene.albedo.at(x, y, c) = static_cast<float>(bands.albedo[b][c]);
            scene.specular.at(x, y, 0) = static_cast<float>(bands.rho[b]);
        }
}

// Normalized Gaussian blur over the valid mask; sigma in pixels, kernel
// truncated at 3 sigma. Invalid pixels stay invalid.
inline DepthMap gaussian_blur_masked(const DepthMap& in, double sigma) {
    if (sigma <= 0.0) return in;
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> kernel(2 * radius + 1);
    for (int i = -radius; i <= radius; ++i)
        kernel[i + radius] = std::exp(-0.5 * (i * i) / (sigma * sigma));

    const int w = in.width, h = in.height;
    std::vector<double> num(static_cast<size_t>(w) * h, 0.0);
    std::vector<double> den(static_cast<size_t>(w) * h, 0.0);
    // horizontal pass
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double n = 0.0, d = 0.0;
            for (int i = -radius; i <= radius; ++i) {
                const int xx = x + i;
                if (xx < 0 || xx >= w || !in.is_valid(xx, y)) continue;
                n += kernel[i + radius] * in.at(xx, y);
                d += kernel[i + radius];
            }
            num[static_cast<size_t>(y) * w + x] = n;
            den[static_cast<size_t>(y) * w + x] = d;
        }
    DepthMap out(w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (!in.is_valid(x, y)) { out.at(x, y) = in.at(x, y); continue; }
            double n = 0.0, d = 0.0;
            for (int i = -radius; i <= radius; ++i) {
                const int yy = y + i;
                if (yy < 0 || yy >= h) continue;
                n += kernel[i + radius] * num[static_cast<size_t>(yy) * w + x];
                d += kernel[i + radius] * den[static_cast<size_t>(yy) * w + x];
            }
            out.at(x, y) = d > 0.0 ? static_cast<float>(n / d) : in.at(x, y);
        }
    return out;
}

}  // namespace detail

// Analytic sphere; sphere pixels are labeled head, the rest background.
inline SceneTruth make_sphere_scene(const Camera& camera, double radius, Vec3 center,
                                    const MaterialBands& bands) {
    camera.validate();
    bands.validate();
    if (!(radius > 0.0) || !(-center.z > radius))
        throw std::invalid_argument("sphere must lie fully in front of the camera");

    SceneTruth scene;
    scene.camera = camera;
    scene.depth = DepthMap(camera.width, camera.height);
    scene.normals = NormalMap(camera.width, camera.height);
    scene.albedo = ImageGrid(camera.width, camera.height, 4);
    scene.specular = ImageGrid(camera.width, camera.height, 1);
    scene.segmentation = SegmentationMap(camera.width, camera.height);

    for (int y = 0; y < camera.height; ++y)
        for (int x = 0; x < camera.width; ++x) {
            const Vec3 dir = normalized(Vec3{(x - camera.cx) / camera.fx,
                                             -(y - camera.cy) / camera.fy, -1.0});
            const double b = dot(dir, center);
            const double disc = b * b - (dot(center, center) - radius * radius);
            if (disc < 0.0) continue;
            const double t = b - std::sqrt(disc);
            if (t <= 0.0) continue;
            const Vec3 p = dir * t;
            const Vec3 n = (p - center) / radius;

            if (x == 0 || y == 0 || x == camera.width - 1 || y == camera.height - 1)
                throw std::invalid_argument("sphere clipped by frustum");

            scene.depth.at(x, y) = static_cast<float>(-p.z);
            scene.segmentation.set(x, y, SegClass::head);
            if (n.z >= detail::kNormalValidZ) {
                scene.normals.set(x, y, n);
                scene.normals.set_valid(x, y, true);
            }
        }
    detail::paint_materials(scene, bands);
    return scene;
}

// Plane at base_depth with a sum of three seeded sinusoidal bumps of the
// given pixel wavelength. Normals come from the closed-form height partials.
// Left half is labeled body (clothing), right half head.
inline SceneTruth make_bumpfield_scene(const Camera& camera, double base_depth,
                                       double amplitude, double wavelength_px,
                                       uint64_t seed, const MaterialBands& bands) {
    camera.validate();
    bands.validate();
    if (!(base_depth > 0.0) || !(wavelength_px > 0.0))
        throw std::invalid_argument("bumpfield needs positive depth and wavelength");
    if (!(amplitude >= 0.0) || amplitude >= base_depth / 10.0)
        throw std::invalid_argument("bump amplitude must be below base_depth/10");

    constexpr int kWaves = 3;
    Rng rng(derive_seed(seed, "bumpfield"));
    double ux[kWaves], uy[kWaves], phase[kWaves];
    for (int k = 0; k < kWaves; ++k) {
        const double theta = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
        ux[k] = std::cos(theta);
        uy[k] = std::sin(theta);
        phase[k] = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
    }
    const double freq = 2.0 * 3.14159265358979323846 / wavelength_px;
    const double amp = amplitude / kWaves;

    SceneTruth scene;
    scene.camera = camera;
    scene.depth = DepthMap(camera.width, camera.height);
    scene.normals = NormalMap(camera.width, camera.height);
    scene.albedo = ImageGrid(camera.width, camera.height, 4);
    scene.specular = ImageGrid(camera.width, camera.height, 1);
    scene.segmentation = SegmentationMap(camera.width, camera.height);

    for (int y = 0; y < camera.height; ++y)
        for (int x = 0; x < camera.width; ++x) {
            double d = base_depth, dx = 0.0, dy = 0.0;
            for (int k = 0; k < kWaves; ++k) {
                const double arg = freq * (ux[k] * x + uy[k] * y) + phase[k];
                d += amp * std::sin(arg);
                dx += amp * freq * ux[k] * std::cos(arg);
                dy += amp * freq * uy[k] * std::cos(arg);
            }
            // Tangents of the unprojected surface p(x, y); depth partials dx, dy.
            const Vec3 tx{(d + dx * (x - camera.cx)) / camera.fx,
                          -dx * (y - camera.cy) / camera.fy, -dx};
            const Vec3 ty{dy * (x - camera.cx) / camera.fx,
                          -(d + dy * (y - camera.cy)) / camera.fy, -dy};
            Vec3 n = normalized(cross(tx, ty));
            if (n.z < 0.0) n = -n;

            scene.depth.at(x, y) = static_cast<float>(d);
            if (n.z >= detail::kNormalValidZ) {
                scene.normals.set(x, y, n);
                scene.normals.set_valid(x, y, true);
            }
            scene.segmentation.set(x, y, x < camera.width / 2 ? SegClass::body
                                                              : SegClass::head);
        }
    detail::paint_materials(scene, bands);
    return scene;
}

// ---------------------------------------------------------------------------
// Shadow maps
// ---------------------------------------------------------------------------

struct ShadowSample {
    double u = 0.0, v = 0.0;  // projected pixel coordinates
    double depth = 0.0;       // depth of the 3D sample along the segment
};

constexpr double kShadowBias = 0.002;  // meters; absorbs stereo quantization

// Sample points along the segment from pixel (x, y)'s surface point toward
// the light: the segment is clipped to where its projection stays inside the
// image (and in front of the camera), then sampled at N = 2x its projected
// pixel length. Exposed so occlusion tests can replay the exact sample set.
inline std::vector<ShadowSample> shadow_ray_samples(const DepthMap& depth,
                                                    const Camera& cam,
                                                    const PointLight& light,
                                                    int x, int y) {
    const Vec3 p = unproject(cam, x, y, depth.at(x, y));
    const Vec3 L = light.position;
    const double dp = -p.z, dl = -L.z;

    // Projection along the segment: u(t) = (fx*X(t))/den(t) + cx with all
    // parts linear in t, so each image boundary is crossed at most once.
    const auto crossing = [&](double a0, double a1, double b0, double b1) {
        // root of (a0 + a1 t) + (b0 + b1 t) = 0
        const double denom = a1 + b1;
        if (denom == 0.0) return 2.0;
        return -(a0 + b0) / denom;
    };

    double t_clip = 1.0;
    const auto consider = [&](double t) {
        if (t > 1e-12 && t < t_clip) t_clip = t;
    };
    // u = -0.5 and u = width - 0.5
    consider(crossing(cam.fx * p.x, cam.fx * (L.x - p.x),
                      (cam.cx + 0.5) * dp, (cam.cx + 0.5) * (dl - dp)));
    consider(crossing(cam.fx * p.x, cam.fx * (L.x - p.x),
                      (cam.cx - (cam.width - 0.5)) * dp,
                      (cam.cx - (cam.width - 0.5)) * (dl - dp)));
    // v = -0.5 and v = height - 0.5
    consider(crossing(-cam.fy * p.y, -cam.fy * (L.y - p.y),
                      (cam.cy + 0.5) * dp, (cam.cy + 0.5) * (dl - dp)));
    consider(crossing(-cam.fy * p.y, -cam.fy * (L.y - p.y),
                      (cam.cy - (cam.height - 0.5)) * dp,
                      (cam.cy - (cam.height - 0.5)) * (dl - dp)));
    // keep the projection denominator positive
    if (dl < 1e-6) consider((1e-6 - dp) / (dl - dp));

    const auto at = [&](double t) {
        const Vec3 q = p + (L - p) * t;
        const double den = -q.z;
        return ShadowSample{cam.fx * q.x / den + cam.cx,
                            -cam.fy * q.y / den + cam.cy, den};
    };

    const ShadowSample start = at(0.0), end = at(t_clip);
    const double pixel_len = std::hypot(end.u - start.u, end.v - start.v);
    const int n = std::max(2, static_cast<int>(std::ceil(2.0 * pixel_len)));

    std::vector<ShadowSample> samples;
    samples.reserve(n);
    for (int k = 1; k <= n; ++k)
        samples.push_back(at(t_clip * k / n));
    return samples;
}

// Binary visibility of the light: 1 where the segment toward the light is
// unoccluded by the depth surface, 0 where any sample falls behind the
// stored depth (plus bias) at its projected pixel. Invalid pixels get 0.
inline ImageGrid compute_shadow_map(const DepthMap& depth, const Camera& cam,
                                    const PointLight& light) {
    ImageGrid shadow(depth.width, depth.height, 1);
    for (int y = 0; y < depth.height; ++y)
        for (int x = 0; x < depth.width; ++x) {
            if (!depth.is_valid(x, y)) continue;
            bool occluded = false;
            for (const ShadowSample& s : shadow_ray_samples(depth, cam, light, x, y)) {
                const int ix = static_cast<int>(std::floor(s.u + 0.5));
                const int iy = static_cast<int>(std::floor(s.v + 0.5));
                if (ix < 0 || ix >= depth.width || iy < 0 || iy >= depth.height)
                    continue;
                if (!depth.is_valid(ix, iy)) continue;
                if (s.depth > static_cast<double>(depth.at(ix, iy)) + kShadowBias) {
                    occluded = true;
                    break;
                }
            }
            shadow.at(x, y, 0) = occluded ? 0.0f : 1.0f;
        }
    return shadow;
}

// ---------------------------------------------------------------------------
// Stereo simulation
// ---------------------------------------------------------------------------

// Stereo depth stand-in: Gaussian blur (sigma = smoothing_radius px) kills
// high frequencies, seeded Gaussian noise (sigma in meters) and 1 mm
// quantization model measurement error.
inline DepthMap simulate_stereo_depth(const DepthMap& truth, double smoothing_radius,
                                      double noise_sigma, uint64_t seed) {
    if (smoothing_radius < 0.0 || noise_sigma < 0.0)
        throw std::invalid_argument("stereo degradation parameters must be >= 0");
    DepthMap out = detail::gaussian_blur_masked(truth, smoothing_radius);
    Rng rng(derive_seed(seed, "stereo-noise"));
    for (int y = 0; y < out.height; ++y)
        for (int x = 0; x < out.width; ++x) {
            if (!out.is_valid(x, y)) continue;
            double d = out.at(x, y);
            if (noise_sigma > 0.0) d += noise_sigma * rng.gaussian();
            d = std::max(0.001, std::round(d / 0.001) * 0.001);  // 1 mm quantization
            out.at(x, y) = static_cast<float>(d);
        }
    return out;
}

// Stereo matchers fail on strongly foreshortened surfaces and at occlusion
// boundaries. Invalidate stereo depth wherever the true surface slope
// (tangent of the tilt angle) exceeds max_world_slope or a 4-neighbor of the
// true depth is missing.
inline DepthMap invalidate_grazing_stereo(const DepthMap& stereo, const DepthMap& truth,
                                          const Camera& cam,
                                          double max_world_slope = 1.0) {
    if (stereo.width != truth.width || stereo.height != truth.height)
        throw std::invalid_argument("stereo/truth dimensions disagree");
    DepthMap out = stereo;
    for (int y = 0; y < truth.height; ++y)
        for (int x = 0; x < truth.width; ++x) {
            if (!out.is_valid(x, y)) continue;
            bool drop = x == 0 || y == 0 || x == truth.width - 1 || y == truth.height - 1;
            if (!drop)
                drop = !truth.is_valid(x - 1, y) || !truth.is_valid(x + 1, y) ||
                       !truth.is_valid(x, y - 1) || !truth.is_valid(x, y + 1) ||
                       !truth.is_valid(x, y);
            if (!drop) {
                // depth change per meter of lateral travel
                const double d = truth.at(x, y);
                const double sx =
                    0.5 * (truth.at(x + 1, y) - truth.at(x - 1, y)) * cam.fx / d;
                const double sy =
                    0.5 * (truth.at(x, y + 1) - truth.at(x, y - 1)) * cam.fy / d;
                drop = std::hypot(sx, sy) > max_world_slope;
            }
            if (drop) out.at(x, y) = 0.0f;
        }
    return out;
}

// Normals from central differences of the (optionally presmoothed)
// unprojected surface. Pixels with any invalid 4-neighbor are invalid.
inline NormalMap normals_from_depth(const DepthMap& depth, const Camera& cam,
                                    double presmooth_radius = 0.0) {
    const DepthMap smooth = detail::gaussian_blur_masked(depth, presmooth_radius);
    NormalMap out(depth.width, depth.height);
    for (int y = 1; y < depth.height - 1; ++y)
        for (int x = 1; x < depth.width - 1; ++x) {
            if (!smooth.is_valid(x, y) || !smooth.is_valid(x - 1, y) ||
                !smooth.is_valid(x + 1, y) || !smooth.is_valid(x, y - 1) ||
                !smooth.is_valid(x, y + 1))
                continue;
            const Vec3 tx = unproject(cam, x + 1, y, smooth.at(x + 1, y)) -
                            unproject(cam, x - 1, y, smooth.at(x - 1, y));
            const Vec3 ty = unproject(cam, x, y + 1, smooth.at(x, y + 1)) -
                            unproject(cam, x, y - 1, smooth.at(x, y - 1));
            const Vec3 c = cross(tx, ty);
            const double len = norm(c);
            if (len <= 0.0) continue;
            Vec3 n = c / len;
            if (n.z < 0.0) n = -n;
            if (n.z < detail::kNormalValidZ) continue;
            out.set(x, y, n);
            out.set_valid(x, y, true);
        }
    return out;
}

// ---------------------------------------------------------------------------
// OLAT rendering
// ---------------------------------------------------------------------------

struct OlatImage {
    std::string name;
    PointLight light;
    ImageGrid image;   // render times the light's shadow map
    ImageGrid shadow;  // binary, from the truth depth
    bool is_visible = false;  // visible-spectrum light (vs NIR/flash)
};

// One render per rig light: 4 visible OLATs, 4 NIR OLATs and the flash
// image, each with its shadow map baked into the observation.
inline std::vector<OlatImage> render_olats(const SceneTruth& scene, const LightRig& rig,
                                           const RenderOptions& options) {
    rig.validate();
    std::vector<OlatImage> olats;
    const ShadingMaps maps = truth_maps(scene);
    const auto add = [&](const std::string& name, const PointLight& light, bool visible) {
        ImageGrid shadow = compute_shadow_map(scene.depth, scene.camera, light);
        ImageGrid image = render(maps, scene.camera, light, options, &shadow);
        olats.push_back({name, light, std::move(image), std::move(shadow), visible});
    };
    for (size_t i = 0; i < rig.visible.size(); ++i)
        add("vis" + std::to_string(i), rig.visible[i], true);
    for (size_t i = 0; i < rig.nir.size(); ++i)
        add("nir" + std::to_string(i), rig.nir[i], false);
    add("flash", rig.flash, false);
    return olats;
}

}  // namespace darkflash
