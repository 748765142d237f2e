#include <doctest.h>

#include <cstring>

#include "darkflash/solver.hpp"
#include "darkflash/synth.hpp"
#include "oracles.hpp"

using namespace darkflash;

TEST_CASE("default rig geometry") {
    const LightRig rig = default_rig();

    SUBCASE("visible lights span a 1.5 x 0.8 m rectangle") {
        double min_x = 1e9, max_x = -1e9, min_y = 1e9, max_y = -1e9;
        for (const PointLight& l : rig.visible) {
            min_x = std::min(min_x, l.position.x);
            max_x = std::max(max_x, l.position.x);
            min_y = std::min(min_y, l.position.y);
            max_y = std::max(max_y, l.position.y);
        }
        CHECK(max_x - min_x == doctest::Approx(1.5));
        CHECK(max_y - min_y == doctest::Approx(0.8));
    }

    SUBCASE("flash sits within 0.05 m of the camera") {
        CHECK(norm(rig.flash.position) < 0.05);
    }

    SUBCASE("rig is left-right mirror symmetric") {
        for (const auto& group : {rig.visible, rig.nir})
            for (const PointLight& l : group) {
                bool found = false;
                for (const PointLight& m : group)
                    if (std::abs(m.position.x + l.position.x) < 1e-12 &&
                        std::abs(m.position.y - l.position.y) < 1e-12 &&
                        std::abs(m.position.z - l.position.z) < 1e-12)
                        found = true;
                CHECK(found);
            }
    }

    SUBCASE("visible lights are RGB-only, NIR lights and flash NIR-only") {
        for (const PointLight& l : rig.visible) CHECK(l.intensity[3] == 0.0);
        for (const PointLight& l : rig.nir) {
            CHECK(l.intensity[0] == 0.0);
            CHECK(l.intensity[3] > 0.0);
        }
        CHECK(rig.flash.intensity[3] > 0.0);
    }
}

TEST_CASE("sphere scene") {
    // odd resolution puts the principal point exactly on a pixel center
    const Camera cam = default_camera(65, 65);
    MaterialBands bands;
    bands.albedo = {{0.5, 0.5, 0.5, 0.5}};
    bands.rho = {0.0};
    const double radius = 0.35;
    const SceneTruth scene = make_sphere_scene(cam, radius, {0, 0, -1.1}, bands);

    SUBCASE("center pixel looks straight at the camera") {
        const Vec3 n = scene.normals.at(32, 32);
        CHECK(norm(n - Vec3{0, 0, 1}) < 1e-9);
        CHECK(scene.depth.at(32, 32) == doctest::Approx(1.1 - radius).epsilon(1e-6));
    }

    SUBCASE("normals are unit, camera-facing, grazing toward the silhouette") {
        scene.normals.check_invariants();
        size_t valid = 0;
        double min_nv = 1.0;
        for (int y = 0; y < 65; ++y)
            for (int x = 0; x < 65; ++x) {
                if (!scene.normals.is_valid(x, y)) continue;
                ++valid;
                CHECK(scene.normals.at(x, y).z >= 0.05);
                const LightSample ls = light_dir_and_view(
                    cam, x, y, scene.depth.at(x, y), {{0, 0, 0}, {1, 1, 1, 1}});
                min_nv = std::min(min_nv, dot(scene.normals.at(x, y), ls.v));
            }
        CHECK(valid > 500);
        CHECK(min_nv < 0.2);  // silhouette pixels see the surface edge-on
    }

    SUBCASE("segmentation marks the sphere as head") {
        for (int y = 0; y < 65; ++y)
            for (int x = 0; x < 65; ++x)
                CHECK((scene.segmentation.at(x, y) == SegClass::head) ==
                      scene.depth.is_valid(x, y));
    }

    SUBCASE("a sphere poking out of the frustum is rejected") {
        CHECK_THROWS_WITH_AS(make_sphere_scene(cam, 0.9, {0, 0, -1.1}, bands),
                             doctest::Contains("clipped"), std::invalid_argument);
    }
}

TEST_CASE("bumpfield scene") {
    const Camera cam = default_camera(64, 64);
    MaterialBands bands = default_bands();

    SUBCASE("zero amplitude is a fronto-parallel plane") {
        const SceneTruth scene = make_bumpfield_scene(cam, 1.1, 0.0, 12.0, 5, bands);
        for (int y = 0; y < 64; ++y)
            for (int x = 0; x < 64; ++x) {
                CHECK(scene.depth.at(x, y) == doctest::Approx(1.1));
                CHECK(scene.normals.at(x, y).z == doctest::Approx(1.0));
            }
    }

    SUBCASE("same seed reproduces the scene exactly") {
        const SceneTruth a = make_bumpfield_scene(cam, 1.1, 0.004, 12.0, 42, bands);
        const SceneTruth b = make_bumpfield_scene(cam, 1.1, 0.004, 12.0, 42, bands);
        CHECK(std::memcmp(a.depth.depth.data(), b.depth.depth.data(),
                          a.depth.depth.size() * sizeof(float)) == 0);
        CHECK(a.normals.n == b.normals.n);
    }

    SUBCASE("analytic normals agree with finite differences of the depth") {
        const SceneTruth scene = make_bumpfield_scene(cam, 1.1, 0.004, 24.0, 7, bands);
        const NormalMap fd = normals_from_depth(scene.depth, cam, 0.0);
        double worst = 0.0;
        for (int y = 1; y < 63; ++y)
            for (int x = 1; x < 63; ++x) {
                if (!fd.is_valid(x, y) || !scene.normals.is_valid(x, y)) continue;
                const double d =
                    std::clamp(dot(fd.at(x, y), scene.normals.at(x, y)), -1.0, 1.0);
                worst = std::max(worst, std::acos(d) * 180.0 / 3.14159265358979323846);
            }
        CHECK(worst < 0.2);
    }

    SUBCASE("left half is clothing, right half head") {
        const SceneTruth scene = make_bumpfield_scene(cam, 1.1, 0.004, 12.0, 5, bands);
        CHECK(scene.segmentation.at(4, 32) == SegClass::body);
        CHECK(scene.segmentation.at(60, 32) == SegClass::head);
    }

    SUBCASE("excessive amplitude is rejected") {
        CHECK_THROWS_AS(make_bumpfield_scene(cam, 1.0, 0.2, 12.0, 5, bands),
                        std::invalid_argument);
    }
}

TEST_CASE("shadow maps") {
    const Camera cam = default_camera(48, 48);

    SUBCASE("convex sphere receives no cast shadows on the lit side") {
        // At raking incidence (n.l near 0) the depth-map column model flags
        // the grazing segment, so the convexity claim is checked where the
        // light stands clearly above the local tangent plane.
        MaterialBands bands;
        bands.albedo = {{0.5, 0.5, 0.5, 0.5}};
        bands.rho = {0.0};
        const SceneTruth scene = make_sphere_scene(cam, 0.3, {0, 0, -1.1}, bands);
        for (const PointLight& light : default_rig().visible) {
            const ImageGrid s = compute_shadow_map(scene.depth, cam, light);
            size_t valid = 0, lit = 0;
            for (int y = 0; y < 48; ++y)
                for (int x = 0; x < 48; ++x) {
                    if (!scene.normals.is_valid(x, y)) continue;
                    ++valid;
                    lit += s.at(x, y, 0) == 1.0f;
                    const LightSample ls =
                        light_dir_and_view(cam, x, y, scene.depth.at(x, y), light);
                    if (dot(scene.normals.at(x, y), ls.l) > 0.3)
                        CHECK(s.at(x, y, 0) == 1.0f);
                }
            CHECK(lit > 0.8 * valid);
        }
    }

    SUBCASE("light colocated with the camera never self-shadows") {
        MaterialBands bands = default_bands();
        const SceneTruth scene = make_bumpfield_scene(cam, 1.1, 0.01, 10.0, 3, bands);
        const PointLight light{{0.0, 0.0, 0.0}, {0, 0, 0, 1}};
        const ImageGrid s = compute_shadow_map(scene.depth, cam, light);
        for (int y = 0; y < 48; ++y)
            for (int x = 0; x < 48; ++x)
                CHECK(s.at(x, y, 0) == (scene.depth.is_valid(x, y) ? 1.0f : 0.0f));
    }

    SUBCASE("invalid depth pixels get S = 0") {
        DepthMap depth(8, 8, 1.0f);
        depth.at(3, 3) = -1.0f;
        const ImageGrid s =
            compute_shadow_map(depth, default_camera(8, 8), {{0, 0, 0}, {1, 1, 1, 1}});
        CHECK(s.at(3, 3, 0) == 0.0f);
        CHECK(s.at(0, 0, 0) == 1.0f);
    }

    SUBCASE("raised ridge casts a band to the right under a left light") {
        DepthMap depth(48, 48, 1.0f);
        for (int y = 0; y < 48; ++y)
            for (int x = 20; x <= 23; ++x) depth.at(x, y) = 0.95f;
        const PointLight light{{-3.0, 0.0, -0.5}, {1, 1, 1, 0}};
        const ImageGrid s = compute_shadow_map(depth, cam, light);
        const ImageGrid ref = oracles::shadow_map_exhaustive(depth, cam, light);
        CHECK(std::memcmp(s.data.data(), ref.data.data(),
                          s.data.size() * sizeof(float)) == 0);

        // left of the ridge: lit; a band right of the ridge: shadowed
        size_t shadowed_right = 0;
        for (int y = 4; y < 44; ++y) {
            for (int x = 2; x < 19; ++x) CHECK(s.at(x, y, 0) == 1.0f);
            for (int x = 25; x < 33; ++x) shadowed_right += s.at(x, y, 0) == 0.0f;
        }
        CHECK(shadowed_right > 100);
    }

    SUBCASE("exhaustive oracle agreement on random heightfields") {
        Rng rng(2024);
        for (int trial = 0; trial < 5; ++trial) {
            const int size = trial < 3 ? 48 : 64;
            const Camera c = default_camera(size, size);
            const SceneTruth scene = make_bumpfield_scene(
                c, 1.0 + 0.2 * rng.uniform(), 0.02 + 0.05 * rng.uniform(),
                6.0 + 10.0 * rng.uniform(), rng.next_u64(), default_bands());
            const PointLight light{{rng.uniform(-1.5, 1.5), rng.uniform(-0.8, 0.8),
                                    rng.uniform(-0.3, 0.1)},
                                   {1, 1, 1, 1}};
            const ImageGrid ours = compute_shadow_map(scene.depth, c, light);
            const ImageGrid ref = oracles::shadow_map_exhaustive(scene.depth, c, light);
            CHECK(std::memcmp(ours.data.data(), ref.data.data(),
                              ours.data.size() * sizeof(float)) == 0);
        }
    }
}

TEST_CASE("simulate_stereo_depth") {
    const Camera cam = default_camera(64, 64);

    SUBCASE("no blur, no noise: a 1 mm-quantized copy") {
        const SceneTruth scene =
            make_bumpfield_scene(cam, 1.1, 0.05, 16.0, 9, default_bands());
        const DepthMap out = simulate_stereo_depth(scene.depth, 0.0, 0.0, 1);
        for (int y = 0; y < 64; ++y)
            for (int x = 0; x < 64; ++x) {
                const double q = std::round(scene.depth.at(x, y) / 0.001) * 0.001;
                CHECK(out.at(x, y) == doctest::Approx(q).epsilon(1e-7));
            }
    }

    SUBCASE("deterministic under a fixed seed") {
        const SceneTruth scene =
            make_bumpfield_scene(cam, 1.1, 0.05, 16.0, 9, default_bands());
        const DepthMap a = simulate_stereo_depth(scene.depth, 2.0, 0.002, 77);
        const DepthMap b = simulate_stereo_depth(scene.depth, 2.0, 0.002, 77);
        CHECK(std::memcmp(a.depth.data(), b.depth.data(),
                          a.depth.size() * sizeof(float)) == 0);
    }

    SUBCASE("heavy smoothing attenuates 8 px bumps by at least 80 percent") {
        const SceneTruth scene =
            make_bumpfield_scene(cam, 1.1, 0.008, 8.0, 11, default_bands());
        const DepthMap out = simulate_stereo_depth(scene.depth, 6.0, 0.0, 1);
        double in_rms = 0.0, out_rms = 0.0;
        size_t count = 0;
        for (int y = 20; y < 44; ++y)
            for (int x = 20; x < 44; ++x) {
                const double din = scene.depth.at(x, y) - 1.1;
                const double dout = out.at(x, y) - 1.1;
                in_rms += din * din;
                out_rms += dout * dout;
                ++count;
            }
        in_rms = std::sqrt(in_rms / count);
        out_rms = std::sqrt(out_rms / count);
        CHECK(out_rms < 0.2 * in_rms);
    }

    SUBCASE("mild smoothing follows the Gaussian transfer function") {
        const SceneTruth scene =
            make_bumpfield_scene(cam, 1.1, 0.05, 16.0, 13, default_bands());
        const DepthMap out = simulate_stereo_depth(scene.depth, 2.0, 0.0, 1);
        double in_rms = 0.0, out_rms = 0.0;
        size_t count = 0;
        for (int y = 8; y < 56; ++y)
            for (int x = 8; x < 56; ++x) {
                const double din = scene.depth.at(x, y) - 1.1;
                const double dout = out.at(x, y) - 1.1;
                in_rms += din * din;
                out_rms += dout * dout;
                ++count;
            }
        in_rms = std::sqrt(in_rms / count);
        out_rms = std::sqrt(out_rms / count);
        const double sigma = 2.0, lambda = 16.0, pi = 3.14159265358979323846;
        const double transfer = std::exp(-2.0 * pi * pi * sigma * sigma / (lambda * lambda));
        CHECK(out_rms / in_rms == doctest::Approx(transfer).epsilon(0.1));
    }
}

TEST_CASE("normals_from_depth") {
    SUBCASE("fronto-parallel plane") {
        const Camera cam = default_camera(32, 32);
        DepthMap depth(32, 32, 1.5f);
        const NormalMap n = normals_from_depth(depth, cam, 0.0);
        for (int y = 1; y < 31; ++y)
            for (int x = 1; x < 31; ++x) {
                REQUIRE(n.is_valid(x, y));
                CHECK(norm(n.at(x, y) - Vec3{0, 0, 1}) < 1e-6);
            }
    }

    SUBCASE("border pixels are invalid") {
        const Camera cam = default_camera(16, 16);
        DepthMap depth(16, 16, 1.0f);
        const NormalMap n = normals_from_depth(depth, cam, 0.0);
        for (int i = 0; i < 16; ++i) {
            CHECK_FALSE(n.is_valid(i, 0));
            CHECK_FALSE(n.is_valid(i, 15));
            CHECK_FALSE(n.is_valid(0, i));
            CHECK_FALSE(n.is_valid(15, i));
        }
    }

    SUBCASE("pixels with an invalid neighbor are invalid") {
        const Camera cam = default_camera(16, 16);
        DepthMap depth(16, 16, 1.0f);
        depth.at(8, 8) = 0.0f;
        const NormalMap n = normals_from_depth(depth, cam, 0.0);
        CHECK_FALSE(n.is_valid(7, 8));
        CHECK_FALSE(n.is_valid(8, 7));
        CHECK(n.is_valid(6, 8));
    }

    SUBCASE("recovers a 30-degree tilted plane within 0.1 degree") {
        const Camera cam = default_camera(48, 48);
        const double pi = 3.14159265358979323846;
        const Vec3 n_true{std::sin(pi / 6.0), 0.0, std::cos(pi / 6.0)};
        const double c = n_true.z * 1.1;  // plane through (0, 0, -1.1)
        DepthMap depth(48, 48);
        for (int y = 0; y < 48; ++y)
            for (int x = 0; x < 48; ++x) {
                const double den = n_true.z - n_true.x * (x - cam.cx) / cam.fx +
                                   n_true.y * (y - cam.cy) / cam.fy;
                depth.at(x, y) = static_cast<float>(c / den);
            }
        const NormalMap n = normals_from_depth(depth, cam, 0.0);
        for (int y = 1; y < 47; ++y)
            for (int x = 1; x < 47; ++x) {
                REQUIRE(n.is_valid(x, y));
                const double d = std::clamp(dot(n.at(x, y), n_true), -1.0, 1.0);
                CHECK(std::acos(d) * 180.0 / pi < 0.1);
            }
    }

    SUBCASE("error at least halves when resolution doubles") {
        MaterialBands bands;
        bands.albedo = {{0.5, 0.5, 0.5, 0.5}};
        bands.rho = {0.0};
        double errors[2] = {0, 0};
        int idx = 0;
        for (int size : {32, 64}) {
            const Camera cam = default_camera(size, size);
            const SceneTruth scene = make_sphere_scene(cam, 0.35, {0, 0, -1.1}, bands);
            const NormalMap n = normals_from_depth(scene.depth, cam, 0.0);
            double sum = 0.0;
            size_t count = 0;
            for (int y = 0; y < size; ++y)
                for (int x = 0; x < size; ++x) {
                    if (!n.is_valid(x, y) || !scene.normals.is_valid(x, y)) continue;
                    if (scene.normals.at(x, y).z < 0.5) continue;  // silhouette excluded
                    const double d =
                        std::clamp(dot(n.at(x, y), scene.normals.at(x, y)), -1.0, 1.0);
                    sum += std::acos(d) * 180.0 / 3.14159265358979323846;
                    ++count;
                }
            errors[idx++] = sum / count;
        }
        CHECK(errors[1] < 0.6 * errors[0]);
    }
}

TEST_CASE("render_olats") {
    const Camera cam = default_camera(48, 48);
    MaterialBands bands;
    bands.albedo = {{0.5, 0.4, 0.3, 0.6}};
    bands.rho = {0.0};
    const SceneTruth scene = make_sphere_scene(cam, 0.3, {0, 0, -1.1}, bands);
    const LightRig rig = default_rig();
    const RenderOptions opt;
    const std::vector<OlatImage> olats = render_olats(scene, rig, opt);

    SUBCASE("produces 4 visible + 4 NIR + 1 flash image") {
        REQUIRE(olats.size() == 9);
        int visible = 0;
        for (const OlatImage& o : olats) visible += o.is_visible;
        CHECK(visible == 4);
        CHECK(olats.back().name == "flash");
    }

    SUBCASE("channel containment") {
        for (const OlatImage& o : olats)
            for (int y = 0; y < 48; ++y)
                for (int x = 0; x < 48; ++x) {
                    if (o.is_visible)
                        CHECK(o.image.at(x, y, 3) == 0.0f);
                    else
                        for (int c = 0; c < 3; ++c) CHECK(o.image.at(x, y, c) == 0.0f);
                }
    }

    SUBCASE("a zero-intensity light renders black") {
        LightRig dark = rig;
        dark.visible[1].intensity = {0, 0, 0, 0};
        const std::vector<OlatImage> res = render_olats(scene, dark, opt);
        for (float v : res[1].image.data) CHECK(v == 0.0f);
    }

    SUBCASE("OLAT renders sum to an all-lights render") {
        // all-lights oracle: per-pixel sum over lights of shadow * shade
        for (int y = 0; y < 48; ++y)
            for (int x = 0; x < 48; ++x) {
                if (!scene.normals.is_valid(x, y)) continue;
                Channels all{};
                for (const OlatImage& o : olats) {
                    if (o.shadow.at(x, y, 0) == 0.0f) continue;
                    const LightSample ls =
                        light_dir_and_view(cam, x, y, scene.depth.at(x, y), o.light);
                    Material mat;
                    for (int c = 0; c < 4; ++c) mat.albedo[c] = scene.albedo.at(x, y, c);
                    mat.specular_intensity = scene.specular.at(x, y, 0);
                    const Channels I = shade(mat, {scene.normals.at(x, y), ls.l, ls.v,
                                                   o.light.intensity * ls.falloff});
                    for (int c = 0; c < 4; ++c) all[c] += I[c];
                }
                Channels summed{};
                for (const OlatImage& o : olats)
                    for (int c = 0; c < 4; ++c) summed[c] += o.image.at(x, y, c);
                for (int c = 0; c < 4; ++c)
                    CHECK(summed[c] == doctest::Approx(all[c]).epsilon(1e-5));
            }
    }
}
