#include <doctest.h>

#include <cstring>

#include "darkflash/relight.hpp"
#include "darkflash/synth.hpp"
#include "bundles.hpp"

using namespace darkflash;

namespace {
bundles::Fixture sphere_fixture(double rho = 0.0) {
    MaterialBands bands;
    bands.albedo = {{0.5, 0.4, 0.3, 0.6}};
    bands.rho = {rho};
    bundles::StereoParams sp;
    sp.use_truth_geometry = true;
    return bundles::make_fixture(
        make_sphere_scene(default_camera(64, 64), 0.3, {0, 0, -1.1}, bands), sp);
}
}  // namespace

TEST_CASE("render_virtual_light") {
    const bundles::Fixture f = sphere_fixture(0.12);
    const SceneEstimate est = bundles::truth_estimate(f);
    const PointLight light{{0.0, 0.0, 0.0}, {1.5, 1.5, 1.5, 0.0}};

    SUBCASE("lambertian-only equals the full model where rho is zero") {
        bundles::Fixture matte = sphere_fixture(0.0);
        const SceneEstimate est0 = bundles::truth_estimate(matte);
        const ImageGrid full = render_virtual_light(
            est0, matte.scene.depth, matte.scene.camera, light, RelightModel::full,
            RenderOptions{});
        const ImageGrid lamb = render_virtual_light(
            est0, matte.scene.depth, matte.scene.camera, light,
            RelightModel::lambertian_only, RenderOptions{});
        for (size_t i = 0; i < full.data.size(); ++i)
            CHECK(full.data[i] == doctest::Approx(lamb.data[i]).epsilon(1e-6));
    }

    SUBCASE("a light behind the surface contributes nothing") {
        const PointLight behind{{0.0, 0.0, -5.0}, {2, 2, 2, 0}};
        const ImageGrid img = render_virtual_light(
            est, f.scene.depth, f.scene.camera, behind, RelightModel::full,
            RenderOptions{});
        for (float v : img.data) CHECK(v == 0.0f);
    }

    SUBCASE("the apex highlight carries the full specular lobe") {
        // odd resolution puts a pixel exactly on axis; there n = l = v, so
        // full - lambertian equals rho * (m+2)/(2pi) * (n.l) * L * falloff
        MaterialBands bands;
        bands.albedo = {{0.5, 0.4, 0.3, 0.6}};
        bands.rho = {0.12};
        bundles::StereoParams sp;
        sp.use_truth_geometry = true;
        const bundles::Fixture g = bundles::make_fixture(
            make_sphere_scene(default_camera(65, 65), 0.3, {0, 0, -1.1}, bands), sp);
        const SceneEstimate est65 = bundles::truth_estimate(g);
        const ImageGrid full = render_virtual_light(
            est65, g.scene.depth, g.scene.camera, light, RelightModel::full,
            RenderOptions{});
        const ImageGrid lamb = render_virtual_light(
            est65, g.scene.depth, g.scene.camera, light, RelightModel::lambertian_only,
            RenderOptions{});
        double peak = 0.0;
        for (size_t i = 0; i < full.data.size(); ++i)
            peak = std::max(peak, static_cast<double>(full.data[i]) - lamb.data[i]);
        const double apex_dist = 1.1 - 0.3;
        const double expected =
            0.12 * (32.0 / (2.0 * 3.14159265358979323846)) * 1.5 / (apex_dist * apex_dist);
        CHECK(peak == doctest::Approx(expected).epsilon(5e-3));
    }

    SUBCASE("the NIR channel never leaks into the RGB output") {
        SceneEstimate tinted = est;
        const ImageGrid before = render_virtual_light(
            tinted, f.scene.depth, f.scene.camera, light, RelightModel::full,
            RenderOptions{});
        for (int y = 0; y < 64; ++y)
            for (int x = 0; x < 64; ++x) tinted.albedo.at(x, y, 3) = 0.05f;
        const ImageGrid after = render_virtual_light(
            tinted, f.scene.depth, f.scene.camera, light, RelightModel::full,
            RenderOptions{});
        CHECK(before.channels == 3);
        CHECK(std::memcmp(before.data.data(), after.data.data(),
                          before.data.size() * sizeof(float)) == 0);
    }
}

TEST_CASE("composite_fill") {
    ImageGrid input(4, 4, 3, 0.5f);
    ImageGrid contribution(4, 4, 3, 0.7f);

    SUBCASE("blend zero leaves the input untouched") {
        const ImageGrid out = composite_fill(input, contribution, 0.0);
        CHECK(std::memcmp(out.data.data(), input.data.data(),
                          input.data.size() * sizeof(float)) == 0);
    }

    SUBCASE("additive contribution clips at saturation") {
        const ImageGrid out = composite_fill(input, contribution, 1.0);
        for (float v : out.data) CHECK(v == 1.0f);
    }

    SUBCASE("partial blend adds linearly") {
        const ImageGrid out = composite_fill(input, contribution, 0.5);
        for (float v : out.data) CHECK(v == doctest::Approx(0.85).epsilon(1e-6));
    }

    SUBCASE("fill light never darkens a pixel") {
        Rng rng(3);
        ImageGrid in2(8, 8, 3), add(8, 8, 3);
        for (float& v : in2.data) v = static_cast<float>(rng.uniform());
        for (float& v : add.data) v = static_cast<float>(rng.uniform());
        const ImageGrid out = composite_fill(in2, add, 0.7);
        for (size_t i = 0; i < out.data.size(); ++i) CHECK(out.data[i] >= in2.data[i]);
    }

    SUBCASE("mismatched inputs are rejected") {
        CHECK_THROWS_AS(composite_fill(input, ImageGrid(3, 3, 3), 1.0),
                        std::invalid_argument);
        CHECK_THROWS_AS(composite_fill(input, contribution, 1.5), std::invalid_argument);
    }
}

TEST_CASE("relighting the true maps reproduces a two-light render") {
    // a shadows-condition input plus the missing OLAT's virtual render must
    // land on the ground-truth two-light image wherever nothing clips
    const bundles::Fixture f = sphere_fixture(0.0);
    std::vector<ImageGrid> visible;
    std::vector<size_t> visible_idx;
    for (size_t i = 0; i < f.olats.size(); ++i)
        if (f.olats[i].is_visible) {
            visible.push_back(f.olats[i].image);
            visible_idx.push_back(i);
        }

    const AugmentResult cond = shadows(visible, 17);
    const size_t k = visible_idx[static_cast<size_t>(cond.condition.chosen[0])];
    const size_t j = visible_idx[(cond.condition.chosen[0] + 1) % 4];

    const SceneEstimate est = bundles::truth_estimate(f);
    const ImageGrid fill = render_virtual_light(
        est, f.scene.depth, f.scene.camera, f.olats[j].light, RelightModel::full,
        RenderOptions{});
    const ImageGrid relit = composite_fill(extract_rgb(cond.image), fill, 1.0);

    double err = 0.0;
    size_t count = 0;
    for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x)
            for (int c = 0; c < 3; ++c) {
                const double gt = static_cast<double>(f.olats[k].image.at(x, y, c)) +
                                  f.olats[j].image.at(x, y, c);
                if (gt > 0.999 || relit.at(x, y, c) > 0.999) continue;  // clipped
                err += std::abs(relit.at(x, y, c) - gt);
                ++count;
            }
    REQUIRE(count > 1000);
    CHECK(err / count < 0.01);
}
