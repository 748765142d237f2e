#pragma once

// Shared test fixture: synthesize a scene, render its OLAT set, degrade the
// depth into a stereo stand-in and assemble the solver bundle.

#include "darkflash/augment.hpp"
#include "darkflash/solver.hpp"
#include "darkflash/synth.hpp"

namespace bundles {

struct Fixture {
    darkflash::SceneTruth scene;
    darkflash::LightRig rig;
    std::vector<darkflash::OlatImage> olats;
    darkflash::DepthMap stereo_depth;
    darkflash::NormalMap stereo_normals;
    darkflash::DataBundle bundle;
};

struct StereoParams {
    double smoothing_radius = 2.0;
    double noise_sigma = 0.001;
    double presmooth_radius = 1.0;
    double max_slope = 0.0;  // > 0 drops unmatchable stereo pixels
    uint64_t seed = 7;
    bool use_truth_geometry = false;  // bundle carries the exact depth/normals
};

inline Fixture make_fixture(darkflash::SceneTruth scene, const StereoParams& sp,
                            const darkflash::RenderOptions& options = {}) {
    Fixture f;
    f.scene = std::move(scene);
    f.rig = darkflash::default_rig();
    f.olats = darkflash::render_olats(f.scene, f.rig, options);

    if (sp.use_truth_geometry) {
        f.stereo_depth = f.scene.depth;
        f.stereo_normals = f.scene.normals;
    } else {
        f.stereo_depth = darkflash::simulate_stereo_depth(
            f.scene.depth, sp.smoothing_radius, sp.noise_sigma, sp.seed);
        if (sp.max_slope > 0.0)
            f.stereo_depth = darkflash::invalidate_grazing_stereo(
                f.stereo_depth, f.scene.depth, f.scene.camera, sp.max_slope);
        f.stereo_normals = darkflash::normals_from_depth(f.stereo_depth, f.scene.camera,
                                                         sp.presmooth_radius);
    }

    f.bundle.camera = f.scene.camera;
    f.bundle.options = options;
    f.bundle.geometry_depth = f.stereo_depth;
    f.bundle.stereo_normals = f.stereo_normals;
    f.bundle.segmentation = f.scene.segmentation;
    for (const darkflash::OlatImage& o : f.olats) {
        darkflash::Observation obs;
        obs.name = o.name;
        obs.image = o.image;
        obs.lights = {o.light};
        obs.shadows = {o.shadow};
        f.bundle.observations.push_back(std::move(obs));
    }
    f.bundle.finalize();
    return f;
}

// Composite observation from an augmented image and its recorded condition.
inline darkflash::Observation composite_observation(const Fixture& f,
                                                    const darkflash::AugmentResult& res) {
    std::vector<darkflash::PointLight> visible_lights;
    for (const darkflash::OlatImage& o : f.olats)
        if (o.is_visible) visible_lights.push_back(o.light);

    darkflash::Observation obs;
    obs.name = std::string("augmented-") + darkflash::condition_name(res.condition.kind);
    obs.image = res.image;
    obs.composite = true;
    for (const darkflash::PointLight& l :
         darkflash::effective_lights(res.condition, visible_lights)) {
        obs.lights.push_back(l);
        obs.shadows.push_back(
            darkflash::compute_shadow_map(f.bundle.geometry_depth, f.bundle.camera, l));
    }
    return obs;
}

inline darkflash::SceneEstimate truth_estimate(const Fixture& f) {
    darkflash::SceneEstimate est;
    est.normals = f.scene.normals;
    est.albedo = f.scene.albedo;
    est.log_specular = darkflash::ImageGrid(f.scene.camera.width, f.scene.camera.height, 1);
    for (size_t i = 0; i < est.log_specular.data.size(); ++i) {
        const float rho = f.scene.specular.data[i];
        est.log_specular.data[i] = std::log(std::max(rho, 1e-12f));
    }
    return est;
}

}  // namespace bundles
