#pragma once

// Pipeline commands behind the command-line tool: synth -> augment -> solve
// -> fuse -> relight -> eval. Each command consumes a JSON config or the
// manifest written by synth, writes PFM outputs with PNG previews and a JSON
// sidecar, and is deterministic given (inputs, flags, seed). Stage seeds are
// derived from the config's master seed with derive_seed(master, stage).

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "darkflash/augment.hpp"
#include "darkflash/brdf.hpp"
#include "darkflash/fusion.hpp"
#include "darkflash/pfm.hpp"
#include "darkflash/png.hpp"
#include "darkflash/relight.hpp"
#include "darkflash/solver.hpp"
#include "darkflash/synth.hpp"

namespace darkflash {

using nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// JSON helpers and scene config schema
// ---------------------------------------------------------------------------

namespace detail {

inline const json& require_field(const json& j, const std::string& path) {
    const json* cur = &j;
    std::string walked;
    size_t start = 0;
    while (true) {
        const size_t dot = path.find('.', start);
        const std::string key = path.substr(start, dot - start);
        walked = walked.empty() ? key : walked + "." + key;
        if (!cur->is_object() || !cur->contains(key))
            throw std::invalid_argument("missing required field: " + walked);
        cur = &(*cur)[key];
        if (dot == std::string::npos) return *cur;
        start = dot + 1;
    }
}

inline json load_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::parse_error& e) {
        throw std::runtime_error("invalid JSON in " + path.string() + ": " + e.what());
    }
    return j;
}

inline void save_json(const fs::path& path, const json& j) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    out << j.dump(2) << "\n";
}

}  // namespace detail

struct SceneConfig {
    std::string type;  // "sphere" | "bumpfield"
    Camera camera;
    uint64_t seed = 0;
    RenderOptions options;
    MaterialBands bands;
    // sphere
    double radius = 0.35;
    Vec3 center{0.0, 0.0, -1.1};
    // bumpfield
    double base_depth = 1.1;
    double amplitude = 0.004;
    double wavelength_px = 12.0;
    // stereo degradation
    double stereo_smoothing_radius = 4.0;
    double stereo_noise_sigma = 0.001;
    double stereo_presmooth_radius = 1.5;
    double stereo_max_slope = 1.0;  // 0 disables the dropout
    LightRig rig = default_rig();
};

inline HalfVectorMode halfvector_from_name(const std::string& name) {
    if (name == "blinn") return HalfVectorMode::view_light;
    if (name == "paper-literal") return HalfVectorMode::normal_light;
    throw std::invalid_argument("unknown halfvector mode: " + name);
}

inline const char* halfvector_name(HalfVectorMode m) {
    return m == HalfVectorMode::view_light ? "blinn" : "paper-literal";
}

inline FalloffMode falloff_from_name(const std::string& name) {
    if (name == "inverse-square") return FalloffMode::inverse_square;
    if (name == "constant") return FalloffMode::constant;
    throw std::invalid_argument("unknown falloff mode: " + name);
}

inline const char* falloff_name(FalloffMode m) {
    return m == FalloffMode::inverse_square ? "inverse-square" : "constant";
}

inline SceneConfig parse_scene_config(const json& j) {
    using detail::require_field;
    SceneConfig cfg;
    cfg.type = require_field(j, "scene.type").get<std::string>();
    if (cfg.type != "sphere" && cfg.type != "bumpfield")
        throw std::invalid_argument("scene.type must be 'sphere' or 'bumpfield'");

    cfg.camera.fx = require_field(j, "camera.fx").get<double>();
    cfg.camera.fy = require_field(j, "camera.fy").get<double>();
    cfg.camera.cx = require_field(j, "camera.cx").get<double>();
    cfg.camera.cy = require_field(j, "camera.cy").get<double>();
    cfg.camera.width = require_field(j, "camera.width").get<int>();
    cfg.camera.height = require_field(j, "camera.height").get<int>();
    cfg.camera.validate();

    cfg.seed = j.value("seed", 0ull);
    cfg.options.halfvector = halfvector_from_name(j.value("halfvector", "blinn"));
    cfg.options.falloff = falloff_from_name(j.value("falloff", "inverse-square"));

    const json& scene = j.at("scene");
    if (cfg.type == "sphere") {
        cfg.radius = scene.value("radius", cfg.radius);
        if (scene.contains("center")) {
            const auto c = scene.at("center").get<std::vector<double>>();
            if (c.size() != 3) throw std::invalid_argument("scene.center must hold 3 numbers");
            cfg.center = {c[0], c[1], c[2]};
        }
    } else {
        cfg.base_depth = scene.value("base_depth", cfg.base_depth);
        cfg.amplitude = scene.value("amplitude", cfg.amplitude);
        cfg.wavelength_px = scene.value("wavelength_px", cfg.wavelength_px);
    }

    cfg.bands = default_bands();
    if (scene.contains("bands")) {
        const json& b = scene.at("bands");
        cfg.bands.albedo.clear();
        cfg.bands.rho.clear();
        for (const auto& a : require_field(b, "albedo")) {
            const auto v = a.get<std::vector<double>>();
            if (v.size() != 4)
                throw std::invalid_argument("scene.bands.albedo entries need 4 channels");
            cfg.bands.albedo.push_back({v[0], v[1], v[2], v[3]});
        }
        for (const auto& r : require_field(b, "rho"))
            cfg.bands.rho.push_back(r.get<double>());
        cfg.bands.validate();
    }

    if (j.contains("stereo")) {
        const json& s = j.at("stereo");
        cfg.stereo_smoothing_radius = s.value("smoothing_radius", cfg.stereo_smoothing_radius);
        cfg.stereo_noise_sigma = s.value("noise_sigma", cfg.stereo_noise_sigma);
        cfg.stereo_presmooth_radius = s.value("presmooth_radius", cfg.stereo_presmooth_radius);
        cfg.stereo_max_slope = s.value("max_slope", cfg.stereo_max_slope);
    }

    if (j.contains("rig")) {
        const json& r = j.at("rig");
        const auto parse_light = [](const json& lj) {
            PointLight l;
            const auto p = lj.at("position").get<std::vector<double>>();
            const auto i = lj.at("intensity").get<std::vector<double>>();
            if (p.size() != 3 || i.size() != 4)
                throw std::invalid_argument("rig light needs position[3] and intensity[4]");
            l.position = {p[0], p[1], p[2]};
            l.intensity = {i[0], i[1], i[2], i[3]};
            l.validate();
            return l;
        };
        if (r.contains("visible")) {
            cfg.rig.visible.clear();
            for (const auto& lj : r.at("visible")) cfg.rig.visible.push_back(parse_light(lj));
        }
        if (r.contains("nir")) {
            cfg.rig.nir.clear();
            for (const auto& lj : r.at("nir")) cfg.rig.nir.push_back(parse_light(lj));
        }
        if (r.contains("flash")) cfg.rig.flash = parse_light(r.at("flash"));
        cfg.rig.validate();
    }
    return cfg;
}

// A complete config for the given scene type; the documented starting point.
inline json default_config_json(const std::string& type, int width, int height,
                                uint64_t seed = 1) {
    const Camera cam = default_camera(width, height);
    json j;
    j["scene"]["type"] = type;
    if (type == "sphere") {
        j["scene"]["radius"] = 0.35;
        j["scene"]["center"] = {0.0, 0.0, -1.1};
    } else {
        j["scene"]["base_depth"] = 1.1;
        j["scene"]["amplitude"] = 0.004;
        j["scene"]["wavelength_px"] = 12.0;
    }
    j["camera"] = {{"fx", cam.fx}, {"fy", cam.fy}, {"cx", cam.cx},
                   {"cy", cam.cy}, {"width", cam.width}, {"height", cam.height}};
    j["seed"] = seed;
    j["falloff"] = "inverse-square";
    j["halfvector"] = "blinn";
    j["stereo"] = {{"smoothing_radius", 4.0}, {"noise_sigma", 0.001},
                   {"presmooth_radius", 1.5}, {"max_slope", 1.0}};
    return j;
}

// ---------------------------------------------------------------------------
// Raster <-> file adapters
// ---------------------------------------------------------------------------

inline void save_normal_map(const std::string& base_path, const NormalMap& normals) {
    ImageGrid g(normals.width, normals.height, 3);
    for (int y = 0; y < normals.height; ++y)
        for (int x = 0; x < normals.width; ++x) {
            if (!normals.is_valid(x, y)) continue;  // invalid pixels stay (0,0,0)
            const Vec3 n = normals.at(x, y);
            g.at(x, y, 0) = static_cast<float>(n.x);
            g.at(x, y, 1) = static_cast<float>(n.y);
            g.at(x, y, 2) = static_cast<float>(n.z);
        }
    write_pfm(base_path, g);
}

inline NormalMap load_normal_map(const std::string& path) {
    const ImageGrid g = read_pfm(path);
    if (g.channels != 3) throw std::runtime_error("normal map PFM must have 3 channels");
    NormalMap out(g.width, g.height);
    for (int y = 0; y < g.height; ++y)
        for (int x = 0; x < g.width; ++x) {
            const Vec3 n{g.at(x, y, 0), g.at(x, y, 1), g.at(x, y, 2)};
            const double len = norm(n);
            if (len < 0.5) continue;
            out.set(x, y, n / len);
            out.set_valid(x, y, true);
        }
    return out;
}

inline void save_depth_map(const std::string& path, const DepthMap& d) {
    ImageGrid g(d.width, d.height, 1);
    g.data.assign(d.depth.begin(), d.depth.end());
    write_pfm(path, g);
}

inline DepthMap load_depth_map(const std::string& path) {
    const ImageGrid g = read_pfm(path);
    if (g.channels != 1) throw std::runtime_error("depth map PFM must have 1 channel");
    DepthMap out(g.width, g.height);
    out.depth.assign(g.data.begin(), g.data.end());
    out.check_invariants();
    return out;
}

inline void save_segmentation(const std::string& path, const SegmentationMap& seg) {
    ImageGrid g(seg.width, seg.height, 1);
    for (size_t i = 0; i < seg.labels.size(); ++i) g.data[i] = seg.labels[i];
    write_pfm(path, g);
}

inline SegmentationMap load_segmentation(const std::string& path) {
    const ImageGrid g = read_pfm(path);
    if (g.channels != 1) throw std::runtime_error("segmentation PFM must have 1 channel");
    SegmentationMap out(g.width, g.height);
    for (size_t i = 0; i < out.labels.size(); ++i) {
        const long v = std::lround(g.data[i]);
        if (v < 0 || v > 5) throw std::runtime_error("segmentation label out of range");
        out.labels[i] = static_cast<uint8_t>(v);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

inline json light_to_json(const PointLight& l) {
    return {{"position", {l.position.x, l.position.y, l.position.z}},
            {"intensity", {l.intensity[0], l.intensity[1], l.intensity[2], l.intensity[3]}}};
}

inline PointLight light_from_json(const json& j) {
    PointLight l;
    const auto p = j.at("position").get<std::vector<double>>();
    const auto i = j.at("intensity").get<std::vector<double>>();
    l.position = {p[0], p[1], p[2]};
    l.intensity = {i[0], i[1], i[2], i[3]};
    return l;
}

struct Manifest {
    fs::path dir;
    json j;

    static Manifest load(const fs::path& path) {
        Manifest m;
        m.j = detail::load_json(path);
        m.dir = path.parent_path();
        return m;
    }

    std::string file(const std::string& role) const {
        const json& files = detail::require_field(j, "files");
        if (!files.contains(role))
            throw std::runtime_error("manifest has no entry for role: " + role);
        return (dir / files.at(role).get<std::string>()).string();
    }

    Camera camera() const {
        Camera c;
        c.fx = j.at("camera").at("fx").get<double>();
        c.fy = j.at("camera").at("fy").get<double>();
        c.cx = j.at("camera").at("cx").get<double>();
        c.cy = j.at("camera").at("cy").get<double>();
        c.width = j.at("camera").at("width").get<int>();
        c.height = j.at("camera").at("height").get<int>();
        return c;
    }

    RenderOptions options() const {
        RenderOptions o;
        o.halfvector = halfvector_from_name(j.at("halfvector").get<std::string>());
        o.falloff = falloff_from_name(j.at("falloff").get<std::string>());
        return o;
    }
};

struct OlatEntry {
    std::string name;
    PointLight light;
    bool visible = false;
    ImageGrid image;
    ImageGrid shadow;
};

inline std::vector<OlatEntry> load_olats(const Manifest& m) {
    std::vector<OlatEntry> out;
    for (const json& oj : m.j.at("olats")) {
        OlatEntry e;
        e.name = oj.at("name").get<std::string>();
        e.light = light_from_json(oj.at("light"));
        e.visible = oj.at("visible").get<bool>();
        e.image = read_pfm((m.dir / oj.at("image").get<std::string>()).string());
        e.shadow = read_pfm((m.dir / oj.at("shadow").get<std::string>()).string());
        out.push_back(std::move(e));
    }
    return out;
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

// Command-line overrides for config-file fields.
struct SynthOverrides {
    std::string halfvector;  // empty = keep config value
    std::string falloff;
    std::optional<uint64_t> seed;
};

inline void cmd_synth(const fs::path& config_path, const fs::path& out_dir,
                      const SynthOverrides& overrides = {}) {
    SceneConfig cfg = parse_scene_config(detail::load_json(config_path));
    if (!overrides.halfvector.empty())
        cfg.options.halfvector = halfvector_from_name(overrides.halfvector);
    if (!overrides.falloff.empty())
        cfg.options.falloff = falloff_from_name(overrides.falloff);
    if (overrides.seed) cfg.seed = *overrides.seed;
    fs::create_directories(out_dir);

    SceneTruth scene =
        cfg.type == "sphere"
            ? make_sphere_scene(cfg.camera, cfg.radius, cfg.center, cfg.bands)
            : make_bumpfield_scene(cfg.camera, cfg.base_depth, cfg.amplitude,
                                   cfg.wavelength_px, derive_seed(cfg.seed, "scene"),
                                   cfg.bands);

    const std::vector<OlatImage> olats = render_olats(scene, cfg.rig, cfg.options);
    DepthMap stereo = simulate_stereo_depth(scene.depth, cfg.stereo_smoothing_radius,
                                            cfg.stereo_noise_sigma,
                                            derive_seed(cfg.seed, "stereo"));
    if (cfg.stereo_max_slope > 0.0)
        stereo = invalidate_grazing_stereo(stereo, scene.depth, cfg.camera,
                                           cfg.stereo_max_slope);
    const NormalMap stereo_normals =
        normals_from_depth(stereo, cfg.camera, cfg.stereo_presmooth_radius);

    const auto out = [&](const std::string& name) { return (out_dir / name).string(); };
    save_depth_map(out("truth_depth.pfm"), scene.depth);
    save_normal_map(out("truth_normals.pfm"), scene.normals);
    write_pfm(out("truth_albedo"), scene.albedo);
    write_pfm(out("truth_specular.pfm"), scene.specular);
    save_segmentation(out("segmentation.pfm"), scene.segmentation);
    save_depth_map(out("stereo_depth.pfm"), stereo);
    save_normal_map(out("stereo_normals.pfm"), stereo_normals);
    write_normal_preview(out("truth_normals.png"), scene.normals);
    write_normal_preview(out("stereo_normals.png"), stereo_normals);

    json manifest;
    manifest["camera"] = {{"fx", cfg.camera.fx}, {"fy", cfg.camera.fy},
                          {"cx", cfg.camera.cx}, {"cy", cfg.camera.cy},
                          {"width", cfg.camera.width}, {"height", cfg.camera.height}};
    manifest["halfvector"] = halfvector_name(cfg.options.halfvector);
    manifest["falloff"] = falloff_name(cfg.options.falloff);
    manifest["seed"] = cfg.seed;
    manifest["scene_type"] = cfg.type;
    manifest["stereo_params"] = {{"smoothing_radius", cfg.stereo_smoothing_radius},
                                 {"noise_sigma", cfg.stereo_noise_sigma},
                                 {"presmooth_radius", cfg.stereo_presmooth_radius},
                                 {"max_slope", cfg.stereo_max_slope}};
    manifest["files"] = {{"truth_depth", "truth_depth.pfm"},
                         {"truth_normals", "truth_normals.pfm"},
                         {"truth_albedo", "truth_albedo"},
                         {"truth_specular", "truth_specular.pfm"},
                         {"segmentation", "segmentation.pfm"},
                         {"stereo_depth", "stereo_depth.pfm"},
                         {"stereo_normals", "stereo_normals.pfm"}};
    manifest["olats"] = json::array();
    for (const OlatImage& o : olats) {
        const std::string img = "olat_" + o.name;
        const std::string shd = "shadow_" + o.name + ".pfm";
        write_pfm(out(img), o.image);
        write_pfm(out(shd), o.shadow);
        write_png_preview(out("olat_" + o.name + ".png"), o.image);
        manifest["olats"].push_back({{"name", o.name},
                                     {"visible", o.is_visible},
                                     {"image", img},
                                     {"shadow", shd},
                                     {"light", light_to_json(o.light)}});
    }
    detail::save_json(out_dir / "manifest.json", manifest);
}

// ---------------------------------------------------------------------------
// augment
// ---------------------------------------------------------------------------

inline json condition_to_json(const LightingCondition& cond) {
    json j;
    j["kind"] = condition_name(cond.kind);
    j["seed"] = cond.seed;
    j["chosen"] = cond.chosen;
    switch (cond.kind) {
        case ConditionKind::well_lit: j["scale"] = cond.well_lit_scale; break;
        case ConditionKind::overexposure: j["scale"] = cond.scale; break;
        case ConditionKind::low_light: j["noise_sigma"] = cond.noise_sigma; break;
        case ConditionKind::mixed_colors:
            j["temperature_warm"] = cond.temperature_warm;
            j["temperature_cool"] = cond.temperature_cool;
            j["tint_warm"] = cond.tint_warm;
            j["tint_cool"] = cond.tint_cool;
            break;
        case ConditionKind::shadows: break;
    }
    return j;
}

inline LightingCondition condition_from_json(const json& j) {
    LightingCondition cond;
    cond.kind = condition_from_name(j.at("kind").get<std::string>());
    cond.seed = j.value("seed", 0ull);
    cond.chosen = j.at("chosen").get<std::vector<int>>();
    switch (cond.kind) {
        case ConditionKind::well_lit: cond.well_lit_scale = j.at("scale").get<double>(); break;
        case ConditionKind::overexposure: cond.scale = j.at("scale").get<double>(); break;
        case ConditionKind::low_light: cond.noise_sigma = j.at("noise_sigma").get<double>(); break;
        case ConditionKind::mixed_colors:
            cond.temperature_warm = j.at("temperature_warm").get<double>();
            cond.temperature_cool = j.at("temperature_cool").get<double>();
            cond.tint_warm = j.at("tint_warm").get<std::array<double, 3>>();
            cond.tint_cool = j.at("tint_cool").get<std::array<double, 3>>();
            break;
        case ConditionKind::shadows: break;
    }
    return cond;
}

inline void cmd_augment(const fs::path& manifest_path, const std::string& kind,
                        uint64_t seed, const fs::path& out_dir) {
    const Manifest m = Manifest::load(manifest_path);
    fs::create_directories(out_dir);

    std::vector<ImageGrid> visible;
    std::vector<PointLight> visible_lights;
    for (OlatEntry& e : load_olats(m))
        if (e.visible) {
            visible.push_back(std::move(e.image));
            visible_lights.push_back(e.light);
        }

    const AugmentResult res = augment(condition_from_name(kind), visible, seed);
    write_pfm((out_dir / "augmented").string(), res.image);
    write_png_preview((out_dir / "augmented.png").string(), res.image);

    json sidecar = condition_to_json(res.condition);
    sidecar["effective_lights"] = json::array();
    for (const PointLight& l : effective_lights(res.condition, visible_lights))
        sidecar["effective_lights"].push_back(light_to_json(l));
    detail::save_json(out_dir / "augmented.json", sidecar);
}

// ---------------------------------------------------------------------------
// solve
// ---------------------------------------------------------------------------

struct SolveFlags {
    double lambda_p = 10.0;
    double lambda_c = 50.0;
    double m = 30.0;
    int iters = 1500;
    double step = 1e-3;
    std::string mode = "adaptive-first-order";
    uint64_t seed = 0;
    // Observation selection: by default every OLAT is a standard
    // observation. An augment directory adds its image as a composite
    // observation replacing the visible OLATs; --no-nir additionally drops
    // the NIR OLATs and flash.
    std::string augmented_dir;
    bool no_nir = false;
};

inline DataBundle bundle_from_manifest(const Manifest& m, const SolveFlags& flags) {
    DataBundle bundle;
    bundle.camera = m.camera();
    bundle.options = m.options();
    bundle.geometry_depth = load_depth_map(m.file("stereo_depth"));
    bundle.stereo_normals = load_normal_map(m.file("stereo_normals"));
    bundle.segmentation = load_segmentation(m.file("segmentation"));

    std::vector<OlatEntry> olats = load_olats(m);
    const bool replace_visible = !flags.augmented_dir.empty();
    for (OlatEntry& e : olats) {
        if (e.visible && replace_visible) continue;
        if (!e.visible && flags.no_nir) continue;
        Observation obs;
        obs.name = e.name;
        obs.image = std::move(e.image);
        obs.lights = {e.light};
        obs.shadows = {std::move(e.shadow)};
        bundle.observations.push_back(std::move(obs));
    }

    if (replace_visible) {
        const fs::path dir = flags.augmented_dir;
        const json sidecar = detail::load_json(dir / "augmented.json");
        Observation obs;
        obs.name = "augmented-" + sidecar.at("kind").get<std::string>();
        obs.image = read_pfm((dir / "augmented").string());
        obs.composite = true;
        for (const json& lj : sidecar.at("effective_lights"))
            obs.lights.push_back(light_from_json(lj));
        // shadow maps from the stereo depth, one per effective light
        for (const PointLight& l : obs.lights)
            obs.shadows.push_back(compute_shadow_map(bundle.geometry_depth,
                                                     bundle.camera, l));
        bundle.observations.push_back(std::move(obs));
    }

    if (bundle.observations.empty())
        throw std::invalid_argument("no observations selected for the solve");
    bundle.finalize();
    return bundle;
}

inline void write_estimate(const fs::path& out_dir, const SceneEstimate& est) {
    fs::create_directories(out_dir);
    save_normal_map((out_dir / "est_normals.pfm").string(), est.normals);
    write_pfm((out_dir / "est_albedo").string(), est.albedo);
    write_pfm((out_dir / "est_log_specular.pfm").string(), est.log_specular);
    write_normal_preview((out_dir / "est_normals.png").string(), est.normals);
    write_png_preview((out_dir / "est_albedo.png").string(), est.albedo);
}

inline SceneEstimate load_estimate(const fs::path& dir) {
    SceneEstimate est;
    est.normals = load_normal_map((dir / "est_normals.pfm").string());
    est.albedo = read_pfm((dir / "est_albedo").string());
    est.log_specular = read_pfm((dir / "est_log_specular.pfm").string());
    return est;
}

inline void write_iteration_log(const fs::path& path, const std::vector<IterationRecord>& log) {
    std::ofstream out(path);
    out << "iteration,total,stereo,photometric,prior,step\n";
    char buf[160];
    for (const IterationRecord& r : log) {
        std::snprintf(buf, sizeof(buf), "%d,%.10g,%.10g,%.10g,%.10g,%.10g\n", r.iteration,
                      r.total, r.stereo, r.photometric, r.prior, r.step);
        out << buf;
    }
}

inline void cmd_solve(const fs::path& manifest_path, const SolveFlags& flags,
                      const fs::path& out_dir) {
    const Manifest m = Manifest::load(manifest_path);
    const DataBundle bundle = bundle_from_manifest(m, flags);

    LossConfig loss;
    loss.lambda_p = flags.lambda_p;
    loss.lambda_c = flags.lambda_c;
    loss.specular_exponent = flags.m;

    SolverConfig solver;
    solver.max_iterations = flags.iters;
    solver.step_size = flags.step;
    solver.mode = solver_mode_from_name(flags.mode);
    solver.seed = flags.seed;

    const SolveResult result = solve(bundle, loss, solver);
    write_estimate(out_dir, result.estimate);
    write_iteration_log(out_dir / "solve_log.csv", result.log);

    json sidecar;
    sidecar["lambda_p"] = loss.lambda_p;
    sidecar["lambda_c"] = loss.lambda_c;
    sidecar["m"] = loss.specular_exponent;
    sidecar["mode"] = flags.mode;
    sidecar["iterations"] = result.iterations;
    sidecar["converged"] = result.converged;
    sidecar["final_energy"] = result.log.empty() ? 0.0 : result.log.back().total;
    sidecar["observations"] = json::array();
    for (const Observation& o : bundle.observations) sidecar["observations"].push_back(o.name);
    detail::save_json(out_dir / "solve.json", sidecar);
}

// ---------------------------------------------------------------------------
// fuse
// ---------------------------------------------------------------------------

inline void cmd_fuse(const fs::path& manifest_path, const fs::path& estimate_dir,
                     double w_z, double w_n, const fs::path& out_dir) {
    const Manifest m = Manifest::load(manifest_path);
    fs::create_directories(out_dir);
    const DepthMap stereo = load_depth_map(m.file("stereo_depth"));
    const NormalMap normals = load_normal_map((estimate_dir / "est_normals.pfm").string());

    const FusionSystem sys = build_fusion_system(stereo, normals, m.camera(), w_z, w_n);
    const DepthMap fused = solve_fusion(sys);
    save_depth_map((out_dir / "fused_depth.pfm").string(), fused);
    export_mesh_ply((out_dir / "fused_mesh.ply").string(), fused, m.camera());

    json sidecar = {{"w_z", w_z}, {"w_n", w_n}};
    const DepthMap truth = load_depth_map(m.file("truth_depth"));
    sidecar["rmse_fused_vs_truth"] = depth_rmse(fused, truth);
    sidecar["rmse_stereo_vs_truth"] = depth_rmse(stereo, truth);
    detail::save_json(out_dir / "fuse.json", sidecar);
}

// ---------------------------------------------------------------------------
// relight
// ---------------------------------------------------------------------------

struct RelightFlags {
    Vec3 light_position{0.3, 0.3, -0.2};
    Channels light_intensity{2.0, 2.0, 2.0, 0.0};
    std::string model = "full";
    double blend = 1.0;
    std::string input_path;  // 3/4-channel PFM; empty = well-lit of the OLATs
};

inline void cmd_relight(const fs::path& manifest_path, const fs::path& estimate_dir,
                        const RelightFlags& flags, const fs::path& out_dir) {
    const Manifest m = Manifest::load(manifest_path);
    fs::create_directories(out_dir);

    const SceneEstimate est = load_estimate(estimate_dir);
    const DepthMap geometry = load_depth_map(m.file("stereo_depth"));

    ImageGrid input;
    if (!flags.input_path.empty()) {
        input = read_pfm(flags.input_path);
    } else {
        std::vector<ImageGrid> visible;
        for (OlatEntry& e : load_olats(m))
            if (e.visible) visible.push_back(std::move(e.image));
        input = well_lit(visible).image;
    }
    const ImageGrid input_rgb = input.channels == 3 ? input : extract_rgb(input);

    const PointLight virtual_light{flags.light_position, flags.light_intensity};
    const ImageGrid contribution =
        render_virtual_light(est, geometry, m.camera(), virtual_light,
                             relight_model_from_name(flags.model), m.options());
    const ImageGrid relit = composite_fill(input_rgb, contribution, flags.blend);

    write_pfm((out_dir / "contribution.pfm").string(), contribution);
    write_pfm((out_dir / "relit.pfm").string(), relit);
    write_png_preview((out_dir / "contribution.png").string(), contribution);
    write_png_preview((out_dir / "relit.png").string(), relit);

    json sidecar;
    sidecar["light"] = light_to_json(virtual_light);
    sidecar["model"] = flags.model;
    sidecar["blend"] = flags.blend;
    detail::save_json(out_dir / "relight.json", sidecar);
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

inline json cmd_eval(const fs::path& manifest_path, const fs::path& estimate_dir,
                     const fs::path& out_path) {
    const Manifest m = Manifest::load(manifest_path);
    const SceneEstimate est = load_estimate(estimate_dir);
    const NormalMap truth_normals = load_normal_map(m.file("truth_normals"));
    const NormalMap stereo_normals = load_normal_map(m.file("stereo_normals"));
    const DepthMap truth_depth = load_depth_map(m.file("truth_depth"));
    const DepthMap stereo_depth = load_depth_map(m.file("stereo_depth"));

    json metrics;
    metrics["mean_angular_error_deg"] = mean_angular_error(est.normals, truth_normals);
    metrics["stereo_mean_angular_error_deg"] =
        mean_angular_error(stereo_normals, truth_normals);
    metrics["stereo_depth_rmse_m"] = depth_rmse(stereo_depth, truth_depth);

    const fs::path fused_path = estimate_dir / "fused_depth.pfm";
    if (fs::exists(fused_path))
        metrics["fused_depth_rmse_m"] =
            depth_rmse(load_depth_map(fused_path.string()), truth_depth);

    // energy breakdown of the estimate on the standard OLAT bundle
    const DataBundle bundle = bundle_from_manifest(m, SolveFlags{});
    const LossBreakdown bd = total_loss(est, bundle, LossConfig{});
    metrics["energy"] = {{"total", bd.total}, {"stereo", bd.stereo},
                         {"photometric", bd.photometric}, {"prior", bd.prior}};

    if (!out_path.empty()) detail::save_json(out_path, metrics);
    return metrics;
}

}  // namespace darkflash
