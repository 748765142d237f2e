// Command-line front end: synthesize a scene, simulate lighting conditions,
// fit normal/reflectance maps, refine depth, relight, and evaluate.

#include <CLI11.hpp>

#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include "darkflash/cli.hpp"

int main(int argc, char** argv) {
    CLI::App app{"dark-flash normal and reflectance toolkit"};
    app.require_subcommand(1);

    std::string config, manifest, out, kind = "well-lit", estimate, input;
    uint64_t seed = 1;

    std::string halfvector, falloff;
    bool seed_given = false;
    auto* synth = app.add_subcommand("synth", "generate a synthetic scene and its OLAT set");
    synth->add_option("--config", config, "scene config JSON")->required();
    synth->add_option("--out", out, "output directory")->required();
    synth->add_option("--halfvector", halfvector, "blinn | paper-literal (overrides config)");
    synth->add_option("--falloff", falloff, "inverse-square | constant (overrides config)");
    synth->add_option("--seed", seed, "overrides the config seed")
        ->each([&](const std::string&) { seed_given = true; });

    auto* augment = app.add_subcommand("augment", "simulate a visible lighting condition");
    augment->add_option("--manifest", manifest, "manifest.json from synth")->required();
    augment->add_option("--kind", kind,
                        "well-lit | shadows | mixed-colors | overexposure | low-light");
    augment->add_option("--seed", seed, "condition seed");
    augment->add_option("--out", out, "output directory")->required();

    darkflash::SolveFlags sf;
    auto* solve = app.add_subcommand("solve", "fit normals, albedo and specular intensity");
    solve->add_option("--manifest", manifest)->required();
    solve->add_option("--out", out)->required();
    solve->add_option("--lambda-p", sf.lambda_p, "photometric weight");
    solve->add_option("--lambda-c", sf.lambda_c, "albedo prior weight");
    solve->add_option("--m", sf.m, "specular exponent");
    solve->add_option("--iters", sf.iters, "max iterations");
    solve->add_option("--step", sf.step, "step size");
    solve->add_option("--mode", sf.mode, "adaptive-first-order | guarded-descent");
    solve->add_option("--seed", sf.seed);
    solve->add_option("--augmented", sf.augmented_dir,
                      "augment output dir; replaces the visible OLATs with the "
                      "augmented image as a composite observation");
    solve->add_flag("--no-nir", sf.no_nir, "drop the NIR OLATs and flash");

    double wz = 1.0, wn = 10.0;
    auto* fuse = app.add_subcommand("fuse", "refine stereo depth with estimated normals");
    fuse->add_option("--manifest", manifest)->required();
    fuse->add_option("--estimate", estimate, "directory written by solve")->required();
    fuse->add_option("--wz", wz, "position weight");
    fuse->add_option("--wn", wn, "normal weight");
    fuse->add_option("--out", out)->required();

    darkflash::RelightFlags rf;
    std::vector<double> light_pos{0.3, 0.3, -0.2}, light_rgb{2.0, 2.0, 2.0};
    auto* relight = app.add_subcommand("relight", "add a virtual fill light");
    relight->add_option("--manifest", manifest)->required();
    relight->add_option("--estimate", estimate)->required();
    relight->add_option("--light-position", light_pos, "meters, camera coords")
        ->expected(3);
    relight->add_option("--light-rgb", light_rgb, "RGB intensity")->expected(3);
    relight->add_option("--model", rf.model, "full | lambertian-only");
    relight->add_option("--blend", rf.blend, "composite weight in [0,1]");
    relight->add_option("--input", rf.input_path,
                        "input image PFM (default: well-lit of the OLATs)");
    relight->add_option("--out", out)->required();

    std::string metrics_out;
    auto* eval = app.add_subcommand("eval", "metrics against the synthetic ground truth");
    eval->add_option("--manifest", manifest)->required();
    eval->add_option("--estimate", estimate)->required();
    eval->add_option("--out", metrics_out, "metrics JSON path");

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) {
            darkflash::SynthOverrides ov;
            ov.halfvector = halfvector;
            ov.falloff = falloff;
            if (seed_given) ov.seed = seed;
            darkflash::cmd_synth(config, out, ov);
        } else if (augment->parsed()) {
            darkflash::cmd_augment(manifest, kind, seed, out);
        } else if (solve->parsed()) {
            darkflash::cmd_solve(manifest, sf, out);
        } else if (fuse->parsed()) {
            darkflash::cmd_fuse(manifest, estimate, wz, wn, out);
        } else if (relight->parsed()) {
            rf.light_position = {light_pos[0], light_pos[1], light_pos[2]};
            rf.light_intensity = {light_rgb[0], light_rgb[1], light_rgb[2], 0.0};
            darkflash::cmd_relight(manifest, estimate, rf, out);
        } else if (eval->parsed()) {
            const auto metrics = darkflash::cmd_eval(manifest, estimate, metrics_out);
            std::printf("%s\n", metrics.dump(2).c_str());
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
