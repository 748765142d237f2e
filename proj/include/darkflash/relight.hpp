#pragma once

// Fill-light application: render the RGB contribution of a virtual point
// light from an estimate's maps (full model or Lambertian-only) and add it
// onto the input image in linear space, clipping at sensor saturation. No
// shadow map is applied to the virtual light.

#include <algorithm>

#include "darkflash/brdf.hpp"
#include "darkflash/image.hpp"
#include "darkflash/solver.hpp"

namespace darkflash {

enum class RelightModel { full, lambertian_only };

inline RelightModel relight_model_from_name(const std::string& name) {
    if (name == "full") return RelightModel::full;
    if (name == "lambertian-only") return RelightModel::lambertian_only;
    throw std::invalid_argument("unknown relight model: " + name);
}

inline ImageGrid render_virtual_light(const SceneEstimate& estimate,
                                      const DepthMap& geometry, const Camera& camera,
                                      const PointLight& virtual_light,
                                      RelightModel model, const RenderOptions& options,
                                      double specular_exponent = 30.0) {
    ImageGrid rho(estimate.log_specular.width, estimate.log_specular.height, 1);
    if (model == RelightModel::full)
        for (size_t i = 0; i < rho.data.size(); ++i)
            rho.data[i] = std::exp(estimate.log_specular.data[i]);

    const ShadingMaps maps{&estimate.normals, &estimate.albedo, &rho, &geometry,
                           specular_exponent};
    return extract_rgb(render(maps, camera, virtual_light, options));
}

// input + blend * contribution, clipped to [0, 1]. Never darkens a pixel.
inline ImageGrid composite_fill(const ImageGrid& input_rgb,
                                const ImageGrid& contribution, double blend) {
    if (input_rgb.width != contribution.width || input_rgb.height != contribution.height ||
        input_rgb.channels != 3 || contribution.channels != 3)
        throw std::invalid_argument("composite_fill: RGB dimensions disagree");
    if (!(blend >= 0.0) || !(blend <= 1.0))
        throw std::invalid_argument("blend must lie in [0, 1]");
    ImageGrid out = input_rgb;
    for (size_t i = 0; i < out.data.size(); ++i)
        out.data[i] = static_cast<float>(std::clamp(
            static_cast<double>(input_rgb.data[i]) + blend * contribution.data[i], 0.0, 1.0));
    return out;
}

}  // namespace darkflash
