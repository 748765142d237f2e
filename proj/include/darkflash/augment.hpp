#pragma once

// Simulated visible lighting conditions built from the four visible OLAT
// images: well-lit, shadows, mixed-colors, overexposure, low-light. Every
// draw is recorded so a condition can be replayed and so the solver can
// reconstruct the effective light set behind an augmented image. Inputs are
// expected in [0, 1] (captured OLATs saturate at 1).

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "darkflash/geometry.hpp"
#include "darkflash/image.hpp"
#include "darkflash/rng.hpp"

namespace darkflash {

enum class ConditionKind { well_lit, shadows, mixed_colors, overexposure, low_light };

inline const char* condition_name(ConditionKind k) {
    switch (k) {
        case ConditionKind::well_lit: return "well-lit";
        case ConditionKind::shadows: return "shadows";
        case ConditionKind::mixed_colors: return "mixed-colors";
        case ConditionKind::overexposure: return "overexposure";
        case ConditionKind::low_light: return "low-light";
    }
    return "?";
}

inline ConditionKind condition_from_name(const std::string& name) {
    for (ConditionKind k : {ConditionKind::well_lit, ConditionKind::shadows,
                            ConditionKind::mixed_colors, ConditionKind::overexposure,
                            ConditionKind::low_light})
        if (name == condition_name(k)) return k;
    throw std::invalid_argument("unknown lighting condition: " + name);
}

struct LightingCondition {
    ConditionKind kind = ConditionKind::well_lit;
    uint64_t seed = 0;
    std::vector<int> chosen;          // OLAT indices drawn
    double temperature_warm = 0.0;    // K, mixed-colors
    double temperature_cool = 0.0;    // K, mixed-colors
    std::array<double, 3> tint_warm{1.0, 1.0, 1.0};
    std::array<double, 3> tint_cool{1.0, 1.0, 1.0};
    double scale = 0.0;               // overexposure factor
    double noise_sigma = 0.0;         // low-light, normalized units
    double well_lit_scale = 0.0;      // global factor applied by well_lit
};

struct AugmentResult {
    ImageGrid image;
    LightingCondition condition;
};

namespace detail {
inline void require_olats(const std::vector<ImageGrid>& olats, size_t min_count) {
    if (olats.size() < min_count)
        throw std::invalid_argument("not enough OLAT images");
    for (const ImageGrid& g : olats)
        if (!g.same_shape(olats.front()))
            throw std::invalid_argument("OLAT images must share dimensions");
}

inline double percentile_rgb(const ImageGrid& g, double pct) {
    std::vector<float> values;
    const int nc = std::min(g.channels, 3);
    values.reserve(static_cast<size_t>(g.width) * g.height * nc);
    for (int y = 0; y < g.height; ++y)
        for (int x = 0; x < g.width; ++x)
            for (int c = 0; c < nc; ++c)
                values.push_back(g.at(x, y, c));
    const size_t k = std::min(values.size() - 1,
                              static_cast<size_t>(pct / 100.0 * values.size()));
    std::nth_element(values.begin(), values.begin() + k, values.end());
    return values[k];
}
}  // namespace detail

// Equal-weight average of the four OLATs, scaled so the 99.9th-percentile
// RGB value lands at 0.95. The scale is capped so no pixel saturates.
inline AugmentResult well_lit(const std::vector<ImageGrid>& olats) {
    detail::require_olats(olats, 4);
    const ImageGrid& first = olats.front();
    ImageGrid avg(first.width, first.height, first.channels);
    for (size_t i = 0; i < avg.data.size(); ++i) {
        double sum = 0.0;
        for (const ImageGrid& g : olats) sum += g.data[i];
        avg.data[i] = static_cast<float>(sum / olats.size());
    }

    const double anchor = detail::percentile_rgb(avg, 99.9);
    if (anchor <= 0.0)
        throw std::invalid_argument("well_lit cannot normalize an all-black input");
    const double peak = *std::max_element(avg.data.begin(), avg.data.end());
    const double s = std::min(0.95 / anchor, 1.0 / peak);
    for (float& v : avg.data) v = static_cast<float>(v * s);

    AugmentResult res{std::move(avg), {}};
    res.condition.kind = ConditionKind::well_lit;
    res.condition.well_lit_scale = s;
    for (int i = 0; i < static_cast<int>(olats.size()); ++i)
        res.condition.chosen.push_back(i);
    return res;
}

// One OLAT picked uniformly at random: strong cast shadows.
inline AugmentResult shadows(const std::vector<ImageGrid>& olats, uint64_t seed) {
    detail::require_olats(olats, 1);
    Rng rng(derive_seed(seed, "augment-shadows"));
    const int pick = static_cast<int>(rng.uniform_index(olats.size()));
    AugmentResult res{olats[static_cast<size_t>(pick)], {}};
    res.condition.kind = ConditionKind::shadows;
    res.condition.seed = seed;
    res.condition.chosen = {pick};
    return res;
}

// Planck spectral radiance sampled at 600/550/450 nm, normalized so the
// largest channel is 1.
inline std::array<double, 3> blackbody_rgb(double temperature_kelvin) {
    if (!(temperature_kelvin >= 1000.0) || !(temperature_kelvin <= 25000.0))
        throw std::invalid_argument("color temperature must lie in [1000, 25000] K");
    constexpr double c2 = 1.4388e-2;  // m K
    constexpr double lambdas[3] = {600e-9, 550e-9, 450e-9};
    std::array<double, 3> rgb{};
    for (int i = 0; i < 3; ++i) {
        const double lam = lambdas[i];
        rgb[i] = 1.0 / (std::pow(lam * 1e9, 5.0) *
                        (std::exp(c2 / (lam * temperature_kelvin)) - 1.0));
    }
    const double peak = std::max({rgb[0], rgb[1], rgb[2]});
    for (double& v : rgb) v /= peak;
    return rgb;
}

// Two distinct OLATs remapped to a warm [1900, 2900] K and a cool
// [7000, 20000] K temperature, then averaged.
inline AugmentResult mixed_colors(const std::vector<ImageGrid>& olats, uint64_t seed) {
    detail::require_olats(olats, 2);
    Rng rng(derive_seed(seed, "augment-mixed"));
    const int a = static_cast<int>(rng.uniform_index(olats.size()));
    int b = static_cast<int>(rng.uniform_index(olats.size() - 1));
    if (b >= a) ++b;

    LightingCondition cond;
    cond.kind = ConditionKind::mixed_colors;
    cond.seed = seed;
    cond.chosen = {a, b};
    cond.temperature_warm = rng.uniform(1900.0, 2900.0);
    cond.temperature_cool = rng.uniform(7000.0, 20000.0);
    cond.tint_warm = blackbody_rgb(cond.temperature_warm);
    cond.tint_cool = blackbody_rgb(cond.temperature_cool);

    const ImageGrid& ia = olats[static_cast<size_t>(a)];
    const ImageGrid& ib = olats[static_cast<size_t>(b)];
    ImageGrid out(ia.width, ia.height, ia.channels);
    for (int y = 0; y < out.height; ++y)
        for (int x = 0; x < out.width; ++x)
            for (int c = 0; c < out.channels; ++c) {
                const double ta = c < 3 ? cond.tint_warm[c] : 1.0;
                const double tb = c < 3 ? cond.tint_cool[c] : 1.0;
                out.at(x, y, c) = static_cast<float>(
                    0.5 * (ta * ia.at(x, y, c) + tb * ib.at(x, y, c)));
            }
    return {std::move(out), cond};
}

// One OLAT scaled by a factor in [1.8, 2.3] and clipped at 1.
inline AugmentResult overexpose(const std::vector<ImageGrid>& olats, uint64_t seed) {
    detail::require_olats(olats, 1);
    Rng rng(derive_seed(seed, "augment-overexpose"));
    const int pick = static_cast<int>(rng.uniform_index(olats.size()));
    const double s = rng.uniform(1.8, 2.3);

    ImageGrid out = olats[static_cast<size_t>(pick)];
    for (float& v : out.data)
        v = static_cast<float>(std::min(1.0, static_cast<double>(v) * s));

    AugmentResult res{std::move(out), {}};
    res.condition.kind = ConditionKind::overexposure;
    res.condition.seed = seed;
    res.condition.chosen = {pick};
    res.condition.scale = s;
    return res;
}

// One OLAT plus i.i.d. Gaussian noise with sigma = 25/255, clipped to [0, 1].
inline AugmentResult low_light(const std::vector<ImageGrid>& olats, uint64_t seed) {
    detail::require_olats(olats, 1);
    Rng rng(derive_seed(seed, "augment-lowlight"));
    const int pick = static_cast<int>(rng.uniform_index(olats.size()));
    const double sigma = 25.0 / 255.0;

    ImageGrid out = olats[static_cast<size_t>(pick)];
    for (float& v : out.data) {
        const double noisy = static_cast<double>(v) + sigma * rng.gaussian();
        v = static_cast<float>(std::clamp(noisy, 0.0, 1.0));
    }

    AugmentResult res{std::move(out), {}};
    res.condition.kind = ConditionKind::low_light;
    res.condition.seed = seed;
    res.condition.chosen = {pick};
    res.condition.noise_sigma = sigma;
    return res;
}

inline AugmentResult augment(ConditionKind kind, const std::vector<ImageGrid>& olats,
                             uint64_t seed) {
    switch (kind) {
        case ConditionKind::well_lit: return well_lit(olats);
        case ConditionKind::shadows: return shadows(olats, seed);
        case ConditionKind::mixed_colors: return mixed_colors(olats, seed);
        case ConditionKind::overexposure: return overexpose(olats, seed);
        case ConditionKind::low_light: return low_light(olats, seed);
    }
    throw std::invalid_argument("unknown lighting condition");
}

// The light set that a linear render of the augmented image corresponds to:
// each drawn OLAT's light with the recorded weights/tints folded into its
// intensity. Clipping (overexposure) and noise (low-light) are deliberately
// not representable; they are the degradations.
inline std::vector<PointLight> effective_lights(const LightingCondition& cond,
                                                const std::vector<PointLight>& olat_lights) {
    std::vector<PointLight> out;
    const auto scaled = [&](int idx, double w, const std::array<double, 3>& tint) {
        PointLight l = olat_lights.at(static_cast<size_t>(idx));
        for (int c = 0; c < 3; ++c) l.intensity[c] *= w * tint[c];
        l.intensity[3] *= w;
        return l;
    };
    const std::array<double, 3> unit{1.0, 1.0, 1.0};
    switch (cond.kind) {
        case ConditionKind::well_lit:
            for (int idx : cond.chosen)
                out.push_back(scaled(idx, cond.well_lit_scale / cond.chosen.size(), unit));
            break;
        case ConditionKind::shadows:
        case ConditionKind::low_light:
            out.push_back(scaled(cond.chosen.at(0), 1.0, unit));
            break;
        case ConditionKind::overexposure:
            out.push_back(scaled(cond.chosen.at(0), cond.scale, unit));
            break;
        case ConditionKind::mixed_colors:
            out.push_back(scaled(cond.chosen.at(0), 0.5, cond.tint_warm));
            out.push_back(scaled(cond.chosen.at(1), 0.5, cond.tint_cool));
            break;
    }
    return out;
}

}  // namespace darkflash
