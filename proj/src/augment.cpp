#include "sivit/augment.hpp"

#include <cmath>

#include "sivit/errors.hpp"

namespace sivit {

void AugmentConfig::validate() const {
    if (crop_frac <= 0.0 || crop_frac > 1.0) {
        throw ConfigError("crop fraction must be in (0, 1], got " + std::to_string(crop_frac));
    }
    if (flip_prob < 0.0 || flip_prob > 1.0) {
        throw ConfigError("flip probability must be in [0, 1], got " + std::to_string(flip_prob));
    }
    if (jitter_brightness < 0.0 || jitter_contrast < 0.0 || jitter_saturation < 0.0 ||
        jitter_hue < 0.0) {
        throw ConfigError("jitter strengths must be non-negative");
    }
}

ImageSample augment_train(const ImageSample& sample, const AugmentConfig& cfg,
                          int k_categories, std::mt19937_64& rng) {
    cfg.validate();
    if (!cfg.enabled) return sample;

    ImageSample out = sample;
    if (cfg.rotate) {
        std::uniform_real_distribution<double> angle(0.0, 2.0 * M_PI);
        const double a = angle(rng);
        out.image = rotate_image(out.image, a, cfg.fill);
        out.mask = rotate_mask(out.mask, a);
    }
    if (cfg.crop_frac < 1.0) {
        out.image = center_crop_resize(out.image, cfg.crop_frac);
        out.mask = center_crop_resize(out.mask, cfg.crop_frac);
    }
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    if (coin(rng) < cfg.flip_prob) {
        out.image = flip_h(out.image);
        out.mask = flip_h(out.mask);
    }
    if (coin(rng) < cfg.flip_prob) {
        out.image = flip_v(out.image);
        out.mask = flip_v(out.mask);
    }
    out.image = color_jitter(out.image, rng, cfg.jitter_brightness, cfg.jitter_contrast,
                             cfg.jitter_saturation, cfg.jitter_hue);
    out.class_label = label_from_mask(out.mask, k_categories);
    return out;
}

ImageSample augment_eval(const ImageSample& sample, const AugmentConfig& cfg,
                         int k_categories) {
    cfg.validate();
    if (!cfg.enabled || cfg.crop_frac >= 1.0) return sample;
    ImageSample out = sample;
    out.image = center_crop_resize(out.image, cfg.crop_frac);
    out.mask = center_crop_resize(out.mask, cfg.crop_frac);
    out.class_label = label_from_mask(out.mask, k_categories);
    return out;
}

}  // namespace sivit
