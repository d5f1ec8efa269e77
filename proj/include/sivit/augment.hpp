#pragma once

#include <random>

#include "sivit/datasynth.hpp"

namespace sivit {

// Train-time pipeline: random rotation (any angle, background-filled corners)
// -> center crop + resize back -> random flips -> color jitter. Image and mask
// transform together and the class label is recomputed from the moved mask.
// Eval pipeline: the deterministic center crop + resize only.
struct AugmentConfig {
    bool enabled = true;
    bool rotate = true;
    double crop_frac = 0.70;  // fraction of the min side kept by the crop
    double flip_prob = 0.5;   // horizontal and vertical, drawn independently
    double jitter_brightness = 0.15;
    double jitter_contrast = 0.3;
    double jitter_saturation = 0.3;
    double jitter_hue = 0.06;
    double fill[3] = {0.94, 0.91, 0.95};  // rotation corner fill (slide background)

    void validate() const;
};

ImageSample augment_train(const ImageSample& sample, const AugmentConfig& cfg,
                          int k_categories, std::mt19937_64& rng);

ImageSample augment_eval(const ImageSample& sample, const AugmentConfig& cfg,
                         int k_categories);

}  // namespace sivit
