#include <cmath>
#include <random>

#include "doctest.h"
#include "sivit/augment.hpp"
#include "sivit/errors.hpp"
#include "sivit/rng.hpp"

using namespace sivit;

namespace {

ImageSample make_sample(int index, bool positive, uint64_t seed = 505) {
    GenConfig gc;
    gc.image_size = 32;
    gc.seed = seed;
    return generate_sample(gc, index, positive);
}

}  // namespace

TEST_CASE("disabled augmentation is the identity") {
    ImageSample s = make_sample(0, true);
    AugmentConfig cfg;
    cfg.enabled = false;
    std::mt19937_64 rng(1);
    ImageSample out = augment_train(s, cfg, 2, rng);
    CHECK(out.image.px == s.image.px);
    CHECK(out.mask.v == s.mask.v);
    CHECK(out.class_label == s.class_label);
}

TEST_CASE("augmentation is deterministic in the rng state") {
    ImageSample s = make_sample(1, true);
    AugmentConfig cfg;
    std::mt19937_64 a(7), b(7), c(8);
    ImageSample o1 = augment_train(s, cfg, 2, a);
    ImageSample o2 = augment_train(s, cfg, 2, b);
    ImageSample o3 = augment_train(s, cfg, 2, c);
    CHECK(o1.image.px == o2.image.px);
    CHECK(o1.mask.v == o2.mask.v);
    CHECK(o1.image.px != o3.image.px);
}

TEST_CASE("augmentation preserves class labels on generated content") {
    // Cell content is confined to the image center by construction, so
    // rotation and the center crop must never destroy the labeled evidence.
    AugmentConfig cfg;
    std::mt19937_64 rng(42);
    for (int i = 0; i < 20; ++i) {
        ImageSample pos = make_sample(i, true);
        ImageSample neg = make_sample(100 + i, false);
        ImageSample ap = augment_train(pos, cfg, 2, rng);
        ImageSample an = augment_train(neg, cfg, 2, rng);
        CHECK(ap.class_label == 1);
        CHECK(an.class_label == 0);
        // The stored label always agrees with the transformed mask.
        CHECK(ap.class_label == label_from_mask(ap.mask, 2));
        CHECK(an.class_label == label_from_mask(an.mask, 2));
    }
}

TEST_CASE("eval pipeline is deterministic and keeps geometry") {
    ImageSample s = make_sample(3, true);
    AugmentConfig cfg;
    ImageSample e1 = augment_eval(s, cfg, 2);
    ImageSample e2 = augment_eval(s, cfg, 2);
    CHECK(e1.image.px == e2.image.px);
    CHECK(e1.mask.v == e2.mask.v);
    CHECK(e1.image.w == s.image.w);
    CHECK(e1.image.h == s.image.h);
    CHECK(e1.class_label == s.class_label);

    AugmentConfig full;
    full.crop_frac = 1.0;
    ImageSample e3 = augment_eval(s, full, 2);
    CHECK(e3.image.px == s.image.px);
}

TEST_CASE("forced flips compose exactly like the raw flip transforms") {
    ImageSample s = make_sample(4, false);
    AugmentConfig cfg;
    cfg.rotate = false;
    cfg.crop_frac = 1.0;
    cfg.flip_prob = 1.0;
    cfg.jitter_brightness = cfg.jitter_contrast = cfg.jitter_saturation = cfg.jitter_hue = 0.0;
    std::mt19937_64 rng(9);
    ImageSample out = augment_train(s, cfg, 2, rng);
    Image want = flip_v(flip_h(s.image));
    Mask want_mask = flip_v(flip_h(s.mask));
    CHECK(out.image.px == want.px);
    CHECK(out.mask.v == want_mask.v);
}

TEST_CASE("augment configuration is validated") {
    ImageSample s = make_sample(5, true);
    std::mt19937_64 rng(1);
    AugmentConfig bad;
    bad.crop_frac = 0.0;
    CHECK_THROWS_AS(augment_train(s, bad, 2, rng), ConfigError);
    bad.crop_frac = 0.5;
    bad.flip_prob = 1.5;
    CHECK_THROWS_AS(augment_train(s, bad, 2, rng), ConfigError);
    bad.flip_prob = 0.5;
    bad.jitter_hue = -0.1;
    CHECK_THROWS_AS(augment_train(s, bad, 2, rng), ConfigError);
}
