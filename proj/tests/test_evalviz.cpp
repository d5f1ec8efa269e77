#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <string>
#include <vector>

#include "doctest.h"
#include "sivit/bagging.hpp"
#include "sivit/datasynth.hpp"
#include "sivit/errors.hpp"
#include "sivit/evalviz.hpp"
#include "sivit/image.hpp"
#include "sivit/model.hpp"
#include "sivit/rng.hpp"

using namespace sivit;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const char* name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    return std::string(std::istreambuf_iterator<char>(in), {});
}

ModelConfig small_model_config() {
    ModelConfig mc;
    mc.vit.image_size = 16;
    mc.vit.patch_size = 4;
    mc.vit.embed_dim = 8;
    mc.vit.depth = 1;
    mc.vit.heads = 2;
    mc.vit.seed = 77;
    mc.k_categories = 2;
    return mc;
}

Bag one_bag(uint64_t seed, bool positive, bool shuffled) {
    GenConfig gc;
    gc.image_size = 16;
    gc.seed = seed;
    std::vector<PatchGrid> grids;
    for (int i = 0; i < 3; ++i) grids.push_back(patchify(generate_sample(gc, i, positive), 4));
    if (shuffled) {
        std::mt19937_64 rng(seed);
        auto [bags, record] = shuffle_distribute(grids, rng, 2, true);
        return bags[0];
    }
    return unshuffle_distribute(grids, 2, true)[0];
}

// Multiply every weight of the classification head by `factor`.
void scale_cls_head(SiViTModel& model, double factor) {
    for (auto& [name, t] : model.named_params()) {
        if (name == "heads.cls.w" || name == "heads.cls.b") {
            for (double& v : const_cast<Tensor&>(t).data()) v *= factor;
        }
    }
}

// Jitter every parameter so map comparisons run at a generic parameter point
// rather than the symmetric fresh init.
void perturb_params(SiViTModel& model, uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> d(0.0, 0.1);
    for (auto& [name, t] : model.named_params()) {
        for (double& v : const_cast<Tensor&>(t).data()) v += d(rng);
    }
}

}  // namespace

TEST_CASE("perfect predictions score 1.0 on every metric") {
    ConfusionCounts c{/*tp=*/40, /*fp=*/0, /*tn=*/60, /*fn=*/0};
    MetricSet m = metrics(c);
    CHECK(m.accuracy == 1.0);
    CHECK(m.precision == 1.0);
    CHECK(m.recall == 1.0);
    CHECK(m.specificity == 1.0);
    CHECK(m.f1 == 1.0);
    CHECK_FALSE(m.degenerate_precision);
    CHECK_FALSE(m.degenerate_f1);
}

TEST_CASE("zero positive predictions mark precision and f1 degenerate") {
    ConfusionCounts c{/*tp=*/0, /*fp=*/0, /*tn=*/50, /*fn=*/50};
    MetricSet m = metrics(c);
    CHECK(m.accuracy == 0.5);
    CHECK(m.precision == 0.0);
    CHECK(m.degenerate_precision);
    CHECK(m.recall == 0.0);
    CHECK_FALSE(m.degenerate_recall);
    CHECK(m.specificity == 1.0);
    CHECK(m.f1 == 0.0);
    CHECK(m.degenerate_f1);
}

TEST_CASE("hand-computed confusion matrix") {
    ConfusionCounts c{/*tp=*/90, /*fp=*/20, /*tn=*/80, /*fn=*/10};
    MetricSet m = metrics(c);
    CHECK(m.accuracy == doctest::Approx(0.85).epsilon(1e-12));
    CHECK(m.precision == doctest::Approx(90.0 / 110.0).epsilon(1e-12));
    CHECK(m.recall == doctest::Approx(0.9).epsilon(1e-12));
    CHECK(m.specificity == doctest::Approx(0.8).epsilon(1e-12));
    // Harmonic mean of precision and recall; equivalently 2tp/(2tp+fp+fn).
    CHECK(m.f1 == doctest::Approx(180.0 / 210.0).epsilon(1e-12));
}

TEST_CASE("metric identities hold for random counts") {
    std::mt19937_64 rng(314);
    std::uniform_int_distribution<long> draw(0, 200);
    for (int trial = 0; trial < 200; ++trial) {
        ConfusionCounts c{draw(rng), draw(rng), draw(rng), draw(rng)};
        if (c.total() == 0) continue;
        MetricSet m = metrics(c);
        CHECK(m.accuracy ==
              doctest::Approx(static_cast<double>(c.tp + c.tn) / c.total()).epsilon(1e-12));
        if (2 * c.tp + c.fp + c.fn > 0 && !m.degenerate_f1) {
            CHECK(m.f1 == doctest::Approx(2.0 * c.tp / (2.0 * c.tp + c.fp + c.fn))
                              .epsilon(1e-12));
        }
        CHECK(m.accuracy >= 0.0);
        CHECK(m.accuracy <= 1.0);
        CHECK(m.f1 >= 0.0);
        CHECK(m.f1 <= 1.0);
    }
}

TEST_CASE("confusion counts route predictions to the right cell") {
    ConfusionCounts c;
    c.add(1, 1);
    c.add(0, 1);
    c.add(1, 0);
    c.add(0, 0);
    c.add(0, 0);
    CHECK(c.tp == 1);
    CHECK(c.fn == 1);
    CHECK(c.fp == 1);
    CHECK(c.tn == 2);
    CHECK(c.total() == 5);
    CHECK_THROWS_AS(c.add(2, 0), ContractError);
    CHECK_THROWS_AS(c.add(0, -1), ContractError);

    ConfusionCounts bad{-1, 0, 0, 2};
    CHECK_THROWS_AS(metrics(bad), ContractError);
    ConfusionCounts empty;
    CHECK_THROWS_AS(metrics(empty), ContractError);
}

TEST_CASE("metrics CSV has fixed bytes") {
    TempDir dir("sivit_evalviz_csv");
    ConfusionCounts c{90, 20, 80, 10};
    std::vector<std::pair<std::string, MetricSet>> rows = {
        {"val", metrics(ConfusionCounts{40, 0, 60, 0})},
        {"test", metrics(c)},
    };
    const fs::path p1 = dir.path / "a.csv";
    const fs::path p2 = dir.path / "b.csv";
    write_metrics_csv(p1.string(), rows);
    write_metrics_csv(p2.string(), rows);
    const std::string got = slurp(p1);
    CHECK(got == slurp(p2));
    CHECK(got ==
          "split,accuracy,precision,recall,specificity,f1\n"
          "val,1,1,1,1,1\n"
          "test,0.85,0.8181818182,0.9,0.8,0.8571428571\n");
    CHECK_THROWS_AS(write_metrics_csv((dir.path / "no_dir" / "x.csv").string(), rows),
                    IoError);
}

TEST_CASE("zeroed classification head yields an all-zero map") {
    SiViTModel model(small_model_config());
    scale_cls_head(model, 0.0);
    Bag bag = one_bag(9001, true, false);
    AttributionMap map = attribution(model, bag, 1);
    CHECK(map.grid == 4);
    CHECK(map.target_class == 1);
    REQUIRE(map.values.size() == 16);
    REQUIRE(map.upsampled.size() == 16 * 16);
    for (double v : map.values) CHECK(v == 0.0);
    for (double v : map.upsampled) CHECK(v == 0.0);
}

TEST_CASE("map is invariant to positive rescaling of the logits") {
    Bag bag = one_bag(9002, true, false);
    SiViTModel a(small_model_config());
    SiViTModel b(small_model_config());
    perturb_params(a, 55);
    perturb_params(b, 55);  // identical jitter, then scale only b's head
    scale_cls_head(b, 3.0);
    AttributionMap ma = attribution(a, bag, 1);
    AttributionMap mb = attribution(b, bag, 1);
    REQUIRE(ma.values.size() == mb.values.size());
    bool saw_mid = false;
    for (std::size_t i = 0; i < ma.values.size(); ++i) {
        CHECK(std::abs(ma.values[i] - mb.values[i]) < 1e-9);
        if (ma.values[i] > 0.0 && ma.values[i] < 1.0) saw_mid = true;
    }
    CHECK(saw_mid);  // the comparison covered non-trivial values
}

TEST_CASE("shuffled bags produce a well-formed map that renders") {
    TempDir dir("sivit_evalviz_map");
    SiViTModel model(small_model_config());
    Bag bag = one_bag(9003, true, true);
    AttributionMap map = attribution(model, bag, 1);
    REQUIRE(map.values.size() == 16);
    bool saw_positive = false;
    for (double v : map.values) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
        if (v > 0.0) saw_positive = true;
    }
    // Min-max normalization pins the extremes unless the grid is constant.
    if (saw_positive) {
        CHECK(*std::max_element(map.values.begin(), map.values.end()) == 1.0);
    }
    const fs::path out = dir.path / "map.pgm";
    write_map(map, out.string());
    int w = 0, h = 0, maxval = 0;
    std::vector<int> px = read_pgm(out.string(), w, h, maxval);
    CHECK(w == 16);
    CHECK(h == 16);
    CHECK(maxval == 255);
    CHECK(px.size() == 256);

    CHECK_THROWS_AS(attribution(model, bag, 2), ContractError);
}

TEST_CASE("map rendering quantizes to the expected bytes") {
    TempDir dir("sivit_evalviz_bytes");
    AttributionMap map;
    map.grid = 2;
    map.values = {0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0};
    map.upsampled = map.values;  // 2x2 "image" for a byte-level fixture
    const fs::path p = dir.path / "ramp.pgm";
    write_map(map, p.string());
    const std::string want = std::string("P5\n2 2\n255\n") +
                             '\x00' + '\x55' + '\xaa' + '\xff';
    CHECK(slurp(p) == want);

    map.upsampled = {0.0, 0.0, 0.0, 0.0};
    write_map(map, p.string());
    std::string zeros = slurp(p);
    CHECK(zeros.substr(zeros.size() - 4) == std::string(4, '\x00'));

    map.upsampled = {2.0, 1.0, 1.0, 1.5};  // out-of-range values clamp
    write_map(map, p.string());
    std::string ones = slurp(p);
    CHECK(ones.substr(ones.size() - 4) == std::string(4, '\xff'));

    map.upsampled = {0.0, 0.0, 0.0};  // not square
    CHECK_THROWS_AS(write_map(map, p.string()), ContractError);
}
