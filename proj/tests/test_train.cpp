#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <string>
#include <vector>

#include "doctest.h"
#include "sivit/checkpoint.hpp"
#include "sivit/datasynth.hpp"
#include "sivit/errors.hpp"
#include "sivit/train.hpp"

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

Dataset tiny_dataset(int n_pos, int n_neg, uint64_t seed) {
    GenConfig gc;
    gc.image_size = 16;
    gc.seed = seed;
    Dataset d;
    d.samples = generate_dataset(gc, n_pos, n_neg);
    d.k_categories = gc.k_categories;
    return d;
}

ModelConfig tiny_model_config() {
    ModelConfig mc;
    mc.vit.image_size = 16;
    mc.vit.patch_size = 4;
    mc.vit.embed_dim = 8;
    mc.vit.depth = 1;
    mc.vit.heads = 2;
    mc.k_categories = 2;
    return mc;
}

TrainConfig tiny_train_config(Strategy s) {
    TrainConfig tc;
    tc.epochs = 2;
    tc.batch_size = 8;
    tc.lr = 1e-3;
    tc.strategy = s;
    tc.seed = 5;
    tc.augment.enabled = false;
    return tc;
}

ImageSample flat_sample(int size, double value, int label = 0) {
    ImageSample s;
    s.sample_id = "flat";
    s.image.w = s.image.h = size;
    s.image.px.assign(static_cast<std::size_t>(size) * size * 3, value);
    s.mask.w = s.mask.h = size;
    s.mask.v.assign(static_cast<std::size_t>(size) * size, 0);
    s.class_label = label;
    return s;
}

std::vector<double> flatten_params(const SiViTModel& model) {
    std::vector<double> out;
    for (const auto& [name, t] : model.named_params()) {
        out.insert(out.end(), t.data().begin(), t.data().end());
    }
    return out;
}

}  // namespace

TEST_CASE("strategy names round-trip and reject junk") {
    for (Strategy s : {Strategy::naive, Strategy::cutout, Strategy::mixup, Strategy::cutmix,
                       Strategy::si, Strategy::usf_only}) {
        CHECK(parse_strategy(strategy_name(s)) == s);
    }
    CHECK(strategy_name(Strategy::si) == "si");
    CHECK(strategy_name(Strategy::usf_only) == "usf_only");
    CHECK_THROWS_AS(parse_strategy("sf_only"), ConfigError);
    CHECK_THROWS_AS(parse_strategy(""), ConfigError);

    CHECK(strategy_uses_reg(Strategy::si));
    CHECK(strategy_uses_reg(Strategy::usf_only));
    CHECK_FALSE(strategy_uses_reg(Strategy::naive));
    CHECK(strategy_uses_shuffle(Strategy::si));
    CHECK_FALSE(strategy_uses_shuffle(Strategy::usf_only));
    CHECK_FALSE(strategy_uses_shuffle(Strategy::cutmix));
}

TEST_CASE("train configuration validation") {
    TrainConfig tc = tiny_train_config(Strategy::si);
    CHECK_NOTHROW(tc.validate());
    tc.epochs = 0;
    CHECK_THROWS_AS(tc.validate(), ConfigError);
    tc = tiny_train_config(Strategy::mixup);
    tc.batch_size = 1;  // mixing needs a partner
    CHECK_THROWS_AS(tc.validate(), ConfigError);
    tc = tiny_train_config(Strategy::naive);
    tc.head_weights.cls = 0.0;  // no active loss term for this strategy
    CHECK_THROWS_AS(tc.validate(), ConfigError);
    tc = tiny_train_config(Strategy::si);
    tc.lr = 0.0;
    CHECK_THROWS_AS(tc.validate(), ConfigError);
    tc = tiny_train_config(Strategy::cutout);
    tc.cutout_frac = 1.5;
    CHECK_THROWS_AS(tc.validate(), ConfigError);
}

TEST_CASE("cutout erases one square and nothing else") {
    std::vector<ImageSample> batch = {flat_sample(16, 1.0, 1)};
    batch[0].mask.v.assign(batch[0].mask.v.size(), 1);
    std::mt19937_64 rng(3);
    apply_cutout(batch, 0.5, rng);
    const auto& px = batch[0].image.px;
    long zero_triples = 0;
    for (std::size_t i = 0; i < px.size(); i += 3) {
        const bool z0 = px[i] == 0.0, z1 = px[i + 1] == 0.0, z2 = px[i + 2] == 0.0;
        CHECK(z0 == z1);
        CHECK(z1 == z2);
        if (z0) ++zero_triples;
        if (!z0) {
            CHECK(px[i] == 1.0);
        }
    }
    // side = 0.5*16 = 8 -> exactly an 8x8 hole.
    CHECK(zero_triples == 64);
    // Labels and masks are deliberately untouched.
    CHECK(batch[0].class_label == 1);
    CHECK(std::all_of(batch[0].mask.v.begin(), batch[0].mask.v.end(),
                      [](int v) { return v == 1; }));
}

TEST_CASE("mixup blends pixels exactly") {
    ImageSample a = flat_sample(8, 1.0, 1);
    ImageSample b = flat_sample(8, 0.0, 0);
    ImageSample a1 = a;
    mixup_pair(a1, b, 1.0);
    CHECK(a1.image.px == a.image.px);
    ImageSample a0 = a;
    mixup_pair(a0, b, 0.0);
    CHECK(a0.image.px == b.image.px);
    ImageSample am = a;
    mixup_pair(am, b, 0.3);
    for (double v : am.image.px) CHECK(v == doctest::Approx(0.3).epsilon(1e-12));

    ImageSample small = flat_sample(4, 0.5, 0);
    CHECK_THROWS_AS(mixup_pair(am, small, 0.5), ContractError);
}

TEST_CASE("batch mixup emits matching soft targets deterministically") {
    GenConfig gc;
    gc.image_size = 16;
    gc.seed = 88;
    std::vector<ImageSample> batch = generate_dataset(gc, 3, 3);
    std::vector<ImageSample> copy = batch;

    std::mt19937_64 r1(11), r2(11);
    auto t1 = apply_mixup(batch, 1.0, r1);
    auto t2 = apply_mixup(copy, 1.0, r2);
    REQUIRE(t1.size() == 6);
    for (std::size_t i = 0; i < t1.size(); ++i) {
        REQUIRE(t1[i].size() == 2);
        CHECK(t1[i][0] + t1[i][1] == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(t1[i] == t2[i]);
        CHECK(batch[i].image.px == copy[i].image.px);
    }

    std::vector<ImageSample> lone = {flat_sample(8, 0.2, 0)};
    std::mt19937_64 r3(1);
    CHECK_THROWS_AS(apply_mixup(lone, 1.0, r3), ContractError);
    CHECK_THROWS_AS(apply_cutmix(lone, 1.0, r3), ContractError);
}

TEST_CASE("cutmix paste covers the exact clipped area") {
    ImageSample a = flat_sample(16, 1.0, 1);
    ImageSample b = flat_sample(16, 0.0, 0);

    ImageSample none = a;
    CHECK(cutmix_paste(none, b, 4, 4, 0, 5) == 0.0);
    CHECK(none.image.px == a.image.px);

    ImageSample quarter = a;
    CHECK(cutmix_paste(quarter, b, 4, 4, 8, 8) == doctest::Approx(0.25).epsilon(1e-12));
    long zeros = 0;
    for (std::size_t i = 0; i < quarter.image.px.size(); i += 3) {
        if (quarter.image.px[i] == 0.0) ++zeros;
    }
    CHECK(zeros == 64);
    // Pixels inside the box come from b, the border stays a's.
    const Image& q = quarter.image;
    auto red_at = [&](int x, int y) { return q.px[(static_cast<std::size_t>(y) * 16 + x) * 3]; };
    CHECK(red_at(4, 4) == 0.0);
    CHECK(red_at(11, 11) == 0.0);
    CHECK(red_at(3, 4) == 1.0);
    CHECK(red_at(12, 11) == 1.0);

    ImageSample clipped = a;
    // 8x8 box anchored at (12,12) keeps only its 4x4 in-frame corner.
    CHECK(cutmix_paste(clipped, b, 12, 12, 8, 8) ==
          doctest::Approx(16.0 / 256.0).epsilon(1e-12));
}

TEST_CASE("evaluation covers every sample once") {
    Dataset val = tiny_dataset(4, 4, 909);
    SiViTModel model(tiny_model_config());
    AugmentConfig aug;
    aug.enabled = false;
    ConfusionCounts c = evaluate(model, val.samples, aug, 2, /*eval_batch=*/3);
    CHECK(c.total() == 8);
    CHECK(c.tp + c.fn == 4);  // actual positives
    CHECK(c.tn + c.fp == 4);  // actual negatives
}

TEST_CASE("training writes byte-identical metrics across reruns") {
    Dataset train = tiny_dataset(8, 8, 101);
    Dataset val = tiny_dataset(4, 4, 102);
    TempDir d1("sivit_train_rerun1");
    TempDir d2("sivit_train_rerun2");

    TrainConfig tc = tiny_train_config(Strategy::si);
    tc.out_dir = d1.path.string();
    TrainResult r1 = train_model(tiny_model_config(), tc, train, val);
    tc.out_dir = d2.path.string();
    TrainResult r2 = train_model(tiny_model_config(), tc, train, val);

    REQUIRE(fs::exists(r1.metrics_path));
    CHECK(slurp(r1.metrics_path) == slurp(r2.metrics_path));
    CHECK(slurp(r1.checkpoint_path) == slurp(r2.checkpoint_path));
    CHECK(r1.best_epoch == r2.best_epoch);
    CHECK(r1.best_val_acc == r2.best_val_acc);

    // The CSV carries the header plus one row per epoch.
    const std::string csv = slurp(r1.metrics_path);
    CHECK(csv.rfind("epoch,train_loss,l_cls,l_reg_usf,l_reg_sf,val_acc,lr\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + tc.epochs);
}

TEST_CASE("naive training equals si with zeroed regression weights bit for bit") {
    Dataset train = tiny_dataset(8, 8, 103);
    Dataset val = tiny_dataset(4, 4, 104);

    TrainConfig naive = tiny_train_config(Strategy::naive);
    TrainResult rn = train_model(tiny_model_config(), naive, train, val);

    TrainConfig si = tiny_train_config(Strategy::si);
    si.head_weights.reg_usf = 0.0;
    si.head_weights.reg_sf = 0.0;
    TrainResult rs = train_model(tiny_model_config(), si, train, val);

    CHECK(flatten_params(rn.model) == flatten_params(rs.model));
    REQUIRE(rn.rows.size() == rs.rows.size());
    for (std::size_t i = 0; i < rn.rows.size(); ++i) {
        CHECK(rn.rows[i].train_loss == rs.rows[i].train_loss);
        CHECK(rn.rows[i].val_acc == rs.rows[i].val_acc);
        // Inactive loss components log exact zeros.
        CHECK(rn.rows[i].l_reg_usf == 0.0);
        CHECK(rn.rows[i].l_reg_sf == 0.0);
        CHECK(rs.rows[i].l_reg_usf == 0.0);
        CHECK(rs.rows[i].l_reg_sf == 0.0);
        CHECK(rn.rows[i].l_cls > 0.0);
    }
}

TEST_CASE("loss components track the active strategy") {
    Dataset train = tiny_dataset(8, 8, 105);
    Dataset val = tiny_dataset(4, 4, 106);

    TrainResult ru = train_model(tiny_model_config(),
                                 tiny_train_config(Strategy::usf_only), train, val);
    for (const auto& row : ru.rows) {
        CHECK(row.l_reg_sf == 0.0);
        CHECK(row.l_reg_usf > 0.0);
        CHECK(row.l_cls > 0.0);
    }

    TrainResult rs = train_model(tiny_model_config(), tiny_train_config(Strategy::si),
                                 train, val);
    for (const auto& row : rs.rows) {
        CHECK(row.l_cls > 0.0);
        CHECK(row.l_reg_usf > 0.0);
        CHECK(row.l_reg_sf > 0.0);
        // Unit weights: the total is the plain sum of the components.
        CHECK(row.train_loss ==
              doctest::Approx(row.l_cls + row.l_reg_usf + row.l_reg_sf).epsilon(1e-9));
    }
}

TEST_CASE("weighted decomposition holds per epoch") {
    Dataset train = tiny_dataset(8, 8, 107);
    Dataset val = tiny_dataset(4, 4, 108);
    TrainConfig tc = tiny_train_config(Strategy::si);
    tc.head_weights.cls = 0.7;
    tc.head_weights.reg_usf = 1.3;
    tc.head_weights.reg_sf = 0.4;
    TrainResult r = train_model(tiny_model_config(), tc, train, val);
    for (const auto& row : r.rows) {
        CHECK(row.train_loss == doctest::Approx(0.7 * row.l_cls + 1.3 * row.l_reg_usf +
                                                0.4 * row.l_reg_sf)
                                    .epsilon(1e-9));
    }
}

TEST_CASE("best checkpoint matches the reported validation accuracy") {
    Dataset train = tiny_dataset(8, 8, 109);
    Dataset val = tiny_dataset(4, 4, 110);
    TempDir dir("sivit_train_best");
    TrainConfig tc = tiny_train_config(Strategy::si);
    tc.epochs = 3;
    tc.out_dir = dir.path.string();
    TrainResult r = train_model(tiny_model_config(), tc, train, val);

    REQUIRE(r.rows.size() == 3);
    double best = 0.0;
    for (const auto& row : r.rows) best = std::max(best, row.val_acc);
    CHECK(r.best_val_acc == best);
    // Epochs are numbered from 1 in the log.
    CHECK(r.rows[static_cast<std::size_t>(r.best_epoch - 1)].val_acc == best);

    // The returned model is the best-epoch snapshot, not the final state.
    ConfusionCounts c = evaluate(r.model, val.samples, tc.augment, 2);
    CHECK(static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total()) ==
          r.best_val_acc);

    // And the saved checkpoint restores it bit for bit.
    SiViTModel loaded = SiViTModel::load(r.checkpoint_path);
    CHECK(flatten_params(loaded) == flatten_params(r.model));
}

TEST_CASE("mix strategies and split updates run end to end") {
    Dataset train = tiny_dataset(8, 8, 111);
    Dataset val = tiny_dataset(4, 4, 112);

    for (Strategy s : {Strategy::cutout, Strategy::mixup, Strategy::cutmix}) {
        TrainConfig tc = tiny_train_config(s);
        tc.epochs = 1;
        TrainResult r = train_model(tiny_model_config(), tc, train, val);
        REQUIRE(r.rows.size() == 1);
        CHECK(r.rows[0].l_cls > 0.0);
        CHECK(r.rows[0].l_reg_usf == 0.0);
        CHECK(r.rows[0].l_reg_sf == 0.0);
        CHECK(std::isfinite(r.rows[0].train_loss));
    }

    TrainConfig two = tiny_train_config(Strategy::si);
    two.two_updates = true;
    two.epochs = 1;
    TrainResult rt = train_model(tiny_model_config(), two, train, val);
    CHECK(rt.rows[0].l_cls > 0.0);
    CHECK(rt.rows[0].l_reg_usf > 0.0);
    CHECK(rt.rows[0].l_reg_sf > 0.0);
    CHECK(rt.rows[0].train_loss ==
          doctest::Approx(rt.rows[0].l_cls + rt.rows[0].l_reg_usf + rt.rows[0].l_reg_sf)
              .epsilon(1e-9));
}

TEST_CASE("training rejects inconsistent inputs") {
    Dataset train = tiny_dataset(4, 4, 113);
    Dataset val = tiny_dataset(2, 2, 114);
    TrainConfig tc = tiny_train_config(Strategy::si);
    tc.batch_size = 4;

    Dataset empty;
    empty.k_categories = 2;
    CHECK_THROWS_AS(train_model(tiny_model_config(), tc, empty, val), ConfigError);

    Dataset bad_k = val;
    bad_k.k_categories = 3;
    CHECK_THROWS_AS(train_model(tiny_model_config(), tc, train, bad_k), ConfigError);

    ModelConfig wrong_size = tiny_model_config();
    wrong_size.vit.image_size = 32;
    wrong_size.vit.patch_size = 8;
    CHECK_THROWS_AS(train_model(wrong_size, tc, train, val), ConfigError);

    TrainConfig big_batch = tc;
    big_batch.batch_size = 64;  // no full batch fits -> zero steps per epoch
    CHECK_THROWS_AS(train_model(tiny_model_config(), big_batch, train, val), ConfigError);
}
