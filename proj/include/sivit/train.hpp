#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "sivit/augment.hpp"
#include "sivit/evalviz.hpp"
#include "sivit/heads.hpp"
#include "sivit/model.hpp"

namespace sivit {

// naive: classification head only. cutout/mixup/cutmix: classification with
// the corresponding mix augmentation and soft class targets. usf_only adds
// the regression head on un-shuffled bags; si adds the shuffled regression
// pass on top of that.
enum class Strategy { naive, cutout, mixup, cutmix, si, usf_only };

Strategy parse_strategy(const std::string& name);
std::string strategy_name(Strategy s);
bool strategy_uses_reg(Strategy s);      // regression head on un-shuffled bags
bool strategy_uses_shuffle(Strategy s);  // shuffled regression pass

struct TrainConfig {
    int epochs = 50;
    int batch_size = 16;
    double lr = 6e-4;
    double weight_decay = 0.05;
    Strategy strategy = Strategy::si;
    HeadWeights head_weights;  // (cls : reg_usf : reg_sf)
    // Two optimizer updates per batch (shuffled pass, then un-shuffled) instead
    // of one combined update.
    bool two_updates = false;
    double cutout_frac = 0.5;  // side of the erased square, fraction of image
    double mix_alpha = 1.0;    // Beta(alpha, alpha) for mixup/cutmix
    AugmentConfig augment;
    std::uint64_t seed = 0;  // drives init, epoch order, augmentation, shuffling
    // Bag labels divided by patch count (and mean-aggregated heads) so targets
    // stay patch-count independent.
    bool normalized_labels = true;
    double divergence_threshold = 1e6;
    std::string out_dir;  // when set, metrics.csv and best.ckpt land here

    void validate() const;
};

struct EpochRow {
    int epoch = 0;
    double train_loss = 0.0;
    double l_cls = 0.0;
    double l_reg_usf = 0.0;
    double l_reg_sf = 0.0;
    double val_acc = 0.0;
    double lr = 0.0;
};

struct TrainResult {
    SiViTModel model;  // parameters as of the best validation epoch (ties: latest)
    std::vector<EpochRow> rows;
    int best_epoch = 0;
    double best_val_acc = 0.0;
    std::string metrics_path;
    std::string checkpoint_path;

    explicit TrainResult(SiViTModel m) : model(std::move(m)) {}
};

// ---- mix augmentations (soft class targets over {normal, cancer}) ----

// Zero a random square of side size_frac*image in every sample. Class labels
// and masks are left alone.
void apply_cutout(std::vector<ImageSample>& batch, double size_frac, std::mt19937_64& rng);

// x_a := lambda*x_a + (1-lambda)*x_b. Pixel blend only.
void mixup_pair(ImageSample& a, const ImageSample& b, double lambda);

// Paste b's rectangle [x0,x0+w) x [y0,y0+h) into a (clipped to the frame);
// returns the pasted-area fraction of the image.
double cutmix_paste(ImageSample& a, const ImageSample& b, int x0, int y0, int w, int h);

// Each sample mixes with a shuffled partner under one Beta(alpha,alpha) draw;
// returns per-sample soft targets. Both need batch size >= 2.
std::vector<std::vector<double>> apply_mixup(std::vector<ImageSample>& batch, double alpha,
                                             std::mt19937_64& rng);
std::vector<std::vector<double>> apply_cutmix(std::vector<ImageSample>& batch, double alpha,
                                              std::mt19937_64& rng);

// ---- loop ------------------------------------------------------------

// Classification accuracy counts over a sample set, eval pipeline applied.
ConfusionCounts evaluate(const SiViTModel& model, const std::vector<ImageSample>& samples,
                         const AugmentConfig& augment, int k_categories,
                         int eval_batch = 16);

// Runs the full loop: per-epoch reshuffled batches, per-step strategy passes,
// one Adam update per batch on the weighted loss, cosine-decayed lr, per-epoch
// validation, best-validation model kept. model_cfg.vit.seed is overridden by
// cfg.seed; model_cfg.k_categories must match the dataset's.
TrainResult train_model(const ModelConfig& model_cfg, const TrainConfig& cfg,
                        const Dataset& train_set, const Dataset& val_set);

}  // namespace sivit
