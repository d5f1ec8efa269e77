#include "sivit/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "sivit/errors.hpp"
#include "sivit/optimizer.hpp"
#include "sivit/rng.hpp"

namespace sivit {

namespace fs = std::filesystem;

Strategy parse_strategy(const std::string& name) {
    if (name == "naive") return Strategy::naive;
    if (name == "cutout") return Strategy::cutout;
    if (name == "mixup") return Strategy::mixup;
    if (name == "cutmix") return Strategy::cutmix;
    if (name == "si") return Strategy::si;
    if (name == "usf_only") return Strategy::usf_only;
    throw ConfigError("unknown strategy '" + name +
                      "' (expected naive|cutout|mixup|cutmix|si|usf_only)");
}

std::string strategy_name(Strategy s) {
    switch (s) {
        case Strategy::naive: return "naive";
        case Strategy::cutout: return "cutout";
        case Strategy::mixup: return "mixup";
        case Strategy::cutmix: return "cutmix";
        case Strategy::si: return "si";
        case Strategy::usf_only: return "usf_only";
    }
    throw ContractError("unreachable strategy value");
}

bool strategy_uses_reg(Strategy s) { return s == Strategy::si || s == Strategy::usf_only; }

bool strategy_uses_shuffle(Strategy s) { return s == Strategy::si; }

void TrainConfig::validate() const {
    if (epochs < 1) throw ConfigError("epochs must be >= 1, got " + std::to_string(epochs));
    if (batch_size < 1) throw ConfigError("batch size must be >= 1");
    if ((strategy == Strategy::mixup || strategy == Strategy::cutmix) && batch_size < 2) {
        throw ConfigError(strategy_name(strategy) + " needs batch size >= 2");
    }
    if (lr <= 0.0) throw ConfigError("learning rate must be positive");
    if (weight_decay < 0.0) throw ConfigError("weight decay must be non-negative");
    if (cutout_frac <= 0.0 || cutout_frac > 1.0) {
        throw ConfigError("cutout fraction must be in (0, 1]");
    }
    if (mix_alpha <= 0.0) throw ConfigError("mix alpha must be positive");
    if (divergence_threshold <= 0.0) throw ConfigError("divergence threshold must be positive");
    augment.validate();
    head_weights.validate();

    const bool active_cls = head_weights.cls > 0.0;
    const bool active_usf = strategy_uses_reg(strategy) && head_weights.reg_usf > 0.0;
    const bool active_sf = strategy_uses_shuffle(strategy) && head_weights.reg_sf > 0.0;
    if (!active_cls && !active_usf && !active_sf) {
        throw ConfigError("strategy " + strategy_name(strategy) +
                          " has no active loss terms under these head weights");
    }
}

// ---- mix augmentations ----------------------------------------------

void apply_cutout(std::vector<ImageSample>& batch, double size_frac, std::mt19937_64& rng) {
    if (size_frac <= 0.0 || size_frac > 1.0) {
        throw ContractError("cutout fraction must be in (0, 1]");
    }
    for (ImageSample& s : batch) {
        const int w = s.image.w, h = s.image.h;
        const int side = std::min({w, h, std::max(1, static_cast<int>(std::lround(
                                                         size_frac * std::min(w, h))))});
        std::uniform_int_distribution<int> dx(0, w - side), dy(0, h - side);
        const int x0 = dx(rng), y0 = dy(rng);
        for (int y = y0; y < y0 + side; ++y) {
            for (int x = x0; x < x0 + side; ++x) {
                double* px = s.image.at(x, y);
                px[0] = px[1] = px[2] = 0.0;
            }
        }
    }
}

void mixup_pair(ImageSample& a, const ImageSample& b, double lambda) {
    if (a.image.w != b.image.w || a.image.h != b.image.h) {
        throw ContractError("mixup over differently sized images");
    }
    if (lambda < 0.0 || lambda > 1.0) throw ContractError("mixup lambda must be in [0, 1]");
    for (std::size_t i = 0; i < a.image.px.size(); ++i) {
        a.image.px[i] = lambda * a.image.px[i] + (1.0 - lambda) * b.image.px[i];
    }
}

double cutmix_paste(ImageSample& a, const ImageSample& b, int x0, int y0, int w, int h) {
    if (a.image.w != b.image.w || a.image.h != b.image.h) {
        throw ContractError("cutmix over differently sized images");
    }
    const int W = a.image.w, H = a.image.h;
    const int cx0 = std::clamp(x0, 0, W), cy0 = std::clamp(y0, 0, H);
    const int cx1 = std::clamp(x0 + w, 0, W), cy1 = std::clamp(y0 + h, 0, H);
    long area = 0;
    for (int y = cy0; y < cy1; ++y) {
        for (int x = cx0; x < cx1; ++x) {
            const double* src = b.image.at(x, y);
            double* dst = a.image.at(x, y);
            dst[0] = src[0];
            dst[1] = src[1];
            dst[2] = src[2];
            ++area;
        }
    }
    return static_cast<double>(area) / (static_cast<double>(W) * H);
}

namespace {

std::vector<double> onehot2(int label) {
    return label == 1 ? std::vector<double>{0.0, 1.0} : std::vector<double>{1.0, 0.0};
}

double draw_beta(double alpha, std::mt19937_64& rng) {
    std::gamma_distribution<double> gamma(alpha, 1.0);
    const double x = gamma(rng);
    const double y = gamma(rng);
    const double s = x + y;
    return s > 0.0 ? x / s : 0.5;
}

std::vector<int> partner_permutation(std::size_t n, std::mt19937_64& rng) {
    std::vector<int> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    return perm;
}

}  // namespace

std::vector<std::vector<double>> apply_mixup(std::vector<ImageSample>& batch, double alpha,
                                             std::mt19937_64& rng) {
    if (batch.size() < 2) throw ContractError("mixup needs at least two samples");
    const double lambda = draw_beta(alpha, rng);
    const std::vector<int> perm = partner_permutation(batch.size(), rng);
    const std::vector<ImageSample> original = batch;

    std::vector<std::vector<double>> targets(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const ImageSample& other = original[static_cast<std::size_t>(perm[i])];
        mixup_pair(batch[i], other, lambda);
        const auto ta = onehot2(original[i].class_label);
        const auto tb = onehot2(other.class_label);
        targets[i] = {lambda * ta[0] + (1.0 - lambda) * tb[0],
                      lambda * ta[1] + (1.0 - lambda) * tb[1]};
    }
    return targets;
}

std::vector<std::vector<double>> apply_cutmix(std::vector<ImageSample>& batch, double alpha,
                                              std::mt19937_64& rng) {
    if (batch.size() < 2) throw ContractError("cutmix needs at least two samples");
    const int W = batch[0].image.w, H = batch[0].image.h;
    const double lambda = draw_beta(alpha, rng);
    const double cut = std::sqrt(1.0 - lambda);
    const int rw = static_cast<int>(std::lround(W * cut));
    const int rh = static_cast<int>(std::lround(H * cut));
    std::uniform_int_distribution<int> dx(0, W - 1), dy(0, H - 1);
    const int cx = dx(rng), cy = dy(rng);
    const std::vector<int> perm = partner_permutation(batch.size(), rng);
    const std::vector<ImageSample> original = batch;

    std::vector<std::vector<double>> targets(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const ImageSample& other = original[static_cast<std::size_t>(perm[i])];
        const double pasted =
            cutmix_paste(batch[i], other, cx - rw / 2, cy - rh / 2, rw, rh);
        const auto ta = onehot2(original[i].class_label);
        const auto tb = onehot2(other.class_label);
        targets[i] = {(1.0 - pasted) * ta[0] + pasted * tb[0],
                      (1.0 - pasted) * ta[1] + pasted * tb[1]};
    }
    return targets;
}

// ---- evaluation ------------------------------------------------------

ConfusionCounts evaluate(const SiViTModel& model, const std::vector<ImageSample>& samples,
                         const AugmentConfig& augment, int k_categories, int eval_batch) {
    if (samples.empty()) throw ContractError("evaluate over an empty sample set");
    if (eval_batch < 1) throw ContractError("eval batch must be >= 1");
    const int p = model.config().vit.patch_size;
    ConfusionCounts counts;
    for (std::size_t start = 0; start < samples.size();
         start += static_cast<std::size_t>(eval_batch)) {
        const std::size_t end =
            std::min(samples.size(), start + static_cast<std::size_t>(eval_batch));
        std::vector<PatchGrid> grids;
        std::vector<int> labels;
        grids.reserve(end - start);
        for (std::size_t i = start; i < end; ++i) {
            ImageSample s = augment_eval(samples[i], augment, k_categories);
            labels.push_back(s.class_label);
            grids.push_back(patchify(s, p));
        }
        auto bags = unshuffle_distribute(grids, k_categories, /*normalize=*/true);
        BatchOut out = model.forward_bags(bags, /*want_reg=*/false, /*want_cls=*/true,
                                          /*mean_aggregate=*/true);
        for (std::size_t r = 0; r < labels.size(); ++r) {
            const int row = static_cast<int>(r);
            const int pred = out.cls_logits.at(row, 1) > out.cls_logits.at(row, 0) ? 1 : 0;
            counts.add(pred, labels[r]);
        }
    }
    return counts;
}

// ---- training loop ---------------------------------------------------

namespace {

std::vector<std::vector<double>> snapshot_params(const SiViTModel& model) {
    std::vector<std::vector<double>> out;
    for (auto& [name, t] : model.named_params()) {
        (void)name;
        out.push_back(t.data());
    }
    return out;
}

void restore_params(const SiViTModel& model, const std::vector<std::vector<double>>& vals) {
    auto params = model.named_params();
    for (std::size_t i = 0; i < params.size(); ++i) params[i].second.data() = vals[i];
}

std::vector<double> bag_targets(const std::vector<Bag>& bags) {
    std::vector<double> flat;
    for (const Bag& b : bags) {
        auto v = b.soft_label.as_vector();
        flat.insert(flat.end(), v.begin(), v.end());
    }
    return flat;
}

void append_row(std::ofstream& out, const EpochRow& r) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%d,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g\n", r.epoch,
                  r.train_loss, r.l_cls, r.l_reg_usf, r.l_reg_sf, r.val_acc, r.lr);
    out << buf;
}

}  // namespace

TrainResult train_model(const ModelConfig& model_cfg, const TrainConfig& cfg,
                        const Dataset& train_set, const Dataset& val_set) {
    cfg.validate();
    if (train_set.samples.empty()) throw ConfigError("training set is empty");
    if (val_set.samples.empty()) throw ConfigError("validation set is empty");
    if (train_set.k_categories != val_set.k_categories) {
        throw ConfigError("train and validation sets disagree on category count");
    }
    if (model_cfg.k_categories != train_set.k_categories) {
        throw ConfigError("model expects " + std::to_string(model_cfg.k_categories) +
                          " categories but the dataset has " +
                          std::to_string(train_set.k_categories));
    }
    const Image& first = train_set.samples.front().image;
    if (first.w != model_cfg.vit.image_size || first.h != model_cfg.vit.image_size) {
        throw ConfigError("model expects " + std::to_string(model_cfg.vit.image_size) +
                          "px images but the dataset is " + std::to_string(first.w) + "x" +
                          std::to_string(first.h));
    }

    const int N = static_cast<int>(train_set.samples.size());
    const int steps_per_epoch = N / cfg.batch_size;
    if (steps_per_epoch < 1) {
        throw ConfigError("batch size " + std::to_string(cfg.batch_size) +
                          " exceeds the training set (" + std::to_string(N) + " samples)");
    }
    const int total_steps = cfg.epochs * steps_per_epoch;
    const int k = train_set.k_categories;
    const int p = model_cfg.vit.patch_size;
    const bool norm = cfg.normalized_labels;

    ModelConfig mc = model_cfg;
    mc.vit.seed = cfg.seed;
    TrainResult result{SiViTModel(mc)};
    const SiViTModel& model = result.model;
    Adam adam(model.named_params(), cfg.weight_decay);

    // Zero-weight terms are skipped wholesale: the pass that would produce
    // them never runs, their CSV columns stay exactly zero, and e.g. si with
    // weights (1,0,0) builds the same graph naive does.
    const bool run_usf_reg = strategy_uses_reg(cfg.strategy) && cfg.head_weights.reg_usf > 0.0;
    const bool run_sf = strategy_uses_shuffle(cfg.strategy) && cfg.head_weights.reg_sf > 0.0;
    const bool run_cls = cfg.head_weights.cls > 0.0;

    std::ofstream metrics;
    if (!cfg.out_dir.empty()) {
        fs::create_directories(cfg.out_dir);
        result.metrics_path = (fs::path(cfg.out_dir) / "metrics.csv").string();
        metrics.open(result.metrics_path, std::ios::binary | std::ios::trunc);
        if (!metrics) throw IoError("cannot open " + result.metrics_path + " for writing");
        metrics << "epoch,train_loss,l_cls,l_reg_usf,l_reg_sf,val_acc,lr\n";
    }

    result.best_val_acc = -1.0;
    std::vector<std::vector<double>> best_values;
    int global_step = 0;

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::vector<int> order(static_cast<std::size_t>(N));
        std::iota(order.begin(), order.end(), 0);
        auto order_rng = make_rng(cfg.seed, RngStream::epoch_order, static_cast<uint64_t>(epoch));
        std::shuffle(order.begin(), order.end(), order_rng);

        double sum_total = 0.0, sum_cls = 0.0, sum_usf = 0.0, sum_sf = 0.0;
        double epoch_lr = cfg.lr;

        for (int step = 0; step < steps_per_epoch; ++step, ++global_step) {
            try {
                auto aug_rng =
                    make_rng(cfg.seed, RngStream::augment, static_cast<uint64_t>(global_step));
                std::vector<ImageSample> batch;
                batch.reserve(static_cast<std::size_t>(cfg.batch_size));
                for (int b = 0; b < cfg.batch_size; ++b) {
                    const int idx = order[static_cast<std::size_t>(step * cfg.batch_size + b)];
                    batch.push_back(augment_train(train_set.samples[static_cast<std::size_t>(idx)],
                                                  cfg.augment, k, aug_rng));
                }

                // Mix strategies rewrite pixels and produce soft class targets.
                std::vector<std::vector<double>> soft_targets;
                if (cfg.strategy == Strategy::cutout) {
                    apply_cutout(batch, cfg.cutout_frac, aug_rng);
                } else if (cfg.strategy == Strategy::mixup) {
                    soft_targets = apply_mixup(batch, cfg.mix_alpha, aug_rng);
                } else if (cfg.strategy == Strategy::cutmix) {
                    soft_targets = apply_cutmix(batch, cfg.mix_alpha, aug_rng);
                }

                std::vector<PatchGrid> grids;
                grids.reserve(batch.size());
                for (const ImageSample& s : batch) grids.push_back(patchify(s, p));

                epoch_lr = cosine_lr(global_step, total_steps, cfg.lr);

                LossTerms sf_terms;
                if (run_sf) {
                    auto strat_rng = make_rng(cfg.seed, RngStream::strategy,
                                              static_cast<uint64_t>(global_step));
                    auto [sf_bags, rec] = shuffle_distribute(grids, strat_rng, k, norm);
                    (void)rec;
                    BatchOut sf_out = model.forward_bags(sf_bags, /*want_reg=*/true,
                                                         /*want_cls=*/false, norm);
                    sf_terms.l_reg_sf = mse_loss(sf_out.reg_pred, bag_targets(sf_bags));
                }

                LossBreakdown parts;
                double step_loss = 0.0;
                if (cfg.two_updates && sf_terms.l_reg_sf.defined()) {
                    // Alternating mode: the shuffled pass updates first.
                    CompositeLoss sf_loss = composite_loss(sf_terms, cfg.head_weights);
                    model.zero_grad();
                    backward(sf_loss.total);
                    adam.step(epoch_lr);
                    parts.l_reg_sf = sf_loss.parts.l_reg_sf;
                    step_loss += sf_loss.parts.total;
                }

                LossTerms usf_terms;
                if (run_cls || run_usf_reg) {
                    auto usf_bags = unshuffle_distribute(grids, k, norm);
                    BatchOut usf_out =
                        model.forward_bags(usf_bags, run_usf_reg, run_cls, norm);
                    if (run_cls) {
                        if (soft_targets.empty()) {
                            std::vector<int> labels;
                            for (const ImageSample& s : batch) labels.push_back(s.class_label);
                            usf_terms.l_cls = cross_entropy_logits(usf_out.cls_logits, labels);
                        } else {
                            std::vector<double> flat;
                            for (const auto& t : soft_targets)
                                flat.insert(flat.end(), t.begin(), t.end());
                            usf_terms.l_cls = cross_entropy_soft(usf_out.cls_logits, flat);
                        }
                    }
                    if (run_usf_reg) {
                        usf_terms.l_reg_usf = mse_loss(usf_out.reg_pred, bag_targets(usf_bags));
                    }
                }
                if (!cfg.two_updates) usf_terms.l_reg_sf = sf_terms.l_reg_sf;

                if (usf_terms.l_cls.defined() || usf_terms.l_reg_usf.defined() ||
                    usf_terms.l_reg_sf.defined()) {
                    CompositeLoss loss = composite_loss(usf_terms, cfg.head_weights);
                    model.zero_grad();
                    backward(loss.total);
                    adam.step(epoch_lr);
                    parts.l_cls = loss.parts.l_cls;
                    parts.l_reg_usf = loss.parts.l_reg_usf;
                    if (!cfg.two_updates) parts.l_reg_sf = loss.parts.l_reg_sf;
                    step_loss += loss.parts.total;
                }

                if (!std::isfinite(step_loss) || step_loss > cfg.divergence_threshold) {
                    throw NumericError("loss diverged to " + std::to_string(step_loss));
                }
                sum_total += step_loss;
                sum_cls += parts.l_cls;
                sum_usf += parts.l_reg_usf;
                sum_sf += parts.l_reg_sf;
            } catch (const NumericError& e) {
                throw NumericError("step " + std::to_string(global_step) + ": " + e.what());
            }
        }

        ConfusionCounts counts =
            evaluate(model, val_set.samples, cfg.augment, k);
        const double val_acc =
            static_cast<double>(counts.tp + counts.tn) / static_cast<double>(counts.total());

        EpochRow row;
        row.epoch = epoch;
        row.train_loss = sum_total / steps_per_epoch;
        row.l_cls = sum_cls / steps_per_epoch;
        row.l_reg_usf = sum_usf / steps_per_epoch;
        row.l_reg_sf = sum_sf / steps_per_epoch;
        row.val_acc = val_acc;
        row.lr = epoch_lr;
        result.rows.push_back(row);
        if (metrics.is_open()) {
            append_row(metrics, row);
            metrics.flush();
        }

        // Ties keep the LATEST epoch: once a small validation set saturates,
        // the model should still collect the remaining epochs of training
        // rather than freeze at whichever epoch first touched the ceiling.
        if (val_acc >= result.best_val_acc) {
            result.best_val_acc = val_acc;
            result.best_epoch = epoch;
            best_values = snapshot_params(model);
        }
    }

    restore_params(model, best_values);
    if (!cfg.out_dir.empty()) {
        result.checkpoint_path = (fs::path(cfg.out_dir) / "best.ckpt").string();
        model.save(result.checkpoint_path);
        if (metrics.is_open() && !metrics) {
            throw IoError("write failed: " + result.metrics_path);
        }
    }
    return result;
}

}  // namespace sivit
