// Command-line driver: dataset generation, seeded training, strategy
// comparison, patch-size sweeps, gradient checking, and attribution maps.
//
// Exit codes are a stable contract: 0 success, 2 usage or configuration
// problems, 3 numerical failures, 4 I/O failures.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "sivit/datasynth.hpp"
#include "sivit/errors.hpp"
#include "sivit/evalviz.hpp"
#include "sivit/model.hpp"
#include "sivit/train.hpp"
#include "sivit/verify.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace sivit;

namespace {

constexpr const char* kVersion = "sivit 0.1.0";
constexpr double kGradTolerance = 1e-4;

// SIVIT_VERBOSE=0 silences progress lines on stderr; anything else keeps them.
bool verbose() {
    const char* v = std::getenv("SIVIT_VERBOSE");
    return v == nullptr || std::string(v) != "0";
}

void info(const std::string& line) {
    if (verbose()) std::fprintf(stderr, "%s\n", line.c_str());
}

std::string fmt10(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

std::string csv_safe(std::string s) {
    for (char& c : s) {
        if (c == ',' || c == '\n' || c == '\r') c = ';';
    }
    return s;
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << text;
    out.flush();
    if (!out) throw IoError("write failed: " + path.string());
}

// ---- shared flag bundles ---------------------------------------------

struct ModelFlags {
    int patch_size = 8;
    int embed_dim = 64;
    int depth = 2;
    int heads = 4;
    int mlp_ratio = 4;
    bool pool_then_mlp = false;
};

struct TrainFlags {
    std::string data;
    std::string out;
    std::string strategy = "si";
    std::string head_weights = "1:1:1";
    int epochs = 50;
    int batch_size = 16;
    double lr = 6e-4;
    double weight_decay = 0.05;
    bool two_updates = false;
    double cutout_frac = 0.5;
    double mix_alpha = 1.0;
    bool no_augment = false;
    bool raw_labels = false;
    std::uint64_t seed = 0;
};

void add_model_flags(CLI::App* cmd, ModelFlags& mf) {
    cmd->add_option("--patch-size", mf.patch_size, "patch side in pixels")
        ->capture_default_str();
    cmd->add_option("--embed-dim", mf.embed_dim, "token width")->capture_default_str();
    cmd->add_option("--depth", mf.depth, "transformer blocks")->capture_default_str();
    cmd->add_option("--heads", mf.heads, "attention heads")->capture_default_str();
    cmd->add_option("--mlp-ratio", mf.mlp_ratio, "MLP expansion factor")
        ->capture_default_str();
    cmd->add_flag("--pool-then-mlp", mf.pool_then_mlp,
                  "pool patch tokens before the regression MLP");
}

void add_train_flags(CLI::App* cmd, TrainFlags& tf) {
    cmd->add_option("--data", tf.data,
                    "dataset root holding train/ and val/ (test/ for evaluation)")
        ->required();
    cmd->add_option("--out", tf.out, "output directory for artifacts")->required();
    cmd->add_option("--head-weights", tf.head_weights,
                    "loss weights as cls:reg_unshuffled:reg_shuffled")
        ->capture_default_str();
    cmd->add_option("--epochs", tf.epochs, "training epochs")->capture_default_str();
    cmd->add_option("--batch-size", tf.batch_size, "images per step")->capture_default_str();
    cmd->add_option("--lr", tf.lr, "peak learning rate")->capture_default_str();
    cmd->add_option("--weight-decay", tf.weight_decay, "decoupled weight decay")
        ->capture_default_str();
    cmd->add_flag("--two-updates", tf.two_updates,
                  "separate optimizer updates for the shuffled and un-shuffled passes");
    cmd->add_option("--cutout-frac", tf.cutout_frac, "cutout square side fraction")
        ->capture_default_str();
    cmd->add_option("--mix-alpha", tf.mix_alpha, "Beta(alpha,alpha) for mixup/cutmix")
        ->capture_default_str();
    cmd->add_flag("--no-augment", tf.no_augment, "disable train-time augmentation");
    cmd->add_flag("--raw-labels", tf.raw_labels,
                  "raw count bag labels instead of patch-count-normalized ones");
}

HeadWeights parse_head_weights(const std::string& s) {
    std::vector<double> parts;
    std::size_t start = 0;
    while (start <= s.size()) {
        const std::size_t colon = s.find(':', start);
        const std::string tok =
            s.substr(start, colon == std::string::npos ? std::string::npos : colon - start);
        try {
            std::size_t used = 0;
            parts.push_back(std::stod(tok, &used));
            if (used != tok.size()) throw std::invalid_argument(tok);
        } catch (const std::exception&) {
            throw ConfigError("head weights must look like a:b:c, got '" + s + "'");
        }
        if (colon == std::string::npos) break;
        start = colon + 1;
    }
    if (parts.size() != 3) {
        throw ConfigError("head weights need exactly three values, got '" + s + "'");
    }
    HeadWeights w;
    w.cls = parts[0];
    w.reg_usf = parts[1];
    w.reg_sf = parts[2];
    return w;
}

Dataset load_split(const std::string& data_dir, const char* split) {
    const fs::path p = fs::path(data_dir) / split;
    if (!fs::exists(p)) throw IoError("dataset split missing: " + p.string());
    return read_dataset(p.string());
}

ModelConfig make_model_config(const ModelFlags& mf, const Dataset& train) {
    ModelConfig mc;
    mc.vit.image_size = train.samples.front().image.w;
    mc.vit.patch_size = mf.patch_size;
    mc.vit.embed_dim = mf.embed_dim;
    mc.vit.depth = mf.depth;
    mc.vit.heads = mf.heads;
    mc.vit.mlp_ratio = mf.mlp_ratio;
    mc.k_categories = train.k_categories;
    mc.reg_pool_then_mlp = mf.pool_then_mlp;
    return mc;
}

TrainConfig make_train_config(const TrainFlags& tf, Strategy strategy, std::uint64_t seed,
                              const std::string& out_dir) {
    TrainConfig tc;
    tc.epochs = tf.epochs;
    tc.batch_size = tf.batch_size;
    tc.lr = tf.lr;
    tc.weight_decay = tf.weight_decay;
    tc.strategy = strategy;
    tc.head_weights = parse_head_weights(tf.head_weights);
    tc.two_updates = tf.two_updates;
    tc.cutout_frac = tf.cutout_frac;
    tc.mix_alpha = tf.mix_alpha;
    tc.augment.enabled = !tf.no_augment;
    tc.seed = seed;
    tc.normalized_labels = !tf.raw_labels;
    tc.out_dir = out_dir;
    return tc;
}

json manifest_json(const char* command, const TrainFlags& tf, const ModelConfig& mc,
                   const TrainConfig& tc) {
    json j;
    j["tool"] = kVersion;
    j["command"] = command;
    j["data"] = tf.data;
    j["model"] = {{"image_size", mc.vit.image_size},
                  {"patch_size", mc.vit.patch_size},
                  {"embed_dim", mc.vit.embed_dim},
                  {"depth", mc.vit.depth},
                  {"heads", mc.vit.heads},
                  {"mlp_ratio", mc.vit.mlp_ratio},
                  {"k_categories", mc.k_categories},
                  {"pool_then_mlp", mc.reg_pool_then_mlp}};
    j["train"] = {{"strategy", strategy_name(tc.strategy)},
                  {"epochs", tc.epochs},
                  {"batch_size", tc.batch_size},
                  {"lr", tc.lr},
                  {"weight_decay", tc.weight_decay},
                  {"head_weights",
                   {tc.head_weights.cls, tc.head_weights.reg_usf, tc.head_weights.reg_sf}},
                  {"two_updates", tc.two_updates},
                  {"cutout_frac", tc.cutout_frac},
                  {"mix_alpha", tc.mix_alpha},
                  {"augment", tc.augment.enabled},
                  {"normalized_labels", tc.normalized_labels},
                  {"seed", tc.seed}};
    j["artifacts"] = {{"manifest", tc.out_dir + "/manifest.json"},
                      {"metrics_csv", tc.out_dir + "/metrics.csv"},
                      {"eval_csv", tc.out_dir + "/eval.csv"},
                      {"checkpoint", tc.out_dir + "/best.ckpt"}};
    return j;
}

// One seeded training run: manifest first, then the loop, then eval.csv with
// a val row (plus a test row when a test split exists). Returns the test (or
// val, if no test split) metrics.
MetricSet run_training(const char* command, const TrainFlags& tf, const ModelFlags& mf,
                       Strategy strategy, std::uint64_t seed, const std::string& out_dir,
                       const Dataset& train, const Dataset& val, const Dataset* test) {
    ModelConfig mc = make_model_config(mf, train);
    TrainConfig tc = make_train_config(tf, strategy, seed, out_dir);
    fs::create_directories(out_dir);
    write_text(fs::path(out_dir) / "manifest.json",
               manifest_json(command, tf, mc, tc).dump(2) + "\n");

    info("training " + strategy_name(strategy) + " seed " + std::to_string(seed) + " for " +
         std::to_string(tc.epochs) + " epochs -> " + out_dir);
    TrainResult r = train_model(mc, tc, train, val);
    info("  best validation accuracy " + fmt10(r.best_val_acc) + " at epoch " +
         std::to_string(r.best_epoch));

    const int k = train.k_categories;
    std::vector<std::pair<std::string, MetricSet>> rows;
    rows.emplace_back("val", metrics(evaluate(r.model, val.samples, tc.augment, k)));
    if (test != nullptr) {
        rows.emplace_back("test", metrics(evaluate(r.model, test->samples, tc.augment, k)));
    }
    write_metrics_csv((fs::path(out_dir) / "eval.csv").string(), rows);
    return rows.back().second;
}

// ---- subcommands -----------------------------------------------------

struct GenerateFlags {
    std::string out;
    std::uint64_t seed = 0;
    int pos = 16;
    int neg = 16;
    int image_size = 64;
    int k = 2;
};

int cmd_generate(const GenerateFlags& gf) {
    GenConfig gc;
    gc.image_size = gf.image_size;
    gc.k_categories = gf.k;
    gc.seed = gf.seed;
    std::vector<ImageSample> samples = generate_dataset(gc, gf.pos, gf.neg);
    fs::create_directories(gf.out);
    write_dataset(samples, gf.out, gf.k);
    info("wrote " + std::to_string(gf.pos) + " positive + " + std::to_string(gf.neg) +
         " negative samples to " + gf.out);
    return 0;
}

int cmd_train(const TrainFlags& tf, const ModelFlags& mf, const std::string& strategy,
              std::uint64_t seed) {
    Dataset train = load_split(tf.data, "train");
    Dataset val = load_split(tf.data, "val");
    Dataset test;
    const bool has_test = fs::exists(fs::path(tf.data) / "test");
    if (has_test) test = load_split(tf.data, "test");
    run_training("train", tf, mf, parse_strategy(strategy), seed, tf.out, train, val,
                 has_test ? &test : nullptr);
    return 0;
}

int cmd_compare(const TrainFlags& tf, const ModelFlags& mf,
                const std::vector<std::string>& strategy_names,
                const std::vector<std::uint64_t>& seeds) {
    if (strategy_names.empty() || seeds.empty()) {
        throw ConfigError("compare needs at least one strategy and one seed");
    }
    std::vector<Strategy> strategies;
    for (const auto& name : strategy_names) strategies.push_back(parse_strategy(name));

    Dataset train = load_split(tf.data, "train");
    Dataset val = load_split(tf.data, "val");
    Dataset test = load_split(tf.data, "test");

    std::string csv = "strategy,accuracy,precision,recall,specificity,f1\n";
    std::printf("%-10s %9s %9s %9s %11s %9s\n", "strategy", "accuracy", "precision",
                "recall", "specificity", "f1");
    for (const Strategy s : strategies) {
        std::vector<MetricSet> per_seed;
        for (const std::uint64_t seed : seeds) {
            const std::string run_dir =
                (fs::path(tf.out) / strategy_name(s) / ("seed" + std::to_string(seed)))
                    .string();
            per_seed.push_back(run_training("compare", tf, mf, s, seed, run_dir, train,
                                            val, &test));
        }
        auto med = [&](double MetricSet::* field) {
            std::vector<double> v;
            for (const MetricSet& m : per_seed) v.push_back(m.*field);
            return median(std::move(v));
        };
        const double acc = med(&MetricSet::accuracy), prec = med(&MetricSet::precision),
                     rec = med(&MetricSet::recall), spc = med(&MetricSet::specificity),
                     f1 = med(&MetricSet::f1);
        csv += strategy_name(s) + "," + fmt10(acc) + "," + fmt10(prec) + "," + fmt10(rec) +
               "," + fmt10(spc) + "," + fmt10(f1) + "\n";
        std::printf("%-10s %9.4f %9.4f %9.4f %11.4f %9.4f\n", strategy_name(s).c_str(),
                    acc, prec, rec, spc, f1);
    }
    fs::create_directories(tf.out);
    write_text(fs::path(tf.out) / "compare.csv", csv);
    info("wrote " + (fs::path(tf.out) / "compare.csv").string());
    return 0;
}

int cmd_sweep_patch(const TrainFlags& tf, const ModelFlags& mf, const std::string& strategy,
                    std::uint64_t seed, const std::vector<int>& sizes) {
    if (sizes.empty()) throw ConfigError("sweep-patch needs at least one size");
    const Strategy strat = parse_strategy(strategy);
    Dataset train = load_split(tf.data, "train");
    Dataset val = load_split(tf.data, "val");
    Dataset test = load_split(tf.data, "test");

    std::string csv = "patch_size,status,accuracy,precision,recall,specificity,f1\n";
    for (const int size : sizes) {
        try {
            ModelFlags run_mf = mf;
            run_mf.patch_size = size;
            // Surface geometry problems before any training work starts.
            make_model_config(run_mf, train).validate();
            const std::string run_dir =
                (fs::path(tf.out) / ("patch" + std::to_string(size))).string();
            const MetricSet m = run_training("sweep-patch", tf, run_mf, strat, seed,
                                             run_dir, train, val, &test);
            csv += std::to_string(size) + ",ok," + fmt10(m.accuracy) + "," +
                   fmt10(m.precision) + "," + fmt10(m.recall) + "," + fmt10(m.specificity) +
                   "," + fmt10(m.f1) + "\n";
        } catch (const IoError&) {
            throw;  // broken artifacts directory would fail every row the same way
        } catch (const std::runtime_error& e) {
            // Bad sizes get their own row and the sweep moves on.
            csv += std::to_string(size) + "," + csv_safe(e.what()) + ",,,,,\n";
            info("patch size " + std::to_string(size) + " skipped: " + e.what());
        }
    }
    fs::create_directories(tf.out);
    write_text(fs::path(tf.out) / "sweep.csv", csv);
    std::fputs(csv.c_str(), stdout);
    return 0;
}

int cmd_gradcheck(std::uint64_t seed) {
    std::vector<GradCheckCase> cases = gradcheck_cases();
    cases.push_back(model_gradcheck_case());
    const auto t0 = std::chrono::steady_clock::now();
    double worst = 0.0;
    std::string worst_name;
    bool all_pass = true;
    for (const GradCheckCase& c : cases) {
        const double err = c.run(seed);
        const bool pass = err < kGradTolerance;
        std::printf("%-22s max_rel_err %.3e  %s\n", c.name.c_str(), err,
                    pass ? "PASS" : "FAIL");
        if (err > worst) {
            worst = err;
            worst_name = c.name;
        }
        all_pass = all_pass && pass;
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%zu checks in %.1f s, worst %.3e (%s)\n", cases.size(), secs, worst,
                worst_name.c_str());
    if (!all_pass) {
        throw NumericError("gradient check failed at op " + worst_name +
                           " with max relative error " + fmt10(worst));
    }
    return 0;
}

int cmd_visualize(const std::string& ckpt, const std::string& data,
                  const std::string& out_dir, bool shuffled, std::uint64_t seed) {
    SiViTModel model = SiViTModel::load(ckpt);
    Dataset ds = read_dataset(data);
    const ViTConfig& vit = model.config().vit;
    if (ds.samples.empty()) throw DataError("no samples in " + data);
    if (ds.samples.front().image.w != vit.image_size) {
        throw ConfigError("dataset image size " + std::to_string(ds.samples.front().image.w) +
                          " does not match checkpoint image size " +
                          std::to_string(vit.image_size));
    }
    if (ds.k_categories != model.config().k_categories) {
        throw ConfigError("dataset has " + std::to_string(ds.k_categories) +
                          " categories, checkpoint expects " +
                          std::to_string(model.config().k_categories));
    }

    std::vector<PatchGrid> grids;
    grids.reserve(ds.samples.size());
    for (const ImageSample& s : ds.samples) grids.push_back(patchify(s, vit.patch_size));
    std::vector<Bag> bags;
    if (shuffled) {
        std::mt19937_64 rng(seed);
        bags = shuffle_distribute(grids, rng, ds.k_categories, true).first;
    } else {
        bags = unshuffle_distribute(grids, ds.k_categories, true);
    }

    fs::create_directories(out_dir);
    for (std::size_t i = 0; i < bags.size(); ++i) {
        BatchOut out = model.forward_bags({bags[i]}, /*want_reg=*/false, /*want_cls=*/true,
                                          /*mean_aggregate=*/true);
        const int target = out.cls_logits.at(0, 1) > out.cls_logits.at(0, 0) ? 1 : 0;
        const AttributionMap map = attribution(model, bags[i], target);
        write_map(map, (fs::path(out_dir) / (ds.samples[i].sample_id + "_map.pgm")).string());
    }
    info("wrote " + std::to_string(bags.size()) + " attribution maps to " + out_dir);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Shuffled-instance training for tiny vision transformers"};
    app.set_version_flag("--version", kVersion);
    app.require_subcommand(1);
    // Flags beat config-file values beat built-in defaults. Keys live under a
    // [subcommand] section (or as subcommand.key = value). Fallthrough lets
    // --config sit before or after the subcommand name.
    app.set_config("--config", "", "read defaults from a key = value file");
    auto with_config = [](CLI::App* sub) {
        sub->fallthrough();
        return sub;
    };

    GenerateFlags gf;
    CLI::App* gen =
        with_config(app.add_subcommand("generate", "write a synthetic labeled dataset"));
    gen->add_option("--out", gf.out, "output directory")->required();
    gen->add_option("--seed", gf.seed, "generator seed")->capture_default_str();
    gen->add_option("--pos", gf.pos, "positive sample count")->capture_default_str();
    gen->add_option("--neg", gf.neg, "negative sample count")->capture_default_str();
    gen->add_option("--image-size", gf.image_size, "square image side")
        ->capture_default_str();
    gen->add_option("--k", gf.k, "mask categories (category k is cancer)")
        ->capture_default_str();

    TrainFlags train_tf;
    ModelFlags train_mf;
    std::string train_strategy = "si";
    std::uint64_t train_seed = 0;
    CLI::App* train =
        with_config(app.add_subcommand("train", "train one strategy on one seed"));
    add_train_flags(train, train_tf);
    add_model_flags(train, train_mf);
    train->add_option("--strategy", train_strategy,
                      "naive|cutout|mixup|cutmix|si|usf_only")
        ->capture_default_str();
    train->add_option("--seed", train_seed, "run seed")->capture_default_str();

    TrainFlags cmp_tf;
    ModelFlags cmp_mf;
    std::vector<std::string> cmp_strategies = {"naive", "si"};
    std::vector<std::uint64_t> cmp_seeds = {1, 2, 3};
    CLI::App* cmp = with_config(app.add_subcommand(
        "compare", "train several strategies and report per-strategy test medians"));
    add_train_flags(cmp, cmp_tf);
    add_model_flags(cmp, cmp_mf);
    cmp->add_option("--strategies", cmp_strategies, "comma-separated strategy list")
        ->delimiter(',')
        ->capture_default_str();
    cmp->add_option("--seeds", cmp_seeds, "comma-separated seed list")
        ->delimiter(',')
        ->capture_default_str();

    TrainFlags sweep_tf;
    ModelFlags sweep_mf;
    std::string sweep_strategy = "si";
    std::uint64_t sweep_seed = 1;
    std::vector<int> sweep_sizes;
    CLI::App* sweep = with_config(
        app.add_subcommand("sweep-patch", "train once per patch size and tabulate"));
    add_train_flags(sweep, sweep_tf);
    add_model_flags(sweep, sweep_mf);
    sweep->add_option("--strategy", sweep_strategy, "strategy for every run")
        ->capture_default_str();
    sweep->add_option("--seed", sweep_seed, "run seed")->capture_default_str();
    sweep->add_option("--sizes", sweep_sizes, "comma-separated patch sizes")
        ->delimiter(',')
        ->required();

    std::uint64_t grad_seed = 1;
    CLI::App* grad = with_config(app.add_subcommand(
        "gradcheck", "finite-difference check of every differentiable op"));
    grad->add_option("--seed", grad_seed, "random input seed")->capture_default_str();

    std::string vis_ckpt, vis_data, vis_out;
    bool vis_shuffled = false;
    std::uint64_t vis_seed = 0;
    CLI::App* vis =
        with_config(app.add_subcommand("visualize", "render attribution maps as PGM"));
    vis->add_option("--checkpoint", vis_ckpt, "model checkpoint")->required();
    vis->add_option("--data", vis_data, "dataset directory")->required();
    vis->add_option("--out", vis_out, "output directory")->required();
    vis->add_flag("--shuffled", vis_shuffled, "shuffle patches across the set first");
    vis->add_option("--seed", vis_seed, "shuffle seed")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;  // --help/--version exit 0, usage problems exit 2
    }

    try {
        if (gen->parsed()) return cmd_generate(gf);
        if (train->parsed()) return cmd_train(train_tf, train_mf, train_strategy, train_seed);
        if (cmp->parsed()) return cmd_compare(cmp_tf, cmp_mf, cmp_strategies, cmp_seeds);
        if (sweep->parsed()) {
            return cmd_sweep_patch(sweep_tf, sweep_mf, sweep_strategy, sweep_seed,
                                   sweep_sizes);
        }
        if (grad->parsed()) return cmd_gradcheck(grad_seed);
        if (vis->parsed()) {
            return cmd_visualize(vis_ckpt, vis_data, vis_out, vis_shuffled, vis_seed);
        }
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const ContractError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const DimError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const DataError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const NumericError& e) {
        std::fprintf(stderr, "numerical failure: %s\n", e.what());
        return 3;
    } catch (const IoError& e) {
        std::fprintf(stderr, "i/o failure: %s\n", e.what());
        return 4;
    }
    return 0;
}
