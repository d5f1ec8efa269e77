#include "sivit/model.hpp"

#include <algorithm>
#include <numeric>
#include <random>

#include <json.hpp>

#include "sivit/checkpoint.hpp"
#include "sivit/errors.hpp"

namespace sivit {

void ModelConfig::validate() const {
    vit.validate();
    if (k_categories < 2) {
        throw ConfigError("k_categories must be >= 2, got " + std::to_string(k_categories));
    }
}

SiViTModel::SiViTModel(const ModelConfig& cfg)
    : cfg_(cfg),
      backbone_(cfg.vit),  // validates the vit geometry
      heads_(cfg.vit.embed_dim, cfg.k_categories, cfg.vit.seed, cfg.reg_pool_then_mlp) {}

BatchOut SiViTModel::forward_bags(const std::vector<Bag>& bags, bool want_reg, bool want_cls,
                                  bool mean_aggregate, bool want_trace) const {
    if (bags.empty()) throw ContractError("forward_bags: empty batch");
    const int n = cfg_.vit.n_patches();
    const int pd = cfg_.vit.patch_dim();
    const int B = static_cast<int>(bags.size());
    for (const Bag& bag : bags) {
        if (bag.p != cfg_.vit.patch_size || bag.n != n) {
            throw DimError("forward_bags: bag geometry (n=" + std::to_string(bag.n) +
                           ", p=" + std::to_string(bag.p) + ") does not match model (n=" +
                           std::to_string(n) + ", p=" + std::to_string(cfg_.vit.patch_size) + ")");
        }
    }

    // One leaf holding every patch of the batch, bag-major.
    std::vector<double> flat;
    flat.reserve(static_cast<std::size_t>(B) * n * pd);
    for (const Bag& bag : bags) {
        for (const auto& patch : bag.patches) {
            if (static_cast<int>(patch.size()) != pd) {
                throw DimError("forward_bags: patch has " + std::to_string(patch.size()) +
                               " values, expected " + std::to_string(pd));
            }
            flat.insert(flat.end(), patch.begin(), patch.end());
        }
    }
    Tensor pixels = Tensor::from({B * n, pd}, std::move(flat));

    Tensor tokens = backbone_.embed_batch(pixels, B);
    BatchOut out;
    Tensor final_tokens =
        backbone_.forward_batch(tokens, B, want_trace ? &out.trace : nullptr);

    const int L = n + 1;
    if (want_cls) {
        std::vector<int> cls_rows(static_cast<std::size_t>(B));
        for (int b = 0; b < B; ++b) cls_rows[static_cast<std::size_t>(b)] = b * L;
        out.cls_logits = heads_.cls_logits(gather_rows(final_tokens, cls_rows));
    }
    if (want_reg) {
        std::vector<int> patch_rows;
        patch_rows.reserve(static_cast<std::size_t>(B) * n);
        for (int b = 0; b < B; ++b) {
            for (int i = 1; i <= n; ++i) patch_rows.push_back(b * L + i);
        }
        out.reg_pred =
            heads_.reg_predict(gather_rows(final_tokens, patch_rows), B, mean_aggregate);
    }
    return out;
}

std::vector<std::pair<std::string, Tensor>> SiViTModel::named_params() const {
    std::vector<std::pair<std::string, Tensor>> out;
    for (auto& [name, t] : backbone_.named_params()) out.emplace_back("backbone." + name, t);
    for (auto& [name, t] : heads_.named_params()) out.emplace_back("heads." + name, t);
    return out;
}

void SiViTModel::zero_grad() const {
    for (auto& [name, t] : named_params()) {
        (void)name;
        t.zero_grad();
    }
}

void SiViTModel::save(const std::string& path) const {
    nlohmann::json meta;
    meta["image_size"] = cfg_.vit.image_size;
    meta["patch_size"] = cfg_.vit.patch_size;
    meta["embed_dim"] = cfg_.vit.embed_dim;
    meta["depth"] = cfg_.vit.depth;
    meta["heads"] = cfg_.vit.heads;
    meta["mlp_ratio"] = cfg_.vit.mlp_ratio;
    meta["seed"] = cfg_.vit.seed;
    meta["k_categories"] = cfg_.k_categories;
    meta["reg_pool_then_mlp"] = cfg_.reg_pool_then_mlp;
    save_params(path, meta.dump(), named_params());
}

SiViTModel SiViTModel::load(const std::string& path) {
    LoadedParams loaded = load_params(path);
    ModelConfig cfg;
    try {
        nlohmann::json meta = nlohmann::json::parse(loaded.meta_json);
        cfg.vit.image_size = meta.at("image_size").get<int>();
        cfg.vit.patch_size = meta.at("patch_size").get<int>();
        cfg.vit.embed_dim = meta.at("embed_dim").get<int>();
        cfg.vit.depth = meta.at("depth").get<int>();
        cfg.vit.heads = meta.at("heads").get<int>();
        cfg.vit.mlp_ratio = meta.at("mlp_ratio").get<int>();
        cfg.vit.seed = meta.at("seed").get<std::uint64_t>();
        cfg.k_categories = meta.at("k_categories").get<int>();
        cfg.reg_pool_then_mlp = meta.at("reg_pool_then_mlp").get<bool>();
    } catch (const nlohmann::json::exception& e) {
        throw IoError("checkpoint " + path + ": bad meta: " + e.what());
    }

    SiViTModel model(cfg);
    auto params = model.named_params();
    if (params.size() != loaded.tensors.size()) {
        throw IoError("checkpoint " + path + ": holds " + std::to_string(loaded.tensors.size()) +
                      " tensors, model needs " + std::to_string(params.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& [want_name, param] = params[i];
        auto& [got_name, value] = loaded.tensors[i];
        if (want_name != got_name) {
            throw IoError("checkpoint " + path + ": tensor " + std::to_string(i) + " is '" +
                          got_name + "', expected '" + want_name + "'");
        }
        if (value.shape() != param.shape()) {
            throw IoError("checkpoint " + path + ": tensor '" + got_name + "' has shape " +
                          shape_str(value.shape()) + ", expected " + shape_str(param.shape()));
        }
        param.data() = value.data();
    }
    return model;
}

GradCheckCase model_gradcheck_case() {
    GradCheckCase c;
    c.name = "model_composite";
    c.run = [](uint64_t seed) {
        ViTConfig vit;
        vit.image_size = 8;
        vit.patch_size = 4;
        vit.embed_dim = 8;
        vit.depth = 1;
        vit.heads = 2;
        vit.mlp_ratio = 2;
        vit.seed = seed + 17;
        Backbone bb(vit);
        Heads heads(vit.embed_dim, 2, vit.seed);
        const int B = 2, n = vit.n_patches(), L = n + 1;

        std::vector<int> cls_rows, patch_rows;
        for (int b = 0; b < B; ++b) {
            cls_rows.push_back(b * L);
            for (int i = 1; i < L; ++i) patch_rows.push_back(b * L + i);
        }
        std::mt19937_64 rng(seed);
        std::vector<int> perm(static_cast<std::size_t>(B * n));
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);

        std::uniform_real_distribution<double> unit(0.0, 1.0);
        std::vector<double> usf_target, sf_target;
        for (int i = 0; i < B * 3; ++i) usf_target.push_back(unit(rng));
        for (int i = 0; i < B * 3; ++i) sf_target.push_back(unit(rng));
        const std::vector<int> labels = {1, 0};

        Tensor x0 = Tensor::randn({B * n, vit.patch_dim()}, rng, 0.5, true);
        return grad_check(
            [&](const Tensor& x) {
                Tensor out = bb.forward_batch(bb.embed_batch(x, B), B);
                Tensor cls = heads.cls_logits(gather_rows(out, cls_rows));
                Tensor reg = heads.reg_predict(gather_rows(out, patch_rows), B, true);
                // Second regression pass over the same pixels routed through a
                // batch-wide patch permutation, as in shuffled training.
                Tensor xs = gather_rows(x, perm);
                Tensor outs = bb.forward_batch(bb.embed_batch(xs, B), B);
                Tensor reg_sf = heads.reg_predict(gather_rows(outs, patch_rows), B, true);
                return add(add(cross_entropy_logits(cls, labels),
                               mse_loss(reg, usf_target)),
                           mse_loss(reg_sf, sf_target));
            },
            x0, 1e-5, /*max_coords=*/60, /*coord_seed=*/seed + 1);
    };
    return c;
}

}  // namespace sivit
