#include "sivit/heads.hpp"

#include "sivit/errors.hpp"
#include "sivit/rng.hpp"

namespace sivit {

void HeadWeights::validate() const {
    if (cls < 0.0 || reg_usf < 0.0 || reg_sf < 0.0) {
        throw ConfigError("head weights must be non-negative, got (" + std::to_string(cls) +
                          ", " + std::to_string(reg_usf) + ", " + std::to_string(reg_sf) + ")");
    }
    if (cls == 0.0 && reg_usf == 0.0 && reg_sf == 0.0) {
        throw ConfigError("head weights are all zero; at least one must be positive");
    }
}

CompositeLoss composite_loss(const LossTerms& terms, const HeadWeights& weights) {
    weights.validate();

    CompositeLoss out;
    // A term participates only when it was computed and its weight is positive;
    // otherwise its breakdown entry stays exactly 0.0 and the graph is untouched.
    auto fold = [&](const Tensor& term, double w, double* part) {
        if (!term.defined() || w == 0.0) return;
        if (term.numel() != 1) throw ContractError("composite loss terms must be scalars");
        *part = term.item();
        Tensor weighted = (w == 1.0) ? term : scale(term, w);
        out.total = out.total.defined() ? add(out.total, weighted) : weighted;
    };
    fold(terms.l_cls, weights.cls, &out.parts.l_cls);
    fold(terms.l_reg_usf, weights.reg_usf, &out.parts.l_reg_usf);
    fold(terms.l_reg_sf, weights.reg_sf, &out.parts.l_reg_sf);

    if (!out.total.defined()) {
        throw ContractError("composite loss has no active terms: every supplied term has zero weight");
    }
    out.parts.total = out.total.item();
    return out;
}

Heads::Heads(int embed_dim, int k_categories, std::uint64_t seed, bool pool_then_mlp)
    : embed_dim_(embed_dim), k_categories_(k_categories), pool_then_mlp_(pool_then_mlp) {
    if (embed_dim < 1) throw ConfigError("embed_dim must be >= 1, got " + std::to_string(embed_dim));
    if (k_categories < 2) {
        throw ConfigError("k_categories must be >= 2, got " + std::to_string(k_categories));
    }

    // Fixed draw order (fc1, fc2, cls) so a seed pins every weight bit-for-bit.
    auto rng = make_rng(seed, RngStream::init_heads);
    const double sigma = 0.02;
    const int out_dim = k_categories + 1;  // bag label = (total, per-category...)
    reg_fc1_w_ = Tensor::trunc_normal({embed_dim, embed_dim}, rng, sigma, /*requires_grad=*/true);
    reg_fc1_b_ = Tensor::zeros({embed_dim}, /*requires_grad=*/true);
    reg_fc2_w_ = Tensor::trunc_normal({embed_dim, out_dim}, rng, sigma, /*requires_grad=*/true);
    reg_fc2_b_ = Tensor::zeros({out_dim}, /*requires_grad=*/true);
    cls_w_ = Tensor::trunc_normal({embed_dim, 2}, rng, sigma, /*requires_grad=*/true);
    cls_b_ = Tensor::zeros({2}, /*requires_grad=*/true);
}

Tensor Heads::reg_mlp(const Tensor& x) const {
    Tensor h = gelu(add_rowvec(matmul(x, reg_fc1_w_), reg_fc1_b_));
    return add_rowvec(matmul(h, reg_fc2_w_), reg_fc2_b_);
}

Tensor Heads::reg_predict(const Tensor& patch_tokens, int n_images, bool mean_aggregate) const {
    if (n_images < 1) throw ContractError("reg_predict needs n_images >= 1");
    if (patch_tokens.rank() != 2 || patch_tokens.dim(1) != embed_dim_) {
        throw DimError("reg_predict expects (tokens, " + std::to_string(embed_dim_) +
                       "), got " + shape_str(patch_tokens.shape()));
    }
    const int rows = patch_tokens.dim(0);
    if (rows == 0 || rows % n_images != 0) {
        throw DimError("reg_predict: " + std::to_string(rows) +
                       " token rows do not split evenly over " + std::to_string(n_images) +
                       " images");
    }
    const int n = rows / n_images;
    const int out_dim = k_categories_ + 1;

    // Aggregation over one image's rows, kept as a (1, width) row so the
    // per-image results stack back into a batch.
    auto pool_row = [&](const Tensor& image_rows, int width) {
        Tensor pooled = mean_aggregate ? mean_axis0(image_rows) : sum_axis0(image_rows);
        return reshape(pooled, {1, width});
    };

    std::vector<Tensor> per_image;
    per_image.reserve(static_cast<std::size_t>(n_images));
    if (pool_then_mlp_) {
        // Ablation variant: pool tokens per image first, then run the MLP once.
        for (int b = 0; b < n_images; ++b) {
            per_image.push_back(pool_row(slice_rows(patch_tokens, b * n, (b + 1) * n), embed_dim_));
        }
        return reg_mlp(n_images == 1 ? per_image[0] : concat_rows(per_image));
    }
    // Default: shared MLP per token, then aggregate each image's predictions.
    Tensor per_token = reg_mlp(patch_tokens);
    for (int b = 0; b < n_images; ++b) {
        per_image.push_back(pool_row(slice_rows(per_token, b * n, (b + 1) * n), out_dim));
    }
    return n_images == 1 ? per_image[0] : concat_rows(per_image);
}

Tensor Heads::cls_logits(const Tensor& cls_tokens) const {
    if (cls_tokens.rank() != 2 || cls_tokens.dim(1) != embed_dim_) {
        throw DimError("cls_logits expects (images, " + std::to_string(embed_dim_) +
                       "), got " + shape_str(cls_tokens.shape()));
    }
    return add_rowvec(matmul(cls_tokens, cls_w_), cls_b_);
}

std::vector<std::pair<std::string, Tensor>> Heads::named_params() const {
    return {
        {"reg.fc1.w", reg_fc1_w_}, {"reg.fc1.b", reg_fc1_b_},
        {"reg.fc2.w", reg_fc2_w_}, {"reg.fc2.b", reg_fc2_b_},
        {"cls.w", cls_w_},         {"cls.b", cls_b_},
    };
}

}  // namespace sivit
