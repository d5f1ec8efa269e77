#include "sivit/vit.hpp"

#include <cmath>

#include "sivit/errors.hpp"
#include "sivit/rng.hpp"

namespace sivit {

void ViTConfig::validate() const {
    if (image_size <= 0 || patch_size <= 0 || image_size % patch_size != 0) {
        throw ConfigError("vit: image size " + std::to_string(image_size) +
                          " is not divisible by patch size " + std::to_string(patch_size));
    }
    if (embed_dim <= 0 || heads <= 0 || embed_dim % heads != 0) {
        throw ConfigError("vit: embed dim " + std::to_string(embed_dim) +
                          " is not divisible by head count " + std::to_string(heads));
    }
    if (depth < 0 || mlp_ratio < 1) {
        throw ConfigError("vit: depth must be >= 0 and mlp ratio >= 1");
    }
}

Backbone::Backbone(const ViTConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    std::mt19937_64 rng = make_rng(cfg_.seed, RngStream::init_backbone);
    const int d = cfg_.embed_dim;
    const double sd = 0.02;
    w_embed_ = Tensor::trunc_normal({cfg_.patch_dim(), d}, rng, sd, true);
    b_embed_ = Tensor::zeros({d}, true);
    cls_ = Tensor::zeros({1, d}, true);
    pos_ = Tensor::trunc_normal({cfg_.n_patches() + 1, d}, rng, sd, true);
    blocks_.resize(static_cast<size_t>(cfg_.depth));
    for (auto& b : blocks_) {
        b.ln1_g = Tensor::full({d}, 1.0, true);
        b.ln1_b = Tensor::zeros({d}, true);
        b.w_qkv = Tensor::trunc_normal({d, 3 * d}, rng, sd, true);
        b.b_qkv = Tensor::zeros({3 * d}, true);
        b.w_proj = Tensor::trunc_normal({d, d}, rng, sd, true);
        b.b_proj = Tensor::zeros({d}, true);
        b.ln2_g = Tensor::full({d}, 1.0, true);
        b.ln2_b = Tensor::zeros({d}, true);
        b.w_fc1 = Tensor::trunc_normal({d, cfg_.mlp_ratio * d}, rng, sd, true);
        b.b_fc1 = Tensor::zeros({cfg_.mlp_ratio * d}, true);
        b.w_fc2 = Tensor::trunc_normal({cfg_.mlp_ratio * d, d}, rng, sd, true);
        b.b_fc2 = Tensor::zeros({d}, true);
    }
}

Tensor Backbone::embed(const Tensor& patch_matrix) const {
    return embed_batch(patch_matrix, 1);
}

Tensor Backbone::embed_batch(const Tensor& patch_matrix, int n_images) const {
    const int n = cfg_.n_patches();
    if (patch_matrix.rank() != 2 || patch_matrix.dim(1) != cfg_.patch_dim() ||
        patch_matrix.dim(0) != n_images * n) {
        throw DimError("embed: expected (" + std::to_string(n_images * n) + ", " +
                       std::to_string(cfg_.patch_dim()) + ") patch rows, got " +
                       shape_str(patch_matrix.shape()));
    }
    Tensor projected = add_rowvec(matmul(patch_matrix, w_embed_), b_embed_);
    std::vector<Tensor> parts;
    parts.reserve(2 * static_cast<size_t>(n_images));
    for (int b = 0; b < n_images; ++b) {
        parts.push_back(cls_);
        parts.push_back(slice_rows(projected, b * n, (b + 1) * n));
    }
    Tensor tokens = concat_rows(parts);
    std::vector<Tensor> pos_tiles(static_cast<size_t>(n_images), pos_);
    Tensor pos = n_images == 1 ? pos_ : concat_rows(pos_tiles);
    return add(tokens, pos);
}

Tensor Backbone::run_block(const Block& blk, const Tensor& x, int n_images) const {
    const int d = cfg_.embed_dim;
    const int dh = d / cfg_.heads;
    const int L = x.dim(0) / n_images;
    const double att_scale = 1.0 / std::sqrt(static_cast<double>(dh));

    Tensor h = layer_norm(x, blk.ln1_g, blk.ln1_b);
    Tensor qkv = add_rowvec(matmul(h, blk.w_qkv), blk.b_qkv);
    std::vector<Tensor> head_outs;
    head_outs.reserve(static_cast<size_t>(cfg_.heads));
    for (int hd = 0; hd < cfg_.heads; ++hd) {
        Tensor q = slice_cols(qkv, hd * dh, (hd + 1) * dh);
        Tensor k = slice_cols(qkv, d + hd * dh, d + (hd + 1) * dh);
        Tensor v = slice_cols(qkv, 2 * d + hd * dh, 2 * d + (hd + 1) * dh);
        std::vector<Tensor> mixed;
        mixed.reserve(static_cast<size_t>(n_images));
        for (int b = 0; b < n_images; ++b) {
            Tensor qb = slice_rows(q, b * L, (b + 1) * L);
            Tensor kb = slice_rows(k, b * L, (b + 1) * L);
            Tensor vb = slice_rows(v, b * L, (b + 1) * L);
            Tensor attn = softmax(scale(matmul(qb, transpose(kb)), att_scale), 1);
            mixed.push_back(matmul(attn, vb));
        }
        head_outs.push_back(n_images == 1 ? mixed[0] : concat_rows(mixed));
    }
    Tensor attn_out = cfg_.heads == 1 ? head_outs[0] : concat_cols(head_outs);
    Tensor x1 = add(x, add_rowvec(matmul(attn_out, blk.w_proj), blk.b_proj));

    Tensor h2 = layer_norm(x1, blk.ln2_g, blk.ln2_b);
    Tensor mlp = add_rowvec(
        matmul(gelu(add_rowvec(matmul(h2, blk.w_fc1), blk.b_fc1)), blk.w_fc2), blk.b_fc2);
    return add(x1, mlp);
}

Tensor Backbone::forward_batch(const Tensor& tokens, int n_images, Tensor* trace) const {
    const int L = cfg_.n_patches() + 1;
    if (tokens.rank() != 2 || tokens.dim(1) != cfg_.embed_dim ||
        tokens.dim(0) != n_images * L) {
        throw DimError("forward: expected (" + std::to_string(n_images * L) + ", " +
                       std::to_string(cfg_.embed_dim) + ") tokens, got " +
                       shape_str(tokens.shape()));
    }
    Tensor x = tokens;
    for (int t = 0; t < cfg_.depth; ++t) {
        if (trace && t == cfg_.depth - 1) {
            *trace = x;
            x.retain_grad();
        }
        try {
            x = run_block(blocks_[static_cast<size_t>(t)], x, n_images);
        } catch (const NumericError& e) {
            throw NumericError("block " + std::to_string(t) + ": " + e.what());
        }
    }
    if (trace && cfg_.depth == 0) {
        *trace = x;
        x.retain_grad();
    }
    return x;
}

TokenSequence Backbone::forward(const Tensor& tokens) const {
    Tensor out = forward_batch(tokens, 1);
    TokenSequence seq;
    seq.cls = slice_rows(out, 0, 1);
    seq.patch_tokens = slice_rows(out, 1, out.dim(0));
    return seq;
}

std::vector<std::pair<std::string, Tensor>> Backbone::named_params() const {
    std::vector<std::pair<std::string, Tensor>> out = {
        {"embed.w", w_embed_}, {"embed.b", b_embed_}, {"cls", cls_}, {"pos", pos_}};
    for (size_t t = 0; t < blocks_.size(); ++t) {
        const std::string p = "block" + std::to_string(t) + ".";
        const Block& b = blocks_[t];
        out.emplace_back(p + "ln1.g", b.ln1_g);
        out.emplace_back(p + "ln1.b", b.ln1_b);
        out.emplace_back(p + "qkv.w", b.w_qkv);
        out.emplace_back(p + "qkv.b", b.b_qkv);
        out.emplace_back(p + "proj.w", b.w_proj);
        out.emplace_back(p + "proj.b", b.b_proj);
        out.emplace_back(p + "ln2.g", b.ln2_g);
        out.emplace_back(p + "ln2.b", b.ln2_b);
        out.emplace_back(p + "fc1.w", b.w_fc1);
        out.emplace_back(p + "fc1.b", b.b_fc1);
        out.emplace_back(p + "fc2.w", b.w_fc2);
        out.emplace_back(p + "fc2.b", b.b_fc2);
    }
    return out;
}

}  // namespace sivit
