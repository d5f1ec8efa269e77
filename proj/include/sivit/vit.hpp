#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "sivit/tensor.hpp"

namespace sivit {

struct ViTConfig {
    int image_size = 64;
    int patch_size = 8;
    int embed_dim = 64;  // D
    int depth = 2;       // transformer blocks
    int heads = 4;
    int mlp_ratio = 4;
    uint64_t seed = 0;

    int grid() const { return image_size / patch_size; }
    int n_patches() const { return grid() * grid(); }
    int patch_dim() const { return 3 * patch_size * patch_size; }
    void validate() const;
};

// Output of the backbone for a single image: the class token row plus the n
// patch token rows, both views into the same graph.
struct TokenSequence {
    Tensor cls;           // (1, D)
    Tensor patch_tokens;  // (n, D)
};

// Small pre-norm ViT. All parameters are f64 tensors with requires_grad set;
// forward passes build autodiff graphs over them. Batched entry points treat
// the token tensor as B stacked sequences of n+1 rows and keep attention
// strictly within each image.
class Backbone {
public:
    explicit Backbone(const ViTConfig& cfg);

    // (n, 3p^2) patch pixel rows for one image -> (n+1, D) with CLS prepended
    // and positional embeddings added.
    Tensor embed(const Tensor& patch_matrix) const;
    // (B*n, 3p^2) -> (B*(n+1), D)
    Tensor embed_batch(const Tensor& patch_matrix, int n_images) const;

    // (B*(n+1), D) -> same shape. If trace is non-null it receives the input
    // to the final block (the embedded tokens when depth is 0), with its
    // gradient retained through backward.
    Tensor forward_batch(const Tensor& tokens, int n_images, Tensor* trace = nullptr) const;
    TokenSequence forward(const Tensor& tokens) const;

    std::vector<std::pair<std::string, Tensor>> named_params() const;
    const ViTConfig& config() const { return cfg_; }

private:
    struct Block {
        Tensor ln1_g, ln1_b;
        Tensor w_qkv, b_qkv;
        Tensor w_proj, b_proj;
        Tensor ln2_g, ln2_b;
        Tensor w_fc1, b_fc1;
        Tensor w_fc2, b_fc2;
    };

    Tensor run_block(const Block& blk, const Tensor& x, int n_images) const;

    ViTConfig cfg_;
    Tensor w_embed_, b_embed_;
    Tensor cls_;  // (1, D)
    Tensor pos_;  // (n+1, D)
    std::vector<Block> blocks_;
};

}  // namespace sivit
