#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "sivit/tensor.hpp"

namespace sivit {

// Per-term weights for the composite loss, in the order (cls : reg_usf : reg_sf).
struct HeadWeights {
    double cls = 1.0;
    double reg_usf = 1.0;
    double reg_sf = 1.0;

    // All weights must be non-negative and at least one must be positive.
    void validate() const;
};

// Scalar view of one composite-loss evaluation. Components are the *unweighted*
// term values; `total` is the weighted sum. A term that was skipped (zero weight
// or not supplied) is recorded as exactly 0.0.
struct LossBreakdown {
    double total = 0.0;
    double l_cls = 0.0;
    double l_reg_usf = 0.0;
    double l_reg_sf = 0.0;
};

// Result of composite_loss: the differentiable total plus its scalar breakdown.
struct CompositeLoss {
    Tensor total;
    LossBreakdown parts;
};

// Optional loss terms. A default-constructed (undefined) Tensor means the term
// was not computed this step; it contributes exactly zero and never enters the
// graph, so e.g. weights (1,0,0) build the identical graph a cls-only step does.
struct LossTerms {
    Tensor l_cls;
    Tensor l_reg_usf;
    Tensor l_reg_sf;
};

CompositeLoss composite_loss(const LossTerms& terms, const HeadWeights& weights);

// The two prediction heads. The regression head is a shared two-layer MLP
// (D -> D, GELU, D -> K+1) applied to every patch token, aggregated per image;
// the classification head is a single linear layer D -> 2 on the CLS token.
class Heads {
  public:
    Heads(int embed_dim, int k_categories, std::uint64_t seed, bool pool_then_mlp = false);

    // patch_tokens: (B*n, D) with rows grouped by image. Returns (B, K+1) bag
    // predictions: per-token MLP outputs summed over each image's rows (mean
    // when `mean_aggregate`, for normalized bag labels). In pool-then-MLP mode
    // the aggregation runs first and the MLP maps the pooled vector instead.
    Tensor reg_predict(const Tensor& patch_tokens, int n_images, bool mean_aggregate) const;

    // cls_tokens: (B, D) -> logits (B, 2).
    Tensor cls_logits(const Tensor& cls_tokens) const;

    int embed_dim() const { return embed_dim_; }
    int k_categories() const { return k_categories_; }
    bool pool_then_mlp() const { return pool_then_mlp_; }

    // Stable name -> parameter pairs (ordering fixed for checkpointing).
    std::vector<std::pair<std::string, Tensor>> named_params() const;

  private:
    int embed_dim_;
    int k_categories_;
    bool pool_then_mlp_;

    Tensor reg_fc1_w_, reg_fc1_b_;
    Tensor reg_fc2_w_, reg_fc2_b_;
    Tensor cls_w_, cls_b_;

    Tensor reg_mlp(const Tensor& x) const;
};

}  // namespace sivit
