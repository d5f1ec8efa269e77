#pragma once

#include <string>
#include <utility>
#include <vector>

#include "sivit/bagging.hpp"
#include "sivit/heads.hpp"
#include "sivit/verify.hpp"
#include "sivit/vit.hpp"

namespace sivit {

struct ModelConfig {
    ViTConfig vit;
    int k_categories = 2;         // mask categories (K); bag label has K+1 entries
    bool reg_pool_then_mlp = false;

    void validate() const;
};

// One forward pass over a batch of bags. Only the requested outputs are
// defined; `trace` (the final transformer block's input, gradient retained)
// is populated when asked for, for attribution.
struct BatchOut {
    Tensor reg_pred;    // (B, K+1)
    Tensor cls_logits;  // (B, 2)
    Tensor trace;       // (B*(n+1), D)
};

// The full dual-head model. The backbone and heads draw their initial weights
// from separate streams of the same seed, so one seed pins the whole model.
class SiViTModel {
  public:
    explicit SiViTModel(const ModelConfig& cfg);

    BatchOut forward_bags(const std::vector<Bag>& bags, bool want_reg, bool want_cls,
                          bool mean_aggregate, bool want_trace = false) const;

    const ModelConfig& config() const { return cfg_; }
    const Backbone& backbone() const { return backbone_; }
    const Heads& heads() const { return heads_; }

    // All parameter tensors with stable "backbone.*" / "heads.*" names.
    std::vector<std::pair<std::string, Tensor>> named_params() const;
    void zero_grad() const;

    void save(const std::string& path) const;
    static SiViTModel load(const std::string& path);

  private:
    ModelConfig cfg_;
    Backbone backbone_;
    Heads heads_;
};

// Finite-difference check of the whole stack: pixels through the backbone and
// both heads into the three-term composite loss (classification, regression,
// and a second regression pass over batch-permuted patches). Complements the
// per-op list from gradcheck_cases().
GradCheckCase model_gradcheck_case();

}  // namespace sivit
