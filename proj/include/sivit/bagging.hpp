#pragma once

#include <random>
#include <string>
#include <utility>
#include <vector>

#include "sivit/datasynth.hpp"

namespace sivit {

// An image cut into n = (size/p)^2 square patches in row-major grid order.
// Patch pixels are 3*p*p doubles (rgb interleaved); mask patches travel along
// so patch labels can be recomputed wherever a patch ends up.
struct PatchGrid {
    int n = 0, p = 0;
    std::string source_id;
    std::vector<std::vector<double>> patches;
    std::vector<std::vector<int>> mask_patches;
};

// Per-patch soft label: mr = fraction of masked (nonzero) pixels; exactly one
// per-category entry is nonzero and equals mr (the dominant category).
struct PatchLabel {
    double mr = 0.0;
    std::vector<double> per_category;  // K entries, category c at index c-1
};

// Per-bag aggregate of its patches' labels: raw sums by default, optionally
// divided by the patch count.
struct BagSoftLabel {
    double total = 0.0;
    std::vector<double> per_category;
    bool normalized = false;

    // Regression target layout: [total, per_category...].
    std::vector<double> as_vector() const;
};

// A bijection over the flattened (bag, patch) slots of a batch.
// perm[destination] = source.
struct ShuffleRecord {
    std::vector<int> perm;
    int batch = 0, n = 0;

    ShuffleRecord inverse() const;
};

// A regrouped collection of n patches living on one image grid. The bag image
// itself is reconstructable via unpatchify; provenance records where each
// slot's patch came from.
struct Bag {
    int n = 0, p = 0;
    std::vector<std::vector<double>> patches;
    std::vector<std::vector<int>> mask_patches;
    std::vector<PatchLabel> patch_labels;
    BagSoftLabel soft_label;
    std::vector<std::pair<std::string, int>> provenance;  // (source id, patch index)
};

PatchGrid patchify(const ImageSample& sample, int p);

// Reassemble a square image from row-major grid patches.
Image unpatchify(const std::vector<std::vector<double>>& patches, int p);

PatchLabel compute_patch_label(const std::vector<int>& mask_patch, int p, int k_categories);

BagSoftLabel aggregate_bag_label(const std::vector<PatchLabel>& labels, bool normalize);

// 0 iff every instance label is 0, else 1.
int mil_bag_label(const std::vector<int>& instance_labels);

// Regroup a batch of grids according to an explicit slot permutation,
// recomputing every bag's labels from the patches now present.
std::vector<Bag> distribute_with_permutation(const std::vector<PatchGrid>& batch,
                                             const ShuffleRecord& rec, int k_categories,
                                             bool normalize);

// One uniformly random bijection over all B*n slots of the batch.
std::pair<std::vector<Bag>, ShuffleRecord> shuffle_distribute(
    const std::vector<PatchGrid>& batch, std::mt19937_64& rng, int k_categories,
    bool normalize);

// Identity placement: bags mirror their source grids.
std::vector<Bag> unshuffle_distribute(const std::vector<PatchGrid>& batch,
                                      int k_categories, bool normalize);

// View a bag as a grid again (e.g. to invert a shuffle).
PatchGrid to_grid(const Bag& bag, const std::string& id);

}  // namespace sivit
