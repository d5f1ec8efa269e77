#include "sivit/bagging.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <mutex>

#include "sivit/errors.hpp"

namespace sivit {

std::vector<double> BagSoftLabel::as_vector() const {
    std::vector<double> v;
    v.reserve(per_category.size() + 1);
    v.push_back(total);
    v.insert(v.end(), per_category.begin(), per_category.end());
    return v;
}

ShuffleRecord ShuffleRecord::inverse() const {
    ShuffleRecord inv;
    inv.batch = batch;
    inv.n = n;
    inv.perm.resize(perm.size());
    for (size_t dst = 0; dst < perm.size(); ++dst)
        inv.perm[static_cast<size_t>(perm[dst])] = static_cast<int>(dst);
    return inv;
}

PatchGrid patchify(const ImageSample& sample, int p) {
    const int size = sample.image.w;
    if (sample.image.h != size) {
        throw ContractError("patchify: image must be square, got " +
                            std::to_string(sample.image.w) + "x" +
                            std::to_string(sample.image.h));
    }
    if (p <= 0 || size % p != 0) {
        throw ConfigError("patchify: image size " + std::to_string(size) +
                          " is not divisible by patch size " + std::to_string(p));
    }
    if (p < 16) {
        // Small patches cut cells apart; allowed for scaled-down settings but
        // worth one loud note per process.
        static std::once_flag warned;
        std::call_once(warned, [p] {
            std::fprintf(stderr,
                         "note: patch size %d is below the recommended floor of 16; "
                         "cells may be split across patches\n",
                         p);
        });
    }
    const int g = size / p;
    PatchGrid grid;
    grid.n = g * g;
    grid.p = p;
    grid.source_id = sample.sample_id;
    grid.patches.resize(static_cast<size_t>(grid.n));
    grid.mask_patches.resize(static_cast<size_t>(grid.n));
    for (int gy = 0; gy < g; ++gy) {
        for (int gx = 0; gx < g; ++gx) {
            auto& px = grid.patches[static_cast<size_t>(gy) * g + gx];
            auto& mk = grid.mask_patches[static_cast<size_t>(gy) * g + gx];
            px.resize(3 * static_cast<size_t>(p) * p);
            mk.resize(static_cast<size_t>(p) * p);
            for (int y = 0; y < p; ++y) {
                for (int x = 0; x < p; ++x) {
                    const double* src = sample.image.at(gx * p + x, gy * p + y);
                    double* dst = &px[3 * (static_cast<size_t>(y) * p + x)];
                    dst[0] = src[0];
                    dst[1] = src[1];
                    dst[2] = src[2];
                    mk[static_cast<size_t>(y) * p + x] = sample.mask.at(gx * p + x, gy * p + y);
                }
            }
        }
    }
    return grid;
}

Image unpatchify(const std::vector<std::vector<double>>& patches, int p) {
    const int n = static_cast<int>(patches.size());
    const int g = static_cast<int>(std::lround(std::sqrt(static_cast<double>(n))));
    if (g * g != n) {
        throw ContractError("unpatchify: patch count " + std::to_string(n) +
                            " is not a square grid");
    }
    Image img = Image::filled(g * p, g * p, 0, 0, 0);
    for (int gy = 0; gy < g; ++gy) {
        for (int gx = 0; gx < g; ++gx) {
            const auto& px = patches[static_cast<size_t>(gy) * g + gx];
            if (px.size() != 3 * static_cast<size_t>(p) * p) {
                throw ContractError("unpatchify: patch pixel count does not match p=" +
                                    std::to_string(p));
            }
            for (int y = 0; y < p; ++y) {
                for (int x = 0; x < p; ++x) {
                    const double* src = &px[3 * (static_cast<size_t>(y) * p + x)];
                    double* dst = img.at(gx * p + x, gy * p + y);
                    dst[0] = src[0];
                    dst[1] = src[1];
                    dst[2] = src[2];
                }
            }
        }
    }
    return img;
}

PatchLabel compute_patch_label(const std::vector<int>& mask_patch, int p,
                               int k_categories) {
    PatchLabel label;
    label.per_category.assign(static_cast<size_t>(k_categories), 0.0);
    std::vector<int> counts(static_cast<size_t>(k_categories) + 1, 0);
    for (int v : mask_patch) {
        if (v < 0 || v > k_categories) {
            throw DataError("compute_patch_label: mask value " + std::to_string(v) +
                            " outside 0.." + std::to_string(k_categories));
        }
        ++counts[static_cast<size_t>(v)];
    }
    const int total = p * p;
    if (static_cast<int>(mask_patch.size()) != total) {
        throw ContractError("compute_patch_label: mask patch size mismatch");
    }
    const int masked = total - counts[0];
    label.mr = static_cast<double>(masked) / total;
    if (masked > 0) {
        // Dominant nonzero category takes the whole ratio; ties go to the
        // lowest category index.
        int best = 1;
        for (int c = 2; c <= k_categories; ++c)
            if (counts[static_cast<size_t>(c)] > counts[static_cast<size_t>(best)]) best = c;
        label.per_category[static_cast<size_t>(best) - 1] = label.mr;
    }
    return label;
}

BagSoftLabel aggregate_bag_label(const std::vector<PatchLabel>& labels, bool normalize) {
    if (labels.empty()) {
        throw ContractError("aggregate_bag_label: empty patch label list");
    }
    BagSoftLabel bag;
    bag.per_category.assign(labels[0].per_category.size(), 0.0);
    for (const auto& l : labels) {
        if (l.per_category.size() != bag.per_category.size()) {
            throw ContractError("aggregate_bag_label: inconsistent category counts");
        }
        bag.total += l.mr;
        for (size_t c = 0; c < bag.per_category.size(); ++c)
            bag.per_category[c] += l.per_category[c];
    }
    if (normalize) {
        const double n = static_cast<double>(labels.size());
        bag.total /= n;
        for (double& v : bag.per_category) v /= n;
        bag.normalized = true;
    }
    return bag;
}

int mil_bag_label(const std::vector<int>& instance_labels) {
    if (instance_labels.empty()) {
        throw ContractError("mil_bag_label: empty instance list");
    }
    for (int v : instance_labels) {
        if (v != 0 && v != 1) {
            throw ContractError("mil_bag_label: instance label " + std::to_string(v) +
                                " outside {0,1}");
        }
    }
    for (int v : instance_labels)
        if (v == 1) return 1;
    return 0;
}

namespace {

void require_homogeneous(const std::vector<PatchGrid>& batch) {
    if (batch.empty()) throw ContractError("distribute: empty batch");
    for (const auto& g : batch) {
        if (g.n != batch[0].n || g.p != batch[0].p) {
            throw ContractError("distribute: heterogeneous grids (" +
                                std::to_string(g.n) + "x p" + std::to_string(g.p) +
                                " vs " + std::to_string(batch[0].n) + "x p" +
                                std::to_string(batch[0].p) + ")");
        }
    }
}

}  // namespace

std::vector<Bag> distribute_with_permutation(const std::vector<PatchGrid>& batch,
                                             const ShuffleRecord& rec, int k_categories,
                                             bool normalize) {
    require_homogeneous(batch);
    const int B = static_cast<int>(batch.size());
    const int n = batch[0].n;
    if (rec.batch != B || rec.n != n ||
        rec.perm.size() != static_cast<size_t>(B) * static_cast<size_t>(n)) {
        throw ContractError("distribute: record shape does not match the batch");
    }
    std::vector<Bag> bags(static_cast<size_t>(B));
    for (int b = 0; b < B; ++b) {
        Bag& bag = bags[static_cast<size_t>(b)];
        bag.n = n;
        bag.p = batch[0].p;
        bag.patches.resize(static_cast<size_t>(n));
        bag.mask_patches.resize(static_cast<size_t>(n));
        bag.patch_labels.resize(static_cast<size_t>(n));
        bag.provenance.resize(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) {
            const int src = rec.perm[static_cast<size_t>(b) * n + i];
            const PatchGrid& sg = batch[static_cast<size_t>(src / n)];
            const int sp = src % n;
            bag.patches[static_cast<size_t>(i)] = sg.patches[static_cast<size_t>(sp)];
            bag.mask_patches[static_cast<size_t>(i)] = sg.mask_patches[static_cast<size_t>(sp)];
            bag.patch_labels[static_cast<size_t>(i)] =
                compute_patch_label(sg.mask_patches[static_cast<size_t>(sp)], sg.p, k_categories);
            bag.provenance[static_cast<size_t>(i)] = {sg.source_id, sp};
        }
        bag.soft_label = aggregate_bag_label(bag.patch_labels, normalize);
    }
    return bags;
}

std::pair<std::vector<Bag>, ShuffleRecord> shuffle_distribute(
    const std::vector<PatchGrid>& batch, std::mt19937_64& rng, int k_categories,
    bool normalize) {
    require_homogeneous(batch);
    ShuffleRecord rec;
    rec.batch = static_cast<int>(batch.size());
    rec.n = batch[0].n;
    const int total = rec.batch * rec.n;
    rec.perm.resize(static_cast<size_t>(total));
    for (int i = 0; i < total; ++i) rec.perm[static_cast<size_t>(i)] = i;
    // Fisher-Yates over all slots of the batch
    for (int i = total - 1; i > 0; --i) {
        std::uniform_int_distribution<int> d(0, i);
        std::swap(rec.perm[static_cast<size_t>(i)], rec.perm[static_cast<size_t>(d(rng))]);
    }
    return {distribute_with_permutation(batch, rec, k_categories, normalize), rec};
}

std::vector<Bag> unshuffle_distribute(const std::vector<PatchGrid>& batch,
                                      int k_categories, bool normalize) {
    require_homogeneous(batch);
    ShuffleRecord identity;
    identity.batch = static_cast<int>(batch.size());
    identity.n = batch[0].n;
    identity.perm.resize(static_cast<size_t>(identity.batch) * identity.n);
    for (size_t i = 0; i < identity.perm.size(); ++i)
        identity.perm[i] = static_cast<int>(i);
    return distribute_with_permutation(batch, identity, k_categories, normalize);
}

PatchGrid to_grid(const Bag& bag, const std::string& id) {
    PatchGrid g;
    g.n = bag.n;
    g.p = bag.p;
    g.source_id = id;
    g.patches = bag.patches;
    g.mask_patches = bag.mask_patches;
    return g;
}

}  // namespace sivit
