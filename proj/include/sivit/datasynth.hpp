#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sivit/image.hpp"

namespace sivit {

// One labeled cytology-style image. The class label is always derived from
// the mask (cancer category present => 1), never stored independently.
struct ImageSample {
    Image image;
    Mask mask;
    int class_label = 0;
    std::string sample_id;
    uint64_t seed = 0;
};

// Knobs of the procedural generator. Cell categories are 1..K in the mask;
// category K is the cancer category, 1..K-1 are benign variants. Cancer cells
// are larger, rounder-nucleus-heavy and irregular at the boundary; benign
// cells are small and regular. Cluster spread controls the global scatter of
// cells around their cluster centers.
struct GenConfig {
    int image_size = 64;
    int k_categories = 2;

    int min_cells = 6, max_cells = 12;                // benign cells per image
    int min_cancer_cells = 1, max_cancer_cells = 3;   // extra cells on positives
    double benign_radius_lo = 2.5, benign_radius_hi = 4.5;
    double cancer_radius_lo = 5.0, cancer_radius_hi = 9.0;
    double benign_nucleus_ratio = 0.42;
    double cancer_nucleus_ratio = 0.78;
    double cluster_spread = 0.30;

    // Staining / acquisition perturbations, applied at generation time.
    bool perturb = true;
    double brightness_jitter = 0.15;
    double contrast_jitter = 0.3;
    double saturation_jitter = 0.3;
    double hue_jitter = 0.06;
    int min_impurities = 2, max_impurities = 6;
    double blur_prob = 0.3;
    double pixel_noise = 0.012;

    uint64_t seed = 0;
};

int label_from_mask(const Mask& mask, int k_categories);

// Pure function of (cfg, index, positive): repeated calls are bit-identical.
// Cells are kept inside the central third of the frame so train-time rotation
// and cropping cannot cut labeled content away.
ImageSample generate_sample(const GenConfig& cfg, int index, bool positive);

// n_pos positives (ids p0000..) followed by n_neg negatives (ids n0000..).
std::vector<ImageSample> generate_dataset(const GenConfig& cfg, int n_pos, int n_neg);

// On-disk layout: dir/index.tsv with one `id<TAB>label<TAB>seed` line per
// sample, plus dir/{id}.ppm and dir/{id}_mask.pgm (mask maxval = K).
void write_dataset(const std::vector<ImageSample>& samples, const std::string& dir,
                   int k_categories);

struct Dataset {
    std::vector<ImageSample> samples;
    int k_categories = 0;
};

// Verifies image/mask extents and index labels against mask-derived labels.
Dataset read_dataset(const std::string& dir);

}  // namespace sivit
