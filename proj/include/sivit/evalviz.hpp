#pragma once

#include <string>
#include <vector>

#include "sivit/model.hpp"

namespace sivit {

// Binary confusion counts; positive class = cancer (label 1).
struct ConfusionCounts {
    long tp = 0, fp = 0, tn = 0, fn = 0;

    long total() const { return tp + fp + tn + fn; }
    void add(int predicted, int actual);
};

struct MetricSet {
    double accuracy = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double specificity = 0.0;
    double f1 = 0.0;
    // True when a denominator was zero and the value above was defined to 0.
    bool degenerate_precision = false;
    bool degenerate_recall = false;
    bool degenerate_specificity = false;
    bool degenerate_f1 = false;
};

// Standard definitions; zero denominators yield 0 with the flag set.
MetricSet metrics(const ConfusionCounts& counts);

// One `split,accuracy,precision,recall,specificity,f1` CSV row per entry,
// fixed 10-significant-digit formatting so identical runs write identical
// bytes.
void write_metrics_csv(const std::string& path,
                       const std::vector<std::pair<std::string, MetricSet>>& rows);

// Gradient-weighted token attribution for one bag. The class logit's gradient
// is taken at the final transformer block's input; each patch token scores
// ReLU(<gradient, activation>) across its feature vector, and the per-patch
// grid is min-max normalized (constant grids collapse to all zeros).
struct AttributionMap {
    int grid = 0;                  // patches per side
    int target_class = 0;
    std::vector<double> values;    // grid*grid in [0,1], row-major
    std::vector<double> upsampled; // image_size*image_size, nearest-neighbor
};

AttributionMap attribution(const SiViTModel& model, const Bag& bag, int target_class);

// 8-bit grayscale PGM of the upsampled map.
void write_map(const AttributionMap& map, const std::string& path);

}  // namespace sivit
