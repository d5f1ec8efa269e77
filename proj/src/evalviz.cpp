#include "sivit/evalviz.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "sivit/errors.hpp"
#include "sivit/image.hpp"

namespace sivit {

void ConfusionCounts::add(int predicted, int actual) {
    if ((predicted != 0 && predicted != 1) || (actual != 0 && actual != 1)) {
        throw ContractError("confusion counts take binary labels, got predicted=" +
                            std::to_string(predicted) + " actual=" + std::to_string(actual));
    }
    if (actual == 1) {
        (predicted == 1 ? tp : fn) += 1;
    } else {
        (predicted == 1 ? fp : tn) += 1;
    }
}

MetricSet metrics(const ConfusionCounts& c) {
    if (c.tp < 0 || c.fp < 0 || c.tn < 0 || c.fn < 0) {
        throw ContractError("confusion counts must be non-negative");
    }
    if (c.total() == 0) throw ContractError("metrics over zero samples");
    MetricSet m;
    m.accuracy = static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());

    auto ratio = [](long num, long den, bool* degenerate) {
        if (den == 0) {
            *degenerate = true;
            return 0.0;
        }
        return static_cast<double>(num) / static_cast<double>(den);
    };
    m.precision = ratio(c.tp, c.tp + c.fp, &m.degenerate_precision);
    m.recall = ratio(c.tp, c.tp + c.fn, &m.degenerate_recall);
    m.specificity = ratio(c.tn, c.tn + c.fp, &m.degenerate_specificity);
    if (m.precision + m.recall == 0.0) {
        m.degenerate_f1 = true;
    } else {
        m.f1 = 2.0 * m.precision * m.recall / (m.precision + m.recall);
    }
    return m;
}

void write_metrics_csv(const std::string& path,
                       const std::vector<std::pair<std::string, MetricSet>>& rows) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << "split,accuracy,precision,recall,specificity,f1\n";
    char buf[32];
    auto put = [&](double v) {
        std::snprintf(buf, sizeof(buf), "%.10g", v);
        out << ',' << buf;
    };
    for (const auto& [split, m] : rows) {
        out << split;
        put(m.accuracy);
        put(m.precision);
        put(m.recall);
        put(m.specificity);
        put(m.f1);
        out << '\n';
    }
    out.flush();
    if (!out) throw IoError("write failed: " + path);
}

AttributionMap attribution(const SiViTModel& model, const Bag& bag, int target_class) {
    if (target_class != 0 && target_class != 1) {
        throw ContractError("target class must be 0 or 1, got " + std::to_string(target_class));
    }
    const ViTConfig& vit = model.config().vit;
    const int n = vit.n_patches();
    const int d = vit.embed_dim;

    BatchOut out = model.forward_bags({bag}, /*want_reg=*/false, /*want_cls=*/true,
                                      /*mean_aggregate=*/false, /*want_trace=*/true);
    model.zero_grad();
    backward(pick(out.cls_logits, target_class));
    if (!out.trace.has_grad()) {
        throw ContractError("attribution: no gradient reached the traced tokens");
    }
    const std::vector<double>& act = out.trace.data();
    const std::vector<double>& grad = out.trace.grad();

    AttributionMap map;
    map.grid = vit.grid();
    map.target_class = target_class;
    map.values.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        // Token row 1+i of the traced block input (row 0 is the class token).
        // Score by the gradient-activation inner product across features; a
        // plain feature-sum of the gradient would be useless here, because the
        // layer norms are shift-invariant and therefore hand every patch token
        // a gradient orthogonal to the all-ones direction.
        double dot = 0.0;
        const std::size_t base = static_cast<std::size_t>(1 + i) * d;
        for (int j = 0; j < d; ++j) {
            dot += grad[base + j] * act[base + j];
        }
        const double score = dot / d;
        map.values[static_cast<std::size_t>(i)] = score > 0.0 ? score : 0.0;
    }

    double lo = map.values[0], hi = map.values[0];
    for (double v : map.values) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    if (hi > lo) {
        for (double& v : map.values) v = (v - lo) / (hi - lo);
    } else {
        for (double& v : map.values) v = 0.0;
    }

    const int size = vit.image_size;
    const int p = vit.patch_size;
    map.upsampled.resize(static_cast<std::size_t>(size) * size);
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            const int cell = (y / p) * map.grid + (x / p);
            map.upsampled[static_cast<std::size_t>(y) * size + x] =
                map.values[static_cast<std::size_t>(cell)];
        }
    }
    return map;
}

void write_map(const AttributionMap& map, const std::string& path) {
    const int side = map.grid > 0 ? static_cast<int>(std::lround(
                                        std::sqrt(static_cast<double>(map.upsampled.size()))))
                                  : 0;
    if (side * side != static_cast<int>(map.upsampled.size()) || side == 0) {
        throw ContractError("attribution map is not square");
    }
    std::vector<int> bytes(map.upsampled.size());
    for (std::size_t i = 0; i < bytes.size(); ++i) {
        const double v = std::min(1.0, std::max(0.0, map.upsampled[i]));
        bytes[i] = static_cast<int>(std::lround(v * 255.0));
    }
    write_pgm(path, side, side, bytes, 255);
}

}  // namespace sivit
