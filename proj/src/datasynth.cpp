#include "sivit/datasynth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "sivit/errors.hpp"
#include "sivit/rng.hpp"

namespace fs = std::filesystem;

namespace sivit {

namespace {

constexpr double kBackground[3] = {0.94, 0.91, 0.95};

struct CellStyle {
    double cyto[3];
    double nucleus[3];
    double irregularity;  // boundary wobble amplitude as a fraction of radius
};

CellStyle benign_style(int category) {
    // Benign categories get slightly different stain tints so K > 2 stays
    // visually meaningful.
    const double shift = 0.05 * (category - 1);
    return CellStyle{{0.80 - shift, 0.62, 0.78 + shift / 2},
                     {0.48 - shift, 0.32, 0.62 + shift / 2},
                     0.06};
}

CellStyle cancer_style() {
    return CellStyle{{0.72, 0.50, 0.70}, {0.26, 0.13, 0.44}, 0.25};
}

double uni(std::mt19937_64& rng, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

int uni_int(std::mt19937_64& rng, int lo, int hi) {
    return std::uniform_int_distribution<int>(lo, hi)(rng);
}

// Wobbly closed boundary: r(theta) = r * (1 + irr * sum_k a_k sin(k theta + p_k)).
struct Boundary {
    double base, irr;
    double amp[3], phase[3];

    double radius_at(double theta) const {
        double mod = 0.0;
        for (int k = 0; k < 3; ++k) mod += amp[k] * std::sin((k + 2) * theta + phase[k]);
        return base * (1.0 + irr * mod);
    }
};

void paint_cell(Image& img, Mask& mask, std::mt19937_64& rng, double cx, double cy,
                double radius, double nucleus_ratio, int category, const CellStyle& style) {
    Boundary b{radius, style.irregularity, {}, {}};
    for (int k = 0; k < 3; ++k) {
        b.amp[k] = uni(rng, 0.3, 1.0);
        b.phase[k] = uni(rng, 0.0, 2.0 * 3.14159265358979323846);
    }
    const double tint = uni(rng, -0.05, 0.05);
    const double nucleus_r = nucleus_ratio * radius;
    const double reach = radius * (1.0 + b.irr) + 1.0;
    const int x0 = std::max(0, static_cast<int>(cx - reach));
    const int x1 = std::min(img.w - 1, static_cast<int>(cx + reach));
    const int y0 = std::max(0, static_cast<int>(cy - reach));
    const int y1 = std::min(img.h - 1, static_cast<int>(cy + reach));
    for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
            const double dx = x - cx, dy = y - cy;
            const double d = std::sqrt(dx * dx + dy * dy);
            if (d > b.radius_at(std::atan2(dy, dx))) continue;
            double* p = img.at(x, y);
            const double* col = d <= nucleus_r ? style.nucleus : style.cyto;
            // soft edge on the outer 15% of the cytoplasm
            const double edge = std::clamp((1.0 - d / (radius * (1 + b.irr))) / 0.15, 0.0, 1.0);
            for (int c = 0; c < 3; ++c) {
                const double target = std::clamp(col[c] + tint, 0.0, 1.0);
                p[c] = d <= nucleus_r ? target : target * edge + p[c] * (1.0 - edge);
            }
            mask.at(x, y) = category;
        }
    }
}

void paint_impurity(Image& img, std::mt19937_64& rng) {
    const int kind = uni_int(rng, 0, 2);
    if (kind == 0) {  // bright speck
        const int x = uni_int(rng, 0, img.w - 1), y = uni_int(rng, 0, img.h - 1);
        const double c[3] = {0.99, 0.97, uni(rng, 0.75, 0.9)};
        for (int dy = 0; dy <= 1; ++dy)
            for (int dx = 0; dx <= 1; ++dx)
                if (x + dx < img.w && y + dy < img.h)
                    for (int ch = 0; ch < 3; ++ch) img.at(x + dx, y + dy)[ch] = c[ch];
    } else if (kind == 1) {  // fiber: thin dark segment
        double x = uni(rng, 0, img.w - 1.0), y = uni(rng, 0, img.h - 1.0);
        const double ang = uni(rng, 0, 2.0 * 3.14159265358979323846);
        const double len = uni(rng, 6.0, 16.0);
        const double col[3] = {0.55, 0.55, 0.62};
        const int steps = static_cast<int>(len * 2);
        for (int s = 0; s < steps; ++s) {
            const int xi = static_cast<int>(x), yi = static_cast<int>(y);
            if (xi >= 0 && yi >= 0 && xi < img.w && yi < img.h)
                for (int ch = 0; ch < 3; ++ch) img.at(xi, yi)[ch] = col[ch];
            x += 0.5 * std::cos(ang);
            y += 0.5 * std::sin(ang);
        }
    } else {  // pale unmasked blob
        const double cx = uni(rng, 0, img.w - 1.0), cy = uni(rng, 0, img.h - 1.0);
        const double r = uni(rng, 1.5, 3.0);
        const double col[3] = {0.88, 0.86, uni(rng, 0.80, 0.88)};
        for (int y = std::max(0, static_cast<int>(cy - r));
             y <= std::min(img.h - 1, static_cast<int>(cy + r)); ++y)
            for (int x = std::max(0, static_cast<int>(cx - r));
                 x <= std::min(img.w - 1, static_cast<int>(cx + r)); ++x) {
                const double dx = x - cx, dy = y - cy;
                if (dx * dx + dy * dy <= r * r)
                    for (int ch = 0; ch < 3; ++ch) img.at(x, y)[ch] = col[ch];
            }
    }
}

}  // namespace

int label_from_mask(const Mask& mask, int k_categories) {
    for (int v : mask.v)
        if (v == k_categories) return 1;
    return 0;
}

ImageSample generate_sample(const GenConfig& cfg, int index, bool positive) {
    if (cfg.k_categories < 2) {
        throw ConfigError("generate_sample: need at least 2 cell categories, got " +
                          std::to_string(cfg.k_categories));
    }
    const uint64_t sample_seed = mix_seed(cfg.seed, RngStream::sample, static_cast<uint64_t>(index));
    std::mt19937_64 rng(sample_seed);

    const int sz = cfg.image_size;
    ImageSample s;
    s.seed = sample_seed;
    s.image = Image::filled(sz, sz, kBackground[0], kBackground[1], kBackground[2]);
    s.mask = Mask::zeros(sz, sz);

    // Impurities go down first so cells always paint over them; that keeps the
    // mask truthful for whatever is visible on top.
    const int n_imp = uni_int(rng, cfg.min_impurities, cfg.max_impurities);
    if (cfg.perturb)
        for (int i = 0; i < n_imp; ++i) paint_impurity(s.image, rng);

    // Cell placement: everything stays inside the central disc so rotation and
    // center-crop augmentation cannot remove labeled content.
    const double cx0 = (sz - 1) / 2.0, cy0 = (sz - 1) / 2.0;
    const double safe_r = 0.34 * sz;
    const int n_clusters = uni_int(rng, 1, 2);
    std::vector<std::pair<double, double>> centers;
    for (int c = 0; c < n_clusters; ++c) {
        const double ang = uni(rng, 0, 2.0 * 3.14159265358979323846);
        const double rad = uni(rng, 0, 0.18 * sz);
        centers.emplace_back(cx0 + rad * std::cos(ang), cy0 + rad * std::sin(ang));
    }
    auto place = [&](double max_cell_r) {
        const auto& c = centers[static_cast<size_t>(uni_int(rng, 0, n_clusters - 1))];
        std::normal_distribution<double> scatter(0.0, cfg.cluster_spread * sz / 4.0);
        double x = c.first + scatter(rng), y = c.second + scatter(rng);
        // clamp into the safe disc, leaving room for the cell body
        const double dx = x - cx0, dy = y - cy0;
        const double d = std::sqrt(dx * dx + dy * dy);
        const double lim = safe_r - max_cell_r;
        if (d > lim && d > 0) {
            x = cx0 + dx / d * lim;
            y = cy0 + dy / d * lim;
        }
        return std::make_pair(x, y);
    };

    const int n_benign = uni_int(rng, cfg.min_cells, cfg.max_cells);
    for (int i = 0; i < n_benign; ++i) {
        const double r = uni(rng, cfg.benign_radius_lo, cfg.benign_radius_hi);
        const auto [x, y] = place(r * 1.3);
        const int cat = cfg.k_categories == 2 ? 1 : uni_int(rng, 1, cfg.k_categories - 1);
        paint_cell(s.image, s.mask, rng, x, y, r, cfg.benign_nucleus_ratio, cat,
                   benign_style(cat));
    }
    if (positive) {
        const int n_cancer = uni_int(rng, cfg.min_cancer_cells, cfg.max_cancer_cells);
        for (int i = 0; i < n_cancer; ++i) {
            const double r = uni(rng, cfg.cancer_radius_lo, cfg.cancer_radius_hi);
            const auto [x, y] = place(r * 1.3);
            paint_cell(s.image, s.mask, rng, x, y, r, cfg.cancer_nucleus_ratio,
                       cfg.k_categories, cancer_style());
        }
    }

    if (cfg.perturb) {
        s.image = color_jitter(s.image, rng, cfg.brightness_jitter, cfg.contrast_jitter,
                               cfg.saturation_jitter, cfg.hue_jitter);
        if (uni(rng, 0.0, 1.0) < cfg.blur_prob) s.image = box_blur3(s.image);
        if (cfg.pixel_noise > 0) {
            std::normal_distribution<double> noise(0.0, cfg.pixel_noise);
            for (double& v : s.image.px) v = std::clamp(v + noise(rng), 0.0, 1.0);
        }
    }

    // Snap to the 8-bit grid so a PPM round-trip reproduces the sample exactly.
    quantize_to_8bit(s.image);
    s.class_label = label_from_mask(s.mask, cfg.k_categories);
    return s;
}

std::vector<ImageSample> generate_dataset(const GenConfig& cfg, int n_pos, int n_neg) {
    if (n_pos < 0 || n_neg < 0) {
        throw ContractError("generate_dataset: negative sample counts");
    }
    std::vector<ImageSample> out;
    out.reserve(static_cast<size_t>(n_pos + n_neg));
    char id[16];
    for (int i = 0; i < n_pos; ++i) {
        ImageSample s = generate_sample(cfg, i, true);
        std::snprintf(id, sizeof(id), "p%04d", i);
        s.sample_id = id;
        out.push_back(std::move(s));
    }
    for (int j = 0; j < n_neg; ++j) {
        ImageSample s = generate_sample(cfg, n_pos + j, false);
        std::snprintf(id, sizeof(id), "n%04d", j);
        s.sample_id = id;
        out.push_back(std::move(s));
    }
    return out;
}

void write_dataset(const std::vector<ImageSample>& samples, const std::string& dir,
                   int k_categories) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError(dir + ": cannot create directory (" + ec.message() + ")");
    std::ofstream index(dir + "/index.tsv", std::ios::binary);
    if (!index) throw IoError(dir + "/index.tsv: cannot open for writing");
    for (const auto& s : samples) {
        index << s.sample_id << "\t" << s.class_label << "\t" << s.seed << "\n";
        write_ppm(s.image, dir + "/" + s.sample_id + ".ppm");
        write_pgm(dir + "/" + s.sample_id + "_mask.pgm", s.mask.w, s.mask.h, s.mask.v,
                  k_categories);
    }
    if (!index) throw IoError(dir + "/index.tsv: write failed");
}

Dataset read_dataset(const std::string& dir) {
    std::ifstream index(dir + "/index.tsv", std::ios::binary);
    if (!index) throw IoError(dir + "/index.tsv: cannot open");
    Dataset ds;
    std::string line;
    int lineno = 0;
    while (std::getline(index, line)) {
        ++lineno;
        if (line.empty()) continue;
        const size_t t1 = line.find('\t');
        const size_t t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
        if (t2 == std::string::npos) {
            throw IoError(dir + "/index.tsv:" + std::to_string(lineno) +
                          ": expected id<TAB>label<TAB>seed");
        }
        ImageSample s;
        s.sample_id = line.substr(0, t1);
        int label = 0;
        try {
            label = std::stoi(line.substr(t1 + 1, t2 - t1 - 1));
            s.seed = std::stoull(line.substr(t2 + 1));
        } catch (const std::exception&) {
            throw IoError(dir + "/index.tsv:" + std::to_string(lineno) + ": bad record '" +
                          line + "'");
        }
        const std::string img_path = dir + "/" + s.sample_id + ".ppm";
        const std::string mask_path = dir + "/" + s.sample_id + "_mask.pgm";
        s.image = read_ppm(img_path);
        int mw = 0, mh = 0, maxval = 0;
        s.mask.v = read_pgm(mask_path, mw, mh, maxval);
        s.mask.w = mw;
        s.mask.h = mh;
        if (mw != s.image.w || mh != s.image.h) {
            throw IoError(mask_path + ": size " + std::to_string(mw) + "x" +
                          std::to_string(mh) + " does not match " + img_path);
        }
        if (ds.k_categories == 0) ds.k_categories = maxval;
        if (maxval != ds.k_categories) {
            throw IoError(mask_path + ": category count " + std::to_string(maxval) +
                          " differs from the rest of the dataset");
        }
        for (int v : s.mask.v) {
            if (v > maxval) throw IoError(mask_path + ": mask value exceeds maxval");
        }
        s.class_label = label_from_mask(s.mask, ds.k_categories);
        if (s.class_label != label) {
            throw IoError(dir + "/index.tsv:" + std::to_string(lineno) + ": label " +
                          std::to_string(label) + " contradicts mask-derived label " +
                          std::to_string(s.class_label));
        }
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

}  // namespace sivit
