#include "sivit/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "sivit/errors.hpp"

namespace sivit {

Image Image::filled(int w, int h, double r, double g, double b) {
    Image img;
    img.w = w;
    img.h = h;
    img.px.resize(3 * static_cast<size_t>(w) * h);
    for (size_t i = 0; i < img.px.size(); i += 3) {
        img.px[i] = r;
        img.px[i + 1] = g;
        img.px[i + 2] = b;
    }
    return img;
}

Mask Mask::zeros(int w, int h) {
    Mask m;
    m.w = w;
    m.h = h;
    m.v.assign(static_cast<size_t>(w) * h, 0);
    return m;
}

// ---- file formats ----------------------------------------------------

namespace {

uint8_t to_byte(double v) {
    const double c = std::clamp(v, 0.0, 1.0);
    return static_cast<uint8_t>(std::lround(c * 255.0));
}

// Reads one whitespace-delimited token, skipping '#' comment lines.
std::string next_token(std::istream& in) {
    std::string tok;
    int c = in.get();
    while (c != EOF && (std::isspace(c) || c == '#')) {
        if (c == '#') {
            while (c != EOF && c != '\n') c = in.get();
        }
        c = in.get();
    }
    while (c != EOF && !std::isspace(c)) {
        tok.push_back(static_cast<char>(c));
        c = in.get();
    }
    return tok;
}

int parse_dim(const std::string& tok, const std::string& path, const char* what) {
    try {
        size_t pos = 0;
        int v = std::stoi(tok, &pos);
        if (pos != tok.size() || v <= 0) throw std::invalid_argument("range");
        return v;
    } catch (const std::exception&) {
        throw IoError(path + ": corrupt header (" + std::string(what) + " = '" + tok + "')");
    }
}

}  // namespace

void write_ppm(const Image& img, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError(path + ": cannot open for writing");
    out << "P6\n" << img.w << " " << img.h << "\n255\n";
    std::vector<uint8_t> bytes(img.px.size());
    for (size_t i = 0; i < img.px.size(); ++i) bytes[i] = to_byte(img.px[i]);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError(path + ": write failed");
}

Image read_ppm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(path + ": cannot open");
    if (next_token(in) != "P6") throw IoError(path + ": corrupt header (not P6)");
    Image img;
    img.w = parse_dim(next_token(in), path, "width");
    img.h = parse_dim(next_token(in), path, "height");
    const int maxval = parse_dim(next_token(in), path, "maxval");
    if (maxval != 255) throw IoError(path + ": unsupported maxval " + std::to_string(maxval));
    // header ends after exactly one whitespace byte, already consumed by the
    // token reader's terminating character
    std::vector<uint8_t> bytes(3 * static_cast<size_t>(img.w) * img.h);
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (in.gcount() != static_cast<std::streamsize>(bytes.size())) {
        throw IoError(path + ": truncated pixel data");
    }
    img.px.resize(bytes.size());
    for (size_t i = 0; i < bytes.size(); ++i) img.px[i] = bytes[i] / 255.0;
    return img;
}

void write_pgm(const std::string& path, int w, int h, const std::vector<int>& values,
               int maxval) {
    if (maxval < 1 || maxval > 255) {
        throw ContractError("write_pgm: maxval " + std::to_string(maxval) +
                            " outside [1,255]");
    }
    if (values.size() != static_cast<size_t>(w) * h) {
        throw ContractError("write_pgm: value count does not match dimensions");
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError(path + ": cannot open for writing");
    out << "P5\n" << w << " " << h << "\n" << maxval << "\n";
    std::vector<uint8_t> bytes(values.size());
    for (size_t i = 0; i < values.size(); ++i) {
        if (values[i] < 0 || values[i] > maxval) {
            throw ContractError("write_pgm: value " + std::to_string(values[i]) +
                                " exceeds maxval " + std::to_string(maxval));
        }
        bytes[i] = static_cast<uint8_t>(values[i]);
    }
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError(path + ": write failed");
}

std::vector<int> read_pgm(const std::string& path, int& w, int& h, int& maxval) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(path + ": cannot open");
    if (next_token(in) != "P5") throw IoError(path + ": corrupt header (not P5)");
    w = parse_dim(next_token(in), path, "width");
    h = parse_dim(next_token(in), path, "height");
    maxval = parse_dim(next_token(in), path, "maxval");
    if (maxval > 255) throw IoError(path + ": unsupported maxval " + std::to_string(maxval));
    std::vector<uint8_t> bytes(static_cast<size_t>(w) * h);
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (in.gcount() != static_cast<std::streamsize>(bytes.size())) {
        throw IoError(path + ": truncated pixel data");
    }
    return std::vector<int>(bytes.begin(), bytes.end());
}

void quantize_to_8bit(Image& img) {
    for (double& v : img.px) v = to_byte(v) / 255.0;
}

// ---- color -----------------------------------------------------------

void rgb_to_hsv(double r, double g, double b, double& h, double& s, double& v) {
    const double mx = std::max({r, g, b});
    const double mn = std::min({r, g, b});
    const double d = mx - mn;
    v = mx;
    s = mx <= 0.0 ? 0.0 : d / mx;
    if (d <= 0.0) {
        h = 0.0;
        return;
    }
    if (mx == r) {
        h = (g - b) / d;
    } else if (mx == g) {
        h = 2.0 + (b - r) / d;
    } else {
        h = 4.0 + (r - g) / d;
    }
    h /= 6.0;
    if (h < 0.0) h += 1.0;
}

void hsv_to_rgb(double h, double s, double v, double& r, double& g, double& b) {
    h = h - std::floor(h);  // wrap to [0,1)
    const double i = std::floor(h * 6.0);
    const double f = h * 6.0 - i;
    const double p = v * (1.0 - s);
    const double q = v * (1.0 - s * f);
    const double t = v * (1.0 - s * (1.0 - f));
    switch (static_cast<int>(i) % 6) {
        case 0: r = v; g = t; b = p; break;
        case 1: r = q; g = v; b = p; break;
        case 2: r = p; g = v; b = t; break;
        case 3: r = p; g = q; b = v; break;
        case 4: r = t; g = p; b = v; break;
        default: r = v; g = p; b = q; break;
    }
}

// ---- transforms ------------------------------------------------------

namespace {

double luma(const double* p) { return 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]; }

void clamp01(Image& img) {
    for (double& v : img.px) v = std::clamp(v, 0.0, 1.0);
}

}  // namespace

Image color_jitter(const Image& img, std::mt19937_64& rng, double brightness,
                   double contrast, double saturation, double hue) {
    std::uniform_real_distribution<double> ub(1.0 - brightness, 1.0 + brightness);
    std::uniform_real_distribution<double> uc(1.0 - contrast, 1.0 + contrast);
    std::uniform_real_distribution<double> us(1.0 - saturation, 1.0 + saturation);
    std::uniform_real_distribution<double> uh(-hue, hue);
    const double fb = ub(rng), fc = uc(rng), fs = us(rng), dh = uh(rng);

    Image out = img;
    for (double& v : out.px) v *= fb;
    clamp01(out);

    double mean_luma = 0.0;
    for (size_t i = 0; i < out.px.size(); i += 3) mean_luma += luma(&out.px[i]);
    mean_luma /= static_cast<double>(out.px.size() / 3);
    for (size_t i = 0; i < out.px.size(); i += 3) {
        for (int c = 0; c < 3; ++c)
            out.px[i + c] = fc * out.px[i + c] + (1.0 - fc) * mean_luma;
    }
    clamp01(out);

    for (size_t i = 0; i < out.px.size(); i += 3) {
        const double g = luma(&out.px[i]);
        for (int c = 0; c < 3; ++c) out.px[i + c] = fs * out.px[i + c] + (1.0 - fs) * g;
    }
    clamp01(out);

    if (hue > 0.0) {
        for (size_t i = 0; i < out.px.size(); i += 3) {
            double h, s, v;
            rgb_to_hsv(out.px[i], out.px[i + 1], out.px[i + 2], h, s, v);
            hsv_to_rgb(h + dh, s, v, out.px[i], out.px[i + 1], out.px[i + 2]);
        }
        clamp01(out);
    }
    return out;
}

Image box_blur3(const Image& img) {
    Image out = img;
    for (int y = 0; y < img.h; ++y) {
        for (int x = 0; x < img.w; ++x) {
            double acc[3] = {0, 0, 0};
            for (int dy = -1; dy <= 1; ++dy) {
                for (int dx = -1; dx <= 1; ++dx) {
                    const int sx = std::clamp(x + dx, 0, img.w - 1);
                    const int sy = std::clamp(y + dy, 0, img.h - 1);
                    const double* p = img.at(sx, sy);
                    acc[0] += p[0];
                    acc[1] += p[1];
                    acc[2] += p[2];
                }
            }
            double* q = out.at(x, y);
            q[0] = acc[0] / 9.0;
            q[1] = acc[1] / 9.0;
            q[2] = acc[2] / 9.0;
        }
    }
    return out;
}

Image rotate_image(const Image& img, double radians, const double fill[3]) {
    Image out = img;
    const double cx = (img.w - 1) / 2.0, cy = (img.h - 1) / 2.0;
    const double ca = std::cos(-radians), sa = std::sin(-radians);
    for (int y = 0; y < img.h; ++y) {
        for (int x = 0; x < img.w; ++x) {
            const double dx = x - cx, dy = y - cy;
            const double sxf = ca * dx - sa * dy + cx;
            const double syf = sa * dx + ca * dy + cy;
            double* q = out.at(x, y);
            const int x0 = static_cast<int>(std::floor(sxf));
            const int y0 = static_cast<int>(std::floor(syf));
            if (x0 < -1 || y0 < -1 || x0 > img.w - 1 || y0 > img.h - 1) {
                q[0] = fill[0];
                q[1] = fill[1];
                q[2] = fill[2];
                continue;
            }
            const double fx = sxf - x0, fy = syf - y0;
            for (int c = 0; c < 3; ++c) {
                auto sample = [&](int sx, int sy) {
                    if (sx < 0 || sy < 0 || sx >= img.w || sy >= img.h) return fill[c];
                    return img.at(sx, sy)[c];
                };
                const double top = (1 - fx) * sample(x0, y0) + fx * sample(x0 + 1, y0);
                const double bot = (1 - fx) * sample(x0, y0 + 1) + fx * sample(x0 + 1, y0 + 1);
                q[c] = (1 - fy) * top + fy * bot;
            }
        }
    }
    return out;
}

Mask rotate_mask(const Mask& m, double radians) {
    Mask out = m;
    const double cx = (m.w - 1) / 2.0, cy = (m.h - 1) / 2.0;
    const double ca = std::cos(-radians), sa = std::sin(-radians);
    for (int y = 0; y < m.h; ++y) {
        for (int x = 0; x < m.w; ++x) {
            const double dx = x - cx, dy = y - cy;
            const int sx = static_cast<int>(std::lround(ca * dx - sa * dy + cx));
            const int sy = static_cast<int>(std::lround(sa * dx + ca * dy + cy));
            out.at(x, y) =
                (sx < 0 || sy < 0 || sx >= m.w || sy >= m.h) ? 0 : m.at(sx, sy);
        }
    }
    return out;
}

Image resize_bilinear(const Image& img, int out_w, int out_h) {
    Image out;
    out.w = out_w;
    out.h = out_h;
    out.px.resize(3 * static_cast<size_t>(out_w) * out_h);
    const double sx = static_cast<double>(img.w) / out_w;
    const double sy = static_cast<double>(img.h) / out_h;
    for (int y = 0; y < out_h; ++y) {
        for (int x = 0; x < out_w; ++x) {
            // pixel-center mapping
            const double fxc = (x + 0.5) * sx - 0.5;
            const double fyc = (y + 0.5) * sy - 0.5;
            const int x0 = static_cast<int>(std::floor(fxc));
            const int y0 = static_cast<int>(std::floor(fyc));
            const double fx = fxc - x0, fy = fyc - y0;
            auto cl = [&](int v, int hi) { return std::clamp(v, 0, hi - 1); };
            double* q = out.at(x, y);
            for (int c = 0; c < 3; ++c) {
                const double a = img.at(cl(x0, img.w), cl(y0, img.h))[c];
                const double b = img.at(cl(x0 + 1, img.w), cl(y0, img.h))[c];
                const double d = img.at(cl(x0, img.w), cl(y0 + 1, img.h))[c];
                const double e = img.at(cl(x0 + 1, img.w), cl(y0 + 1, img.h))[c];
                q[c] = (1 - fy) * ((1 - fx) * a + fx * b) + fy * ((1 - fx) * d + fx * e);
            }
        }
    }
    return out;
}

Mask resize_nearest(const Mask& m, int out_w, int out_h) {
    Mask out;
    out.w = out_w;
    out.h = out_h;
    out.v.resize(static_cast<size_t>(out_w) * out_h);
    for (int y = 0; y < out_h; ++y) {
        for (int x = 0; x < out_w; ++x) {
            const int sx = std::min(m.w - 1, static_cast<int>((x + 0.5) * m.w / out_w));
            const int sy = std::min(m.h - 1, static_cast<int>((y + 0.5) * m.h / out_h));
            out.at(x, y) = m.at(sx, sy);
        }
    }
    return out;
}

namespace {

template <class T, class CropCopy>
T crop_common(const T& src, double frac, CropCopy copy) {
    const int side = std::max(1, static_cast<int>(std::lround(frac * std::min(src.w, src.h))));
    const int x0 = (src.w - side) / 2;
    const int y0 = (src.h - side) / 2;
    return copy(x0, y0, side);
}

}  // namespace

Image center_crop_resize(const Image& img, double frac) {
    Image cropped = crop_common(img, frac, [&](int x0, int y0, int side) {
        Image c;
        c.w = side;
        c.h = side;
        c.px.resize(3 * static_cast<size_t>(side) * side);
        for (int y = 0; y < side; ++y)
            for (int x = 0; x < side; ++x)
                for (int ch = 0; ch < 3; ++ch)
                    c.at(x, y)[ch] = img.at(x0 + x, y0 + y)[ch];
        return c;
    });
    return resize_bilinear(cropped, img.w, img.h);
}

Mask center_crop_resize(const Mask& m, double frac) {
    Mask cropped = crop_common(m, frac, [&](int x0, int y0, int side) {
        Mask c = Mask::zeros(side, side);
        for (int y = 0; y < side; ++y)
            for (int x = 0; x < side; ++x) c.at(x, y) = m.at(x0 + x, y0 + y);
        return c;
    });
    return resize_nearest(cropped, m.w, m.h);
}

Image flip_h(const Image& img) {
    Image out = img;
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x)
            for (int c = 0; c < 3; ++c) out.at(x, y)[c] = img.at(img.w - 1 - x, y)[c];
    return out;
}

Image flip_v(const Image& img) {
    Image out = img;
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x)
            for (int c = 0; c < 3; ++c) out.at(x, y)[c] = img.at(x, img.h - 1 - y)[c];
    return out;
}

Mask flip_h(const Mask& m) {
    Mask out = m;
    for (int y = 0; y < m.h; ++y)
        for (int x = 0; x < m.w; ++x) out.at(x, y) = m.at(m.w - 1 - x, y);
    return out;
}

Mask flip_v(const Mask& m) {
    Mask out = m;
    for (int y = 0; y < m.h; ++y)
        for (int x = 0; x < m.w; ++x) out.at(x, y) = m.at(x, m.h - 1 - y);
    return out;
}

}  // namespace sivit
