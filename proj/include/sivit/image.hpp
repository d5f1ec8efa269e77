#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace sivit {

// RGB raster, interleaved row-major, values in [0,1].
struct Image {
    int w = 0, h = 0;
    std::vector<double> px;  // 3*w*h

    static Image filled(int w, int h, double r, double g, double b);
    double* at(int x, int y) { return px.data() + 3 * (static_cast<size_t>(y) * w + x); }
    const double* at(int x, int y) const {
        return px.data() + 3 * (static_cast<size_t>(y) * w + x);
    }
};

// Per-pixel category raster: 0 = background, 1..K = cell category.
struct Mask {
    int w = 0, h = 0;
    std::vector<int> v;  // w*h

    static Mask zeros(int w, int h);
    int& at(int x, int y) { return v[static_cast<size_t>(y) * w + x]; }
    int at(int x, int y) const { return v[static_cast<size_t>(y) * w + x]; }
};

// ---- binary image formats --------------------------------------------
// Canonical headers: "P6\n{w} {h}\n{maxval}\n" / "P5\n{w} {h}\n{maxval}\n",
// followed by raw bytes. Writers always emit maxval <= 255 single-byte data.

void write_ppm(const Image& img, const std::string& path);
Image read_ppm(const std::string& path);

void write_pgm(const std::string& path, int w, int h, const std::vector<int>& values,
               int maxval);
// Returns values; maxval reported through out-param.
std::vector<int> read_pgm(const std::string& path, int& w, int& h, int& maxval);

// Snap every channel to the 8-bit grid (k/255). Generated images pass through
// this before being returned so a disk round-trip is bit-exact.
void quantize_to_8bit(Image& img);

// ---- color helpers ---------------------------------------------------

void rgb_to_hsv(double r, double g, double b, double& h, double& s, double& v);
void hsv_to_rgb(double h, double s, double v, double& r, double& g, double& b);

// ---- transforms (pure; rng passed explicitly where randomized) -------

// Independent brightness/contrast/saturation factors and a hue rotation,
// each drawn uniformly from [1-s, 1+s] (hue: [-s, +s] turns).
Image color_jitter(const Image& img, std::mt19937_64& rng, double brightness,
                   double contrast, double saturation, double hue);

Image box_blur3(const Image& img);

// Rotation about the image center; bilinear for pixels, nearest for masks.
// Out-of-frame reads use `fill` (image) or 0 (mask).
Image rotate_image(const Image& img, double radians, const double fill[3]);
Mask rotate_mask(const Mask& m, double radians);

Image resize_bilinear(const Image& img, int out_w, int out_h);
Mask resize_nearest(const Mask& m, int out_w, int out_h);

// Central frac*min(w,h) square crop, then resize back to the input size.
Image center_crop_resize(const Image& img, double frac);
Mask center_crop_resize(const Mask& m, double frac);

Image flip_h(const Image& img);
Image flip_v(const Image& img);
Mask flip_h(const Mask& m);
Mask flip_v(const Mask& m);

}  // namespace sivit
