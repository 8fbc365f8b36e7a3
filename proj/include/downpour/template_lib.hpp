#pragma once

#include <cmath>
#include <vector>

#include "downpour/core.hpp"
#include "downpour/rng.hpp"

namespace downpour {

// 2D grayscale billboard; values in [0,1], odd side lengths so the center
// pixel (the projection anchor) is unambiguous.
struct Template {
  int h = 0, w = 0;
  std::vector<double> a;

  Template() = default;
  Template(int h_, int w_) : h(h_), w(w_), a((size_t)h_ * w_, 0.0) {}

  double& at(int y, int x) { return a[(size_t)y * w + x]; }
  double at(int y, int x) const { return a[(size_t)y * w + x]; }
  int cy() const { return (h - 1) / 2; }
  int cx() const { return (w - 1) / 2; }
  double mass() const {
    Accum s;
    for (double x : a) s.add(x);
    return s.value();
  }
};

// nearest odd integer (ties round up), never below 3
inline int round_to_odd(double x) {
  long long n = 2 * std::llround((x - 1.0) / 2.0) + 1;
  return (int)std::max(3ll, n);
}

inline int ensure_odd(int n) { return n % 2 == 0 ? n + 1 : n; }

// Bilinear sample treating everything outside the template as zero.
inline double bilinear_zero(const Template& t, double x, double y) {
  int x0 = (int)std::floor(x), y0 = (int)std::floor(y);
  double fx = x - x0, fy = y - y0;
  auto tap = [&](int yy, int xx) -> double {
    if (yy < 0 || yy >= t.h || xx < 0 || xx >= t.w) return 0.0;
    return t.at(yy, xx);
  };
  return (1 - fy) * ((1 - fx) * tap(y0, x0) + fx * tap(y0, x0 + 1)) +
         fy * ((1 - fx) * tap(y0 + 1, x0) + fx * tap(y0 + 1, x0 + 1));
}

enum class TemplateKind { flake, dust };

// Radially decaying blob with 6-fold angular arms, rotated by `angle`.
// The modulation fades to zero at the center so the peak there is exactly 1.
inline Template make_flake(int size, double angle) {
  size = ensure_odd(std::max(3, size));
  Template t(size, size);
  double R = (size - 1) / 2.0;
  double k = std::exp(-2.2);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      double dx = x - R, dy = y - R;
      double rn = std::sqrt(dx * dx + dy * dy) / R;
      double radial = std::max(0.0, (std::exp(-2.2 * rn * rn) - k) / (1.0 - k));
      double phi = std::atan2(dy, dx);
      double arms = 0.5 + 0.5 * std::cos(6.0 * (phi - angle));
      double blend = std::min(1.0, 3.0 * rn);
      t.at(y, x) = radial * (1.0 - 0.65 * blend * (1.0 - arms));
    }
  t.at(t.cy(), t.cx()) = 1.0;
  return t;
}

// Smooth radial falloff reaching zero at the template edge.
inline Template make_dust(int size) {
  size = ensure_odd(std::max(3, size));
  Template t(size, size);
  double R = (size - 1) / 2.0;
  double k = std::exp(-3.0);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      double dx = x - R, dy = y - R;
      double rn2 = (dx * dx + dy * dy) / (R * R);
      t.at(y, x) = std::max(0.0, (std::exp(-3.0 * rn2) - k) / (1.0 - k));
    }
  t.at(t.cy(), t.cx()) = 1.0;
  return t;
}

// Draw stream: one uniform in [0, 2pi) for the rotation angle (consumed for
// both kinds so the stream does not depend on the template kind).
inline Template make_template(TemplateKind kind, int base_size, uint64_t seed) {
  if (base_size < 3) throw contract_error("make_template: base_size must be >= 3");
  Rng rng(seed);
  double angle = rng.uniform(0.0, 2.0 * M_PI);
  return kind == TemplateKind::flake ? make_flake(base_size, angle) : make_dust(base_size);
}

inline int scaled_side(int base_size, double depth, double depth_decay) {
  return round_to_odd(base_size * depth_decay / depth);
}

// Resample to the inverse-depth side length; corner-aligned bilinear so the
// center texel maps to the center texel.
inline Template scale_by_depth(const Template& t, int base_size, double depth,
                               double depth_decay) {
  if (!(depth > 0) || !(depth_decay > 0))
    throw contract_error("scale_by_depth: depth and depth_decay must be positive");
  int side = scaled_side(base_size, depth, depth_decay);
  Template out(side, side);
  double kx = side > 1 ? (double)(t.w - 1) / (side - 1) : 0.0;
  double ky = side > 1 ? (double)(t.h - 1) / (side - 1) : 0.0;
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x) out.at(y, x) = bilinear_zero(t, x * kx, y * ky);
  return out;
}

// Normalized disk point spread function. Output is padded by the integer
// kernel reach so no mass is clipped; radius 0 is the identity.
inline Template defocus_blur(const Template& t, double radius) {
  if (radius < 0) throw contract_error("defocus_blur: radius must be >= 0");
  int R = (int)std::floor(radius);
  std::vector<std::pair<int, int>> disk;
  for (int dy = -R; dy <= R; ++dy)
    for (int dx = -R; dx <= R; ++dx)
      if (dy * dy + dx * dx <= radius * radius) disk.emplace_back(dy, dx);
  double inv = 1.0 / disk.size();
  Template out(t.h + 2 * R, t.w + 2 * R);
  for (int y = 0; y < out.h; ++y)
    for (int x = 0; x < out.w; ++x) {
      double s = 0;
      for (auto [dy, dx] : disk) {
        int sy = y - R + dy, sx = x - R + dx;
        if (sy >= 0 && sy < t.h && sx >= 0 && sx < t.w) s += t.at(sy, sx);
      }
      out.at(y, x) = s * inv;
    }
  return out;
}

inline double defocus_radius(double depth, double depth_decay) {
  return std::clamp(depth_decay / depth, 0.0, 4.0);
}

// ---------------------------------------------------------------------------
// render footprints
// ---------------------------------------------------------------------------
//
// A particle's per-frame footprint is its template scaled to the inverse-depth
// side length and convolved with the disk PSF. Near particles can dwarf the
// image, so the scaled grid is never materialized: the disk offsets are folded
// into a padded base-resolution grid (each disk tap becomes a sub-pixel shift
// of the base template), and texels are sampled from it bilinearly. Content is
// frozen at particle initialization; only placement and visibility stay
// differentiable.
struct Footprint {
  int side = 0;       // inverse-depth side length, image pixels
  int blur_reach = 0; // integer reach of the disk PSF
  double kappa = 0;   // base-template units per image pixel
  int pad = 0;        // padding of `content` around the base grid
  Template content;   // base-resolution, defocus folded in

  int extent() const { return side + 2 * blur_reach; }
  int center() const { return (extent() - 1) / 2; }

  // texel (iy, ix) of the padded image-space footprint
  double value(int iy, int ix) const {
    double bx = (ix - blur_reach) * kappa + pad;
    double by = (iy - blur_reach) * kappa + pad;
    return bilinear_zero(content, bx, by);
  }
};

inline Footprint make_footprint(const Template& base, int base_size, double depth,
                                double depth_decay) {
  Footprint fp;
  fp.side = scaled_side(base_size, depth, depth_decay);
  fp.kappa = fp.side > 1 ? (double)(base.w - 1) / (fp.side - 1) : 0.0;
  double radius = defocus_radius(depth, depth_decay);
  fp.blur_reach = (int)std::floor(radius);
  fp.pad = (int)std::ceil(fp.blur_reach * fp.kappa) + 1;

  std::vector<std::pair<int, int>> disk;
  int R = fp.blur_reach;
  for (int dy = -R; dy <= R; ++dy)
    for (int dx = -R; dx <= R; ++dx)
      if (dy * dy + dx * dx <= radius * radius) disk.emplace_back(dy, dx);
  double inv = 1.0 / disk.size();

  fp.content = Template(base.h + 2 * fp.pad, base.w + 2 * fp.pad);
  for (int y = 0; y < fp.content.h; ++y)
    for (int x = 0; x < fp.content.w; ++x) {
      double s = 0;
      for (auto [dy, dx] : disk)
        s += bilinear_zero(base, x - fp.pad - dx * fp.kappa, y - fp.pad - dy * fp.kappa);
      fp.content.at(y, x) = s * inv;
    }
  return fp;
}

}  // namespace downpour
