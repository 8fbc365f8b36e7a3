#pragma once

#include "downpour/core.hpp"
#include "downpour/scene_io.hpp"

namespace downpour {

// average endpoint error: mean Euclidean distance between the fields
inline double aee(const FlowField& f, const FlowField& g) {
  if (f.width() != g.width() || f.height() != g.height())
    throw contract_error("aee: flow dimensions mismatch");
  Accum sum;
  for (size_t i = 0; i < f.u.size(); ++i) {
    double du = f.u.v[i] - g.u.v[i];
    double dv = f.v.v[i] - g.v.v[i];
    sum.add(std::sqrt(du * du + dv * dv));
  }
  return sum.value() / (double)f.u.size();
}

inline Grid epe_map(const FlowField& f, const FlowField& g) {
  if (f.width() != g.width() || f.height() != g.height())
    throw contract_error("epe_map: flow dimensions mismatch");
  Grid out(f.height(), f.width());
  for (size_t i = 0; i < out.size(); ++i) {
    double du = f.u.v[i] - g.u.v[i];
    double dv = f.v.v[i] - g.v.v[i];
    out.v[i] = std::sqrt(du * du + dv * dv);
  }
  return out;
}

namespace detail {

// Middlebury color wheel: 55 hues around RY/YG/GC/CB/BM/MR transitions
inline const std::vector<Vec3>& color_wheel() {
  static const std::vector<Vec3> wheel = [] {
    const int RY = 15, YG = 6, GC = 4, CB = 11, BM = 13, MR = 6;
    std::vector<Vec3> w;
    for (int i = 0; i < RY; ++i) w.push_back({1.0, (double)i / RY, 0.0});
    for (int i = 0; i < YG; ++i) w.push_back({1.0 - (double)i / YG, 1.0, 0.0});
    for (int i = 0; i < GC; ++i) w.push_back({0.0, 1.0, (double)i / GC});
    for (int i = 0; i < CB; ++i) w.push_back({0.0, 1.0 - (double)i / CB, 1.0});
    for (int i = 0; i < BM; ++i) w.push_back({(double)i / BM, 0.0, 1.0});
    for (int i = 0; i < MR; ++i) w.push_back({1.0, 0.0, 1.0 - (double)i / MR});
    return w;
  }();
  return wheel;
}

}  // namespace detail

// Standard flow visualization: hue from direction, saturation from magnitude
// normalized by the per-image maximum; zero flow renders white.
inline Image flow_to_color(const FlowField& f) {
  const auto& wheel = detail::color_wheel();
  int ncols = (int)wheel.size();
  double maxrad = 0;
  for (size_t i = 0; i < f.u.size(); ++i)
    maxrad = std::max(maxrad, std::sqrt(f.u.v[i] * f.u.v[i] + f.v.v[i] * f.v.v[i]));
  Image out(f.height(), f.width());
  for (int y = 0; y < f.height(); ++y)
    for (int x = 0; x < f.width(); ++x) {
      double u = f.u.at(y, x), v = f.v.at(y, x);
      double rad = maxrad > 1e-12 ? std::sqrt(u * u + v * v) / maxrad : 0.0;
      double a = std::atan2(-v, -u) / M_PI;  // [-1, 1]
      double fk = (a + 1.0) / 2.0 * (ncols - 1);
      int k0 = (int)fk;
      int k1 = (k0 + 1) % ncols;
      double fr = fk - k0;
      for (int c = 0; c < 3; ++c) {
        double col = (1 - fr) * wheel[k0][c] + fr * wheel[k1][c];
        out.at(y, x, c) = 1.0 - rad * (1.0 - col);
      }
    }
  return out;
}

}  // namespace downpour
