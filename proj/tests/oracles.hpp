#pragma once

// Brute-force reference implementations used only by tests. Deliberately
// independent of the production renderer: plain triple loops, no accumulators,
// no clipping shortcuts. Only data types and asset decoding are shared.

#include <functional>
#include <vector>

#include "downpour/core.hpp"
#include "downpour/particle_system.hpp"
#include "downpour/scene_io.hpp"
#include "downpour/template_lib.hpp"

namespace oracles {

using namespace downpour;

struct OracleTolerance {
  double fd_step_position = 1e-4;
  double fd_step_eta = 1e-3;
  double rel_tol = 1e-3;
  double abs_floor = 1e-8;
};

// Literal evaluation of the blending equations: per particle, build its
// visibility-weighted splat image A_j on the full pixel grid, then apply the
// additive or Meshkin update with plain sums.
inline std::pair<Image, Image> naive_render(const SceneBundle& scene, const ParticleSet& ps,
                                            double beta, BlendMode blend) {
  int W = scene.width(), H = scene.height();
  if (W > 64 || H > 64) throw contract_error("naive_render: image too large for the oracle");
  const std::vector<Particle>& list = ps.render_list();
  if (list.size() > 600) throw contract_error("naive_render: too many particles for the oracle");

  SE3 t_rel = scene.relative_transform();
  Image out1 = scene.frame1, out2 = scene.frame2;

  for (int frame = 1; frame <= 2; ++frame) {
    const Grid& depth = frame == 1 ? scene.depth1 : scene.depth2;
    Image& out = frame == 1 ? out1 : out2;
    const Image& base = frame == 1 ? scene.frame1 : scene.frame2;

    std::vector<Grid> A(list.size(), Grid(H, W));
    for (size_t j = 0; j < list.size(); ++j) {
      const Particle& p = list[j];
      Vec3 q = p.p1 + p.dp1;
      Vec3 cam = frame == 1 ? q : t_rel.apply(q) + p.m + p.dp2;
      if (cam.z <= 1e-6) continue;
      double cx = scene.fx() * cam.x / cam.z + scene.cx();
      double cy = scene.fy() * cam.y / cam.z + scene.cy();
      if (!std::isfinite(cx) || !std::isfinite(cy)) continue;
      const Footprint& fp = frame == 1 ? ps.assets[p.parent].f1 : ps.assets[p.parent].f2;
      long long ext = fp.extent();
      double anchor = fp.center();
      if (ext > 4096) throw contract_error("naive_render: footprint too large for the oracle");
      for (long long ty = 0; ty < ext; ++ty)
        for (long long tx = 0; tx < ext; ++tx) {
          double b = fp.value((int)ty, (int)tx);
          if (b == 0.0) continue;
          double px = cx + (tx - anchor), py = cy + (ty - anchor);
          double D = bilinear_clamped(depth, px, py);
          double V = 1.0 / (1.0 + std::exp(beta * (cam.z - D)));
          double val = b * V;
          int x0 = (int)std::floor(px), y0 = (int)std::floor(py);
          double fx = px - x0, fy = py - y0;
          const double w[4] = {(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy};
          const int xs[4] = {x0, x0 + 1, x0, x0 + 1};
          const int ys[4] = {y0, y0, y0 + 1, y0 + 1};
          for (int k = 0; k < 4; ++k)
            if (xs[k] >= 0 && xs[k] < W && ys[k] >= 0 && ys[k] < H)
              A[j].at(ys[k], xs[k]) += val * w[k];
        }
    }

    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x)
        for (int c = 0; c < 3; ++c) {
          double value;
          if (blend == BlendMode::additive) {
            double add = 0;
            for (size_t j = 0; j < list.size(); ++j)
              add += list[j].color[c] * list[j].theta * A[j].at(y, x);
            value = base.at(y, x, c) + add;
          } else {
            double sum_theta = 0, sum_color = 0;
            for (size_t j = 0; j < list.size(); ++j) {
              sum_theta += list[j].theta * A[j].at(y, x);
              sum_color += list[j].color[c] * list[j].theta * A[j].at(y, x);
            }
            value = base.at(y, x, c) * (1.0 - sum_theta) + sum_color;
          }
          out.at(y, x, c) = clamp01(value);
        }
  }
  return {std::move(out1), std::move(out2)};
}

// central differences of an arbitrary scalar function over named coordinates
inline std::vector<double> fd_gradient(const std::function<double()>& fn,
                                       const std::vector<double*>& coords, double step) {
  std::vector<double> g;
  g.reserve(coords.size());
  for (double* c : coords) {
    double keep = *c;
    *c = keep + step;
    double plus = fn();
    *c = keep - step;
    double minus = fn();
    *c = keep;
    g.push_back((plus - minus) / (2 * step));
  }
  return g;
}

// per-pixel reprojection ground truth: unproject with depth1, map through the
// two poses, reproject
inline FlowField reprojection_flow(const SceneBundle& s) {
  FlowField f(s.height(), s.width());
  SE3 inv1 = s.pose1.inverse();
  for (int y = 0; y < s.height(); ++y)
    for (int x = 0; x < s.width(); ++x) {
      double z = s.depth1.at(y, x);
      Vec3 cam1{(x - s.cx()) / s.fx() * z, (y - s.cy()) / s.fy() * z, z};
      Vec3 world = inv1.apply(cam1);
      Vec3 cam2 = s.pose2.apply(world);
      f.u.at(y, x) = s.fx() * cam2.x / cam2.z + s.cx() - x;
      f.v.at(y, x) = s.fy() * cam2.y / cam2.z + s.cy() - y;
    }
  return f;
}

inline bool grad_close(double analytic, double fd, const OracleTolerance& tol = {}) {
  double diff = std::abs(analytic - fd);
  if (diff <= tol.abs_floor) return true;
  return diff <= tol.rel_tol * std::max(std::abs(analytic), std::abs(fd));
}

}  // namespace oracles
