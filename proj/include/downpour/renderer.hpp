#pragma once

#include <memory>

#include "downpour/core.hpp"
#include "downpour/particle_system.hpp"
#include "downpour/scene_io.hpp"

namespace downpour {

enum class RenderMode { render, differentiate };

struct RenderParams {
  RenderMode mode = RenderMode::render;
  BlendMode blend = BlendMode::additive;
  double beta = 250.0;  // occlusion sharpness

  static RenderParams for_render(BlendMode b) { return {RenderMode::render, b, 250.0}; }
  static RenderParams for_differentiation(BlendMode b) {
    return {RenderMode::differentiate, b, 30.0};
  }
};

// Everything backward needs to replay the forward pass exactly: the inputs
// plus the pre-clamp images (for the saturation mask and the Meshkin term).
// Scene and particle set must outlive the tape.
struct RenderTape {
  const SceneBundle* scene = nullptr;
  const ParticleSet* ps = nullptr;
  RenderParams params;
  Image pre1, pre2;
};

struct RenderOutput {
  Image aug1, aug2;
  std::shared_ptr<RenderTape> tape;
};

// Per-parent gradients; blur replica contributions are already folded in.
struct ParticleGrads {
  std::vector<Vec3> dp1, dp2, color;
  std::vector<double> theta;

  explicit ParticleGrads(size_t n = 0) : dp1(n), dp2(n), color(n), theta(n) {}
};

// ---------------------------------------------------------------------------
// projection (Eqs. of the two-frame motion model)
// ---------------------------------------------------------------------------

struct ProjectedParticle {
  Vec2 img1, img2;
  double d1 = 0, d2 = 0;
  bool vis1 = false, vis2 = false;  // camera-z above the near-plane epsilon
};

inline ProjectedParticle project_particle(const Particle& p, const SceneBundle& scene) {
  SE3 t_rel = scene.relative_transform();
  ProjectedParticle out;
  Vec3 q = p.p1 + p.dp1;
  out.d1 = q.z;
  if (q.z > kMinCameraZ) {
    out.vis1 = true;
    out.img1 = project_point(scene, q);
  }
  Vec3 r = t_rel.apply(q) + p.m + p.dp2;
  out.d2 = r.z;
  if (r.z > kMinCameraZ) {
    out.vis2 = true;
    out.img2 = project_point(scene, r);
  }
  return out;
}

// ---------------------------------------------------------------------------
// visibility (soft depth test)
// ---------------------------------------------------------------------------

// V = 1 / (1 + exp(beta * (d - D))): ~1 in front of the scene surface, ~0
// behind it. IEEE exp overflow saturates the quotient to 0 on its own.
inline double visibility(double particle_depth, double scene_depth, double beta) {
  return 1.0 / (1.0 + std::exp(beta * (particle_depth - scene_depth)));
}

inline Grid visibility_map(double particle_depth, const Grid& depth_crop, double beta) {
  if (!(beta > 0)) throw contract_error("visibility_map: beta must be > 0");
  Grid v(depth_crop.h, depth_crop.w);
  for (size_t i = 0; i < v.size(); ++i)
    v.v[i] = visibility(particle_depth, depth_crop.v[i], beta);
  return v;
}

// ---------------------------------------------------------------------------
// splatting
// ---------------------------------------------------------------------------

// Distributes template texels (times an optional per-texel weight) onto the
// four integer neighbors of each subpixel location. Off-image contributions
// are dropped. Kept as a free operation for tests; the renderer fuses the
// same arithmetic into its accumulation loop.
inline void splat(Grid& acc, const Template& tpl, Vec2 center, const Grid* weight = nullptr) {
  if (!std::isfinite(center.x) || !std::isfinite(center.y))
    throw contract_error("splat: center must be finite");
  double ox = center.x - tpl.cx(), oy = center.y - tpl.cy();
  for (int ty = 0; ty < tpl.h; ++ty)
    for (int tx = 0; tx < tpl.w; ++tx) {
      double val = tpl.at(ty, tx);
      if (weight) val *= weight->at(ty, tx);
      if (val == 0.0) continue;
      double px = ox + tx, py = oy + ty;
      int x0 = (int)std::floor(px), y0 = (int)std::floor(py);
      double fx = px - x0, fy = py - y0;
      const double w[4] = {(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy};
      const int xs[4] = {x0, x0 + 1, x0, x0 + 1};
      const int ys[4] = {y0, y0, y0 + 1, y0 + 1};
      for (int k = 0; k < 4; ++k) {
        if (xs[k] < 0 || xs[k] >= acc.w || ys[k] < 0 || ys[k] >= acc.h) continue;
        acc.at(ys[k], xs[k]) += val * w[k];
      }
    }
}

// ---------------------------------------------------------------------------
// forward rendering
// ---------------------------------------------------------------------------

namespace detail {

// per-pixel sums S_theta = sum theta*A and S_color_c = sum gamma_c*theta*A,
// compensated so particle order and thread count cannot shift the result
struct FrameAccum {
  int h = 0, w = 0;
  std::vector<Accum> s_theta;       // h*w
  std::vector<Accum> s_color;      // h*w*3

  void reset(int h_, int w_) {
    h = h_;
    w = w_;
    s_theta.assign((size_t)h * w, Accum{});
    s_color.assign((size_t)h * w * 3, Accum{});
  }
  void merge_in_order(const FrameAccum& chunk) {
    for (size_t i = 0; i < s_theta.size(); ++i) {
      s_theta[i].add(chunk.s_theta[i].s);
      s_theta[i].add(chunk.s_theta[i].c);
    }
    for (size_t i = 0; i < s_color.size(); ++i) {
      s_color[i].add(chunk.s_color[i].s);
      s_color[i].add(chunk.s_color[i].c);
    }
  }
};

// plain-double scratch a single particle splats into before the compensated
// fold; bounds the costly Accum updates to once per touched pixel
struct Patch {
  int h = 0, w = 0;
  std::vector<double> v;  // 4 channels: theta, r, g, b
  int x0 = 0, x1 = -1, y0 = 0, y1 = -1;

  void reset(int h_, int w_) {
    h = h_;
    w = w_;
    v.assign((size_t)h * w * 4, 0.0);
    x0 = y0 = 0;
    x1 = y1 = -1;
  }
  void clear_dirty() {
    for (int y = y0; y <= y1; ++y)
      std::fill(v.begin() + ((size_t)y * w + x0) * 4, v.begin() + ((size_t)y * w + x1 + 1) * 4,
                0.0);
    x0 = y0 = 0;
    x1 = y1 = -1;
  }
};

struct FootprintWindow {
  int tx0, tx1, ty0, ty1;  // texel range whose splats can touch the image
  double ox, oy;           // image position of texel (0,0)
  bool empty;
};

inline FootprintWindow footprint_window(const Footprint& fp, Vec2 center, int W, int H) {
  FootprintWindow w{};
  long long ext = fp.extent();
  double a = fp.center();
  w.ox = center.x - a;
  w.oy = center.y - a;
  long long tx0 = (long long)std::floor(-1.0 - w.ox);
  long long tx1 = (long long)std::ceil(W - w.ox);
  long long ty0 = (long long)std::floor(-1.0 - w.oy);
  long long ty1 = (long long)std::ceil(H - w.oy);
  tx0 = std::max(0ll, tx0);
  ty0 = std::max(0ll, ty0);
  tx1 = std::min(ext - 1, tx1);
  ty1 = std::min(ext - 1, ty1);
  w.tx0 = (int)tx0;
  w.tx1 = (int)tx1;
  w.ty0 = (int)ty0;
  w.ty1 = (int)ty1;
  w.empty = tx0 > tx1 || ty0 > ty1;
  return w;
}

// depth sample with clamped coordinates + derivative w.r.t. position
// (zero in a clamped axis)
inline double depth_sample(const Grid& g, double x, double y, double* gx = nullptr,
                           double* gy = nullptr) {
  bool cx = x <= 0.0 || x >= g.w - 1;
  bool cy = y <= 0.0 || y >= g.h - 1;
  double xc = std::clamp(x, 0.0, (double)(g.w - 1));
  double yc = std::clamp(y, 0.0, (double)(g.h - 1));
  int x0 = std::min((int)xc, g.w - 2 >= 0 ? g.w - 2 : 0);
  int y0 = std::min((int)yc, g.h - 2 >= 0 ? g.h - 2 : 0);
  int x1 = std::min(x0 + 1, g.w - 1);
  int y1 = std::min(y0 + 1, g.h - 1);
  double fx = xc - x0, fy = yc - y0;
  double d00 = g.at(y0, x0), d01 = g.at(y0, x1), d10 = g.at(y1, x0), d11 = g.at(y1, x1);
  if (gx) *gx = cx ? 0.0 : (1 - fy) * (d01 - d00) + fy * (d11 - d10);
  if (gy) *gy = cy ? 0.0 : (1 - fx) * (d10 - d00) + fx * (d11 - d01);
  return (1 - fy) * ((1 - fx) * d00 + fx * d01) + fy * ((1 - fx) * d10 + fx * d11);
}

constexpr int kChunkSize = 64;
constexpr double kSigmoidCutoff = 40.0;  // beyond this V is 0/1 to ~4e-18

// forward splat of one particle into the patch; returns false if invisible
inline bool splat_particle(const SceneBundle& scene, const Particle& p, const Footprint& fp,
                           int frame, double beta, bool need_theta_channel, Patch& patch) {
  SE3 t_rel = scene.relative_transform();
  Vec3 q = p.p1 + p.dp1;
  Vec3 cam = frame == 1 ? q : t_rel.apply(q) + p.m + p.dp2;
  if (cam.z <= kMinCameraZ) return false;
  Vec2 center = project_point(scene, cam);
  if (!std::isfinite(center.x) || !std::isfinite(center.y)) return false;
  const Grid& depth = frame == 1 ? scene.depth1 : scene.depth2;
  double d = cam.z;

  FootprintWindow win = footprint_window(fp, center, scene.width(), scene.height());
  if (win.empty) return false;

  int W = scene.width(), H = scene.height();
  for (int ty = win.ty0; ty <= win.ty1; ++ty) {
    double py = win.oy + ty;
    for (int tx = win.tx0; tx <= win.tx1; ++tx) {
      double b = fp.value(ty, tx);
      if (b == 0.0) continue;
      double px = win.ox + tx;
      double D = depth_sample(depth, px, py);
      double arg = beta * (d - D);
      if (arg > kSigmoidCutoff) continue;
      double V = arg < -kSigmoidCutoff ? 1.0 : 1.0 / (1.0 + std::exp(arg));
      double coef = p.theta * b * V;

      int x0 = (int)std::floor(px), y0 = (int)std::floor(py);
      double fx = px - x0, fy = py - y0;
      const double w[4] = {(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy};
      const int xs[4] = {x0, x0 + 1, x0, x0 + 1};
      const int ys[4] = {y0, y0, y0 + 1, y0 + 1};
      for (int k = 0; k < 4; ++k) {
        int X = xs[k], Y = ys[k];
        if (X < 0 || X >= W || Y < 0 || Y >= H) continue;
        double* cell = patch.v.data() + ((size_t)Y * W + X) * 4;
        double cw = coef * w[k];
        if (need_theta_channel) cell[0] += cw;
        cell[1] += p.color.x * cw;
        cell[2] += p.color.y * cw;
        cell[3] += p.color.z * cw;
        if (patch.x1 < patch.x0) {  // first touch
          patch.x0 = patch.x1 = X;
          patch.y0 = patch.y1 = Y;
        } else {
          patch.x0 = std::min(patch.x0, X);
          patch.x1 = std::max(patch.x1, X);
          patch.y0 = std::min(patch.y0, Y);
          patch.y1 = std::max(patch.y1, Y);
        }
      }
    }
  }
  return true;
}

}  // namespace detail

inline RenderOutput render(const SceneBundle& scene, const ParticleSet& ps,
                           const RenderParams& params) {
  if (!(params.beta > 0)) throw contract_error("render: beta must be > 0");
  if (ps.config.blur_enabled && !ps.expanded)
    throw contract_error("render: motion blur configured but particle set not expanded");

  const std::vector<Particle>& list = ps.render_list();
  int W = scene.width(), H = scene.height();
  bool need_theta = params.blend == BlendMode::meshkin;

  int n_chunks = (int)((list.size() + detail::kChunkSize - 1) / detail::kChunkSize);
  detail::FrameAccum total[2];
  total[0].reset(H, W);
  total[1].reset(H, W);

  if (n_chunks > 0) {
    // waves of per-worker buffers, merged in chunk order so the result is
    // identical for any worker count
    int buffers = std::min(worker_count(), n_chunks);
    std::vector<std::array<detail::FrameAccum, 2>> chunk_acc(buffers);
    std::vector<detail::Patch> patches(buffers);
    for (int wave = 0; wave * buffers < n_chunks; ++wave) {
      int lo = wave * buffers;
      int hi = std::min(n_chunks, lo + buffers);
      parallel_chunks(hi - lo, [&](int slot) {
        int chunk = lo + slot;
        auto& acc = chunk_acc[slot];
        acc[0].reset(H, W);
        acc[1].reset(H, W);
        detail::Patch& patch = patches[slot];
        if (patch.v.empty()) patch.reset(H, W);
        size_t begin = (size_t)chunk * detail::kChunkSize;
        size_t end = std::min(list.size(), begin + detail::kChunkSize);
        for (size_t i = begin; i < end; ++i) {
          const Particle& p = list[i];
          const ParticleAsset& asset = ps.assets[p.parent];
          for (int frame = 1; frame <= 2; ++frame) {
            const Footprint& fp = frame == 1 ? asset.f1 : asset.f2;
            if (!detail::splat_particle(scene, p, fp, frame, params.beta, need_theta, patch))
              continue;
            detail::FrameAccum& fa = acc[frame - 1];
            for (int y = patch.y0; y <= patch.y1; ++y)
              for (int x = patch.x0; x <= patch.x1; ++x) {
                const double* cell = patch.v.data() + ((size_t)y * W + x) * 4;
                size_t px = (size_t)y * W + x;
                if (need_theta && cell[0] != 0.0) fa.s_theta[px].add(cell[0]);
                for (int c = 0; c < 3; ++c)
                  if (cell[1 + c] != 0.0) fa.s_color[px * 3 + c].add(cell[1 + c]);
              }
            patch.clear_dirty();
          }
        }
      });
      for (int slot = 0; slot < hi - lo; ++slot) {
        total[0].merge_in_order(chunk_acc[slot][0]);
        total[1].merge_in_order(chunk_acc[slot][1]);
      }
    }
  }

  RenderOutput out;
  auto tape = std::make_shared<RenderTape>();
  tape->scene = &scene;
  tape->ps = &ps;
  tape->params = params;

  for (int frame = 1; frame <= 2; ++frame) {
    const Image& base = frame == 1 ? scene.frame1 : scene.frame2;
    Image pre(H, W);
    Image aug(H, W);
    const detail::FrameAccum& fa = total[frame - 1];
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        size_t px = (size_t)y * W + x;
        double st = need_theta ? fa.s_theta[px].value() : 0.0;
        for (int c = 0; c < 3; ++c) {
          double sc = fa.s_color[px * 3 + c].value();
          double v = params.blend == BlendMode::additive
                         ? base.at(y, x, c) + sc
                         : base.at(y, x, c) * (1.0 - st) + sc;
          pre.at(y, x, c) = v;
          aug.at(y, x, c) = clamp01(v);
        }
      }
    (frame == 1 ? tape->pre1 : tape->pre2) = std::move(pre);
    (frame == 1 ? out.aug1 : out.aug2) = std::move(aug);
  }
  out.tape = std::move(tape);
  return out;
}

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------

namespace detail {

// adjoint of one particle in one frame; mirrors splat_particle texel by texel
inline void backward_particle(const SceneBundle& scene, const Particle& p, const Footprint& fp,
                              int frame, double beta, const Image& g_color,
                              const Grid* g_theta_map, Vec3& g_dp1, Vec3& g_dp2, Vec3& g_color_out,
                              double& g_theta_out) {
  SE3 t_rel = scene.relative_transform();
  Vec3 q = p.p1 + p.dp1;
  Vec3 cam = frame == 1 ? q : t_rel.apply(q) + p.m + p.dp2;
  if (cam.z <= kMinCameraZ) return;
  Vec2 center = project_point(scene, cam);
  if (!std::isfinite(center.x) || !std::isfinite(center.y)) return;
  const Grid& depth = frame == 1 ? scene.depth1 : scene.depth2;
  double d = cam.z;

  FootprintWindow win = footprint_window(fp, center, scene.width(), scene.height());
  if (win.empty) return;

  int W = scene.width(), H = scene.height();
  double g_cx = 0, g_cy = 0, g_d = 0, g_theta = 0;
  Vec3 g_gamma{0, 0, 0};

  for (int ty = win.ty0; ty <= win.ty1; ++ty) {
    double py = win.oy + ty;
    for (int tx = win.tx0; tx <= win.tx1; ++tx) {
      double b = fp.value(ty, tx);
      if (b == 0.0) continue;
      double px = win.ox + tx;
      double dDdx, dDdy;
      double D = depth_sample(depth, px, py, &dDdx, &dDdy);
      double arg = beta * (d - D);
      if (arg > kSigmoidCutoff) continue;
      double V = arg < -kSigmoidCutoff ? 1.0 : 1.0 / (1.0 + std::exp(arg));

      int x0 = (int)std::floor(px), y0 = (int)std::floor(py);
      double fx = px - x0, fy = py - y0;
      const double w[4] = {(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy};
      const int xs[4] = {x0, x0 + 1, x0, x0 + 1};
      const int ys[4] = {y0, y0, y0 + 1, y0 + 1};

      // bracket_k = sum_c gamma_c * gS_color_c + gS_theta at splat target k
      double bracket[4] = {0, 0, 0, 0};
      double gup[4][3] = {};
      bool any = false;
      for (int k = 0; k < 4; ++k) {
        int X = xs[k], Y = ys[k];
        if (X < 0 || X >= W || Y < 0 || Y >= H) continue;
        for (int c = 0; c < 3; ++c) gup[k][c] = g_color.at(Y, X, c);
        bracket[k] = p.color.x * gup[k][0] + p.color.y * gup[k][1] + p.color.z * gup[k][2];
        if (g_theta_map) bracket[k] += g_theta_map->at(Y, X);
        any = true;
      }
      if (!any) continue;

      double common = w[0] * bracket[0] + w[1] * bracket[1] + w[2] * bracket[2] +
                      w[3] * bracket[3];
      g_theta += b * V * common;
      double tbV = p.theta * b * V;
      for (int c = 0; c < 3; ++c)
        g_gamma[c] += tbV * (w[0] * gup[0][c] + w[1] * gup[1][c] + w[2] * gup[2][c] +
                             w[3] * gup[3][c]);
      // bilinear weight derivatives
      double dwx = (1 - fy) * (bracket[1] - bracket[0]) + fy * (bracket[3] - bracket[2]);
      double dwy = (1 - fx) * (bracket[2] - bracket[0]) + fx * (bracket[3] - bracket[1]);
      g_cx += tbV * dwx;
      g_cy += tbV * dwy;
      // visibility: dV/dd = -beta V (1-V), dV/dD = +beta V (1-V)
      double gV = p.theta * b * common;
      double sig = beta * V * (1.0 - V);
      g_d += gV * -sig;
      g_cx += gV * sig * dDdx;
      g_cy += gV * sig * dDdy;
    }
  }

  // projection adjoint: center = (fx qx/qz + cx, fy qy/qz + cy), depth = qz
  double fx_ = scene.fx(), fy_ = scene.fy();
  Vec3 g_cam{g_cx * fx_ / cam.z, g_cy * fy_ / cam.z,
             -(g_cx * fx_ * cam.x + g_cy * fy_ * cam.y) / (cam.z * cam.z) + g_d};
  if (frame == 1) {
    g_dp1 += g_cam;
    g_dp2 += p.blur_frac * g_cam;  // replica p1 carries blur_frac*(m+dp2)
  } else {
    Vec3 g_q = t_rel.R.transposed() * g_cam;
    g_dp1 += g_q;
    g_dp2 += p.blur_frac * g_q + g_cam;
  }
  g_color_out += g_gamma;
  g_theta_out += g_theta;
}

}  // namespace detail

// Reverse-mode pass: from gradients on the augmented images to gradients on
// the per-parent offsets, colors and transparencies. Clamp saturation uses
// subgradient zero; replica gradients fold into their parents.
inline ParticleGrads backward(const RenderTape& tape, const Image& grad_aug1,
                              const Image& grad_aug2) {
  if (tape.params.mode != RenderMode::differentiate)
    throw contract_error("backward: tape was not built in differentiate mode");
  const SceneBundle& scene = *tape.scene;
  const ParticleSet& ps = *tape.ps;
  int W = scene.width(), H = scene.height();
  if (grad_aug1.w != W || grad_aug1.h != H || grad_aug2.w != W || grad_aug2.h != H)
    throw contract_error("backward: gradient image dimensions mismatch");

  // per-pixel upstream maps
  Image g_color[2] = {Image(H, W), Image(H, W)};
  Grid g_theta_map[2];
  bool meshkin = tape.params.blend == BlendMode::meshkin;
  if (meshkin) {
    g_theta_map[0] = Grid(H, W);
    g_theta_map[1] = Grid(H, W);
  }
  for (int f = 0; f < 2; ++f) {
    const Image& pre = f == 0 ? tape.pre1 : tape.pre2;
    const Image& g_aug = f == 0 ? grad_aug1 : grad_aug2;
    const Image& base = f == 0 ? scene.frame1 : scene.frame2;
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        double gst = 0;
        for (int c = 0; c < 3; ++c) {
          double v = pre.at(y, x, c);
          double g = (v > 0.0 && v < 1.0) ? g_aug.at(y, x, c) : 0.0;
          g_color[f].at(y, x, c) = g;
          if (meshkin) gst -= g * base.at(y, x, c);
        }
        if (meshkin) g_theta_map[f].at(y, x) = gst;
      }
  }

  const std::vector<Particle>& list = ps.render_list();
  size_t n = list.size();
  std::vector<Vec3> r_dp1(n), r_dp2(n), r_color(n);
  std::vector<double> r_theta(n, 0.0);

  int n_chunks = (int)((n + detail::kChunkSize - 1) / detail::kChunkSize);
  parallel_chunks(n_chunks, [&](int chunk) {
    size_t begin = (size_t)chunk * detail::kChunkSize;
    size_t end = std::min(n, begin + detail::kChunkSize);
    for (size_t i = begin; i < end; ++i) {
      const Particle& p = list[i];
      const ParticleAsset& asset = ps.assets[p.parent];
      for (int frame = 1; frame <= 2; ++frame) {
        detail::backward_particle(scene, p, frame == 1 ? asset.f1 : asset.f2, frame,
                                  tape.params.beta, g_color[frame - 1],
                                  meshkin ? &g_theta_map[frame - 1] : nullptr, r_dp1[i],
                                  r_dp2[i], r_color[i], r_theta[i]);
      }
    }
  });

  // fold replicas into parents in list order; replica theta is theta_parent/K
  ParticleGrads grads(ps.parent_count());
  double inv_k = 1.0;
  if (ps.expanded && ps.config.blur_enabled && ps.config.blur_particles > 1)
    inv_k = 1.0 / ps.config.blur_particles;
  for (size_t i = 0; i < n; ++i) {
    int parent = list[i].parent;
    grads.dp1[parent] += r_dp1[i];
    grads.dp2[parent] += r_dp2[i];
    grads.color[parent] += r_color[i];
    grads.theta[parent] += r_theta[i] * inv_k;
  }
  return grads;
}

// ---------------------------------------------------------------------------
// debug dump
// ---------------------------------------------------------------------------

inline void write_particle_debug_csv(const std::string& path, const SceneBundle& scene,
                                     const ParticleSet& ps, const RenderParams& params) {
  std::ofstream f(path);
  if (!f) throw io_error(path + ": cannot open for writing");
  f << "id,p1_img_x,p1_img_y,p2_img_x,p2_img_y,d1,d2,mean_v1,mean_v2\n";
  const auto& list = ps.render_list();
  for (size_t i = 0; i < list.size(); ++i) {
    const Particle& p = list[i];
    ProjectedParticle proj = project_particle(p, scene);
    double mean_v[2] = {0, 0};
    for (int frame = 1; frame <= 2; ++frame) {
      if (!(frame == 1 ? proj.vis1 : proj.vis2)) continue;
      const Footprint& fp = frame == 1 ? ps.assets[p.parent].f1 : ps.assets[p.parent].f2;
      const Grid& depth = frame == 1 ? scene.depth1 : scene.depth2;
      Vec2 c = frame == 1 ? proj.img1 : proj.img2;
      double d = frame == 1 ? proj.d1 : proj.d2;
      auto win = detail::footprint_window(fp, c, scene.width(), scene.height());
      if (win.empty) continue;
      double sum = 0;
      long long cnt = 0;
      for (int ty = win.ty0; ty <= win.ty1; ++ty)
        for (int tx = win.tx0; tx <= win.tx1; ++tx) {
          double D = detail::depth_sample(depth, win.ox + tx, win.oy + ty);
          sum += visibility(d, D, params.beta);
          ++cnt;
        }
      mean_v[frame - 1] = cnt ? sum / cnt : 0.0;
    }
    f << i << ',' << proj.img1.x << ',' << proj.img1.y << ',' << proj.img2.x << ','
      << proj.img2.y << ',' << proj.d1 << ',' << proj.d2 << ',' << mean_v[0] << ','
      << mean_v[1] << "\n";
  }
}

}  // namespace downpour
