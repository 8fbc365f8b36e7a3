#pragma once

#include <filesystem>
#include <memory>

#include "downpour/core.hpp"
#include "downpour/scene_io.hpp"

namespace downpour {

// Differentiable coarse-to-fine Horn-Schunck. Fixed iteration counts keep the
// computation graph static, so the reverse pass below is exact.
struct FlowEstimatorConfig {
  double lambda = 0.05;     // smoothness weight; images live in [0,1]
  int pyramid_levels = 3;
  int iterations = 100;     // per level
  double downscale = 0.5;
};

namespace flow_detail {

constexpr double kGrayR = 0.299, kGrayG = 0.587, kGrayB = 0.114;

inline Grid grayscale(const Image& img) {
  Grid g(img.h, img.w);
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x)
      g.at(y, x) = kGrayR * img.at(y, x, 0) + kGrayG * img.at(y, x, 1) +
                   kGrayB * img.at(y, x, 2);
  return g;
}

// corner-aligned bilinear resize
inline Grid resize(const Grid& src, int h, int w) {
  Grid out(h, w);
  double sx = w > 1 ? (double)(src.w - 1) / (w - 1) : 0.0;
  double sy = h > 1 ? (double)(src.h - 1) / (h - 1) : 0.0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) out.at(y, x) = bilinear_clamped(src, x * sx, y * sy);
  return out;
}

// transpose of resize: scatter gradients back to the source grid
inline void resize_adjoint(const Grid& g_out, Grid& g_src) {
  double sx = g_out.w > 1 ? (double)(g_src.w - 1) / (g_out.w - 1) : 0.0;
  double sy = g_out.h > 1 ? (double)(g_src.h - 1) / (g_out.h - 1) : 0.0;
  for (int y = 0; y < g_out.h; ++y)
    for (int x = 0; x < g_out.w; ++x) {
      double px = x * sx, py = y * sy;
      int x0 = std::min((int)px, g_src.w - 2 >= 0 ? g_src.w - 2 : 0);
      int y0 = std::min((int)py, g_src.h - 2 >= 0 ? g_src.h - 2 : 0);
      int x1 = std::min(x0 + 1, g_src.w - 1);
      int y1 = std::min(y0 + 1, g_src.h - 1);
      double fx = px - x0, fy = py - y0;
      double g = g_out.at(y, x);
      g_src.at(y0, x0) += g * (1 - fx) * (1 - fy);
      g_src.at(y0, x1) += g * fx * (1 - fy);
      g_src.at(y1, x0) += g * (1 - fx) * fy;
      g_src.at(y1, x1) += g * fx * fy;
    }
}

inline int clampi(int v, int lo, int hi) { return v < lo ? lo : (v > hi ? hi : v); }

// central differences with replicate padding
inline void spatial_gradients(const Grid& g, Grid& ix, Grid& iy) {
  ix = Grid(g.h, g.w);
  iy = Grid(g.h, g.w);
  for (int y = 0; y < g.h; ++y)
    for (int x = 0; x < g.w; ++x) {
      ix.at(y, x) = 0.5 * (g.at(y, clampi(x + 1, 0, g.w - 1)) - g.at(y, clampi(x - 1, 0, g.w - 1)));
      iy.at(y, x) = 0.5 * (g.at(clampi(y + 1, 0, g.h - 1), x) - g.at(clampi(y - 1, 0, g.h - 1), x));
    }
}

inline void spatial_gradients_adjoint(const Grid& g_ix, const Grid& g_iy, Grid& g_src) {
  int H = g_src.h, W = g_src.w;
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      g_src.at(y, clampi(x + 1, 0, W - 1)) += 0.5 * g_ix.at(y, x);
      g_src.at(y, clampi(x - 1, 0, W - 1)) -= 0.5 * g_ix.at(y, x);
      g_src.at(clampi(y + 1, 0, H - 1), x) += 0.5 * g_iy.at(y, x);
      g_src.at(clampi(y - 1, 0, H - 1), x) -= 0.5 * g_iy.at(y, x);
    }
}

// 4-neighbor average with replicate borders
inline Grid neighbor_average(const Grid& g) {
  Grid out(g.h, g.w);
  for (int y = 0; y < g.h; ++y)
    for (int x = 0; x < g.w; ++x)
      out.at(y, x) = 0.25 * (g.at(y, clampi(x - 1, 0, g.w - 1)) +
                             g.at(y, clampi(x + 1, 0, g.w - 1)) +
                             g.at(clampi(y - 1, 0, g.h - 1), x) +
                             g.at(clampi(y + 1, 0, g.h - 1), x));
  return out;
}

inline Grid neighbor_average_adjoint(const Grid& g_out) {
  Grid g(g_out.h, g_out.w);
  for (int y = 0; y < g_out.h; ++y)
    for (int x = 0; x < g_out.w; ++x) {
      double v = 0.25 * g_out.at(y, x);
      g.at(y, clampi(x - 1, 0, g.w - 1)) += v;
      g.at(y, clampi(x + 1, 0, g.w - 1)) += v;
      g.at(clampi(y - 1, 0, g.h - 1), x) += v;
      g.at(clampi(y + 1, 0, g.h - 1), x) += v;
    }
  return g;
}

// backward warp of img by flow, bilinear with clamped coordinates
inline Grid warp(const Grid& img, const FlowField& flow) {
  Grid out(img.h, img.w);
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x)
      out.at(y, x) = bilinear_clamped(img, x + flow.u.at(y, x), y + flow.v.at(y, x));
  return out;
}

// adjoint of warp w.r.t. both the image (scatter) and the flow
inline void warp_adjoint(const Grid& img, const FlowField& flow, const Grid& g_out,
                         Grid& g_img, FlowField& g_flow) {
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x) {
      double sx = x + flow.u.at(y, x), sy = y + flow.v.at(y, x);
      bool cx = sx <= 0.0 || sx >= img.w - 1;
      bool cy = sy <= 0.0 || sy >= img.h - 1;
      sx = std::clamp(sx, 0.0, (double)(img.w - 1));
      sy = std::clamp(sy, 0.0, (double)(img.h - 1));
      int x0 = std::min((int)sx, img.w - 2 >= 0 ? img.w - 2 : 0);
      int y0 = std::min((int)sy, img.h - 2 >= 0 ? img.h - 2 : 0);
      int x1 = std::min(x0 + 1, img.w - 1);
      int y1 = std::min(y0 + 1, img.h - 1);
      double fx = sx - x0, fy = sy - y0;
      double g = g_out.at(y, x);
      g_img.at(y0, x0) += g * (1 - fx) * (1 - fy);
      g_img.at(y0, x1) += g * fx * (1 - fy);
      g_img.at(y1, x0) += g * (1 - fx) * fy;
      g_img.at(y1, x1) += g * fx * fy;
      double i00 = img.at(y0, x0), i01 = img.at(y0, x1);
      double i10 = img.at(y1, x0), i11 = img.at(y1, x1);
      if (!cx) g_flow.u.at(y, x) += g * ((1 - fy) * (i01 - i00) + fy * (i11 - i10));
      if (!cy) g_flow.v.at(y, x) += g * ((1 - fx) * (i10 - i00) + fx * (i11 - i01));
    }
}

}  // namespace flow_detail

struct FlowLevelTape {
  Grid g1, g2;               // pyramid grayscales
  Grid ix, iy, it, den;
  FlowField w0;              // incoming flow (upsampled, doubled)
  std::vector<Grid> dubar, dvbar;  // neighbor averages per iteration
};

struct FlowTape {
  FlowEstimatorConfig cfg;
  int levels = 0;
  int h = 0, w = 0;
  std::vector<FlowLevelTape> level;
};

struct FlowResult {
  FlowField flow;
  std::shared_ptr<FlowTape> tape;
};

// Coarse-to-fine estimation: per level, warp frame 2 by the incoming flow,
// linearize, and run a fixed number of Horn-Schunck fixed-point iterations on
// the flow increment.
inline FlowResult estimate_flow(const Image& img1, const Image& img2,
                                const FlowEstimatorConfig& cfg = {}) {
  using namespace flow_detail;
  if (img1.w != img2.w || img1.h != img2.h)
    throw contract_error("estimate_flow: image dimensions mismatch");
  if (!(cfg.lambda > 0)) throw contract_error("estimate_flow: lambda must be > 0");
  if (cfg.iterations < 1 || cfg.pyramid_levels < 1)
    throw contract_error("estimate_flow: iterations and levels must be >= 1");

  auto tape = std::make_shared<FlowTape>();
  tape->cfg = cfg;
  tape->h = img1.h;
  tape->w = img1.w;

  // pyramid sizes; clamp level count so the coarsest stays at least 8x8
  std::vector<std::pair<int, int>> sizes{{img1.h, img1.w}};
  while ((int)sizes.size() < cfg.pyramid_levels) {
    int nh = (sizes.back().first + 1) / 2, nw = (sizes.back().second + 1) / 2;
    if (nh < 8 || nw < 8) break;
    sizes.push_back({nh, nw});
  }
  int L = (int)sizes.size();
  tape->levels = L;
  tape->level.resize(L);

  tape->level[0].g1 = grayscale(img1);
  tape->level[0].g2 = grayscale(img2);
  for (int l = 1; l < L; ++l) {
    tape->level[l].g1 = resize(tape->level[l - 1].g1, sizes[l].first, sizes[l].second);
    tape->level[l].g2 = resize(tape->level[l - 1].g2, sizes[l].first, sizes[l].second);
  }

  double lambda2 = cfg.lambda * cfg.lambda;
  FlowField w;
  for (int l = L - 1; l >= 0; --l) {
    FlowLevelTape& lt = tape->level[l];
    int h = sizes[l].first, wd = sizes[l].second;
    if (l == L - 1) {
      lt.w0 = FlowField(h, wd);
    } else {
      lt.w0 = FlowField(h, wd);
      lt.w0.u = resize(w.u, h, wd);
      lt.w0.v = resize(w.v, h, wd);
      for (auto& x : lt.w0.u.v) x *= 2.0;
      for (auto& x : lt.w0.v.v) x *= 2.0;
    }
    spatial_gradients(lt.g1, lt.ix, lt.iy);
    Grid i2w = warp(lt.g2, lt.w0);
    lt.it = Grid(h, wd);
    lt.den = Grid(h, wd);
    for (size_t i = 0; i < lt.it.size(); ++i) {
      lt.it.v[i] = i2w.v[i] - lt.g1.v[i];
      lt.den.v[i] = lambda2 + lt.ix.v[i] * lt.ix.v[i] + lt.iy.v[i] * lt.iy.v[i];
    }

    Grid du(h, wd), dv(h, wd);
    lt.dubar.reserve(cfg.iterations);
    lt.dvbar.reserve(cfg.iterations);
    for (int it = 0; it < cfg.iterations; ++it) {
      Grid dub = neighbor_average(du);
      Grid dvb = neighbor_average(dv);
      for (size_t i = 0; i < du.size(); ++i) {
        double num = lt.ix.v[i] * dub.v[i] + lt.iy.v[i] * dvb.v[i] + lt.it.v[i];
        du.v[i] = dub.v[i] - lt.ix.v[i] * num / lt.den.v[i];
        dv.v[i] = dvb.v[i] - lt.iy.v[i] * num / lt.den.v[i];
      }
      lt.dubar.push_back(std::move(dub));
      lt.dvbar.push_back(std::move(dvb));
    }

    w = FlowField(h, wd);
    for (size_t i = 0; i < du.size(); ++i) {
      w.u.v[i] = lt.w0.u.v[i] + du.v[i];
      w.v.v[i] = lt.w0.v.v[i] + dv.v[i];
    }
  }

  FlowResult out;
  out.flow = std::move(w);
  out.tape = std::move(tape);
  return out;
}

// Exact reverse pass from a gradient on the predicted flow to gradients on
// both input images.
inline std::pair<Image, Image> flow_backward(const FlowTape& tape, const FlowField& grad_flow) {
  using namespace flow_detail;
  if (grad_flow.width() != tape.w || grad_flow.height() != tape.h)
    throw contract_error("flow_backward: gradient dimensions mismatch");

  int L = tape.levels;
  std::vector<Grid> gg1(L), gg2(L);
  for (int l = 0; l < L; ++l) {
    gg1[l] = Grid(tape.level[l].g1.h, tape.level[l].g1.w);
    gg2[l] = Grid(tape.level[l].g2.h, tape.level[l].g2.w);
  }

  FlowField g_w = grad_flow;  // gradient w.r.t. the level's total flow
  for (int l = 0; l < L; ++l) {
    const FlowLevelTape& lt = tape.level[l];
    int h = lt.g1.h, wd = lt.g1.w;
    size_t n = lt.g1.size();

    Grid gu = g_w.u, gv = g_w.v;       // w = w0 + dw
    FlowField g_w0(h, wd);
    g_w0.u = g_w.u;
    g_w0.v = g_w.v;

    Grid g_it(h, wd), g_ix(h, wd), g_iy(h, wd);
    for (int it = tape.cfg.iterations - 1; it >= 0; --it) {
      const Grid& dub = lt.dubar[it];
      const Grid& dvb = lt.dvbar[it];
      Grid g_dub(h, wd), g_dvb(h, wd);
      for (size_t i = 0; i < n; ++i) {
        double ix = lt.ix.v[i], iy = lt.iy.v[i], den = lt.den.v[i];
        double num = ix * dub.v[i] + iy * dvb.v[i] + lt.it.v[i];
        double a = gu.v[i], b = gv.v[i];
        double gnum_scaled = (a * ix + b * iy) / den;  // d(out)/d(num) = -I/den
        g_dub.v[i] = a - ix * gnum_scaled;
        g_dvb.v[i] = b - iy * gnum_scaled;
        g_it.v[i] -= gnum_scaled;
        double two_num_den2 = 2.0 * num / (den * den);
        g_ix.v[i] += a * (-(num + ix * dub.v[i]) / den + ix * ix * two_num_den2) +
                     b * (-iy * dub.v[i] / den + ix * iy * two_num_den2);
        g_iy.v[i] += a * (-ix * dvb.v[i] / den + ix * iy * two_num_den2) +
                     b * (-(num + iy * dvb.v[i]) / den + iy * iy * two_num_den2);
      }
      gu = neighbor_average_adjoint(g_dub);
      gv = neighbor_average_adjoint(g_dvb);
    }
    // remaining gu/gv are grads w.r.t. the zero increment init: dropped

    // It = warp(g2, w0) - g1
    for (size_t i = 0; i < n; ++i) gg1[l].v[i] -= g_it.v[i];
    warp_adjoint(lt.g2, lt.w0, g_it, gg2[l], g_w0);
    spatial_gradients_adjoint(g_ix, g_iy, gg1[l]);

    if (l + 1 < L) {
      // w0 = 2 * resize(w_next)
      const FlowLevelTape& nt = tape.level[l + 1];
      FlowField g_next(nt.g1.h, nt.g1.w);
      for (auto& x : g_w0.u.v) x *= 2.0;
      for (auto& x : g_w0.v.v) x *= 2.0;
      resize_adjoint(g_w0.u, g_next.u);
      resize_adjoint(g_w0.v, g_next.v);
      g_w = std::move(g_next);
    }
  }

  // cascade pyramid adjoints down to full resolution
  for (int l = L - 2; l >= 0; --l) {
    resize_adjoint(gg1[l + 1], gg1[l]);
    resize_adjoint(gg2[l + 1], gg2[l]);
  }

  Image g_img1(tape.h, tape.w), g_img2(tape.h, tape.w);
  for (int y = 0; y < tape.h; ++y)
    for (int x = 0; x < tape.w; ++x) {
      double a = gg1[0].at(y, x), b = gg2[0].at(y, x);
      g_img1.at(y, x, 0) = a * kGrayR;
      g_img1.at(y, x, 1) = a * kGrayG;
      g_img1.at(y, x, 2) = a * kGrayB;
      g_img2.at(y, x, 0) = b * kGrayR;
      g_img2.at(y, x, 1) = b * kGrayG;
      g_img2.at(y, x, 2) = b * kGrayB;
    }
  return {std::move(g_img1), std::move(g_img2)};
}

// Black-box evaluation inputs: externally produced benign and attacked flows.
inline std::pair<FlowField, FlowField> external_flow_source(const std::string& dir) {
  namespace fs = std::filesystem;
  auto benign_path = fs::path(dir) / "benign.flo";
  auto attacked_path = fs::path(dir) / "attacked.flo";
  if (!fs::exists(benign_path)) throw io_error(benign_path.string() + ": missing");
  if (!fs::exists(attacked_path)) throw io_error(attacked_path.string() + ": missing");
  FlowField benign = read_flo(benign_path.string());
  FlowField attacked = read_flo(attacked_path.string());
  if (benign.width() != attacked.width() || benign.height() != attacked.height())
    throw io_error(dir + ": benign and attacked flow dimensions mismatch");
  return {std::move(benign), std::move(attacked)};
}

}  // namespace downpour
