#pragma once

#include <functional>
#include <iostream>

#include "downpour/attack.hpp"

namespace downpour {

// Central-difference checks of the analytic adjoints, runnable from the CLI.
// Tolerances: a coordinate passes when |analytic - fd| is below the absolute
// floor or within the relative bound of the larger magnitude.

struct GradTolerance {
  double step_position = 1e-4;
  double step_eta = 1e-3;
  double rel_tol = 1e-3;
  double abs_floor = 1e-8;
};

inline double rel_error(double analytic, double fd, double abs_floor) {
  double diff = std::abs(analytic - fd);
  if (diff <= abs_floor) return 0.0;
  return diff / std::max(std::abs(analytic), std::abs(fd));
}

namespace gradcheck_detail {

// deterministic "random" weight in [-1, 1] per pixel, smooth-free
inline double pixel_weight(uint64_t seed, int y, int x, int c) {
  uint64_t h = seed ^ (uint64_t)(y * 73856093) ^ (uint64_t)(x * 19349663) ^
               (uint64_t)(c * 83492791);
  h ^= h >> 33;
  h *= 0xff51afd7ed558ccdull;
  h ^= h >> 33;
  return 2.0 * ((h >> 11) * 0x1.0p-53) - 1.0;
}

inline Image weight_image(int h, int w, uint64_t seed) {
  Image img(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = pixel_weight(seed, y, x, c);
  return img;
}

inline double weighted_sum(const Image& img, const Image& weights) {
  Accum s;
  for (size_t i = 0; i < img.v.size(); ++i) s.add(img.v[i] * weights.v[i]);
  return s.value();
}

inline WeatherConfig gradcheck_weather(int particles) {
  WeatherConfig cfg;
  cfg.count = particles;
  cfg.base_size = 9;
  cfg.depth_decay = 3.0;
  cfg.base_color = {0.85, 0.6, 0.45};
  cfg.transparency = 0.35;
  cfg.motion_y = 0.08;
  cfg.motion_angle_jitter = 25;
  cfg.motion_magnitude_jitter = 0.2;
  cfg.blur_enabled = true;
  cfg.blur_length = 0.4;
  cfg.blur_particles = 3;
  return cfg;
}

inline SynthScene gradcheck_scene(int width, int height, uint64_t seed) {
  return synth_scene(width, height, seed, {0.04, 0.015, 0.0}, {2.5, 5.0});
}

}  // namespace gradcheck_detail

// renderer.backward vs central differences of a weighted image sum
inline double gradcheck_renderer(int width, int height, int particles, uint64_t seed,
                                 BlendMode blend, const GradTolerance& tol = {}) {
  using namespace gradcheck_detail;
  SynthScene sc = gradcheck_scene(width, height, seed);
  WeatherConfig weather = gradcheck_weather(particles);
  weather.blend = blend;
  ParticleSet ps = sample_particles(sc.scene, weather, seed);
  RenderParams rp = RenderParams::for_differentiation(blend);

  Image w1 = weight_image(height, width, seed * 2 + 1);
  Image w2 = weight_image(height, width, seed * 2 + 2);

  auto eval = [&]() {
    expand_motion_blur(ps, sc.scene);
    RenderOutput ro = render(sc.scene, ps, rp);
    return weighted_sum(ro.aug1, w1) + weighted_sum(ro.aug2, w2);
  };
  auto refresh = [&]() {
    SE3 t_rel = sc.scene.relative_transform();
    for (Particle& p : ps.particles) refresh_depths(p, t_rel);
  };

  expand_motion_blur(ps, sc.scene);
  RenderOutput ro = render(sc.scene, ps, rp);
  ParticleGrads grads = backward(*ro.tape, w1, w2);

  double max_rel = 0;
  size_t n = ps.particles.size();
  for (size_t j = 0; j < n; ++j) {
    auto check_coord = [&](double* coord, double analytic, double step) {
      double keep = *coord;
      *coord = keep + step;
      refresh();
      double plus = eval();
      *coord = keep - step;
      refresh();
      double minus = eval();
      *coord = keep;
      refresh();
      double fd = (plus - minus) / (2 * step);
      max_rel = std::max(max_rel, rel_error(analytic, fd, tol.abs_floor));
    };
    for (int c = 0; c < 3; ++c) {
      check_coord(&ps.particles[j].dp1[c], grads.dp1[j][c], tol.step_position);
      check_coord(&ps.particles[j].dp2[c], grads.dp2[j][c], tol.step_position);
      check_coord(&ps.particles[j].color[c], grads.color[j][c], tol.step_eta);
    }
    check_coord(&ps.particles[j].theta, grads.theta[j], tol.step_eta);
  }
  return max_rel;
}

// victim_flow.flow_backward vs central differences on input pixels
inline double gradcheck_victim(int width, int height, uint64_t seed, int levels, int iterations,
                               int n_pixels, const GradTolerance& tol = {}) {
  using namespace gradcheck_detail;
  SynthScene sc = gradcheck_scene(width, height, seed);
  Image i1 = sc.scene.frame1, i2 = sc.scene.frame2;
  FlowEstimatorConfig cfg;
  cfg.pyramid_levels = levels;
  cfg.iterations = iterations;

  FlowField wu(height, width), wv(height, width);
  FlowField g_flow(height, width);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      g_flow.u.at(y, x) = pixel_weight(seed + 7, y, x, 0);
      g_flow.v.at(y, x) = pixel_weight(seed + 7, y, x, 1);
    }

  auto eval = [&]() {
    FlowResult fr = estimate_flow(i1, i2, cfg);
    Accum s;
    for (size_t i = 0; i < fr.flow.u.size(); ++i)
      s.add(fr.flow.u.v[i] * g_flow.u.v[i] + fr.flow.v.v[i] * g_flow.v.v[i]);
    return s.value();
  };

  FlowResult fr = estimate_flow(i1, i2, cfg);
  auto [g1, g2] = flow_backward(*fr.tape, g_flow);

  Rng rng(seed + 13);
  double max_rel = 0;
  for (int k = 0; k < n_pixels; ++k) {
    int y = (int)rng.uniform_index(height);
    int x = (int)rng.uniform_index(width);
    int c = (int)rng.uniform_index(3);
    bool first = rng.uniform() < 0.5;
    Image& img = first ? i1 : i2;
    double analytic = (first ? g1 : g2).at(y, x, c);
    double keep = img.at(y, x, c);
    img.at(y, x, c) = keep + tol.step_position;
    double plus = eval();
    img.at(y, x, c) = keep - tol.step_position;
    double minus = eval();
    img.at(y, x, c) = keep;
    double fd = (plus - minus) / (2 * tol.step_position);
    max_rel = std::max(max_rel, rel_error(analytic, fd, tol.abs_floor));
  }
  return max_rel;
}

// full attack-loss chain vs central differences, n_coords per parameter block
inline double gradcheck_end_to_end(int width, int height, int particles, uint64_t seed,
                                   int n_coords, const GradTolerance& tol = {}) {
  using namespace gradcheck_detail;
  SynthScene sc = gradcheck_scene(width, height, seed);
  WeatherConfig weather = gradcheck_weather(particles);
  ParticleSet ps = sample_particles(sc.scene, weather, seed);
  AttackState state = AttackState::init(ps);
  AttackConfig cfg;
  cfg.victim.pyramid_levels = 2;
  cfg.victim.iterations = 30;
  FlowField target(height, width);

  AttackEval ev = attack_evaluate(sc.scene, ps, state, cfg, target, true);

  auto eval = [&]() {
    return attack_evaluate(sc.scene, ps, state, cfg, target, false).loss.total;
  };
  auto fd_check = [&](double* coord, double analytic, double step, double& max_rel) {
    double keep = *coord;
    *coord = keep + step;
    double plus = eval();
    *coord = keep - step;
    double minus = eval();
    *coord = keep;
    double fd = (plus - minus) / (2 * step);
    max_rel = std::max(max_rel, rel_error(analytic, fd, tol.abs_floor));
  };

  Rng rng(seed + 31);
  double max_rel = 0;
  size_t n = ps.particles.size();
  for (int k = 0; k < n_coords; ++k) {
    size_t j = rng.uniform_index(n);
    int c = (int)rng.uniform_index(3);
    fd_check(&state.dp1[j][c], ev.grads.dp1[j][c], tol.step_position, max_rel);
    fd_check(&state.dp2[j][c], ev.grads.dp2[j][c], tol.step_position, max_rel);
    fd_check(&state.eta_color[j][c], ev.g_eta_color[j][c], tol.step_eta, max_rel);
    fd_check(&state.eta_theta[j], ev.g_eta_theta[j], tol.step_eta, max_rel);
  }
  return max_rel;
}

struct GradCheckReport {
  double renderer_additive = 0;
  double renderer_meshkin = 0;
  double victim = 0;
  double end_to_end = 0;
  bool pass = false;
};

inline GradCheckReport run_gradcheck(int width, int height, int particles, uint64_t seed,
                                     const GradTolerance& tol = {}) {
  GradCheckReport r;
  r.renderer_additive = gradcheck_renderer(width, height, particles, seed,
                                           BlendMode::additive, tol);
  r.renderer_meshkin = gradcheck_renderer(width, height, particles, seed + 1,
                                          BlendMode::meshkin, tol);
  r.victim = gradcheck_victim(std::min(width, 32), std::min(height, 24), seed + 2, 2, 20, 10,
                              tol);
  r.end_to_end = gradcheck_end_to_end(width, height, std::min(particles, 20), seed + 3, 5, tol);
  r.pass = r.renderer_additive <= tol.rel_tol && r.renderer_meshkin <= tol.rel_tol &&
           r.victim <= tol.rel_tol && r.end_to_end <= tol.rel_tol;
  return r;
}

}  // namespace downpour
