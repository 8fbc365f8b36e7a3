#pragma once

#include <chrono>
#include <functional>

#include "downpour/core.hpp"
#include "downpour/metrics.hpp"
#include "downpour/particle_system.hpp"
#include "downpour/renderer.hpp"
#include "downpour/scene_io.hpp"
#include "downpour/victim_flow.hpp"

namespace downpour {

// ---------------------------------------------------------------------------
// atanh reparameterization: bounded (0,1) <-> unbounded
// ---------------------------------------------------------------------------

constexpr double kEncodeMargin = 1e-6;

inline double encode_unit(double xi) {
  xi = std::clamp(xi, kEncodeMargin, 1.0 - kEncodeMargin);
  return std::atanh(2.0 * xi - 1.0);
}

inline double decode_unit(double eta) {
  double xi = (std::tanh(eta) + 1.0) / 2.0;
  return std::clamp(xi, kEncodeMargin, 1.0 - kEncodeMargin);
}

// d(decode)/d(eta), without the saturation clamp (subgradient there is 0
// anyway since tanh saturates numerically at the same time)
inline double decode_unit_grad(double eta) {
  double t = std::tanh(eta);
  return (1.0 - t * t) / 2.0;
}

// ---------------------------------------------------------------------------
// configuration and state
// ---------------------------------------------------------------------------

struct VariableMask {
  bool dp1 = true, dp2 = true, color = true, transparency = true;

  bool any() const { return dp1 || dp2 || color || transparency; }
};

struct AttackConfig {
  double learning_rate = 1e-5;
  int steps = 750;
  double alpha1 = 1000.0, alpha2 = 1000.0;
  FlowField target;  // empty -> zero-flow target
  VariableMask mask;
  double adam_beta1 = 0.9, adam_beta2 = 0.999, adam_eps = 1e-8;
  FlowEstimatorConfig victim;
};

// Optimized parameter blocks plus Adam moments. Color and transparency are
// stored in eta space; decoded values always stay strictly inside their
// bounds. theta decodes into (0, theta_max) with theta_max = 2 * the preset's
// base transparency, so presets with theta up to 1.5 fit the same tanh map.
struct AttackState {
  std::vector<Vec3> dp1, dp2;
  std::vector<Vec3> eta_color;
  std::vector<double> eta_theta;
  double theta_max = 1.5;

  std::vector<Vec3> m_dp1, v_dp1, m_dp2, v_dp2, m_color, v_color;
  std::vector<double> m_theta, v_theta;
  long step = 0;
  int skipped_steps = 0;

  static AttackState init(const ParticleSet& ps) {
    AttackState s;
    size_t n = ps.particles.size();
    s.theta_max = 2.0 * ps.config.transparency;
    if (!(s.theta_max > 0)) throw contract_error("attack: preset transparency must be > 0");
    s.dp1.assign(n, Vec3{});
    s.dp2.assign(n, Vec3{});
    s.eta_color.resize(n);
    s.eta_theta.resize(n);
    for (size_t j = 0; j < n; ++j) {
      for (int c = 0; c < 3; ++c) s.eta_color[j][c] = encode_unit(ps.particles[j].color[c]);
      s.eta_theta[j] = encode_unit(ps.particles[j].theta / s.theta_max);
    }
    s.m_dp1.assign(n, Vec3{});
    s.v_dp1.assign(n, Vec3{});
    s.m_dp2.assign(n, Vec3{});
    s.v_dp2.assign(n, Vec3{});
    s.m_color.assign(n, Vec3{});
    s.v_color.assign(n, Vec3{});
    s.m_theta.assign(n, 0.0);
    s.v_theta.assign(n, 0.0);
    return s;
  }

  double decode_theta(size_t j) const { return theta_max * decode_unit(eta_theta[j]); }
  Vec3 decode_color(size_t j) const {
    return {decode_unit(eta_color[j].x), decode_unit(eta_color[j].y),
            decode_unit(eta_color[j].z)};
  }

  // writes decoded parameters into the parent particles and refreshes depths
  void apply(ParticleSet& ps, const SceneBundle& scene) const {
    SE3 t_rel = scene.relative_transform();
    for (size_t j = 0; j < ps.particles.size(); ++j) {
      Particle& p = ps.particles[j];
      p.dp1 = dp1[j];
      p.dp2 = dp2[j];
      p.color = decode_color(j);
      p.theta = decode_theta(j);
      refresh_depths(p, t_rel);
    }
  }
};

// ---------------------------------------------------------------------------
// loss (AEE to target + depth-scaled offset penalty)
// ---------------------------------------------------------------------------

constexpr double kAeeSmoothing = 1e-12;  // used by the gradient only, kills the kink at 0

struct LossTerms {
  double total = 0, aee = 0, penalty1 = 0, penalty2 = 0;
};

// L = AEE(f_hat, f_target) + sum_t alpha_t/|P| sum_j |dp_t^j|^2 / d_t^j
// with |P| the parent count (pre blur expansion).
inline LossTerms attack_loss(const FlowField& f_hat, const FlowField& f_target,
                             const ParticleSet& ps, double alpha1, double alpha2) {
  if (f_hat.width() != f_target.width() || f_hat.height() != f_target.height())
    throw contract_error("attack_loss: flow dimensions mismatch");
  LossTerms out;
  Accum sum;
  for (size_t i = 0; i < f_hat.u.size(); ++i) {
    double du = f_hat.u.v[i] - f_target.u.v[i];
    double dv = f_hat.v.v[i] - f_target.v.v[i];
    sum.add(std::sqrt(du * du + dv * dv));
  }
  out.aee = sum.value() / (double)f_hat.u.size();

  size_t n = ps.particles.size();
  Accum p1, p2;
  for (const Particle& p : ps.particles) {
    if (!(p.d1 > 0) || !(p.d2 > 0))
      throw contract_error("attack_loss: particle depth must be positive");
    p1.add(norm2(p.dp1) / p.d1);
    p2.add(norm2(p.dp2) / p.d2);
  }
  out.penalty1 = alpha1 / (double)n * p1.value();
  out.penalty2 = alpha2 / (double)n * p2.value();
  out.total = out.aee + out.penalty1 + out.penalty2;
  return out;
}

// gradient of the AEE term w.r.t. f_hat
inline FlowField attack_loss_flow_grad(const FlowField& f_hat, const FlowField& f_target) {
  FlowField g(f_hat.height(), f_hat.width());
  double inv_n = 1.0 / (double)f_hat.u.size();
  for (size_t i = 0; i < f_hat.u.size(); ++i) {
    double du = f_hat.u.v[i] - f_target.u.v[i];
    double dv = f_hat.v.v[i] - f_target.v.v[i];
    double r = std::sqrt(du * du + dv * dv + kAeeSmoothing);
    g.u.v[i] = inv_n * du / r;
    g.v.v[i] = inv_n * dv / r;
  }
  return g;
}

// gradient of the penalty w.r.t. the offsets, including the depth chain
// (d1 and d2 move with the offsets)
inline void add_penalty_grads(const ParticleSet& ps, const SceneBundle& scene, double alpha1,
                              double alpha2, ParticleGrads& grads) {
  size_t n = ps.particles.size();
  double a1 = alpha1 / (double)n, a2 = alpha2 / (double)n;
  SE3 t_rel = scene.relative_transform();
  Vec3 rrow3{t_rel.R(2, 0), t_rel.R(2, 1), t_rel.R(2, 2)};
  for (size_t j = 0; j < n; ++j) {
    const Particle& p = ps.particles[j];
    grads.dp1[j] += a1 * (2.0 / p.d1) * p.dp1;
    grads.dp1[j] += (-a1 * norm2(p.dp1) / (p.d1 * p.d1)) * Vec3{0, 0, 1};
    grads.dp2[j] += a2 * (2.0 / p.d2) * p.dp2;
    Vec3 d2_chain = (-a2 * norm2(p.dp2) / (p.d2 * p.d2)) * Vec3{0, 0, 1};
    grads.dp2[j] += d2_chain;
    grads.dp1[j] += (-a2 * norm2(p.dp2) / (p.d2 * p.d2)) * rrow3;
  }
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

namespace detail {

inline void adam_update(double& param, double& m, double& v, double g, long t,
                        const AttackConfig& cfg) {
  m = cfg.adam_beta1 * m + (1.0 - cfg.adam_beta1) * g;
  v = cfg.adam_beta2 * v + (1.0 - cfg.adam_beta2) * g * g;
  double mh = m / (1.0 - std::pow(cfg.adam_beta1, (double)t));
  double vh = v / (1.0 - std::pow(cfg.adam_beta2, (double)t));
  param -= cfg.learning_rate * mh / (std::sqrt(vh) + cfg.adam_eps);
}

inline bool all_finite(const ParticleGrads& g) {
  auto ok3 = [](const std::vector<Vec3>& v) {
    for (const Vec3& x : v)
      if (!std::isfinite(x.x) || !std::isfinite(x.y) || !std::isfinite(x.z)) return false;
    return true;
  };
  for (double x : g.theta)
    if (!std::isfinite(x)) return false;
  return ok3(g.dp1) && ok3(g.dp2) && ok3(g.color);
}

}  // namespace detail

// One bias-corrected Adam step over the unmasked blocks; eta-space gradients
// for color/transparency are expected in `g_eta_color` / `g_eta_theta`.
// Non-finite gradients skip the update but still advance the step counter.
inline bool adam_step(AttackState& s, const AttackConfig& cfg, const ParticleGrads& g_pos,
                      const std::vector<Vec3>& g_eta_color,
                      const std::vector<double>& g_eta_theta) {
  s.step += 1;
  bool finite = detail::all_finite(g_pos);
  for (const Vec3& x : g_eta_color)
    if (!std::isfinite(x.x) || !std::isfinite(x.y) || !std::isfinite(x.z)) finite = false;
  for (double x : g_eta_theta)
    if (!std::isfinite(x)) finite = false;
  if (!finite) {
    s.skipped_steps += 1;
    return false;
  }
  size_t n = s.dp1.size();
  for (size_t j = 0; j < n; ++j) {
    if (cfg.mask.dp1)
      for (int c = 0; c < 3; ++c)
        detail::adam_update(s.dp1[j][c], s.m_dp1[j][c], s.v_dp1[j][c], g_pos.dp1[j][c], s.step,
                            cfg);
    if (cfg.mask.dp2)
      for (int c = 0; c < 3; ++c)
        detail::adam_update(s.dp2[j][c], s.m_dp2[j][c], s.v_dp2[j][c], g_pos.dp2[j][c], s.step,
                            cfg);
    if (cfg.mask.color)
      for (int c = 0; c < 3; ++c)
        detail::adam_update(s.eta_color[j][c], s.m_color[j][c], s.v_color[j][c],
                            g_eta_color[j][c], s.step, cfg);
    if (cfg.mask.transparency)
      detail::adam_update(s.eta_theta[j], s.m_theta[j], s.v_theta[j], g_eta_theta[j], s.step,
                          cfg);
  }
  return true;
}

// ---------------------------------------------------------------------------
// the optimization loop
// ---------------------------------------------------------------------------

struct AttackStepStats {
  double loss = 0;
  double aee_target = 0;  // AEE(f_hat, f_target), unsmoothed
  double aee_robust = 0;  // AEE(f, f_hat) against the benign prediction
};

struct AttackReport {
  uint64_t seed = 0;
  WeatherConfig weather;
  double learning_rate = 0;
  int steps = 0;
  double alpha1 = 0, alpha2 = 0;
  VariableMask mask;

  std::vector<AttackStepStats> trace;  // steps + 1 entries
  double initial_loss = 0, final_loss = 0, best_loss = 0;
  double initial_aee_robust = 0, final_aee_robust = 0, best_aee_robust = 0;
  int best_step = 0;
  int skipped_steps = 0;
  double seconds = 0;

  FlowField benign_flow;
  // best parameters re-rendered with the sharp occlusion profile
  Image best_aug1, best_aug2;
  FlowField best_attacked_flow;
  ParticleSet best_particles;
};

// One pipeline evaluation at the current state: decode -> rebuild depths ->
// expand blur -> render (smooth beta) -> estimate flow -> loss, optionally
// with the full adjoint chain back to the parameter blocks.
struct AttackEval {
  LossTerms loss;
  FlowField flow;
  ParticleGrads grads;  // dp1/dp2 in meters; color/theta still in value space
  std::vector<Vec3> g_eta_color;
  std::vector<double> g_eta_theta;
};

inline AttackEval attack_evaluate(const SceneBundle& scene, ParticleSet& ps,
                                  const AttackState& state, const AttackConfig& cfg,
                                  const FlowField& target, bool with_grads) {
  state.apply(ps, scene);
  expand_motion_blur(ps, scene);
  RenderParams rp = RenderParams::for_differentiation(ps.config.blend);
  RenderOutput ro = render(scene, ps, rp);
  FlowResult fr = estimate_flow(ro.aug1, ro.aug2, cfg.victim);

  AttackEval ev;
  ev.loss = attack_loss(fr.flow, target, ps, cfg.alpha1, cfg.alpha2);
  ev.flow = std::move(fr.flow);
  if (!with_grads) return ev;

  FlowField g_flow = attack_loss_flow_grad(ev.flow, target);
  auto [g_img1, g_img2] = flow_backward(*fr.tape, g_flow);
  ev.grads = backward(*ro.tape, g_img1, g_img2);
  add_penalty_grads(ps, scene, cfg.alpha1, cfg.alpha2, ev.grads);

  size_t n = ps.particles.size();
  ev.g_eta_color.resize(n);
  ev.g_eta_theta.resize(n);
  for (size_t j = 0; j < n; ++j) {
    for (int c = 0; c < 3; ++c)
      ev.g_eta_color[j][c] = ev.grads.color[j][c] * decode_unit_grad(state.eta_color[j][c]);
    ev.g_eta_theta[j] =
        ev.grads.theta[j] * state.theta_max * decode_unit_grad(state.eta_theta[j]);
  }
  return ev;
}

// Full white-box loop: decode -> rebuild depths -> expand blur -> render
// (smooth beta) -> estimate flow -> loss -> adjoints -> Adam. The best
// snapshot maximizes AEE(f, f_hat), i.e. attack strength, not minimal loss.
inline AttackReport run_attack(const SceneBundle& scene, const WeatherConfig& weather,
                               const AttackConfig& cfg, uint64_t seed) {
  if (!(cfg.learning_rate > 0)) throw contract_error("attack: learning_rate must be > 0");
  if (cfg.steps < 0) throw contract_error("attack: steps must be >= 0");
  if (!cfg.mask.any()) throw contract_error("attack: variable mask must be nonempty");

  auto t_start = std::chrono::steady_clock::now();
  AttackReport rep;
  rep.seed = seed;
  rep.weather = weather;
  rep.learning_rate = cfg.learning_rate;
  rep.steps = cfg.steps;
  rep.alpha1 = cfg.alpha1;
  rep.alpha2 = cfg.alpha2;
  rep.mask = cfg.mask;

  FlowField target = cfg.target;
  if (target.width() == 0) target = FlowField(scene.height(), scene.width());
  if (target.width() != scene.width() || target.height() != scene.height())
    throw contract_error("attack: target flow dimensions mismatch");

  rep.benign_flow = estimate_flow(scene.frame1, scene.frame2, cfg.victim).flow;

  ParticleSet ps = sample_particles(scene, weather, seed);
  AttackState state = AttackState::init(ps);

  AttackState best_state = state;
  double best_robust = -1.0;
  int best_step = 0;

  // evaluate -> record -> (backward -> update) x steps -> final evaluate
  for (int step = 0; step <= cfg.steps; ++step) {
    bool last = step == cfg.steps;
    AttackEval ev = attack_evaluate(scene, ps, state, cfg, target, !last);

    AttackStepStats st;
    st.loss = ev.loss.total;
    st.aee_target = aee(ev.flow, target);
    st.aee_robust = aee(rep.benign_flow, ev.flow);
    rep.trace.push_back(st);
    if (st.aee_robust > best_robust) {
      best_robust = st.aee_robust;
      best_state = state;
      best_step = step;
    }
    if (last) break;
    adam_step(state, cfg, ev.grads, ev.g_eta_color, ev.g_eta_theta);
  }

  rep.initial_loss = rep.trace.front().loss;
  rep.final_loss = rep.trace.back().loss;
  rep.initial_aee_robust = rep.trace.front().aee_robust;
  rep.final_aee_robust = rep.trace.back().aee_robust;
  rep.best_aee_robust = best_robust;
  rep.best_step = best_step;
  rep.best_loss = rep.trace[best_step].loss;
  rep.skipped_steps = state.skipped_steps;

  // sharp re-render of the strongest parameters for file output
  best_state.apply(ps, scene);
  expand_motion_blur(ps, scene);
  RenderOutput final_ro = render(scene, ps, RenderParams::for_render(weather.blend));
  rep.best_aug1 = final_ro.aug1;
  rep.best_aug2 = final_ro.aug2;
  rep.best_attacked_flow = estimate_flow(final_ro.aug1, final_ro.aug2, cfg.victim).flow;
  rep.best_particles = std::move(ps);

  rep.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return rep;
}

}  // namespace downpour
