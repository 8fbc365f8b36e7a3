#pragma once

#include <cstring>
#include <map>
#include <string>
#include <vector>

#include "downpour/core.hpp"
#include "downpour/rng.hpp"
#include "downpour/scene_io.hpp"
#include "downpour/template_lib.hpp"

namespace downpour {

enum class BlendMode { additive, meshkin };

// One row of the weather preset table.
struct WeatherConfig {
  int count = 3000;
  int base_size = 71;
  double depth_decay = 9.0;
  TemplateKind template_kind = TemplateKind::flake;
  Vec3 base_color{1, 1, 1};
  double jitter_hue = 0;    // +- degrees in HLS
  double jitter_light = 0;  // +- L
  double jitter_sat = 0;    // +- S
  BlendMode blend = BlendMode::additive;
  double transparency = 0.75;          // theta at the reference depth
  bool constant_transparency = false;  // fog keeps theta depth-independent
  double motion_y = 0.2;               // meters/frame along +y (falling)
  double motion_angle_jitter = 0;      // +- degrees, rotation in the image plane
  double motion_magnitude_jitter = 0;  // +- fraction of |m|
  bool blur_enabled = false;
  double blur_length = 0;  // fraction of the motion vector covered by replicas
  int blur_particles = 1;  // K
};

inline void validate_config(const WeatherConfig& c) {
  if (c.count < 1) throw contract_error("weather config: count must be >= 1");
  if (c.base_size < 3) throw contract_error("weather config: base_size must be >= 3");
  if (c.blur_enabled && c.blur_particles < 1)
    throw contract_error("weather config: blur_particles must be >= 1 when blur is enabled");
  for (int i = 0; i < 3; ++i)
    if (c.base_color[i] < 0 || c.base_color[i] > 1)
      throw contract_error("weather config: base_color must be in [0,1]");
  if (c.jitter_hue < 0 || c.jitter_light < 0 || c.jitter_sat < 0)
    throw contract_error("weather config: jitter values must be >= 0");
  if (!(c.depth_decay > 0)) throw contract_error("weather config: depth_decay must be > 0");
  if (c.transparency < 0) throw contract_error("weather config: transparency must be >= 0");
}

// ---------------------------------------------------------------------------
// HLS color jitter
// ---------------------------------------------------------------------------

// h in degrees [0,360), l and s in [0,1]
inline Vec3 rgb_to_hls(Vec3 rgb) {
  double maxc = std::max({rgb.x, rgb.y, rgb.z});
  double minc = std::min({rgb.x, rgb.y, rgb.z});
  double l = (maxc + minc) / 2.0;
  if (maxc == minc) return {0, l, 0};
  double d = maxc - minc;
  double s = l > 0.5 ? d / (2.0 - maxc - minc) : d / (maxc + minc);
  double h;
  if (maxc == rgb.x)
    h = (rgb.y - rgb.z) / d + (rgb.y < rgb.z ? 6.0 : 0.0);
  else if (maxc == rgb.y)
    h = (rgb.z - rgb.x) / d + 2.0;
  else
    h = (rgb.x - rgb.y) / d + 4.0;
  return {h * 60.0, l, s};
}

inline Vec3 hls_to_rgb(Vec3 hls) {
  double h = hls.x, l = hls.y, s = hls.z;
  if (s == 0) return {l, l, l};
  double q = l < 0.5 ? l * (1.0 + s) : l + s - l * s;
  double p = 2.0 * l - q;
  auto channel = [&](double t) {
    t = std::fmod(t, 360.0);
    if (t < 0) t += 360.0;
    if (t < 60.0) return p + (q - p) * t / 60.0;
    if (t < 180.0) return q;
    if (t < 240.0) return p + (q - p) * (240.0 - t) / 60.0;
    return p;
  };
  return {channel(h + 120.0), channel(h), channel(h - 120.0)};
}

inline Vec3 jitter_color_hls(Vec3 rgb, double dh, double dl, double ds) {
  Vec3 hls = rgb_to_hls(rgb);
  hls.x += dh;
  hls.y = std::clamp(hls.y + dl, 0.0, 1.0);
  hls.z = std::clamp(hls.z + ds, 0.0, 1.0);
  Vec3 out = hls_to_rgb(hls);
  return {clamp01(out.x), clamp01(out.y), clamp01(out.z)};
}

// ---------------------------------------------------------------------------
// particles
// ---------------------------------------------------------------------------

struct Particle {
  Vec3 p1;             // initial position, camera-1 coords (blur offset folded in)
  Vec3 m;              // 3D motion, applied in camera-2 coords
  Vec3 dp1, dp2;       // optimizable offsets, init 0
  Vec3 color;          // gamma
  double theta = 0;    // transparency scale (replicas carry theta/K)
  double d1 = 0, d2 = 0;  // current camera depths, tracked with offsets
  int parent = 0;      // index into the parent list
  double blur_frac = 0;  // fraction of blur_length*(m+dp2) folded into p1
};

// Frozen per-parent render assets: the rotated base template and the two
// per-frame footprints built from the initial depths.
struct ParticleAsset {
  double rotation_angle = 0;
  Template base;
  Footprint f1, f2;
};

struct ParticleSet {
  std::vector<Particle> particles;  // canonical per-parent state
  std::vector<Particle> replicas;   // motion-blur render list (when expanded)
  std::vector<ParticleAsset> assets;
  WeatherConfig config;
  uint64_t seed = 0;
  bool expanded = false;

  const std::vector<Particle>& render_list() const { return expanded ? replicas : particles; }
  size_t parent_count() const { return particles.size(); }
};

// depth law: theta shrinks for distant particles unless held constant (fog)
inline double transparency_at_depth(const WeatherConfig& cfg, double depth) {
  if (cfg.constant_transparency) return cfg.transparency;
  return cfg.transparency * std::min(1.0, cfg.depth_decay / depth);
}

constexpr double kMinSampleDepth = 1.0;
constexpr double kMinCameraZ = 1e-6;

inline Vec2 project_point(const SceneBundle& s, Vec3 cam) {
  return {s.fx() * cam.x / cam.z + s.cx(), s.fy() * cam.y / cam.z + s.cy()};
}

inline bool in_frustum(const SceneBundle& s, Vec3 cam) {
  if (cam.z <= kMinCameraZ) return false;
  Vec2 p = project_point(s, cam);
  return p.x >= 0 && p.x < s.width() && p.y >= 0 && p.y < s.height();
}

inline void refresh_depths(Particle& p, const SE3& t_rel) {
  Vec3 q = p.p1 + p.dp1;
  p.d1 = q.z;
  p.d2 = (t_rel.apply(q) + p.m + p.dp2).z;
}

// Rejection-samples `cfg.count` particles into the view of either frame.
//
// Draw order per particle (fixed so sets reproduce across platforms):
//   1. motion angle in +-motion_angle_jitter degrees
//   2. motion magnitude factor in 1 +- motion_magnitude_jitter
//   3. repeated position attempts, 3 draws each (pixel u, pixel v, depth in
//      [1, max scene depth]) until the point or its motion-displaced image
//      lands in a frustum
//   4. template rotation angle in [0, 2pi)
//   5. HLS jitter: hue, lightness, saturation
inline ParticleSet sample_particles(const SceneBundle& scene, const WeatherConfig& cfg,
                                    uint64_t seed) {
  validate_config(cfg);
  ParticleSet ps;
  ps.config = cfg;
  ps.seed = seed;
  Rng rng(seed);
  SE3 t_rel = scene.relative_transform();

  double dmax = kMinSampleDepth;
  for (double z : scene.depth1.v) dmax = std::max(dmax, z);
  for (double z : scene.depth2.v) dmax = std::max(dmax, z);

  long attempts_left = 1000000;
  for (int j = 0; j < cfg.count; ++j) {
    double ang = rng.symmetric() * cfg.motion_angle_jitter * M_PI / 180.0;
    double mag = 1.0 + rng.symmetric() * cfg.motion_magnitude_jitter;
    Vec3 m{-cfg.motion_y * std::sin(ang) * mag, cfg.motion_y * std::cos(ang) * mag, 0.0};

    Particle p;
    p.m = m;
    p.parent = j;
    for (;;) {
      if (--attempts_left < 0) throw std::runtime_error("frustum sampling failed");
      double u = rng.uniform() * scene.width();
      double v = rng.uniform() * scene.height();
      double depth = rng.uniform(kMinSampleDepth, dmax);
      Vec3 X{(u - scene.cx()) / scene.fx() * depth, (v - scene.cy()) / scene.fy() * depth,
             depth};
      if (in_frustum(scene, X) || in_frustum(scene, t_rel.apply(X) + m)) {
        p.p1 = X;
        break;
      }
    }
    refresh_depths(p, t_rel);

    ParticleAsset asset;
    asset.rotation_angle = rng.uniform(0.0, 2.0 * M_PI);
    asset.base = cfg.template_kind == TemplateKind::flake
                     ? make_flake(cfg.base_size, asset.rotation_angle)
                     : make_dust(cfg.base_size);
    asset.f1 = make_footprint(asset.base, cfg.base_size, std::max(p.d1, kMinCameraZ),
                              cfg.depth_decay);
    asset.f2 = make_footprint(asset.base, cfg.base_size, std::max(p.d2, kMinCameraZ),
                              cfg.depth_decay);

    double dh = rng.symmetric() * cfg.jitter_hue;
    double dl = rng.symmetric() * cfg.jitter_light;
    double ds = rng.symmetric() * cfg.jitter_sat;
    p.color = jitter_color_hls(cfg.base_color, dh, dl, ds);
    p.theta = transparency_at_depth(cfg, p.d1);

    ps.particles.push_back(std::move(p));
    ps.assets.push_back(std::move(asset));
  }
  return ps;
}

// Replaces each particle by K replicas spaced along blur_length*(m+dp2), each
// with transparency theta/K. Replicas keep the parent index so gradients and
// re-expansion resolve to the parent's parameters. No-op when blur is off.
inline void expand_motion_blur(ParticleSet& ps, const SceneBundle& scene) {
  ps.replicas.clear();
  if (!ps.config.blur_enabled) {
    ps.expanded = true;
    ps.replicas = ps.particles;
    return;
  }
  SE3 t_rel = scene.relative_transform();
  int K = ps.config.blur_particles;
  ps.replicas.reserve(ps.particles.size() * K);
  for (size_t j = 0; j < ps.particles.size(); ++j) {
    const Particle& parent = ps.particles[j];
    for (int i = 0; i < K; ++i) {
      Particle r = parent;
      r.parent = (int)j;
      r.blur_frac = K > 1 ? ps.config.blur_length * i / (K - 1) : 0.0;
      r.p1 = parent.p1 + r.blur_frac * (parent.m + parent.dp2);
      r.theta = parent.theta / K;
      refresh_depths(r, t_rel);
      ps.replicas.push_back(r);
    }
  }
  ps.expanded = true;
}

// ---------------------------------------------------------------------------
// presets (snow / rain / sparks / fog / grey)
// ---------------------------------------------------------------------------

inline std::map<std::string, WeatherConfig> presets() {
  std::map<std::string, WeatherConfig> out;

  WeatherConfig snow;  // 3000 small bright flakes falling without blur
  out["snow"] = snow;

  WeatherConfig rain = snow;
  rain.base_size = 51;
  rain.motion_angle_jitter = 4;
  rain.motion_magnitude_jitter = 0.1;
  rain.blur_enabled = true;
  rain.blur_length = 0.15;
  rain.blur_particles = 20;
  out["rain"] = rain;

  WeatherConfig sparks;
  sparks.base_size = 41;
  sparks.base_color = {191 / 255.0, 79 / 255.0, 64 / 255.0};
  sparks.jitter_hue = 15;
  sparks.jitter_light = 0.1;
  sparks.jitter_sat = 0.1;
  sparks.transparency = 1.5;
  sparks.motion_y = -0.05;
  sparks.motion_angle_jitter = 60;
  sparks.motion_magnitude_jitter = 0.2;
  sparks.blur_enabled = true;
  sparks.blur_length = 0.3;
  sparks.blur_particles = 10;
  out["sparks"] = sparks;

  WeatherConfig fog;
  fog.count = 60;
  fog.base_size = 451;
  fog.depth_decay = 0.8;
  fog.template_kind = TemplateKind::dust;
  fog.blend = BlendMode::meshkin;
  fog.transparency = 0.3;
  fog.constant_transparency = true;
  fog.motion_y = 0;
  out["fog"] = fog;

  WeatherConfig grey = snow;
  grey.base_color = {127 / 255.0, 127 / 255.0, 127 / 255.0};
  grey.blend = BlendMode::meshkin;
  out["grey"] = grey;

  return out;
}

inline WeatherConfig preset(const std::string& name) {
  auto all = presets();
  auto it = all.find(name);
  if (it == all.end()) {
    std::string names;
    for (auto& [n, _] : all) names += (names.empty() ? "" : ", ") + n;
    throw std::runtime_error("unknown preset '" + name + "' (valid: " + names + ")");
  }
  return it->second;
}

// ---------------------------------------------------------------------------
// snapshot file: versioned binary record of the generative particle state.
// Assets are rebuilt from the stored rotation angles and the scene, so the
// file stays small. Remains stable for attack resume and golden tests.
// ---------------------------------------------------------------------------

namespace detail {

struct ByteWriter {
  std::vector<unsigned char> buf;
  void raw(const void* p, size_t n) {
    const unsigned char* b = (const unsigned char*)p;
    buf.insert(buf.end(), b, b + n);
  }
  void f64(double v) { raw(&v, 8); }
  void i32(int32_t v) { raw(&v, 4); }
  void u64(uint64_t v) { raw(&v, 8); }
  void u8(uint8_t v) { raw(&v, 1); }
  void vec3(Vec3 v) { f64(v.x); f64(v.y); f64(v.z); }
};

struct ByteReader {
  const std::vector<unsigned char>& buf;
  const std::string& path;
  size_t pos = 0;
  void raw(void* p, size_t n) {
    if (pos + n > buf.size())
      throw io_error(path + ": truncated snapshot at offset " + std::to_string(pos));
    std::memcpy(p, buf.data() + pos, n);
    pos += n;
  }
  double f64() { double v; raw(&v, 8); return v; }
  int32_t i32() { int32_t v; raw(&v, 4); return v; }
  uint64_t u64() { uint64_t v; raw(&v, 8); return v; }
  uint8_t u8() { uint8_t v; raw(&v, 1); return v; }
  Vec3 vec3() { Vec3 v; v.x = f64(); v.y = f64(); v.z = f64(); return v; }
};

}  // namespace detail

inline void save_snapshot(const std::string& path, const ParticleSet& ps) {
  detail::ByteWriter w;
  w.raw("DPSN", 4);
  w.i32(1);  // version
  const WeatherConfig& c = ps.config;
  w.i32(c.count);
  w.i32(c.base_size);
  w.f64(c.depth_decay);
  w.u8(c.template_kind == TemplateKind::flake ? 0 : 1);
  w.vec3(c.base_color);
  w.f64(c.jitter_hue);
  w.f64(c.jitter_light);
  w.f64(c.jitter_sat);
  w.u8(c.blend == BlendMode::additive ? 0 : 1);
  w.f64(c.transparency);
  w.u8(c.constant_transparency ? 1 : 0);
  w.f64(c.motion_y);
  w.f64(c.motion_angle_jitter);
  w.f64(c.motion_magnitude_jitter);
  w.u8(c.blur_enabled ? 1 : 0);
  w.f64(c.blur_length);
  w.i32(c.blur_particles);
  w.u64(ps.seed);
  w.u64(ps.particles.size());
  for (size_t j = 0; j < ps.particles.size(); ++j) {
    const Particle& p = ps.particles[j];
    w.vec3(p.p1);
    w.vec3(p.m);
    w.vec3(p.dp1);
    w.vec3(p.dp2);
    w.vec3(p.color);
    w.f64(p.theta);
    w.f64(ps.assets[j].rotation_angle);
  }
  detail::write_file(path, w.buf.data(), w.buf.size());
}

inline ParticleSet load_snapshot(const std::string& path, const SceneBundle& scene) {
  auto buf = detail::read_file(path);
  detail::ByteReader r{buf, path};
  char magic[4];
  r.raw(magic, 4);
  if (std::memcmp(magic, "DPSN", 4) != 0) throw io_error(path + ": bad snapshot magic");
  int32_t version = r.i32();
  if (version != 1) throw io_error(path + ": unsupported snapshot version");
  ParticleSet ps;
  WeatherConfig& c = ps.config;
  c.count = r.i32();
  c.base_size = r.i32();
  c.depth_decay = r.f64();
  c.template_kind = r.u8() == 0 ? TemplateKind::flake : TemplateKind::dust;
  c.base_color = r.vec3();
  c.jitter_hue = r.f64();
  c.jitter_light = r.f64();
  c.jitter_sat = r.f64();
  c.blend = r.u8() == 0 ? BlendMode::additive : BlendMode::meshkin;
  c.transparency = r.f64();
  c.constant_transparency = r.u8() != 0;
  c.motion_y = r.f64();
  c.motion_angle_jitter = r.f64();
  c.motion_magnitude_jitter = r.f64();
  c.blur_enabled = r.u8() != 0;
  c.blur_length = r.f64();
  c.blur_particles = r.i32();
  ps.seed = r.u64();
  uint64_t n = r.u64();
  SE3 t_rel = scene.relative_transform();
  for (uint64_t j = 0; j < n; ++j) {
    Particle p;
    p.p1 = r.vec3();
    p.m = r.vec3();
    p.dp1 = r.vec3();
    p.dp2 = r.vec3();
    p.color = r.vec3();
    p.theta = r.f64();
    p.parent = (int)j;
    refresh_depths(p, t_rel);

    ParticleAsset a;
    a.rotation_angle = r.f64();
    a.base = c.template_kind == TemplateKind::flake ? make_flake(c.base_size, a.rotation_angle)
                                                    : make_dust(c.base_size);
    double d1_init = std::max(p.p1.z, kMinCameraZ);
    double d2_init = std::max((t_rel.apply(p.p1) + p.m).z, kMinCameraZ);
    a.f1 = make_footprint(a.base, c.base_size, d1_init, c.depth_decay);
    a.f2 = make_footprint(a.base, c.base_size, d2_init, c.depth_decay);
    ps.particles.push_back(std::move(p));
    ps.assets.push_back(std::move(a));
  }
  return ps;
}

}  // namespace downpour
