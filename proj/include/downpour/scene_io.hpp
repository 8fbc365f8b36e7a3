#pragma once

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "downpour/core.hpp"
#include "downpour/rng.hpp"

namespace downpour {

// ---------------------------------------------------------------------------
// domain types
// ---------------------------------------------------------------------------

// Two frames with per-frame depth, camera poses (world->camera) and shared
// intrinsics. Everything the renderer needs to place particles in 3D.
struct SceneBundle {
  Image frame1, frame2;
  Grid depth1, depth2;
  SE3 pose1, pose2;
  Mat3 K;  // zero skew; fx, fy, cx, cy live in (0,0) (1,1) (0,2) (1,2)

  int width() const { return frame1.w; }
  int height() const { return frame1.h; }
  double fx() const { return K(0, 0); }
  double fy() const { return K(1, 1); }
  double cx() const { return K(0, 2); }
  double cy() const { return K(1, 2); }

  // camera-1 coords -> camera-2 coords
  SE3 relative_transform() const { return compose(pose2, pose1.inverse()); }
};

struct FlowField {
  Grid u, v;

  FlowField() = default;
  FlowField(int h, int w) : u(h, w), v(h, w) {}
  int width() const { return u.w; }
  int height() const { return u.h; }
};

inline void validate_rotation(const Mat3& R, const std::string& what) {
  Mat3 RtR = R.transposed() * R;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) {
      double want = r == c ? 1.0 : 0.0;
      if (std::abs(RtR(r, c) - want) > 1e-9)
        throw io_error(what + ": rotation block is not orthonormal");
    }
  if (std::abs(det(R) - 1.0) > 1e-9)
    throw io_error(what + ": rotation determinant is not +1");
}

inline void validate_scene(const SceneBundle& s) {
  if (s.frame1.w != s.frame2.w || s.frame1.h != s.frame2.h)
    throw io_error("scene: frame dimensions disagree");
  if (s.depth1.w != s.frame1.w || s.depth1.h != s.frame1.h ||
      s.depth2.w != s.frame1.w || s.depth2.h != s.frame1.h)
    throw io_error("scene: depth dimensions disagree with frames");
  auto check_depth = [](const Grid& d, const char* name) {
    for (double z : d.v)
      if (!(z > 0.0) || !std::isfinite(z))
        throw io_error(std::string(name) + ": depth must be positive");
  };
  check_depth(s.depth1, "depth1");
  check_depth(s.depth2, "depth2");
  validate_rotation(s.pose1.R, "pose1");
  validate_rotation(s.pose2.R, "pose2");
}

// ---------------------------------------------------------------------------
// low-level file helpers
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw io_error(path + ": cannot open");
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(f)),
                                 std::istreambuf_iterator<char>());
  return buf;
}

inline void write_file(const std::string& path, const void* data, size_t n) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw io_error(path + ": cannot open for writing");
  f.write((const char*)data, (std::streamsize)n);
  if (!f) throw io_error(path + ": short write");
}

// Whitespace/comment-aware token scanner for PNM/PFM headers.
struct HeaderScan {
  const std::vector<unsigned char>& buf;
  const std::string& path;
  size_t pos = 0;

  void skip_space_and_comments() {
    while (pos < buf.size()) {
      unsigned char c = buf[pos];
      if (c == '#') {
        while (pos < buf.size() && buf[pos] != '\n') ++pos;
      } else if (std::isspace(c)) {
        ++pos;
      } else {
        break;
      }
    }
  }

  std::string token() {
    skip_space_and_comments();
    size_t start = pos;
    while (pos < buf.size() && !std::isspace(buf[pos])) ++pos;
    if (start == pos)
      throw io_error(path + ": truncated header at offset " + std::to_string(start));
    return std::string(buf.begin() + start, buf.begin() + pos);
  }

  long integer() {
    size_t at = pos;
    std::string t = token();
    try {
      return std::stol(t);
    } catch (...) {
      throw io_error(path + ": expected integer at offset " + std::to_string(at));
    }
  }

  double real() {
    size_t at = pos;
    std::string t = token();
    try {
      return std::stod(t);
    } catch (...) {
      throw io_error(path + ": expected number at offset " + std::to_string(at));
    }
  }
};

inline float swap_float(float f) {
  uint32_t u;
  std::memcpy(&u, &f, 4);
  u = ((u & 0xff000000u) >> 24) | ((u & 0x00ff0000u) >> 8) |
      ((u & 0x0000ff00u) << 8) | ((u & 0x000000ffu) << 24);
  std::memcpy(&f, &u, 4);
  return f;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// PPM (P6, maxval 255)
// ---------------------------------------------------------------------------

inline Image load_ppm(const std::string& path) {
  auto buf = detail::read_file(path);
  detail::HeaderScan hs{buf, path};
  std::string magic = hs.token();
  if (magic == "P3")
    throw io_error(path + ": ASCII P3 not supported, want binary P6");
  if (magic != "P6")
    throw io_error(path + ": bad magic '" + magic + "' at offset 0 (want P6)");
  long w = hs.integer(), h = hs.integer(), maxval = hs.integer();
  if (w <= 0 || h <= 0) throw io_error(path + ": non-positive dimensions");
  if (maxval != 255) throw io_error(path + ": maxval must be 255");
  ++hs.pos;  // single whitespace after maxval
  size_t need = (size_t)w * h * 3;
  if (buf.size() - hs.pos < need)
    throw io_error(path + ": truncated pixel data at offset " + std::to_string(buf.size()));
  Image img((int)h, (int)w);
  for (size_t i = 0; i < need; ++i) img.v[i] = buf[hs.pos + i] / 255.0;
  return img;
}

inline void save_ppm(const std::string& path, const Image& img) {
  std::string header = "P6\n" + std::to_string(img.w) + " " + std::to_string(img.h) + "\n255\n";
  std::vector<unsigned char> out(header.begin(), header.end());
  out.reserve(out.size() + img.v.size());
  for (double x : img.v)
    out.push_back((unsigned char)std::lround(clamp01(x) * 255.0));
  detail::write_file(path, out.data(), out.size());
}

// ---------------------------------------------------------------------------
// PFM (grayscale "Pf"; rows bottom-to-top; scale sign encodes endianness)
// ---------------------------------------------------------------------------

inline Grid load_pfm(const std::string& path) {
  auto buf = detail::read_file(path);
  detail::HeaderScan hs{buf, path};
  std::string magic = hs.token();
  if (magic != "Pf")
    throw io_error(path + ": bad magic '" + magic + "' at offset 0 (want Pf)");
  long w = hs.integer(), h = hs.integer();
  double scale = hs.real();
  if (w <= 0 || h <= 0) throw io_error(path + ": non-positive dimensions");
  ++hs.pos;
  size_t need = (size_t)w * h * 4;
  if (buf.size() - hs.pos < need)
    throw io_error(path + ": truncated float data at offset " + std::to_string(buf.size()));
  bool big_endian = scale > 0;
  Grid g((int)h, (int)w);
  for (long row = 0; row < h; ++row) {
    long y = h - 1 - row;  // PFM stores bottom row first
    for (long x = 0; x < w; ++x) {
      float f;
      std::memcpy(&f, buf.data() + hs.pos + ((size_t)row * w + x) * 4, 4);
      if (big_endian) f = detail::swap_float(f);
      g.at((int)y, (int)x) = f;
    }
  }
  return g;
}

inline void save_pfm(const std::string& path, const Grid& g) {
  std::string header = "Pf\n" + std::to_string(g.w) + " " + std::to_string(g.h) + "\n-1.0\n";
  std::vector<unsigned char> out(header.begin(), header.end());
  out.resize(out.size() + (size_t)g.w * g.h * 4);
  unsigned char* p = out.data() + header.size();
  for (int row = 0; row < g.h; ++row) {
    int y = g.h - 1 - row;
    for (int x = 0; x < g.w; ++x) {
      float f = (float)g.at(y, x);
      std::memcpy(p + ((size_t)row * g.w + x) * 4, &f, 4);
    }
  }
  detail::write_file(path, out.data(), out.size());
}

// ---------------------------------------------------------------------------
// Middlebury .flo
// ---------------------------------------------------------------------------

inline FlowField read_flo(const std::string& path) {
  auto buf = detail::read_file(path);
  if (buf.size() < 12) throw io_error(path + ": truncated header");
  if (std::memcmp(buf.data(), "PIEH", 4) != 0)
    throw io_error(path + ": bad magic at offset 0 (want PIEH)");
  int32_t w, h;
  std::memcpy(&w, buf.data() + 4, 4);
  std::memcpy(&h, buf.data() + 8, 4);
  if (w <= 0 || h <= 0) throw io_error(path + ": empty flow field");
  size_t need = (size_t)w * h * 2 * 4;
  if (buf.size() - 12 < need)
    throw io_error(path + ": truncated payload at offset " + std::to_string(buf.size()));
  FlowField f(h, w);
  const unsigned char* p = buf.data() + 12;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      float uu, vv;
      std::memcpy(&uu, p, 4);
      std::memcpy(&vv, p + 4, 4);
      p += 8;
      f.u.at(y, x) = uu;
      f.v.at(y, x) = vv;
    }
  return f;
}

inline void write_flo(const std::string& path, const FlowField& f) {
  if (f.width() <= 0 || f.height() <= 0) throw io_error(path + ": empty flow field");
  std::vector<unsigned char> out;
  out.resize(12 + (size_t)f.width() * f.height() * 8);
  std::memcpy(out.data(), "PIEH", 4);
  int32_t w = f.width(), h = f.height();
  std::memcpy(out.data() + 4, &w, 4);
  std::memcpy(out.data() + 8, &h, 4);
  unsigned char* p = out.data() + 12;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      float uu = (float)f.u.at(y, x), vv = (float)f.v.at(y, x);
      std::memcpy(p, &uu, 4);
      std::memcpy(p + 4, &vv, 4);
      p += 8;
    }
  detail::write_file(path, out.data(), out.size());
}

// ---------------------------------------------------------------------------
// cameras.txt: line 1 = K row-major (9 floats), lines 2-3 = pose1, pose2 as
// 4x4 row-major (16 floats each), world->camera.
// ---------------------------------------------------------------------------

namespace detail {

inline SE3 se3_from_row_major(const double* m, const std::string& what) {
  SE3 p;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) p.R(r, c) = m[4 * r + c];
  p.t = {m[3], m[7], m[11]};
  if (m[12] != 0 || m[13] != 0 || m[14] != 0 || m[15] != 1)
    throw io_error(what + ": last row of pose must be 0 0 0 1");
  return p;
}

}  // namespace detail

inline void load_cameras(const std::string& path, Mat3& K, SE3& pose1, SE3& pose2) {
  auto buf = detail::read_file(path);
  std::string text(buf.begin(), buf.end());
  std::istringstream in(text);
  double vals[9 + 16 + 16];
  for (int i = 0; i < 41; ++i)
    if (!(in >> vals[i]))
      throw io_error(path + ": expected 41 numbers, failed at value " + std::to_string(i + 1));
  for (int i = 0; i < 9; ++i) K.m[i] = vals[i];
  if (K(0, 1) != 0 || K(1, 0) != 0 || K(2, 0) != 0 || K(2, 1) != 0 || K(2, 2) != 1)
    throw io_error(path + ": projection matrix must have zero skew and unit last row");
  pose1 = detail::se3_from_row_major(vals + 9, path + " pose1");
  pose2 = detail::se3_from_row_major(vals + 25, path + " pose2");
}

inline void save_cameras(const std::string& path, const Mat3& K, const SE3& pose1,
                         const SE3& pose2) {
  std::ostringstream out;
  out.precision(17);
  for (int i = 0; i < 9; ++i) out << K.m[i] << (i == 8 ? "\n" : " ");
  auto put_pose = [&](const SE3& p) {
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 4; ++c) out << (c < 3 ? p.R(r, c) : p.t[r]) << " ";
    out << "0 0 0 1\n";
  };
  put_pose(pose1);
  put_pose(pose2);
  std::string s = out.str();
  detail::write_file(path, s.data(), s.size());
}

// ---------------------------------------------------------------------------
// scene bundle directory
// ---------------------------------------------------------------------------

inline SceneBundle load_scene(const std::string& dir) {
  namespace fs = std::filesystem;
  SceneBundle s;
  s.frame1 = load_ppm((fs::path(dir) / "frame1.ppm").string());
  s.frame2 = load_ppm((fs::path(dir) / "frame2.ppm").string());
  s.depth1 = load_pfm((fs::path(dir) / "depth1.pfm").string());
  s.depth2 = load_pfm((fs::path(dir) / "depth2.pfm").string());
  load_cameras((fs::path(dir) / "cameras.txt").string(), s.K, s.pose1, s.pose2);
  validate_scene(s);
  return s;
}

inline void save_scene(const std::string& dir, const SceneBundle& s) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  save_ppm((fs::path(dir) / "frame1.ppm").string(), s.frame1);
  save_ppm((fs::path(dir) / "frame2.ppm").string(), s.frame2);
  save_pfm((fs::path(dir) / "depth1.pfm").string(), s.depth1);
  save_pfm((fs::path(dir) / "depth2.pfm").string(), s.depth2);
  save_cameras((fs::path(dir) / "cameras.txt").string(), s.K, s.pose1, s.pose2);
}

// ---------------------------------------------------------------------------
// synthetic scenes
// ---------------------------------------------------------------------------

struct SynthScene {
  SceneBundle scene;
  FlowField gt_flow;
};

namespace detail {

// Smooth world-anchored texture: a fixed sum of oriented sinusoids per
// channel, amplitudes bounded so values stay inside (0,1) without clamping.
struct PlaneTexture {
  struct Wave {
    double kx, ky, phase, amp;
  };
  std::array<std::vector<Wave>, 3> waves;
  double base = 0.5;

  static PlaneTexture make(Rng& rng, double depth, double world_width) {
    PlaneTexture t;
    for (int c = 0; c < 3; ++c) {
      double amp_total = 0.42;
      std::array<double, 3> share{0.55, 0.3, 0.15};
      for (int i = 0; i < 3; ++i) {
        double cycles = rng.uniform(2.0, 7.0) * (1 << i);
        double theta = rng.uniform(0.0, 2.0 * M_PI);
        double k = 2.0 * M_PI * cycles / world_width;
        t.waves[c].push_back({k * std::cos(theta), k * std::sin(theta),
                              rng.uniform(0.0, 2.0 * M_PI), amp_total * share[i]});
      }
    }
    (void)depth;
    return t;
  }

  double eval(int c, double x, double y) const {
    double s = base;
    for (const auto& w : waves[c]) s += w.amp * std::sin(w.kx * x + w.ky * y + w.phase);
    return s;
  }
};

struct SynthPlane {
  double z;
  bool bounded;
  double x0, x1, y0, y1;  // world rect when bounded
  PlaneTexture tex;

  bool hits(double x, double y) const {
    return !bounded || (x >= x0 && x <= x1 && y >= y0 && y <= y1);
  }
};

}  // namespace detail

// Builds a textured multi-plane scene observed by two cameras related by a
// pure translation; frame 2 is the same 3D scene rendered from the moved
// camera, so it is the exact reprojection of frame 1. The deepest plane is an
// unbounded backdrop; remaining planes are floating rectangles. Ground-truth
// flow maps each frame-1 pixel through its 3D hit point into frame 2.
inline SynthScene synth_scene(int width, int height, uint64_t texture_seed,
                              Vec3 camera_translation, std::vector<double> plane_depths) {
  if (width < 16 || height < 16)
    throw contract_error("synth_scene: width and height must be >= 16");
  if (plane_depths.empty()) throw contract_error("synth_scene: need at least one plane");
  for (double z : plane_depths)
    if (!(z > 0)) throw contract_error("synth_scene: plane depths must be positive");

  SynthScene out;
  SceneBundle& s = out.scene;
  double f = (double)std::max(width, height);
  s.K = Mat3::identity();
  s.K(0, 0) = f;
  s.K(1, 1) = f;
  s.K(0, 2) = (width - 1) / 2.0;
  s.K(1, 2) = (height - 1) / 2.0;
  s.pose1 = SE3{};                                  // camera 1 at world origin
  s.pose2 = SE3{Mat3::identity(), -1.0 * camera_translation};  // Xc2 = Xw - C

  std::sort(plane_depths.begin(), plane_depths.end());
  Rng rng(texture_seed);
  std::vector<detail::SynthPlane> planes;
  for (size_t i = 0; i < plane_depths.size(); ++i) {
    double z = plane_depths[i];
    detail::SynthPlane p;
    p.z = z;
    double world_w = z * width / f;
    p.tex = detail::PlaneTexture::make(rng, z, world_w);
    if (i + 1 == plane_depths.size()) {
      p.bounded = false;
      p.x0 = p.x1 = p.y0 = p.y1 = 0;
    } else {
      p.bounded = true;
      // rectangle placed in the central view region, jittered per plane
      double ncx = rng.uniform(0.35, 0.65), ncy = rng.uniform(0.35, 0.65);
      double half = 0.27 * world_w;
      double wx = (ncx * width - s.cx()) / f * z;
      double wy = (ncy * height - s.cy()) / f * z;
      p.x0 = wx - half;
      p.x1 = wx + half;
      p.y0 = wy - half;
      p.y1 = wy + half;
    }
    planes.push_back(p);
  }

  s.frame1 = Image(height, width);
  s.frame2 = Image(height, width);
  s.depth1 = Grid(height, width);
  s.depth2 = Grid(height, width);
  out.gt_flow = FlowField(height, width);

  Vec3 C = camera_translation;
  auto render_pixel = [&](int cam, int px, int py, Vec3* hit_out) {
    double dx = (px - s.cx()) / f, dy = (py - s.cy()) / f;
    Vec3 origin = cam == 1 ? Vec3{0, 0, 0} : C;
    for (const auto& p : planes) {
      double step = p.z - origin.z;
      if (step <= 0) continue;
      double x = origin.x + dx * step;
      double y = origin.y + dy * step;
      if (!p.hits(x, y)) continue;
      Vec3 color{p.tex.eval(0, x, y), p.tex.eval(1, x, y), p.tex.eval(2, x, y)};
      Image& frame = cam == 1 ? s.frame1 : s.frame2;
      Grid& depth = cam == 1 ? s.depth1 : s.depth2;
      for (int c = 0; c < 3; ++c) frame.at(py, px, c) = clamp01(color[c]);
      depth.at(py, px) = step;
      if (hit_out) *hit_out = {x, y, p.z};
      return;
    }
    throw contract_error("synth_scene: backdrop must cover every ray");
  };

  for (int py = 0; py < height; ++py)
    for (int px = 0; px < width; ++px) {
      Vec3 hit;
      render_pixel(1, px, py, &hit);
      render_pixel(2, px, py, nullptr);
      double z2 = hit.z - C.z;
      out.gt_flow.u.at(py, px) = f * (hit.x - C.x) / z2 + s.cx() - px;
      out.gt_flow.v.at(py, px) = f * (hit.y - C.y) / z2 + s.cy() - py;
    }

  validate_scene(s);
  return out;
}

}  // namespace downpour
