#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace downpour {

// ---------------------------------------------------------------------------
// small vectors / matrices
// ---------------------------------------------------------------------------

struct Vec2 {
  double x = 0, y = 0;
};

inline Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
inline Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
inline Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }

struct Vec3 {
  double x = 0, y = 0, z = 0;

  double& operator[](int i) { return i == 0 ? x : (i == 1 ? y : z); }
  double operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }
};

inline Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
inline Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
inline Vec3 operator*(double s, Vec3 a) { return {s * a.x, s * a.y, s * a.z}; }
inline Vec3& operator+=(Vec3& a, Vec3 b) { a = a + b; return a; }
inline double dot(Vec3 a, Vec3 b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline double norm2(Vec3 a) { return dot(a, a); }
inline double norm(Vec3 a) { return std::sqrt(norm2(a)); }

// 3x3, row major
struct Mat3 {
  std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};

  double& operator()(int r, int c) { return m[3 * r + c]; }
  double operator()(int r, int c) const { return m[3 * r + c]; }

  static Mat3 identity() { return Mat3{}; }

  Mat3 transposed() const {
    Mat3 t;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) t(r, c) = (*this)(c, r);
    return t;
  }
};

inline Vec3 operator*(const Mat3& a, Vec3 v) {
  return {a(0, 0) * v.x + a(0, 1) * v.y + a(0, 2) * v.z,
          a(1, 0) * v.x + a(1, 1) * v.y + a(1, 2) * v.z,
          a(2, 0) * v.x + a(2, 1) * v.y + a(2, 2) * v.z};
}

inline Mat3 operator*(const Mat3& a, const Mat3& b) {
  Mat3 r;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double s = 0;
      for (int k = 0; k < 3; ++k) s += a(i, k) * b(k, j);
      r(i, j) = s;
    }
  return r;
}

inline double det(const Mat3& a) {
  return a(0, 0) * (a(1, 1) * a(2, 2) - a(1, 2) * a(2, 1)) -
         a(0, 1) * (a(1, 0) * a(2, 2) - a(1, 2) * a(2, 0)) +
         a(0, 2) * (a(1, 0) * a(2, 1) - a(1, 1) * a(2, 0));
}

// Rigid transform world->camera: Xc = R*Xw + t.
struct SE3 {
  Mat3 R;
  Vec3 t;

  Vec3 apply(Vec3 p) const { return R * p + t; }

  SE3 inverse() const {
    SE3 inv;
    inv.R = R.transposed();
    inv.t = -1.0 * (inv.R * t);
    return inv;
  }
};

// a ∘ b : first b, then a
inline SE3 compose(const SE3& a, const SE3& b) {
  SE3 r;
  r.R = a.R * b.R;
  r.t = a.R * b.t + a.t;
  return r;
}

// ---------------------------------------------------------------------------
// dense grids
// ---------------------------------------------------------------------------

// H x W scalar field, row major.
struct Grid {
  int h = 0, w = 0;
  std::vector<double> v;

  Grid() = default;
  Grid(int h_, int w_, double fill = 0.0) : h(h_), w(w_), v((size_t)h_ * w_, fill) {}

  double& at(int y, int x) { return v[(size_t)y * w + x]; }
  double at(int y, int x) const { return v[(size_t)y * w + x]; }
  size_t size() const { return v.size(); }
};

// H x W x 3 color field in [0,1], row major, channel innermost.
struct Image {
  int h = 0, w = 0;
  std::vector<double> v;

  Image() = default;
  Image(int h_, int w_, double fill = 0.0) : h(h_), w(w_), v((size_t)h_ * w_ * 3, fill) {}

  double& at(int y, int x, int c) { return v[((size_t)y * w + x) * 3 + c]; }
  double at(int y, int x, int c) const { return v[((size_t)y * w + x) * 3 + c]; }
};

inline double clamp01(double x) { return x < 0.0 ? 0.0 : (x > 1.0 ? 1.0 : x); }

// Bilinear sample with coordinates clamped to the valid range.
inline double bilinear_clamped(const Grid& g, double x, double y) {
  x = std::clamp(x, 0.0, (double)(g.w - 1));
  y = std::clamp(y, 0.0, (double)(g.h - 1));
  int x0 = std::min((int)x, g.w - 2 >= 0 ? g.w - 2 : 0);
  int y0 = std::min((int)y, g.h - 2 >= 0 ? g.h - 2 : 0);
  if (g.w == 1) x0 = 0;
  if (g.h == 1) y0 = 0;
  int x1 = std::min(x0 + 1, g.w - 1);
  int y1 = std::min(y0 + 1, g.h - 1);
  double fx = x - x0, fy = y - y0;
  return (1 - fy) * ((1 - fx) * g.at(y0, x0) + fx * g.at(y0, x1)) +
         fy * ((1 - fx) * g.at(y1, x0) + fx * g.at(y1, x1));
}

// ---------------------------------------------------------------------------
// compensated accumulation
// ---------------------------------------------------------------------------

// Neumaier running sum; keeps per-pixel accumulation order-insensitive to
// well below 1e-12 so permuted/parallel renders agree.
struct Accum {
  double s = 0.0, c = 0.0;

  void add(double x) {
    double t = s + x;
    if (std::abs(s) >= std::abs(x))
      c += (s - t) + x;
    else
      c += (x - t) + s;
    s = t;
  }
  double value() const { return s + c; }
};

// ---------------------------------------------------------------------------
// threading
// ---------------------------------------------------------------------------

// Worker cap: DOWNPOUR_THREADS env var, else hardware concurrency.
inline int worker_count() {
  if (const char* e = std::getenv("DOWNPOUR_THREADS")) {
    int n = std::atoi(e);
    if (n >= 1) return n;
  }
  unsigned hc = std::thread::hardware_concurrency();
  return hc ? (int)hc : 1;
}

// Runs fn(chunk) for chunk = 0..n_chunks-1 on up to worker_count() threads.
// Chunks must write disjoint state; results may not depend on which thread
// ran which chunk.
template <typename Fn>
void parallel_chunks(int n_chunks, Fn&& fn) {
  int workers = std::min(worker_count(), n_chunks);
  if (workers <= 1) {
    for (int i = 0; i < n_chunks; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int t = 0; t < workers; ++t) {
    pool.emplace_back([&] {
      for (;;) {
        int i = next.fetch_add(1);
        if (i >= n_chunks) return;
        fn(i);
      }
    });
  }
  for (auto& th : pool) th.join();
}

// ---------------------------------------------------------------------------
// errors
// ---------------------------------------------------------------------------

// Malformed or inconsistent external data.
struct io_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Caller broke an operation contract.
struct contract_error : std::logic_error {
  using std::logic_error::logic_error;
};

}  // namespace downpour
