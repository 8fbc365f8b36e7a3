#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "downpour/scene_io.hpp"
#include "oracles.hpp"

using namespace downpour;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("downpour_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

SceneBundle tiny_scene() {
  SceneBundle s;
  s.frame1 = Image(2, 2, 0.0);
  s.frame2 = Image(2, 2, 0.0);
  s.depth1 = Grid(2, 2, 1.0);
  s.depth2 = Grid(2, 2, 1.0);
  s.K = Mat3::identity();
  s.K(0, 0) = 2;
  s.K(1, 1) = 2;
  s.K(0, 2) = 0.5;
  s.K(1, 2) = 0.5;
  return s;
}

}  // namespace

TEST_CASE("ppm round trip is byte exact") {
  auto dir = temp_dir("ppm");
  Image img(3, 5);
  for (size_t i = 0; i < img.v.size(); ++i) img.v[i] = (double)((i * 37) % 256) / 255.0;
  auto path = (dir / "img.ppm").string();
  save_ppm(path, img);
  Image back = load_ppm(path);
  REQUIRE(back.w == 5);
  REQUIRE(back.h == 3);
  for (size_t i = 0; i < img.v.size(); ++i) REQUIRE(back.v[i] == img.v[i]);

  save_ppm((dir / "img2.ppm").string(), back);
  auto bytes = detail::read_file(path);
  auto bytes2 = detail::read_file((dir / "img2.ppm").string());
  REQUIRE(bytes == bytes2);
}

TEST_CASE("ppm loader rejects P3 and bad magic") {
  auto dir = temp_dir("ppm_bad");
  {
    std::ofstream f(dir / "p3.ppm");
    f << "P3\n1 1\n255\n0 0 0\n";
  }
  REQUIRE_THROWS_AS(load_ppm((dir / "p3.ppm").string()), io_error);
  {
    std::ofstream f(dir / "junk.ppm", std::ios::binary);
    f << "XX\n1 1\n255\n";
  }
  REQUIRE_THROWS_AS(load_ppm((dir / "junk.ppm").string()), io_error);
}

TEST_CASE("pfm round trip preserves 32-bit floats") {
  auto dir = temp_dir("pfm");
  Grid g(4, 3);
  for (size_t i = 0; i < g.size(); ++i) g.v[i] = (float)(0.25 + 1.75 * i);
  auto path = (dir / "d.pfm").string();
  save_pfm(path, g);
  Grid back = load_pfm(path);
  REQUIRE(back.w == 3);
  REQUIRE(back.h == 4);
  for (size_t i = 0; i < g.size(); ++i) REQUIRE(back.v[i] == g.v[i]);
}

TEST_CASE("pfm big-endian scale is honored") {
  auto dir = temp_dir("pfm_be");
  // 1x1 big-endian file holding 2.0f
  std::ofstream f(dir / "be.pfm", std::ios::binary);
  f << "Pf\n1 1\n1.0\n";
  unsigned char be[4] = {0x40, 0x00, 0x00, 0x00};
  f.write((char*)be, 4);
  f.close();
  Grid g = load_pfm((dir / "be.pfm").string());
  REQUIRE(g.at(0, 0) == 2.0);
}

TEST_CASE("flo round trip and error paths") {
  auto dir = temp_dir("flo");
  FlowField f(2, 3);
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < 3; ++x) {
      f.u.at(y, x) = 1.5;
      f.v.at(y, x) = -0.25;
    }
  auto path = (dir / "a.flo").string();
  write_flo(path, f);
  FlowField g = read_flo(path);
  REQUIRE(g.width() == 3);
  REQUIRE(g.height() == 2);
  for (size_t i = 0; i < f.u.size(); ++i) {
    REQUIRE(g.u.v[i] == f.u.v[i]);
    REQUIRE(g.v.v[i] == f.v.v[i]);
  }

  {
    std::ofstream bad(dir / "bad.flo", std::ios::binary);
    bad << "XXXX";
    int32_t wh[2] = {1, 1};
    bad.write((char*)wh, 8);
    float uv[2] = {0, 0};
    bad.write((char*)uv, 8);
  }
  REQUIRE_THROWS_AS(read_flo((dir / "bad.flo").string()), io_error);

  FlowField empty;
  REQUIRE_THROWS_AS(write_flo((dir / "empty.flo").string(), empty), io_error);
  {
    std::ofstream zf(dir / "zero.flo", std::ios::binary);
    zf << "PIEH";
    int32_t wh[2] = {0, 0};
    zf.write((char*)wh, 8);
  }
  REQUIRE_THROWS_AS(read_flo((dir / "zero.flo").string()), io_error);
}

TEST_CASE("scene bundle save/load round trip") {
  auto dir = temp_dir("scene");
  SceneBundle s = tiny_scene();
  s.frame1.at(0, 1, 2) = 0.5;
  s.depth2.at(1, 1) = 3.25;
  save_scene(dir.string(), s);
  SceneBundle back = load_scene(dir.string());
  REQUIRE(back.frame1.at(0, 1, 2) == Catch::Approx(0.5).margin(1.0 / 255 / 2));
  REQUIRE(back.depth2.at(1, 1) == 3.25);
  REQUIRE(back.K(0, 0) == 2);

  // bitwise round trip of the files themselves
  auto dir2 = temp_dir("scene2");
  save_scene(dir2.string(), back);
  for (const char* name : {"frame1.ppm", "frame2.ppm", "depth1.pfm", "depth2.pfm"}) {
    auto a = detail::read_file((dir / name).string());
    auto b = detail::read_file((dir2 / name).string());
    REQUIRE(a == b);
  }
}

TEST_CASE("2x2 black scene loads with identity poses") {
  auto dir = temp_dir("black");
  save_scene(dir.string(), tiny_scene());
  SceneBundle s = load_scene(dir.string());
  for (double v : s.frame1.v) REQUIRE(v == 0.0);
  REQUIRE(s.pose1.R(0, 0) == 1.0);
}

TEST_CASE("negative depth is rejected") {
  auto dir = temp_dir("negdepth");
  SceneBundle s = tiny_scene();
  s.depth1.at(0, 0) = -1.0;
  REQUIRE_THROWS_WITH(validate_scene(s), Catch::Matchers::ContainsSubstring("positive"));
  save_pfm((dir / "neg.pfm").string(), s.depth1);
  SceneBundle t = tiny_scene();
  save_scene(dir.string(), t);
  save_pfm((dir / "depth1.pfm").string(), s.depth1);
  REQUIRE_THROWS_AS(load_scene(dir.string()), io_error);
}

TEST_CASE("non-orthonormal pose is rejected") {
  SceneBundle s = tiny_scene();
  s.pose2.R(0, 0) = 1.5;
  REQUIRE_THROWS_AS(validate_scene(s), io_error);
}

TEST_CASE("synth scene: zero translation gives zero flow") {
  SynthScene sc = synth_scene(24, 20, 7, {0, 0, 0}, {2.0, 5.0});
  for (size_t i = 0; i < sc.gt_flow.u.size(); ++i) {
    REQUIRE(sc.gt_flow.u.v[i] == 0.0);
    REQUIRE(sc.gt_flow.v.v[i] == 0.0);
  }
  REQUIRE(sc.scene.frame1.v == sc.scene.frame2.v);
}

TEST_CASE("synth scene: single plane pure x translation") {
  double tx = 0.2, z = 4.0;
  SynthScene sc = synth_scene(32, 24, 3, {tx, 0, 0}, {z});
  double fx = sc.scene.fx();
  for (size_t i = 0; i < sc.gt_flow.u.size(); ++i) {
    REQUIRE(sc.gt_flow.u.v[i] == Catch::Approx(-fx * tx / z).margin(1e-9));
    REQUIRE(sc.gt_flow.v.v[i] == Catch::Approx(0.0).margin(1e-9));
  }
}

TEST_CASE("synth scene: near plane moves faster than far plane") {
  SynthScene sc = synth_scene(48, 36, 11, {0.15, 0.0, 0.0}, {2.0, 6.0});
  double fx = sc.scene.fx();
  double near_mag = fx * 0.15 / 2.0, far_mag = fx * 0.15 / 6.0;
  for (int y = 0; y < 36; ++y)
    for (int x = 0; x < 48; ++x) {
      double z = sc.scene.depth1.at(y, x);
      double mag = std::abs(sc.gt_flow.u.at(y, x));
      if (z == 2.0) REQUIRE(mag == Catch::Approx(near_mag).margin(1e-9));
      if (z == 6.0) REQUIRE(mag == Catch::Approx(far_mag).margin(1e-9));
      REQUIRE((z == 2.0 || z == 6.0));
    }
  REQUIRE(near_mag > far_mag);
}

TEST_CASE("synth scene flow matches brute-force reprojection") {
  SynthScene sc = synth_scene(40, 30, 21, {0.12, -0.06, 0.05}, {2.5, 4.0, 7.0});
  FlowField oracle = oracles::reprojection_flow(sc.scene);
  // the oracle uses depth1 which equals the hit depth, so this must agree
  for (size_t i = 0; i < oracle.u.size(); ++i) {
    REQUIRE(sc.gt_flow.u.v[i] == Catch::Approx(oracle.u.v[i]).margin(1e-6));
    REQUIRE(sc.gt_flow.v.v[i] == Catch::Approx(oracle.v.v[i]).margin(1e-6));
  }
}

TEST_CASE("synth scene rejects degenerate input") {
  REQUIRE_THROWS_AS(synth_scene(8, 24, 0, {0, 0, 0}, {2.0}), contract_error);
  REQUIRE_THROWS_AS(synth_scene(24, 24, 0, {0, 0, 0}, {-1.0}), contract_error);
  REQUIRE_THROWS_AS(synth_scene(24, 24, 0, {0, 0, 0}, {}), contract_error);
}

TEST_CASE("cameras.txt round trip") {
  auto dir = temp_dir("cams");
  Mat3 K = Mat3::identity();
  K(0, 0) = 100;
  K(1, 1) = 110;
  K(0, 2) = 15.5;
  K(1, 2) = 11.5;
  SE3 p1{};
  SE3 p2{Mat3::identity(), Vec3{-0.25, 0.125, 0.0625}};
  save_cameras((dir / "cameras.txt").string(), K, p1, p2);
  Mat3 K2;
  SE3 q1, q2;
  load_cameras((dir / "cameras.txt").string(), K2, q1, q2);
  REQUIRE(K2(0, 0) == 100);
  REQUIRE(q2.t.x == -0.25);
}
