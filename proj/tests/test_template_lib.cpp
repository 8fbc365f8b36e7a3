#include <catch2/catch_amalgamated.hpp>

#include "downpour/rng.hpp"
#include "downpour/template_lib.hpp"

using namespace downpour;

TEST_CASE("dust template: peak at center, symmetric, corners smaller") {
  Template t = make_template(TemplateKind::dust, 5, 42);
  REQUIRE(t.h == 5);
  REQUIRE(t.w == 5);
  REQUIRE(t.at(2, 2) == 1.0);
  REQUIRE(t.at(0, 0) < t.at(2, 2));
  for (int y = 0; y < 5; ++y)
    for (int x = 0; x < 5; ++x) {
      REQUIRE(t.at(y, x) == Catch::Approx(t.at(4 - y, 4 - x)).margin(1e-12));
      REQUIRE(t.at(y, x) >= 0.0);
      REQUIRE(t.at(y, x) <= 1.0);
    }
}

TEST_CASE("same seed gives identical templates") {
  Template a = make_template(TemplateKind::flake, 21, 9);
  Template b = make_template(TemplateKind::flake, 21, 9);
  REQUIRE(a.a == b.a);
}

TEST_CASE("flake has 6-fold symmetry") {
  double angle = 0.37;
  Template a = make_flake(41, angle);
  Template b = make_flake(41, angle + M_PI / 3.0);
  double max_diff = 0;
  for (size_t i = 0; i < a.a.size(); ++i) max_diff = std::max(max_diff, std::abs(a.a[i] - b.a[i]));
  REQUIRE(max_diff < 1e-2);
}

TEST_CASE("scale_by_depth side lengths") {
  Template base = make_template(TemplateKind::flake, 71, 0);
  SECTION("unit ratio keeps the base size") {
    Template s = scale_by_depth(base, 71, 9.0, 9.0);
    REQUIRE(s.w == 71);
  }
  SECTION("spec sizes at depth 9 and 18") {
    REQUIRE(scaled_side(71, 9.0, 9.0) == 71);
    REQUIRE(scaled_side(71, 18.0, 9.0) == 35);
  }
  SECTION("clamps at 3 for far particles") {
    Template s = scale_by_depth(base, 71, 1e9, 9.0);
    REQUIRE(s.w == 3);
  }
  SECTION("values stay in [0,1]") {
    Template s = scale_by_depth(base, 71, 4.5, 9.0);
    for (double v : s.a) {
      REQUIRE(v >= 0.0);
      REQUIRE(v <= 1.0);
    }
  }
}

TEST_CASE("defocus blur: identity, impulse, mass") {
  SECTION("radius 0 is the identity") {
    Template t = make_template(TemplateKind::dust, 9, 1);
    Template b = defocus_blur(t, 0.0);
    REQUIRE(b.a == t.a);
  }
  SECTION("impulse becomes a uniform disk") {
    Template t(5, 5);
    t.at(2, 2) = 1.0;
    Template b = defocus_blur(t, 2.0);
    REQUIRE(b.w == 9);
    int count = 0;
    for (int y = 0; y < b.h; ++y)
      for (int x = 0; x < b.w; ++x) {
        if (b.at(y, x) > 0) {
          ++count;
          REQUIRE(b.at(y, x) == Catch::Approx(1.0 / 13.0).margin(1e-15));
        }
      }
    REQUIRE(count == 13);  // |disk(r=2)| = 13
  }
  SECTION("mass is preserved") {
    Rng rng(5);
    Template t(11, 11);
    for (double& v : t.a) v = rng.uniform();
    Template b = defocus_blur(t, 3.0);
    REQUIRE(b.mass() == Catch::Approx(t.mass()).margin(1e-9));
  }
  SECTION("values stay in [0,1]") {
    Template t = make_template(TemplateKind::flake, 15, 3);
    Template b = defocus_blur(t, 2.5);
    for (double v : b.a) {
      REQUIRE(v >= 0.0);
      REQUIRE(v <= 1.0);
    }
  }
}

TEST_CASE("defocus blur is linear") {
  Rng rng(17);
  Template t1(9, 9), t2(9, 9);
  for (double& v : t1.a) v = rng.uniform();
  for (double& v : t2.a) v = rng.uniform();
  double a = 0.7, b = 0.3;
  Template mix(9, 9);
  for (size_t i = 0; i < mix.a.size(); ++i) mix.a[i] = a * t1.a[i] + b * t2.a[i];
  Template lhs = defocus_blur(mix, 2.0);
  Template r1 = defocus_blur(t1, 2.0), r2 = defocus_blur(t2, 2.0);
  for (size_t i = 0; i < lhs.a.size(); ++i)
    REQUIRE(lhs.a[i] == Catch::Approx(a * r1.a[i] + b * r2.a[i]).margin(1e-9));
}

TEST_CASE("footprint matches the scaled template when no blur applies") {
  // far particle: defocus radius < 1, so the footprint must reproduce plain
  // bilinear rescaling of the base template
  Template base = make_template(TemplateKind::dust, 21, 4);
  double depth = 50.0, decay = 9.0;
  REQUIRE(defocus_radius(depth, decay) < 1.0);
  Footprint fp = make_footprint(base, 21, depth, decay);
  Template scaled = scale_by_depth(base, 21, depth, decay);
  REQUIRE(fp.extent() == scaled.w);
  for (int y = 0; y < scaled.h; ++y)
    for (int x = 0; x < scaled.w; ++x)
      REQUIRE(fp.value(y, x) == Catch::Approx(scaled.at(y, x)).margin(1e-9));
}

TEST_CASE("footprint keeps the scaled side and pads for blur reach") {
  Template base = make_template(TemplateKind::flake, 71, 8);
  Footprint fp = make_footprint(base, 71, 3.0, 9.0);  // radius 3
  REQUIRE(fp.side == scaled_side(71, 3.0, 9.0));
  REQUIRE(fp.blur_reach == 3);
  REQUIRE(fp.extent() == fp.side + 6);
  for (int y = 0; y < fp.extent(); ++y)
    for (int x = 0; x < fp.extent(); ++x) {
      double v = fp.value(y, x);
      REQUIRE(v >= 0.0);
      REQUIRE(v <= 1.0);
    }
}
