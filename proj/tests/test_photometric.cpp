#include <catch2/catch_amalgamated.hpp>
#include <random>

#include "vobench/photometric.hpp"

using namespace vobench;

namespace {

CameraIntrinsics small_intrinsics(int w = 128, int h = 96, double fx = 100) {
  CameraIntrinsics intr;
  intr.fx = fx;
  intr.fy = fx;
  intr.cx = (w - 1) * 0.5;
  intr.cy = (h - 1) * 0.5;
  intr.width = w;
  intr.height = h;
  intr.pixel_size = 3e-6;
  return intr;
}

/// Smooth low-frequency synthetic image with non-trivial gradients.
Image smooth_image(int w, int h, double phase = 0.0) {
  Image img(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      img.at(x, y) = float(0.5 + 0.2 * std::sin(0.11 * x + phase) *
                                     std::cos(0.07 * y - 0.5 * phase) +
                           0.15 * std::sin(0.05 * (x + y)));
  return img;
}

Frame make_frame(Image img, int id = 0) {
  Frame f;
  f.id = id;
  f.intensity = std::move(img);
  f.prepare();
  return f;
}

}  // namespace

TEST_CASE("pyramid of a constant image stays constant") {
  Image img(64, 64, 0.37f);
  const auto pyr = build_pyramid(img, 4);
  REQUIRE(pyr.size() == 4);
  for (const auto& level : pyr)
    for (float v : level.data()) CHECK(v == Catch::Approx(0.37f));
  CHECK(pyr[3].width() == 8);
}

TEST_CASE("pyramid box filter averages a checkerboard to 0.5") {
  Image img(4, 4);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) img.at(x, y) = float((x + y) % 2);
  const auto pyr = build_pyramid(img, 2);
  REQUIRE(pyr[1].width() == 2);
  for (float v : pyr[1].data()) CHECK(v == Catch::Approx(0.5f));
}

TEST_CASE("pyramid intrinsics halve the focal length per level") {
  const auto intr = small_intrinsics(128, 96, 100);
  const auto pyr = pyramid_intrinsics(intr, 4);
  CHECK(pyr[1].fx == Catch::Approx(50.0));
  CHECK(pyr[2].fx == Catch::Approx(25.0));
  CHECK(pyr[3].fx == Catch::Approx(12.5));
  CHECK(pyr[1].width == 64);
  // Principal point convention keeps pixel centers aligned.
  CHECK(pyr[1].cx == Catch::Approx(0.5 * (intr.cx + 0.5) - 0.5));
}

TEST_CASE("pyramid rejects too many levels") {
  Image img(8, 8, 0.f);
  CHECK_THROWS_AS(build_pyramid(img, 10), Error);
}

TEST_CASE("bilinear interpolation basics") {
  Image img(4, 4);
  img.at(1, 1) = 0.2f;
  img.at(2, 1) = 0.4f;
  img.compute_gradients();
  CHECK(img.interpolate(1, 1) == Catch::Approx(0.2));
  CHECK(img.interpolate(1.5, 1) == Catch::Approx(0.3));
  CHECK_THROWS_WITH(img.interpolate(-0.1, 0),
                    Catch::Matchers::ContainsSubstring("out of bounds"));
  CHECK_THROWS_AS(img.interpolate(0, 3.5), Error);
}

TEST_CASE("ramp image has the analytic gradient") {
  const int w = 64, h = 48;
  Image img(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) img.at(x, y) = float(x) / float(w);
  img.compute_gradients();
  for (int y = 1; y < h - 1; ++y)
    for (int x = 1; x < w - 1; ++x) {
      const Vec2 g = img.interpolate_gradient(x, y);
      CHECK(g.x() == Catch::Approx(1.0 / w).margin(1e-6));
      CHECK(g.y() == Catch::Approx(0.0).margin(1e-6));
    }
}

TEST_CASE("huber cost branches and continuity") {
  const double g = 0.1;
  CHECK(huber(0.0, g) == 0.0);
  CHECK(huber(g, g) == Catch::Approx(g * g).epsilon(1e-12));
  CHECK(huber(std::nextafter(g, 1.0), g) == Catch::Approx(g * g).epsilon(1e-9));
  CHECK(huber(2 * g, g) == Catch::Approx(3 * g * g).epsilon(1e-12));
  // Even and monotone in |r|.
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  double prev = -1;
  for (double r = 0; r < 1.0; r += 0.01) {
    CHECK(huber(r, g) == huber(-r, g));
    CHECK(huber(r, g) >= prev);
    prev = huber(r, g);
  }
  CHECK_THROWS_AS(huber(0.1, 0.0), Error);
}

TEST_CASE("huber IRLS weight matches the cost derivative") {
  const double g = 9.0 / 255.0;
  for (double r : {0.001, 0.01, 0.05, 0.2, -0.3}) {
    const double eps = 1e-7;
    const double fd = (huber(r + eps, g) - huber(r - eps, g)) / (2 * eps);
    CHECK(2.0 * huber_weight(r, g) * r == Catch::Approx(fd).margin(1e-6));
  }
}

TEST_CASE("gradient weight midpoint and monotonicity") {
  CHECK(gradient_weight(Vec2::Zero()) == 1.0);
  CHECK(gradient_weight(Vec2(kGradientWeightC, 0)) == Catch::Approx(0.5).epsilon(1e-12));
  double prev = 2.0;
  for (double m = 0; m < 2.0; m += 0.05) {
    const double w = gradient_weight(Vec2(m, 0));
    CHECK(w < prev);
    CHECK(w > 0);
    CHECK(w <= 1.0);
    prev = w;
  }
}

TEST_CASE("photometric residual is exactly zero against itself") {
  const auto intr = small_intrinsics();
  Frame host = make_frame(smooth_image(intr.width, intr.height));
  CandidatePoint pt;
  pt.pixel = Vec2(60, 40);
  pt.inverse_depth = 0.05;
  pt.depth_valid = true;
  const auto res = photometric_residual(pt, host, host, Pose::identity(), intr);
  REQUIRE(res.valid);
  CHECK(res.cost < 1e-12);
  for (int k = 0; k < ResidualPattern::kSize; ++k)
    if (res.offset_valid[k]) CHECK(std::abs(res.residuals[k]) < 1e-12);
}

TEST_CASE("brightness transfer cancels a modeled exposure change") {
  const auto intr = small_intrinsics();
  Frame host = make_frame(smooth_image(intr.width, intr.height));
  Image scaled = host.intensity;
  for (auto& v : scaled.data()) v = float(v * std::exp(0.3));
  Frame target = make_frame(std::move(scaled), 1);
  target.affine_a = 0.3;  // model matches the injected multiplicative change
  CandidatePoint pt;
  pt.pixel = Vec2(60, 40);
  pt.inverse_depth = 0.05;
  pt.depth_valid = true;
  const auto res = photometric_residual(pt, host, target, Pose::identity(), intr);
  REQUIRE(res.valid);
  CHECK(res.cost < 1e-10);
}

TEST_CASE("unmodeled intensity offset yields the closed-form cost") {
  const auto intr = small_intrinsics();
  Frame host = make_frame(smooth_image(intr.width, intr.height));
  Image shifted = host.intensity;
  for (auto& v : shifted.data()) v += 0.1f;
  Frame target = make_frame(std::move(shifted), 1);
  CandidatePoint pt;
  pt.pixel = Vec2(60, 40);
  pt.inverse_depth = 0.05;
  pt.depth_valid = true;
  const double gamma = kDefaultHuberGamma;
  const auto res = photometric_residual(pt, host, target, Pose::identity(), intr);
  REQUIRE(res.valid);
  double expected = 0;
  for (int k = 0; k < ResidualPattern::kSize; ++k)
    if (res.offset_valid[k]) expected += res.weights[k] * huber(0.1, gamma);
  CHECK(res.cost == Catch::Approx(expected).epsilon(1e-6));
}

TEST_CASE("residual invariant under matched exposure/affine rescaling") {
  const auto intr = small_intrinsics();
  Frame host = make_frame(smooth_image(intr.width, intr.height));
  Frame target = make_frame(smooth_image(intr.width, intr.height, 0.8), 1);
  target.affine_a = 0.12;
  target.affine_b = 0.02;
  CandidatePoint pt;
  pt.pixel = Vec2(55, 45);
  pt.inverse_depth = 0.08;
  pt.depth_valid = true;
  const Pose rel = Pose::exp((Vec6() << 0.02, -0.01, 0.03, 0.002, -0.001, 0.003).finished());
  const auto base = photometric_residual(pt, host, target, rel, intr);

  const double k = 2.7;
  Frame target2 = target;
  target2.exposure *= k;          // exposure doubles ...
  Frame host2 = host;
  host2.affine_a += std::log(k);  // ... and the modeled ratio absorbs it
  const auto same = photometric_residual(pt, host2, target2, rel, intr);
  REQUIRE(base.valid);
  REQUIRE(same.valid);
  CHECK(same.cost == Catch::Approx(base.cost).margin(1e-12));
}

TEST_CASE("residual invalidated behind camera or with too few offsets") {
  const auto intr = small_intrinsics();
  Frame host = make_frame(smooth_image(intr.width, intr.height));
  CandidatePoint pt;
  pt.pixel = Vec2(60, 40);
  pt.inverse_depth = 0.05;
  pt.depth_valid = true;
  // Move the target far behind the points.
  Pose rel;
  rel.translation = Vec3(0, 0, -40);
  const auto res = photometric_residual(pt, host, host, rel, intr);
  CHECK_FALSE(res.valid);
  CHECK(res.cost == 0.0);
}

TEST_CASE("analytic jacobians match central finite differences") {
  const auto intr = small_intrinsics(256, 192, 200);
  std::mt19937_64 rng(101);
  std::uniform_real_distribution<double> upx(20.0, intr.width - 21.0);
  std::uniform_real_distribution<double> vpx(20.0, intr.height - 21.0);
  std::uniform_real_distribution<double> uid(0.02, 0.2);
  std::uniform_real_distribution<double> utw(-0.01, 0.01);
  std::uniform_real_distribution<double> uaff(-0.1, 0.1);

  Frame host = make_frame(smooth_image(intr.width, intr.height));
  Frame target_base = make_frame(smooth_image(intr.width, intr.height, 0.3), 1);

  int tested = 0;
  double max_rel_err = 0;
  for (int trial = 0; trial < 100; ++trial) {
    CandidatePoint pt;
    pt.pixel = Vec2(upx(rng), vpx(rng));
    pt.inverse_depth = uid(rng);
    pt.depth_valid = true;
    Vec6 tw;
    for (int i = 0; i < 6; ++i) tw[i] = utw(rng);
    const Pose rel = Pose::exp(tw);
    Frame target = target_base;
    target.affine_a = uaff(rng);
    target.affine_b = uaff(rng);

    for (int k = 0; k < ResidualPattern::kSize; ++k) {
      const auto jac = photometric_jacobian(pt, host, target, rel, intr, k);
      if (!jac.valid) continue;
      // Skip target pixels close to a bilinear-cell boundary: the
      // interpolant's derivative is discontinuous there and a central
      // difference straddling the edge is not a valid oracle.
      const Vec2 off = pt.pixel + ResidualPattern::standard().offsets[k].cast<double>();
      const Vec3 xt = rel * backproject(off, pt.inverse_depth, intr);
      const Vec2 tpx = project(xt, intr);
      const auto frac = [](double v) { return v - std::floor(v); };
      const double fu = frac(tpx.x()), fv = frac(tpx.y());
      const double margin = 1e-3;
      if (fu < margin || fu > 1 - margin || fv < margin || fv > 1 - margin) continue;
      ++tested;

      const auto residual_at = [&](const Pose& r, double id, double a, double b) {
        CandidatePoint p2 = pt;
        p2.inverse_depth = id;
        Frame t2 = target;
        t2.affine_a = a;
        t2.affine_b = b;
        const auto j = photometric_jacobian(p2, host, t2, r, intr, k);
        REQUIRE(j.valid);
        return j.residual;
      };
      const auto check = [&](double analytic, double numeric) {
        const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-4});
        max_rel_err = std::max(max_rel_err, std::abs(analytic - numeric) / scale);
      };

      const double eps = 1e-6;
      for (int i = 0; i < 6; ++i) {
        Vec6 d = Vec6::Zero();
        d[i] = eps;
        const double rp = residual_at(Pose::exp(d) * rel, pt.inverse_depth,
                                      target.affine_a, target.affine_b);
        d[i] = -eps;
        const double rm = residual_at(Pose::exp(d) * rel, pt.inverse_depth,
                                      target.affine_a, target.affine_b);
        check(jac.d_twist[i], (rp - rm) / (2 * eps));
      }
      const double ide = 1e-7;
      check(jac.d_idepth,
            (residual_at(rel, pt.inverse_depth + ide, target.affine_a, target.affine_b) -
             residual_at(rel, pt.inverse_depth - ide, target.affine_a, target.affine_b)) /
                (2 * ide));
      check(jac.d_affine_a,
            (residual_at(rel, pt.inverse_depth, target.affine_a + eps, target.affine_b) -
             residual_at(rel, pt.inverse_depth, target.affine_a - eps, target.affine_b)) /
                (2 * eps));
      check(jac.d_affine_b,
            (residual_at(rel, pt.inverse_depth, target.affine_a, target.affine_b + eps) -
             residual_at(rel, pt.inverse_depth, target.affine_a, target.affine_b - eps)) /
                (2 * eps));
    }
  }
  INFO("offsets tested: " << tested);
  CHECK(tested > 400);
  CHECK(max_rel_err < 1e-4);
}

TEST_CASE("candidate selection on a constant image is empty") {
  Frame f = make_frame(Image(128, 128, 0.5f));
  CHECK(select_candidates(f, 100).empty());
}

TEST_CASE("candidate selection finds an isolated bright dot") {
  Image img(64, 64, 0.f);
  img.at(40, 24) = 1.f;
  Frame f = make_frame(std::move(img));
  const auto picks = select_candidates(f, 10);
  REQUIRE_FALSE(picks.empty());
  for (const auto& p : picks)
    CHECK((p.pixel - Vec2(40, 24)).norm() <= 2.0);  // the dot's edge pixels
}

TEST_CASE("candidate selection respects the budget and is deterministic") {
  Frame f = make_frame(smooth_image(320, 240));
  const auto a = select_candidates(f, 150);
  const auto b = select_candidates(f, 150);
  CHECK(a.size() <= 150);
  CHECK_FALSE(a.empty());
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) CHECK((a[i].pixel - b[i].pixel).norm() == 0.0);
  // Gradients are precomputed; every selected pixel has nonzero gradient.
  for (const auto& p : a)
    CHECK(f.intensity.gradient(int(p.pixel.x()), int(p.pixel.y())).norm() > 0.0);
}
