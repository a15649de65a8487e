#include <catch2/catch_amalgamated.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "vobench/dataset.hpp"
#include "vobench/stereo.hpp"

using namespace vobench;
using Catch::Matchers::ContainsSubstring;

namespace {

SceneConfig plane_only_config(uint64_t seed = 7) {
  SceneConfig cfg;
  cfg.num_boxes = 0;
  cfg.num_ramps = 0;
  cfg.seed = seed;
  return cfg;
}

StereoRig small_rig(int w = 128, int h = 96, double fx = 400, double baseline = 0.34) {
  StereoRig rig;
  rig.baseline = baseline;
  rig.left.width = w;
  rig.left.height = h;
  rig.left.fx = fx;
  rig.left.fy = fx;
  rig.left.cx = 0.5 * (w - 1);
  rig.left.cy = 0.5 * (h - 1);
  rig.left.pixel_size = 3e-6;
  rig.right = rig.left;
  return rig;
}

/// Camera looking straight down: x_cam -> +x_world, y_cam -> -y_world,
/// z_cam (optical axis) -> -z_world. Determinant +1.
Pose straight_down_pose(const Vec3& position) {
  Mat3 R;
  R.col(0) = Vec3(1, 0, 0);
  R.col(1) = Vec3(0, -1, 0);
  R.col(2) = Vec3(0, 0, -1);
  return {R, position};
}

std::string temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(dir);
  return dir.string();
}

}  // namespace

TEST_CASE("scene generation is deterministic in the seed") {
  SceneConfig cfg;
  cfg.seed = 42;
  Scene a(cfg), b(cfg);
  cfg.seed = 43;
  Scene c(cfg);

  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> ux(0.0, cfg.extent);
  std::uniform_real_distribution<double> uy(-cfg.lateral_extent / 2, cfg.lateral_extent / 2);
  std::uniform_real_distribution<double> uz(0.0, 30.0);
  bool seed_changes_something = false;
  for (int i = 0; i < 1000; ++i) {
    const Vec3 p(ux(rng), uy(rng), uz(rng));
    REQUIRE(a.texture(p) == b.texture(p));
    REQUIRE(a.signed_distance(p) == b.signed_distance(p));
    const Vec3 origin(p.x(), p.y(), 50.0);
    const auto ha = a.raycast(origin, Vec3(0.1, 0.05, -1.0));
    const auto hb = b.raycast(origin, Vec3(0.1, 0.05, -1.0));
    REQUIRE(ha.has_value() == hb.has_value());
    if (ha) REQUIRE(ha->t == hb->t);
    if (a.texture(p) != c.texture(p) || a.signed_distance(p) != c.signed_distance(p))
      seed_changes_something = true;
  }
  REQUIRE(seed_changes_something);
}

TEST_CASE("downward ray over bare ground hits at the flight altitude") {
  Scene scene(plane_only_config());
  const auto hit = scene.raycast(Vec3(30, 5, 20), Vec3(0, 0, -1));
  REQUIRE(hit.has_value());
  REQUIRE(hit->t == Catch::Approx(20.0).margin(1e-12));
  REQUIRE(hit->point.z() == Catch::Approx(0.0).margin(1e-12));
  REQUIRE((hit->normal - Vec3::UnitZ()).norm() < 1e-12);
  REQUIRE(scene.height_at(30, 5) == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("box primitive: downward ray over a 10 m box hits at altitude minus 10") {
  Box box{Vec3(0, 0, 0), Vec3(12, 12, 10)};
  const auto t = box.intersect(Vec3(6, 6, 25), Vec3(0, 0, -1));
  REQUIRE(t.has_value());
  REQUIRE(*t == Catch::Approx(15.0).margin(1e-12));
  // Surface points are at zero signed distance; the top face normal is +z.
  REQUIRE(box.sdf(Vec3(6, 6, 10)) == Catch::Approx(0.0).margin(1e-12));
  REQUIRE((box.normal_at(Vec3(6, 6, 10)) - Vec3::UnitZ()).norm() < 1e-12);
  // A point 3 m above the top face.
  REQUIRE(box.sdf(Vec3(6, 6, 13)) == Catch::Approx(3.0).margin(1e-12));
}

TEST_CASE("straight-down render over flat ground gives constant depth and the "
          "expected stereo disparity") {
  Scene scene(plane_only_config(11));
  const StereoRig rig = small_rig();
  const double altitude = 20.0;
  const Pose pose = straight_down_pose(Vec3(60, 0, altitude));
  const auto frame = render_frame(scene, pose, rig);

  for (float d : frame.left_depth) REQUIRE(double(d) == Catch::Approx(altitude).margin(1e-6));

  const double expected_disp = rig.left.fx * rig.baseline / altitude;
  StereoMatcherConfig mcfg;
  int matched = 0;
  for (int v = 20; v < rig.left.height - 20; v += 13) {
    for (int u = 20; u < rig.left.width - 20; u += 13) {
      const auto m = match_stereo(frame.left, frame.right, Vec2(u, v), rig, mcfg);
      if (!m) continue;
      ++matched;
      REQUIRE(std::abs(m->disparity - expected_disp) <= 0.5);
    }
  }
  REQUIRE(matched >= 10);
}

TEST_CASE("rendering the same pose twice is bit-identical") {
  SceneConfig cfg;
  cfg.seed = 3;
  Scene scene(cfg);
  const StereoRig rig = small_rig(64, 48, 60);
  const Pose pose{detail::camera_rotation(Vec3(1, 0, 0), 0.61), Vec3(40, 2, 16)};
  const auto a = render_frame(scene, pose, rig);
  const auto b = render_frame(scene, pose, rig);
  REQUIRE(a.left.data() == b.left.data());
  REQUIRE(a.right.data() == b.right.data());
  REQUIRE(a.left_depth == b.left_depth);
}

TEST_CASE("rendered depth matches an independent double-precision re-raycast") {
  SceneConfig cfg;
  cfg.seed = 17;
  cfg.num_boxes = 20;
  cfg.num_ramps = 4;
  Scene scene(cfg);
  const StereoRig rig = small_rig(160, 120, 150);
  const Pose pose{detail::camera_rotation(Vec3(1, 0, 0), 0.61), Vec3(50, 0, 16)};
  const auto frame = render_frame(scene, pose, rig);

  int checked = 0;
  for (int v = 0; v < rig.left.height; ++v) {
    for (int u = 0; u < rig.left.width; ++u) {
      const float stored = frame.left_depth[size_t(v) * rig.left.width + u];
      if (stored <= 0.f) continue;  // sky sentinel
      const Vec3 dir_cam((u - rig.left.cx) / rig.left.fx, (v - rig.left.cy) / rig.left.fy, 1.0);
      const Vec3 dir = pose.rotation * dir_cam;
      const auto hit = scene.raycast(pose.translation, dir);
      REQUIRE(hit.has_value());
      // The hit point lies on a scene surface to sub-micron accuracy...
      REQUIRE(std::abs(scene.signed_distance(pose.translation + hit->t * dir)) < 1e-6);
      // ...and the stored float32 z-depth agrees to float precision.
      REQUIRE(std::abs(double(stored) - hit->t) / hit->t < 1e-6);
      ++checked;
    }
  }
  REQUIRE(checked > 1000);
}

TEST_CASE("sky pixels beyond the render distance are a constant intensity and "
          "zero depth") {
  SceneConfig cfg;
  cfg.seed = 9;
  Scene scene(cfg);
  const StereoRig rig = small_rig(64, 48, 60);
  const Pose pose = straight_down_pose(Vec3(60, 0, 400.0));  // ground beyond 300 m
  const auto frame = render_frame(scene, pose, rig);
  const float sky = frame.left.at(0, 0);
  for (float v : frame.left.data()) REQUIRE(v == sky);
  for (float v : frame.right.data()) REQUIRE(v == sky);
  for (float d : frame.left_depth) REQUIRE(d == 0.f);
}

TEST_CASE("generated sequences sample the path at constant speed") {
  Scene scene(plane_only_config(21));
  TrajectoryConfig traj;
  traj.waypoints = {Vec3(0, 0, 16), Vec3(100, 0, 16)};
  traj.speed = 20.0;
  traj.frame_rate = 10.0;
  const StereoRig rig = small_rig(64, 48, 60);
  const auto seq = generate_sequence(scene, traj, rig);

  // 100 m at 2 m per frame, inclusive of both endpoints.
  REQUIRE(seq.size() == 51);
  for (size_t i = 1; i < seq.size(); ++i) {
    const double step = (seq.poses[i].translation - seq.poses[i - 1].translation).norm();
    REQUIRE(step == Catch::Approx(2.0).margin(1e-9));
    REQUIRE(seq.timestamps[i] - seq.timestamps[i - 1] == Catch::Approx(0.1).margin(1e-12));
  }
  for (const auto& p : seq.poses) {
    REQUIRE(p.is_orthonormal());
    REQUIRE(p.translation.z() >
            scene.height_at(p.translation.x(), p.translation.y()));
  }
}

TEST_CASE("sequence save/load round trip is bit-identical") {
  SceneConfig cfg;
  cfg.seed = 5;
  cfg.num_boxes = 8;
  Scene scene(cfg);
  TrajectoryConfig traj;
  traj.waypoints = {Vec3(20, 0, 16), Vec3(28, 0, 16)};
  traj.speed = 20.0;
  traj.frame_rate = 5.0;
  const StereoRig rig = small_rig(64, 48, 60);
  const auto seq = generate_sequence(scene, traj, rig);
  REQUIRE(seq.size() == 3);

  const std::string dir = temp_dir("vobench_seq_roundtrip");
  save_sequence(dir, seq);
  const auto loaded = load_sequence(dir);

  REQUIRE(loaded.size() == seq.size());
  REQUIRE(loaded.rig.baseline == seq.rig.baseline);
  REQUIRE(loaded.rig.left.fx == seq.rig.left.fx);
  for (size_t i = 0; i < seq.size(); ++i) {
    REQUIRE(loaded.left[i].data() == seq.left[i].data());
    REQUIRE(loaded.right[i].data() == seq.right[i].data());
    REQUIRE(loaded.depth[i] == seq.depth[i]);
    REQUIRE((loaded.poses[i].translation - seq.poses[i].translation).norm() < 1e-9);
    REQUIRE((loaded.poses[i].rotation - seq.poses[i].rotation).norm() < 1e-9);
    REQUIRE(loaded.poses[i].is_orthonormal());
    REQUIRE(loaded.timestamps[i] == Catch::Approx(seq.timestamps[i]).margin(1e-12));
  }

  // Stored quaternions are unit-norm.
  const CsvTable poses = CsvTable::load(dir + "/poses.csv");
  for (size_t i = 0; i < poses.rows.size(); ++i) {
    const double n2 = poses.num(i, 4) * poses.num(i, 4) + poses.num(i, 5) * poses.num(i, 5) +
                      poses.num(i, 6) * poses.num(i, 6) + poses.num(i, 7) * poses.num(i, 7);
    REQUIRE(std::sqrt(n2) == Catch::Approx(1.0).margin(1e-9));
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("loading a truncated depth file reports the offending file") {
  Scene scene(plane_only_config(2));
  TrajectoryConfig traj;
  traj.waypoints = {Vec3(10, 0, 16), Vec3(18, 0, 16)};
  traj.speed = 20.0;
  traj.frame_rate = 5.0;
  const StereoRig rig = small_rig(48, 36, 50);
  const auto seq = generate_sequence(scene, traj, rig);
  const std::string dir = temp_dir("vobench_seq_truncated");
  save_sequence(dir, seq);

  const std::string victim = dir + "/depth/000001.f32";
  std::filesystem::resize_file(victim, std::filesystem::file_size(victim) / 2);
  REQUIRE_THROWS_WITH(load_sequence(dir),
                      ContainsSubstring("truncated depth file") &&
                          ContainsSubstring("000001.f32"));
  std::filesystem::remove_all(dir);
}

TEST_CASE("trajectory config parsing") {
  SECTION("explicit waypoint list") {
    KeyValueFile kv;
    kv.set("waypoints", "0,0,16; 50,10,16; 100,0,16");
    const auto c = TrajectoryConfig::from_file(kv);
    REQUIRE(c.waypoints.size() == 3);
    REQUIRE((c.waypoints[1] - Vec3(50, 10, 16)).norm() < 1e-12);
  }
  SECTION("serpentine generator produces the expected sample count and bounds") {
    KeyValueFile kv;
    kv.set("path", "serpentine");
    kv.set("length", "120");
    kv.set("waypoint_spacing", "4");
    kv.set("amplitude", "10");
    kv.set("wavelength", "60");
    kv.set("altitude", "16");
    const auto c = TrajectoryConfig::from_file(kv);
    REQUIRE(c.waypoints.size() == 31);
    for (const auto& w : c.waypoints) {
      REQUIRE(std::abs(w.y()) <= 10.0 + 1e-12);
      REQUIRE(w.z() == Catch::Approx(16.0));
    }
  }
  SECTION("unknown path type is rejected") {
    KeyValueFile kv;
    kv.set("path", "spiral");
    REQUIRE_THROWS_WITH(TrajectoryConfig::from_file(kv), ContainsSubstring("unknown path"));
  }
  SECTION("waypoints outside the altitude band are rejected") {
    KeyValueFile kv;
    kv.set("waypoints", "0,0,5; 100,0,5");
    REQUIRE_THROWS_WITH(TrajectoryConfig::from_file(kv), ContainsSubstring("altitude"));
  }
}
