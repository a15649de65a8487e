#include <catch2/catch_amalgamated.hpp>
#include <algorithm>
#include <filesystem>
#include <random>

#include "vobench/evaluation.hpp"

using namespace vobench;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

PointCloud random_cloud(size_t n, uint64_t seed, double extent = 20.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  PointCloud c;
  for (size_t i = 0; i < n; ++i)
    c.points.emplace_back(extent * u(rng), extent * u(rng), 5.0 * u(rng));
  return c;
}

RegistrationResult result_with_distances(const std::vector<double>& distances) {
  RegistrationResult r;
  for (size_t i = 0; i < distances.size(); ++i)
    r.correspondences.push_back({int(i), int(i), distances[i]});
  return r;
}

std::vector<detail::CellKey> voxel_keys(const PointCloud& c, double voxel) {
  std::vector<detail::CellKey> keys;
  for (const auto& p : c.points) keys.push_back(detail::cell_of(p, voxel));
  std::sort(keys.begin(), keys.end(), [](const auto& a, const auto& b) {
    return std::tie(a.x, a.y, a.z) < std::tie(b.x, b.y, b.z);
  });
  return keys;
}

StereoRig fuse_rig() {
  StereoRig rig;
  rig.baseline = 0.34;
  rig.left.width = 64;
  rig.left.height = 48;
  rig.left.fx = 60;
  rig.left.fy = 60;
  rig.left.cx = 31.5;
  rig.left.cy = 23.5;
  rig.left.pixel_size = 3e-6;
  rig.right = rig.left;
  return rig;
}

}  // namespace

TEST_CASE("fusing one identity-pose frame reproduces the backprojection") {
  const CameraIntrinsics intr = fuse_rig().left;
  const int stride = 4;
  std::vector<float> depth(size_t(intr.width) * intr.height, 2.0f);
  Image img(intr.width, intr.height, 0.25f);
  const auto cloud =
      fuse_ground_truth({Pose::identity()}, {depth}, {img}, intr, stride, 0.01);

  size_t expected = 0;
  for (int v = 0; v < intr.height; v += stride)
    for (int u = 0; u < intr.width; u += stride) ++expected;
  REQUIRE(cloud.size() == expected);

  size_t i = 0;
  for (int v = 0; v < intr.height; v += stride) {
    for (int u = 0; u < intr.width; u += stride) {
      const Vec3 expected_p = backproject(Vec2(u, v), 0.5, intr);
      REQUIRE((cloud.points[i] - expected_p).norm() < 1e-9);
      REQUIRE(cloud.colors[i] == 0.25f);
      ++i;
    }
  }
}

TEST_CASE("ground fused from a straight-down view is a plane of zero thickness") {
  SceneConfig scfg;
  scfg.seed = 4;
  scfg.num_boxes = 0;
  scfg.num_ramps = 0;
  Scene scene(scfg);
  const StereoRig rig = fuse_rig();
  Mat3 straight_down;
  straight_down.col(0) = Vec3(1, 0, 0);
  straight_down.col(1) = Vec3(0, -1, 0);
  straight_down.col(2) = Vec3(0, 0, -1);
  const Pose pose{straight_down, Vec3(50, 0, 20)};
  const auto frame = render_frame(scene, pose, rig);

  const auto cloud = fuse_ground_truth({pose}, {frame.left_depth}, {frame.left},
                                       rig.left, 2);
  REQUIRE(cloud.size() > 100);
  for (const auto& p : cloud.points) REQUIRE(std::abs(p.z()) < 1e-9);
}

TEST_CASE("voxel deduplication is idempotent and collapses duplicates") {
  PointCloud c = random_cloud(500, 3);
  c.points.insert(c.points.end(), c.points.begin(), c.points.end());  // every point twice
  const auto once = voxel_deduplicate(c, 0.05);
  const auto twice = voxel_deduplicate(once, 0.05);
  REQUIRE(once.size() <= 500);
  REQUIRE(twice.size() == once.size());
  for (size_t i = 0; i < once.size(); ++i)
    REQUIRE((once.points[i] - twice.points[i]).norm() == 0.0);
}

TEST_CASE("fused ground truth covers the same voxels regardless of frame order") {
  SceneConfig scfg;
  scfg.seed = 12;
  scfg.num_boxes = 10;
  Scene scene(scfg);
  const StereoRig rig = fuse_rig();
  const Pose p0{detail::camera_rotation(Vec3(1, 0, 0), 0.61), Vec3(40, 0, 16)};
  const Pose p1{detail::camera_rotation(Vec3(1, 0, 0), 0.61), Vec3(44, 0, 16)};
  const auto f0 = render_frame(scene, p0, rig);
  const auto f1 = render_frame(scene, p1, rig);

  const double voxel = 0.05;
  const auto ab = fuse_ground_truth({p0, p1}, {f0.left_depth, f1.left_depth},
                                    {f0.left, f1.left}, rig.left, 2, voxel);
  const auto ba = fuse_ground_truth({p1, p0}, {f1.left_depth, f0.left_depth},
                                    {f1.left, f0.left}, rig.left, 2, voxel);
  REQUIRE(ab.size() == ba.size());
  const auto ka = voxel_keys(ab, voxel);
  const auto kb = voxel_keys(ba, voxel);
  for (size_t i = 0; i < ka.size(); ++i) REQUIRE(ka[i] == kb[i]);
}

TEST_CASE("aligning a cloud with itself terminates immediately at zero error") {
  const PointCloud cloud = random_cloud(2000, 7);
  IcpParams params;
  const auto reg = icp_align(cloud, cloud, params);
  REQUIRE(reg.converged);
  REQUIRE(reg.iterations <= 2);
  REQUIRE(reg.rmse_trace.back() < 1e-12);
  REQUIRE((reg.transform.pose.rotation - Mat3::Identity()).norm() < 1e-9);
  REQUIRE(reg.transform.pose.translation.norm() < 1e-9);
  REQUIRE(reg.transform.scale == 1.0);
}

TEST_CASE("ICP recovers a known rigid offset under measurement noise") {
  const PointCloud base = random_cloud(3000, 11);
  const Pose gt = Pose::exp((Vec6() << 0.2, -0.1, 0.05, 0.0, 0.0, 2.0 * M_PI / 180).finished());
  std::mt19937_64 rng(13);
  std::normal_distribution<double> noise(0.0, 0.01);
  PointCloud target;
  for (const auto& p : base.points)
    target.points.push_back(gt * p + Vec3(noise(rng), noise(rng), noise(rng)));

  IcpParams params;
  const auto reg = icp_align(base, target, params);
  REQUIRE(reg.converged);

  const double angle_err =
      Eigen::AngleAxisd(Mat3(gt.rotation.transpose() * reg.transform.pose.rotation)).angle();
  REQUIRE(angle_err < 0.2 * M_PI / 180.0);
  REQUIRE((reg.transform.pose.translation - gt.translation).norm() < 0.02);
  REQUIRE(reg.transform.scale == 1.0);  // rigid alignment never scales

  // Error trace sanity: monotone non-increasing and radius-capped matches.
  for (size_t i = 1; i < reg.rmse_trace.size(); ++i)
    REQUIRE(reg.rmse_trace[i] <= reg.rmse_trace[i - 1] + 1e-9);
  for (const auto& c : reg.correspondences) REQUIRE(c.distance <= params.search_radius);
}

TEST_CASE("similarity alignment recovers a large scale factor") {
  const double gt_scale = 35.98;
  const PointCloud base = random_cloud(2000, 17, 1.0);  // mono-style arbitrary units
  const Pose gt_pose = Pose::exp((Vec6() << 1.0, 2.0, -0.5, 0.02, -0.01, 0.03).finished());
  std::mt19937_64 rng(19);
  std::normal_distribution<double> noise(0.0, 0.01);
  PointCloud target;
  for (const auto& p : base.points)
    target.points.push_back(gt_pose * (gt_scale * p) + Vec3(noise(rng), noise(rng), noise(rng)));

  SECTION("closed-form fit on exact pairs") {
    const auto fit = detail::fit_alignment(base.points, target.points, true);
    REQUIRE(std::abs(fit.scale - gt_scale) < 1e-3 * gt_scale);
  }
  SECTION("full ICP polish from a perturbed initialization") {
    SimilarityTransform init;
    init.scale = gt_scale * 1.01;
    init.pose = gt_pose * Pose::exp((Vec6() << 0.05, -0.05, 0.02, 0.002, 0, 0).finished());
    IcpParams params;
    params.with_scale = true;
    const auto reg = icp_align(base, target, params, init);
    REQUIRE(reg.converged);
    REQUIRE(std::abs(reg.transform.scale - gt_scale) < 1e-3 * gt_scale);
  }
  SECTION("the rigid variant pins scale to exactly one") {
    const auto fit = detail::fit_alignment(base.points, target.points, false);
    REQUIRE(fit.scale == 1.0);
  }
}

TEST_CASE("accuracy statistics fixtures") {
  SECTION("distances 1, 2, 3") {
    const auto reg = result_with_distances({1.0, 2.0, 3.0});
    const auto s = accuracy_stats(reg, 3);
    REQUIRE(s.n_correspondences == 3);
    REQUIRE(std::abs(s.mean - 2.0) < 1e-12);
    REQUIRE(std::abs(s.std_dev - std::sqrt(2.0 / 3.0)) < 1e-12);
    REQUIRE(s.estimated_scale == 1.0);
  }
  SECTION("identical distances have zero spread") {
    const auto s = accuracy_stats(result_with_distances({0.5, 0.5, 0.5, 0.5}), 4);
    REQUIRE(std::abs(s.mean - 0.5) < 1e-12);
    REQUIRE(s.std_dev == 0.0);
  }
  SECTION("statistics are order-invariant") {
    const auto a = accuracy_stats(result_with_distances({0.1, 0.4, 0.2, 0.3}), 4);
    const auto b = accuracy_stats(result_with_distances({0.3, 0.2, 0.4, 0.1}), 4);
    REQUIRE(a.mean == b.mean);
    REQUIRE(a.std_dev == b.std_dev);
  }
  SECTION("no correspondences is an error") {
    REQUIRE_THROWS(accuracy_stats(RegistrationResult{}, 0));
  }
}

TEST_CASE("histogram and depth-bin counts always sum to the correspondence count") {
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> ud(0.0, 0.5);
  std::uniform_real_distribution<double> uz(0.5, 80.0);
  std::uniform_int_distribution<int> un(1, 60);
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = un(rng);
    RegistrationResult reg;
    std::vector<double> host_depths;
    for (int i = 0; i < n; ++i) {
      reg.correspondences.push_back({i, i, ud(rng)});
      host_depths.push_back(uz(rng));
    }
    const auto hist = error_histogram(reg);
    size_t hist_sum = 0;
    for (size_t c : hist) hist_sum += c;
    REQUIRE(hist_sum == size_t(n));

    const auto bins = depth_binned_errors(reg, host_depths);
    size_t bin_sum = 0;
    for (const auto& b : bins) {
      bin_sum += b.count;
      REQUIRE(b.depth_hi == b.depth_lo + 5.0);
      if (!b.count) REQUIRE(b.mean_error == 0.0);
    }
    REQUIRE(bin_sum == size_t(n));
  }
}

TEST_CASE("timing statistics fixtures") {
  SECTION("a single keyframe") {
    const auto s = timing_stats({{0, 0, 10.0}}, {});
    REQUIRE(s.total_keyframes == 1);
    REQUIRE(s.kf_min_ms == 10.0);
    REQUIRE(s.kf_max_ms == 10.0);
    REQUIRE(s.kf_mean_ms == 10.0);
    REQUIRE(s.kf_std_ms == 0.0);
  }
  SECTION("two keyframes at 2 and 4 ms") {
    const auto s = timing_stats({{0, 0, 2.0}, {1, 5, 4.0}}, {});
    REQUIRE(s.kf_mean_ms == 3.0);
    REQUIRE(s.kf_std_ms == 1.0);
    REQUIRE(s.kf_min_ms == 2.0);
    REQUIRE(s.kf_max_ms == 4.0);
  }
  SECTION("frame classes are averaged separately") {
    std::vector<TrackingLogRow> log = {
        {0, 4.0, 0, 1, false, false},  // ordinary frame
        {1, 6.0, 0, 1, true, false},   // keyframe
        {2, 9.0, 0, 1, false, true},   // first frame after the keyframe
        {3, 5.0, 0, 1, false, false},
    };
    const auto s = timing_stats({}, log);
    REQUIRE(s.tracking_mean_ms == 6.0);
    REQUIRE(s.post_keyframe_mean_ms == 9.0);
    REQUIRE(s.other_frame_mean_ms == 4.5);
    REQUIRE(s.n_post_keyframe == 1);
  }
}

TEST_CASE("log CSV files round trip") {
  const std::string kf_path = temp_path("vobench_kf_log.csv");
  const std::string tr_path = temp_path("vobench_tr_log.csv");
  const std::vector<KeyframeLogRow> kfs = {{0, 0, 12.5}, {1, 7, 8.25}};
  const std::vector<TrackingLogRow> trs = {{0, 3.5, 1e-4, 0.97, true, false},
                                           {1, 2.25, 2e-4, 0.9, false, true}};
  write_keyframe_log_csv(kf_path, kfs);
  write_tracking_log_csv(tr_path, trs);
  const auto kfs2 = load_keyframe_log_csv(kf_path);
  const auto trs2 = load_tracking_log_csv(tr_path);
  REQUIRE(kfs2.size() == 2);
  REQUIRE(kfs2[1].keyframe_id == 1);
  REQUIRE(kfs2[1].frame_id == 7);
  REQUIRE(kfs2[1].creation_ms == 8.25);
  REQUIRE(trs2.size() == 2);
  REQUIRE(trs2[0].is_keyframe);
  REQUIRE_FALSE(trs2[0].is_post_keyframe);
  REQUIRE(trs2[1].is_post_keyframe);
  REQUIRE(trs2[1].tracking_ms == 2.25);
  REQUIRE(trs2[1].valid_fraction == 0.9);
  std::filesystem::remove(kf_path);
  std::filesystem::remove(tr_path);
}

TEST_CASE("point cloud files round trip") {
  PointCloud c = random_cloud(200, 29);
  for (size_t i = 0; i < c.size(); ++i) {
    // Snap to float so binary storage is lossless for the comparison.
    // (Done per component: the fused Eigen cast chain may be elided
    // under optimization.)
    for (int k = 0; k < 3; ++k) {
      const volatile float f = float(c.points[i][k]);
      c.points[i][k] = double(f);
    }
    c.colors.push_back(float(i) / 200.f);
  }
  const std::string pcd = temp_path("vobench_cloud.pcd");
  const std::string ply = temp_path("vobench_cloud.ply");
  save_pcd(pcd, c);
  save_ply(ply, c);
  const auto from_pcd = load_pcd(pcd);
  const auto from_ply = load_ply(ply);
  REQUIRE(from_pcd.size() == c.size());
  REQUIRE(from_ply.size() == c.size());
  for (size_t i = 0; i < c.size(); ++i) {
    REQUIRE((from_pcd.points[i] - c.points[i]).norm() == 0.0);
    REQUIRE(from_pcd.colors[i] == c.colors[i]);
    REQUIRE((from_ply.points[i] - c.points[i]).norm() < 1e-4);
  }
  std::filesystem::remove(pcd);
  std::filesystem::remove(ply);
}

TEST_CASE("accuracy CSV carries the pinned columns") {
  AccuracyStats s;
  s.n_points = 1234;
  s.n_correspondences = 1000;
  s.mean = 0.125;
  s.std_dev = 0.05;
  s.estimated_scale = 35.98;
  const std::string path = temp_path("vobench_accuracy.csv");
  write_accuracy_csv(path, s);
  const CsvTable t = CsvTable::load(path);
  REQUIRE(t.num(0, t.column("points")) == 1234.0);
  REQUIRE(t.num(0, t.column("correspondences")) == 1000.0);
  REQUIRE(t.num(0, t.column("mean_m")) == 0.125);
  REQUIRE(t.num(0, t.column("std_m")) == 0.05);
  REQUIRE(t.num(0, t.column("scale")) == 35.98);
  std::filesystem::remove(path);
}
