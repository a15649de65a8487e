// Command-line front end: dataset generation, the three odometry
// variants, ground-truth fusion, map evaluation, and report rollup.
#include <CLI11.hpp>

#include "vobench/dataset.hpp"
#include "vobench/evaluation.hpp"
#include "vobench/pipeline.hpp"

namespace {

using namespace vobench;

StereoRig rig_from_config(const KeyValueFile& kv) {
  CameraIntrinsics intr;
  intr.width = int(kv.integer_or("width", 640));
  intr.height = int(kv.integer_or("height", 480));
  intr.fx = kv.num_or("fx", 320.0);
  intr.fy = kv.num_or("fy", intr.fx);
  intr.cx = kv.num_or("cx", (intr.width - 1) * 0.5);
  intr.cy = kv.num_or("cy", (intr.height - 1) * 0.5);
  intr.pixel_size = kv.num_or("pixel_size", 3e-6);
  StereoRig rig;
  rig.baseline = kv.num_or("baseline", 0.34);
  rig.left = rig.right = intr;
  rig.validate();
  return rig;
}

int cmd_generate(const std::string& scene_path, const std::string& traj_path,
                 const std::string& out_dir, int64_t seed_override) {
  const KeyValueFile scene_kv = KeyValueFile::load(scene_path);
  SceneConfig scfg = SceneConfig::from_file(scene_kv);
  if (seed_override >= 0) scfg.seed = uint64_t(seed_override);
  const Scene scene(scfg);
  const StereoRig rig = rig_from_config(scene_kv);
  const TrajectoryConfig traj = TrajectoryConfig::from_file(KeyValueFile::load(traj_path));

  DatasetSequence seq = generate_sequence(scene, traj, rig);
  const double noise = scene_kv.has("noise_sigma") ? scene_kv.num("noise_sigma") : 0.0;
  if (noise > 0) {
    for (size_t i = 0; i < seq.size(); ++i) {
      add_intensity_noise(seq.left[i], noise, scfg.seed + 2 * i);
      add_intensity_noise(seq.right[i], noise, scfg.seed + 2 * i + 1);
    }
  }
  save_sequence(out_dir, seq);
  std::printf("generated %zu frames (%dx%d) to %s\n", seq.size(), rig.left.width,
              rig.left.height, out_dir.c_str());
  return 0;
}

void write_trajectory_csv(const std::string& path,
                          const std::vector<std::pair<int, Pose>>& traj) {
  CsvWriter w(path, {"frame", "tx", "ty", "tz", "qw", "qx", "qy", "qz"});
  for (const auto& [frame, pose] : traj) {
    Eigen::Quaterniond q(pose.rotation);
    q.normalize();
    const Vec3& t = pose.translation;
    w.row(frame, t.x(), t.y(), t.z(), q.w(), q.x(), q.y(), q.z());
  }
}

int cmd_run(const std::string& dataset_dir, const std::string& mode_str,
            const std::string& config_path, const std::string& out_dir,
            int64_t seed_override) {
  const PipelineMode mode = parse_mode(mode_str);
  PipelineConfig cfg = PipelineConfig::defaults_for(mode);
  if (!config_path.empty()) {
    cfg = PipelineConfig::from_file(config_path);
    cfg.mode = mode;  // the --mode flag wins over the config file
  }
  if (seed_override >= 0) cfg.seed = uint64_t(seed_override);

  const DatasetSequence seq = load_sequence(dataset_dir);
  VOBENCH_REQUIRE(seq.size() >= 2, "run: dataset has fewer than 2 frames");

  // World frame anchored at the ground-truth pose of the first frame.
  Pipeline pipeline(cfg, seq.rig, seq.poses.front());
  for (size_t i = 0; i < seq.size(); ++i) {
    std::optional<Image> right;
    if (mode != PipelineMode::kMono) right = seq.right[i];
    pipeline.process(int(i), seq.timestamps[i], seq.left[i], std::move(right));
  }
  pipeline.finish();

  std::filesystem::create_directories(out_dir);
  std::vector<double> host_depths;
  const PointCloud map = pipeline.map_cloud(&host_depths);
  VOBENCH_REQUIRE(!map.points.empty(), "run: pipeline exported an empty map");
  save_pcd(out_dir + "/map.pcd", map);
  save_ply(out_dir + "/map.ply", map);
  {
    CsvWriter w(out_dir + "/map_depths.csv", {"index", "host_depth_m"});
    for (size_t i = 0; i < host_depths.size(); ++i) w.row(i, host_depths[i]);
  }
  write_trajectory_csv(out_dir + "/trajectory.csv", pipeline.trajectory());

  std::vector<KeyframeLogRow> kf_rows;
  for (const auto& r : pipeline.keyframe_log())
    kf_rows.push_back({r.keyframe_id, r.frame_id, r.creation_seconds * 1e3});
  write_keyframe_log_csv(out_dir + "/keyframe_log.csv", kf_rows);

  std::vector<TrackingLogRow> tr_rows;
  for (const auto& r : pipeline.frame_log())
    tr_rows.push_back({r.frame_id, r.tracking_seconds * 1e3, r.cost, r.valid_fraction,
                       r.is_keyframe, r.is_post_keyframe});
  write_tracking_log_csv(out_dir + "/tracking_log.csv", tr_rows);

  std::printf("%s run: %zu frames, %zu keyframes, %zu map points -> %s\n",
              mode_str.c_str(), seq.size(), pipeline.keyframe_log().size(),
              map.points.size(), out_dir.c_str());
  return 0;
}

int cmd_fuse_gt(const std::string& dataset_dir, int stride, const std::string& out_path) {
  const DatasetSequence seq = load_sequence(dataset_dir);
  const PointCloud cloud = fuse_ground_truth(seq, stride);
  save_pcd(out_path, cloud);
  std::printf("fused %zu ground-truth points -> %s\n", cloud.points.size(),
              out_path.c_str());
  return 0;
}

std::optional<SimilarityTransform> trajectory_alignment(const std::string& traj_path,
                                                        const std::string& gt_path,
                                                        bool with_scale) {
  const CsvTable est = CsvTable::load(traj_path);
  const CsvTable gt = CsvTable::load(gt_path);
  std::map<int, Vec3> gt_pos;
  const int gf = gt.column("frame"), gx = gt.column("tx"), gy = gt.column("ty"),
            gz = gt.column("tz");
  for (size_t i = 0; i < gt.rows.size(); ++i)
    gt_pos[int(gt.num(i, gf))] = Vec3(gt.num(i, gx), gt.num(i, gy), gt.num(i, gz));
  std::vector<Vec3> src, dst;
  const int ef = est.column("frame"), ex = est.column("tx"), ey = est.column("ty"),
            ez = est.column("tz");
  for (size_t i = 0; i < est.rows.size(); ++i) {
    const auto it = gt_pos.find(int(est.num(i, ef)));
    if (it == gt_pos.end()) continue;
    src.emplace_back(est.num(i, ex), est.num(i, ey), est.num(i, ez));
    dst.push_back(it->second);
  }
  if (src.size() < 3) return std::nullopt;
  return detail::fit_alignment(src, dst, with_scale);
}

int cmd_evaluate(const std::string& map_path, const std::string& gt_path, bool with_scale,
                 const std::string& out_dir, std::string traj_path,
                 std::string gt_traj_path, std::string depths_path,
                 std::string logs_dir) {
  const PointCloud map = load_pcd(map_path);
  const PointCloud gt = load_pcd(gt_path);
  const std::string map_dir = std::filesystem::path(map_path).parent_path().string();

  // Sidecar outputs of `run` are picked up automatically when present.
  const auto default_to = [&](std::string& value, const std::string& candidate) {
    if (value.empty() && std::filesystem::exists(candidate)) value = candidate;
  };
  default_to(traj_path, map_dir + "/trajectory.csv");
  default_to(depths_path, map_dir + "/map_depths.csv");
  if (logs_dir.empty() && std::filesystem::exists(map_dir + "/keyframe_log.csv"))
    logs_dir = map_dir;

  SimilarityTransform initial = SimilarityTransform::identity();
  if (!traj_path.empty() && !gt_traj_path.empty()) {
    if (const auto a = trajectory_alignment(traj_path, gt_traj_path, with_scale))
      initial = *a;
  }

  IcpParams params;
  params.with_scale = with_scale;
  const RegistrationResult reg = icp_align(map, gt, params, initial);
  const AccuracyStats stats = accuracy_stats(reg, map.size());

  std::filesystem::create_directories(out_dir);
  write_accuracy_csv(out_dir + "/accuracy.csv", stats);
  write_error_histogram_csv(out_dir + "/hist_error.csv",
                            error_histogram(reg, 0.025, params.search_radius), 0.025);

  if (!depths_path.empty()) {
    const CsvTable t = CsvTable::load(depths_path);
    const int c = t.column("host_depth_m");
    std::vector<double> host_depths;
    for (size_t i = 0; i < t.rows.size(); ++i) host_depths.push_back(t.num(i, c));
    VOBENCH_REQUIRE(host_depths.size() == map.size(),
                    "evaluate: depth sidecar length does not match the map");
    write_depth_bins_csv(out_dir + "/depth_bins.csv", depth_binned_errors(reg, host_depths));
  }

  if (!logs_dir.empty()) {
    const auto kf_rows = load_keyframe_log_csv(logs_dir + "/keyframe_log.csv");
    const auto tr_rows = load_tracking_log_csv(logs_dir + "/tracking_log.csv");
    write_keyframes_csv(out_dir + "/keyframes.csv", timing_stats(kf_rows, tr_rows));
  }

  std::printf(
      "evaluated %zu map points: %zu correspondences, mean %.4f m, std %.4f m, "
      "scale %.4f (%d ICP iterations, %s)\n",
      stats.n_points, stats.n_correspondences, stats.mean, stats.std_dev,
      stats.estimated_scale, reg.iterations, reg.converged ? "converged" : "iteration cap");
  return 0;
}

int cmd_report(const std::string& in_dir, const std::string& out_path) {
  const CsvTable acc = CsvTable::load(in_dir + "/accuracy.csv");
  VOBENCH_REQUIRE(!acc.rows.empty(), "report: accuracy.csv has no data row");
  std::vector<std::string> header = acc.header;
  std::vector<std::string> row = acc.rows[0];
  const std::string kf_path = in_dir + "/keyframes.csv";
  if (std::filesystem::exists(kf_path)) {
    const CsvTable kfs = CsvTable::load(kf_path);
    VOBENCH_REQUIRE(!kfs.rows.empty(), "report: keyframes.csv has no data row");
    header.insert(header.end(), kfs.header.begin(), kfs.header.end());
    row.insert(row.end(), kfs.rows[0].begin(), kfs.rows[0].end());
  }
  std::ofstream out(out_path);
  VOBENCH_REQUIRE(out.good(), "report: cannot write " + out_path);
  for (size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
  out << "\n";
  for (size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << row[i];
  out << "\n";
  std::printf("summary -> %s\n", out_path.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Direct sparse visual-odometry benchmark suite"};
  app.require_subcommand(1);
  int64_t seed_override = -1;
  app.add_option("--seed", seed_override, "Override config-embedded random seeds");

  std::string scene_cfg, traj_cfg, out_dir;
  auto* gen = app.add_subcommand("generate", "Render a synthetic stereo RGB-D sequence");
  gen->add_option("--scene", scene_cfg, "Scene config (key=value)")->required();
  gen->add_option("--traj", traj_cfg, "Trajectory config (key=value)")->required();
  gen->add_option("--out", out_dir, "Output dataset directory")->required();

  std::string dataset_dir, mode = "stereo", pipe_cfg, run_out;
  auto* run = app.add_subcommand("run", "Run an odometry variant on a dataset");
  run->add_option("--dataset", dataset_dir, "Dataset directory")->required();
  run->add_option("--mode", mode, "mono|stereo|lite")->required();
  run->add_option("--config", pipe_cfg, "Pipeline config (key=value)");
  run->add_option("--out", run_out, "Output directory")->required();

  std::string fuse_dataset, fuse_out;
  int stride = 4;
  auto* fuse = app.add_subcommand("fuse-gt", "Fuse ground-truth depth into a point cloud");
  fuse->add_option("--dataset", fuse_dataset, "Dataset directory")->required();
  fuse->add_option("--stride", stride, "Pixel stride")->check(CLI::PositiveNumber);
  fuse->add_option("--out", fuse_out, "Output PCD path")->required();

  std::string map_path, gt_path, eval_out, eval_traj, eval_gt_traj, eval_depths, eval_logs;
  bool with_scale = false;
  auto* ev = app.add_subcommand("evaluate", "Register a map against ground truth");
  ev->add_option("--map", map_path, "Reconstructed map PCD")->required();
  ev->add_option("--gt", gt_path, "Ground-truth PCD")->required();
  ev->add_flag("--with-scale", with_scale, "Similarity (scale-estimating) registration");
  ev->add_option("--out", eval_out, "Report directory")->required();
  ev->add_option("--traj", eval_traj, "Pipeline trajectory CSV (ICP initialization)");
  ev->add_option("--gt-traj", eval_gt_traj, "Ground-truth poses CSV (ICP initialization)");
  ev->add_option("--depths", eval_depths, "Per-point host-depth sidecar CSV");
  ev->add_option("--logs", eval_logs, "Directory with keyframe/tracking logs");

  std::string rep_in, rep_out;
  auto* rep = app.add_subcommand("report", "Roll a report directory into one summary CSV");
  rep->add_option("--in", rep_in, "Report directory")->required();
  rep->add_option("--out", rep_out, "Summary CSV path")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_generate(scene_cfg, traj_cfg, out_dir, seed_override);
    if (run->parsed()) return cmd_run(dataset_dir, mode, pipe_cfg, run_out, seed_override);
    if (fuse->parsed()) return cmd_fuse_gt(fuse_dataset, stride, fuse_out);
    if (ev->parsed())
      return cmd_evaluate(map_path, gt_path, with_scale, eval_out, eval_traj,
                          eval_gt_traj, eval_depths, eval_logs);
    if (rep->parsed()) return cmd_report(rep_in, rep_out);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 1;
}
