#pragma once

#include <optional>
#include <random>
#include <unordered_map>

#include "vobench/backend.hpp"
#include "vobench/point_cloud.hpp"
#include "vobench/tracking.hpp"

namespace vobench {

enum class PipelineMode { kMono, kStereo, kLite };

inline PipelineMode parse_mode(const std::string& s) {
  if (s == "mono") return PipelineMode::kMono;
  if (s == "stereo") return PipelineMode::kStereo;
  if (s == "lite") return PipelineMode::kLite;
  throw Error("unknown mode: " + s + " (expected mono|stereo|lite)");
}

inline std::string mode_name(PipelineMode m) {
  switch (m) {
    case PipelineMode::kMono: return "mono";
    case PipelineMode::kStereo: return "stereo";
    default: return "lite";
  }
}

struct PipelineConfig {
  PipelineMode mode = PipelineMode::kStereo;
  int window_size = 7;       // keyframes kept in the optimization window
  int target_points = 2000;  // candidate budget per keyframe
  int pyramid_levels = 4;
  uint64_t seed = 1;

  // Keyframe decision: cumulative mean flow against the reference
  // keyframe, plus relative brightness change. The lite variant uses a
  // flow-only test with a larger threshold (fewer keyframes).
  double flow_threshold = 45.0;        // px
  double brightness_threshold = 0.25;  // |a| of the tracked frame
  double refresh_valid_fraction = 0.6;  // force a keyframe below this

  // Window optimization.
  int ba_iterations = 8;
  double huber_gamma = kDefaultHuberGamma;
  double outlier_gamma_factor = 3.0;
  int outlier_patience = 2;

  // Monocular bootstrap.
  int init_max_attempts = 100;
  int init_iterations = 30;          // per pyramid level
  double init_cost_threshold = 6e-4; // mean weighted Huber per offset
  double init_min_parallax = 4.0;    // px mean flow before accepting

  // Map export gate.
  double export_max_rel_stddev = 0.2;  // sigma(idepth)/idepth
  int export_min_observations = 2;

  StereoMatcherConfig stereo;

  /// Mode-specific defaults: the lite variant tracks with the
  /// inverse-compositional solver, selects fewer points, optimizes
  /// shorter, and keyframes far less often.
  static PipelineConfig defaults_for(PipelineMode mode) {
    PipelineConfig c;
    c.mode = mode;
    if (mode == PipelineMode::kLite) {
      c.target_points = 600;
      c.ba_iterations = 3;
      c.flow_threshold = 140.0;
    }
    return c;
  }

  void apply(const KeyValueFile& kv) {
    if (kv.has("mode")) mode = parse_mode(kv.str("mode"));
    window_size = int(kv.integer_or("window_size", window_size));
    target_points = int(kv.integer_or("target_points", target_points));
    pyramid_levels = int(kv.integer_or("pyramid_levels", pyramid_levels));
    seed = uint64_t(kv.integer_or("seed", int64_t(seed)));
    flow_threshold = kv.num_or("flow_threshold", flow_threshold);
    brightness_threshold = kv.num_or("brightness_threshold", brightness_threshold);
    refresh_valid_fraction = kv.num_or("refresh_valid_fraction", refresh_valid_fraction);
    ba_iterations = int(kv.integer_or("ba_iterations", ba_iterations));
    huber_gamma = kv.num_or("huber_gamma", huber_gamma);
    outlier_gamma_factor = kv.num_or("outlier_gamma_factor", outlier_gamma_factor);
    outlier_patience = int(kv.integer_or("outlier_patience", outlier_patience));
    init_max_attempts = int(kv.integer_or("init_max_attempts", init_max_attempts));
    init_iterations = int(kv.integer_or("init_iterations", init_iterations));
    init_cost_threshold = kv.num_or("init_cost_threshold", init_cost_threshold);
    init_min_parallax = kv.num_or("init_min_parallax", init_min_parallax);
    export_max_rel_stddev = kv.num_or("export_max_rel_stddev", export_max_rel_stddev);
    export_min_observations =
        int(kv.integer_or("export_min_observations", export_min_observations));
    stereo.max_disparity = int(kv.integer_or("max_disparity", stereo.max_disparity));
    validate();
  }

  static PipelineConfig from_file(const std::string& path) {
    const KeyValueFile kv = KeyValueFile::load(path);
    PipelineConfig c = defaults_for(kv.has("mode") ? parse_mode(kv.str("mode"))
                                                   : PipelineMode::kStereo);
    c.apply(kv);
    return c;
  }

  void validate() const {
    VOBENCH_REQUIRE(window_size >= 2, "pipeline config: window_size must be >= 2");
    VOBENCH_REQUIRE(target_points >= 50, "pipeline config: target_points must be >= 50");
    VOBENCH_REQUIRE(pyramid_levels >= 1, "pipeline config: pyramid_levels must be >= 1");
    VOBENCH_REQUIRE(flow_threshold > 0, "pipeline config: flow_threshold must be > 0");
    VOBENCH_REQUIRE(ba_iterations >= 1, "pipeline config: ba_iterations must be >= 1");
  }
};

/// A well-constrained point evicted from the window into the final map.
struct MapPoint {
  Vec3 world = Vec3::Zero();
  float color = 0;
  double host_depth = 0;  // depth in its host keyframe (meters)
  int host_keyframe = -1;
};

struct PipelineFrameRecord {
  int frame_id = -1;
  double tracking_seconds = 0;
  double cost = 0;
  double valid_fraction = 0;
  bool is_keyframe = false;
  bool is_post_keyframe = false;
};

struct PipelineKeyframeRecord {
  int keyframe_id = -1;
  int frame_id = -1;
  double creation_seconds = 0;
};

/// The full odometry pipeline: per-frame direct tracking against the
/// newest keyframe, a flow/brightness keyframe policy, sliding-window
/// photometric bundle adjustment, and map export on eviction. Stereo
/// modes bootstrap metrically from a single stereo pair; the monocular
/// variant bootstraps from two views with randomized inverse depths and
/// an arbitrary (unit-translation) scale.
class Pipeline {
 public:
  Pipeline(const PipelineConfig& config, const StereoRig& rig,
           const Pose& anchor = Pose::identity())
      : cfg_(config), rig_(rig), anchor_(anchor), rng_(config.seed) {
    cfg_.validate();
    rig_.validate();
    TrackerConfig tc;
    tc.pyramid_levels = cfg_.pyramid_levels;
    tc.huber_gamma = cfg_.huber_gamma;
    tracker_ = std::make_unique<Tracker>(tc);
    track_mode_ = cfg_.mode == PipelineMode::kLite ? TrackingMode::kInverse
                                                   : TrackingMode::kForward;
  }

  /// Feeds one frame (left image; right required except in mono mode).
  void process(int frame_id, double timestamp, Image left,
               std::optional<Image> right = std::nullopt) {
    VOBENCH_REQUIRE(cfg_.mode == PipelineMode::kMono || right.has_value(),
                    "pipeline: stereo modes need a right image");
    Frame frame;
    frame.id = frame_id;
    frame.timestamp = timestamp;
    frame.intensity = std::move(left);
    frame.prepare();

    if (!initialized_) {
      if (cfg_.mode == PipelineMode::kMono)
        bootstrap_mono(std::move(frame));
      else
        bootstrap_stereo(std::move(frame), std::move(*right));
      return;
    }

    const auto t0 = std::chrono::steady_clock::now();
    TrackingResult result =
        tracker_->track_frame(frame, *window_.back(), predict_pose(frame_id), track_mode_);
    if (result.lost) {
      // Retry from the last known pose before giving up.
      result = tracker_->track_frame(frame, *window_.back(), history_.back().pose,
                                     track_mode_);
      result.is_post_keyframe = false;
      if (result.lost) throw Error("tracking-lost at frame " + std::to_string(frame_id));
    }
    history_.push_back(result);
    trajectory_.emplace_back(frame_id, result.pose);

    PipelineFrameRecord rec;
    rec.frame_id = frame_id;
    rec.cost = result.final_cost;
    rec.valid_fraction = result.valid_residual_fraction;
    rec.is_post_keyframe = result.is_post_keyframe;
    rec.is_keyframe = want_keyframe(result);
    rec.tracking_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    frame_log_.push_back(rec);

    if (rec.is_keyframe) {
      try {
        create_keyframe(std::move(frame), std::move(right), result);
      } catch (const Error& e) {
        // Window optimization diverged: the window was rolled back and
        // the frame is demoted to a regular tracked frame.
        if (std::getenv("VOBENCH_KF_DEBUG"))
          std::fprintf(stderr, "kf-failed f%d: %s\n", frame_id, e.what());
        frame_log_.back().is_keyframe = false;
      }
    }
  }

  /// Flushes the window into the map; call once after the last frame.
  void finish() {
    for (const auto& kf : window_) export_keyframe(*kf);
    window_.clear();
    tracker_->invalidate_cache();
  }

  const std::vector<MapPoint>& map() const { return map_; }
  const std::vector<PipelineFrameRecord>& frame_log() const { return frame_log_; }
  const std::vector<PipelineKeyframeRecord>& keyframe_log() const {
    return keyframe_log_;
  }
  const std::vector<std::pair<int, Pose>>& trajectory() const { return trajectory_; }
  const std::vector<std::shared_ptr<Keyframe>>& window() const { return window_; }
  bool initialized() const { return initialized_; }

  /// Map as a point cloud plus the per-point host depths (same order):
  /// accumulated exports plus the current window's well-constrained
  /// active points.
  PointCloud map_cloud(std::vector<double>* host_depths = nullptr) const {
    PointCloud cloud;
    cloud.source = mode_name(cfg_.mode);
    if (host_depths) host_depths->clear();
    auto emit = [&](const MapPoint& mp) {
      cloud.points.push_back(mp.world);
      cloud.colors.push_back(mp.color);
      if (host_depths) host_depths->push_back(mp.host_depth);
    };
    for (const auto& mp : map_) emit(mp);
    for (const auto& kf : window_)
      for (const auto& mp : exportable_points(*kf)) emit(mp);
    return cloud;
  }

  /// Keyframe decision for a tracked frame (exposed for testing the
  /// policy in isolation).
  bool want_keyframe(const TrackingResult& r) const {
    // The lite variant keyframes on flow alone (with a larger
    // threshold); the full variants also react to brightness change and
    // to the tracked-point pool thinning out.
    if (cfg_.mode == PipelineMode::kLite) return r.mean_flow > cfg_.flow_threshold;
    if (r.valid_residual_fraction < cfg_.refresh_valid_fraction) return true;
    return r.mean_flow > cfg_.flow_threshold ||
           std::abs(r.affine_a) > cfg_.brightness_threshold;
  }

 private:
  /// Initial pose for tracking a new frame. Extrapolates a constant
  /// per-frame twist fitted between the two newest keyframes, anchored
  /// at the newest keyframe's optimized pose. Anchoring at a keyframe
  /// (rather than chaining frame-to-frame results) keeps per-frame
  /// tracking noise from compounding: each frame's initialization error
  /// is just the extrapolation error of the smooth trajectory, not the
  /// accumulated drift of every frame since the last keyframe.
  Pose predict_pose(int frame_id) const {
    if (window_.size() >= 2) {
      const Keyframe& ka = *window_[window_.size() - 2];
      const Keyframe& kb = *window_.back();
      const int gap = kb.frame.id - ka.frame.id;
      if (gap > 0) {
        const Vec6 xi =
            (ka.world_from_cam.inverse() * kb.world_from_cam).log() / double(gap);
        return kb.world_from_cam * Pose::exp(xi * double(frame_id - kb.frame.id));
      }
    }
    return vobench::predict_pose(history_);
  }

  BundleAdjustOptions ba_options(int level = 0, int iterations = -1) const {
    BundleAdjustOptions o;
    o.max_iterations = iterations > 0 ? iterations : cfg_.ba_iterations;
    o.huber_gamma = cfg_.huber_gamma;
    o.outlier_gamma_factor = cfg_.outlier_gamma_factor;
    o.outlier_patience = cfg_.outlier_patience;
    o.use_static_stereo = cfg_.mode != PipelineMode::kMono;
    o.baseline = rig_.baseline;
    o.pyramid_level = level;
    return o;
  }

  std::shared_ptr<Keyframe> make_keyframe(Frame frame, std::optional<Image> right,
                                          const Pose& pose) {
    auto kf = std::make_shared<Keyframe>();
    kf->id = next_keyframe_id_++;
    kf->frame = std::move(frame);
    kf->world_from_cam = pose;
    kf->build_pyramids(rig_.left, cfg_.pyramid_levels);
    if (right) {
      kf->right = std::make_shared<Frame>();
      kf->right->id = kf->frame.id;
      kf->right->intensity = std::move(*right);
      kf->right->prepare();
    }
    return kf;
  }

  // --- bootstrap -----------------------------------------------------------

  void bootstrap_stereo(Frame frame, Image right) {
    const auto t0 = std::chrono::steady_clock::now();
    auto kf = make_keyframe(std::move(frame), std::move(right), anchor_);
    attach_stereo_points(*kf);
    if (kf->num_valid_points() < 50)
      throw Error("initialization-failed: fewer than 50 stereo matches on frame " +
                  std::to_string(kf->frame.id));
    window_.push_back(kf);
    finish_keyframe(*kf, t0);
    record_frame(kf->frame.id, t0, true);
    history_.push_back(make_seed_result(kf->frame.id, anchor_));
    trajectory_.emplace_back(kf->frame.id, anchor_);
    initialized_ = true;
  }

  void attach_stereo_points(Keyframe& kf) {
    const auto candidates = select_candidates(kf.frame, cfg_.target_points);
    for (const auto& c : candidates) {
      const auto m =
          match_stereo(kf.frame.intensity, kf.right->intensity, c.pixel, rig_, cfg_.stereo);
      if (!m) continue;
      CandidatePoint pt = c;
      pt.inverse_depth = m->inverse_depth;
      pt.depth_valid = true;
      pt.status = PointStatus::kActive;
      if (m->reliable) {
        pt.depth_variance = m->idepth_variance;
        pt.idepth_prior = m->inverse_depth;
        pt.idepth_prior_variance = m->idepth_variance;
      } else {
        // Beyond the trusted stereo range: usable to seed the window
        // optimization (far points stabilize rotation) but carries no
        // measurement prior and a wide variance.
        const double sigma = 0.3 * m->inverse_depth;
        pt.depth_variance = sigma * sigma;
      }
      kf.active_points.push_back(pt);
    }
  }

  void bootstrap_mono(Frame frame) {
    const auto t0 = std::chrono::steady_clock::now();
    if (!window_.empty() && window_[0]->frame.id == frame.id) return;
    if (window_.empty()) {
      // First frame: host randomized inverse depths.
      auto kf = make_keyframe(std::move(frame), std::nullopt, anchor_);
      std::uniform_real_distribution<double> idepth(0.01, 1.0);
      for (const auto& c : select_candidates(kf->frame, cfg_.target_points)) {
        CandidatePoint pt = c;
        pt.inverse_depth = idepth(rng_);
        pt.depth_valid = true;
        pt.depth_variance = 1.0;
        pt.status = PointStatus::kActive;
        kf->active_points.push_back(pt);
      }
      VOBENCH_REQUIRE(kf->num_valid_points() >= 50,
                      "initialization-failed: too few candidates on the first frame");
      window_.push_back(kf);
      init_pose_guess_ = anchor_;  // second view starts at the anchor
      record_frame(kf->frame.id, t0, false);
      trajectory_.emplace_back(kf->frame.id, anchor_);
      return;
    }

    // Two-view joint pose + inverse-depth refinement, coarse to fine.
    if (++init_attempts_ > cfg_.init_max_attempts)
      throw Error("initialization-failed: no convergence after " +
                  std::to_string(cfg_.init_max_attempts) + " frames");
    const int frame_id = frame.id;
    auto kf1 = make_keyframe(std::move(frame), std::nullopt, init_pose_guess_);
    if (window_.size() == 1)
      window_.push_back(kf1);
    else
      window_[1] = kf1;  // replace the previous attempt's second view

    double final_cost = std::numeric_limits<double>::infinity();
    try {
      for (int level = cfg_.pyramid_levels - 1; level >= 0; --level) {
        auto opts = ba_options(level, cfg_.init_iterations);
        opts.use_static_stereo = false;
        opts.outlier_patience = 1000;  // Huber only while far from convergence
        final_cost = bundle_adjust_window(window_, opts).final_cost;
      }
    } catch (const Error&) {
      final_cost = std::numeric_limits<double>::infinity();  // retry next frame
    }
    init_pose_guess_ = kf1->world_from_cam;
    record_frame(frame_id, t0, false);
    trajectory_.emplace_back(frame_id, kf1->world_from_cam);

    const Pose rel = anchor_.inverse() * kf1->world_from_cam;  // second view in kf0 frame
    const double parallax = mean_point_flow(*window_[0], *kf1);
    if (final_cost > cfg_.init_cost_threshold || parallax < cfg_.init_min_parallax ||
        rel.translation.norm() < 1e-6)
      return;

    // Fix the gauge: unit translation between the two bootstrap views.
    const double s = rel.translation.norm();
    Pose rel_unit = rel;
    rel_unit.translation /= s;
    kf1->world_from_cam = anchor_ * rel_unit;
    for (auto& pt : window_[0]->active_points) pt.inverse_depth *= s;

    prune_bootstrap_points(*window_[0], *kf1);
    if (window_[0]->num_valid_points() < 50) return;

    const auto t1 = std::chrono::steady_clock::now();
    finish_keyframe(*window_[0], t1);
    finish_keyframe(*kf1, t1);
    frame_log_.back().is_keyframe = true;
    history_.push_back(make_seed_result(frame_id, kf1->world_from_cam));
    trajectory_.back().second = kf1->world_from_cam;
    initialized_ = true;
  }

  double mean_point_flow(const Keyframe& host, const Keyframe& target) const {
    double flow = 0;
    int n = 0;
    for (const auto& pt : host.active_points) {
      if (!pt.depth_valid) continue;
      const auto t = transfer_point(pt.pixel, pt.inverse_depth, host.world_from_cam,
                                    target.world_from_cam, rig_.left);
      if (!t || !t->in_bounds) continue;
      flow += (t->pixel - pt.pixel).norm();
      ++n;
    }
    return n ? flow / n : 0.0;
  }

  void prune_bootstrap_points(Keyframe& host, const Keyframe& target) const {
    const Pose rel = target.world_from_cam.inverse() * host.world_from_cam;
    const double limit = 3.0 * cfg_.huber_gamma;
    for (auto& pt : host.active_points) {
      const auto res = photometric_residual(pt, host.frame, target.frame, rel, rig_.left,
                                            ResidualPattern::standard(), cfg_.huber_gamma);
      double mean_abs = 0;
      for (int k = 0; k < ResidualPattern::kSize; ++k)
        if (res.offset_valid[k]) mean_abs += std::abs(res.residuals[k]);
      if (!res.valid || mean_abs / std::max(res.num_valid, 1) > limit)
        pt.status = PointStatus::kDropped;
    }
  }

  // --- keyframe lifecycle --------------------------------------------------

  void create_keyframe(Frame frame, std::optional<Image> right,
                       const TrackingResult& tracked) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto snapshot = snapshot_window();

    auto kf = make_keyframe(std::move(frame), std::move(right), tracked.pose);
    kf->frame.affine_a = tracked.affine_a;
    kf->frame.affine_b = tracked.affine_b;
    if (cfg_.mode == PipelineMode::kMono)
      attach_mono_points(*kf);
    else
      attach_stereo_points(*kf);
    window_.push_back(kf);

    try {
      const auto rep = bundle_adjust_window(window_, ba_options());
      if (std::getenv("VOBENCH_KF_DEBUG")) {
        const Pose moved = tracked.pose.inverse() * kf->world_from_cam;
        std::fprintf(stderr,
                     "kf f%d: ba moved t %.3f r %.3fdeg iters %d cost %.4g drops %d\n",
                     kf->frame.id, moved.translation.norm(),
                     Eigen::AngleAxisd(moved.rotation).angle() * 180 / M_PI,
                     rep.iterations, rep.final_cost, rep.dropped_observations);
      }
    } catch (const Error& e) {
      restore_window(snapshot);
      window_.pop_back();
      --next_keyframe_id_;
      throw Error(std::string("keyframe-creation-failed: ") + e.what());
    }

    while (int(window_.size()) > cfg_.window_size) evict_keyframe();
    tracker_->invalidate_cache();
    finish_keyframe(*kf, t0);
    // The keyframe's pose may have moved in the window optimization.
    history_.back().pose = kf->world_from_cam;
    trajectory_.back().second = kf->world_from_cam;
  }

  void attach_mono_points(Keyframe& kf) const {
    // Seed new inverse depths from the existing map projected into the
    // new view; candidates without a nearby projection fall back to the
    // median projected depth. All seeds carry high variance and are
    // refined by the window optimization.
    const Pose cam_from_world = kf.world_from_cam.inverse();
    std::vector<Vec2> px;
    std::vector<double> z;
    for (const auto& host : window_) {
      const Pose rel = cam_from_world * host->world_from_cam;
      for (const auto& pt : host->active_points) {
        if (!pt.depth_valid || pt.status != PointStatus::kActive) continue;
        const Vec3 x = rel * backproject(pt.pixel, pt.inverse_depth, rig_.left);
        if (x.z() <= 0) continue;
        const Vec2 p = project(x, rig_.left);
        if (!rig_.left.in_bounds(p)) continue;
        px.push_back(p);
        z.push_back(x.z());
      }
    }
    if (z.empty()) return;
    std::vector<double> sorted = z;
    std::nth_element(sorted.begin(), sorted.begin() + sorted.size() / 2, sorted.end());
    const double median_z = sorted[sorted.size() / 2];

    // Coarse grid over the projections for nearest-seed lookup.
    constexpr double kCell = 16.0;
    std::unordered_map<int64_t, std::vector<int>> grid;
    const auto key = [&](double x, double y) {
      return (int64_t(std::floor(x / kCell)) << 32) ^
             (int64_t(std::floor(y / kCell)) & 0xffffffff);
    };
    for (size_t i = 0; i < px.size(); ++i)
      grid[key(px[i].x(), px[i].y())].push_back(int(i));

    for (const auto& c : select_candidates(kf.frame, cfg_.target_points)) {
      double best_d2 = kCell * kCell;
      int best = -1;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const auto it = grid.find(key(c.pixel.x() + dx * kCell, c.pixel.y() + dy * kCell));
          if (it == grid.end()) continue;
          for (int i : it->second) {
            const double d2 = (px[i] - c.pixel).squaredNorm();
            if (d2 < best_d2) {
              best_d2 = d2;
              best = i;
            }
          }
        }
      CandidatePoint pt = c;
      pt.inverse_depth = 1.0 / (best >= 0 ? z[best] : median_z);
      pt.depth_valid = true;
      pt.depth_variance = pt.inverse_depth * pt.inverse_depth;  // weak seed
      pt.status = PointStatus::kActive;
      kf.active_points.push_back(pt);
    }
  }

  /// Fraction of a keyframe's active points that still project into the
  /// newest keyframe's image.
  double covisible_fraction(const Keyframe& kf) const {
    const Keyframe& newest = *window_.back();
    int seen = 0, total = 0;
    for (const auto& pt : kf.active_points) {
      if (!pt.depth_valid || pt.status != PointStatus::kActive) continue;
      ++total;
      const auto t = transfer_point(pt.pixel, pt.inverse_depth, kf.world_from_cam,
                                    newest.world_from_cam, rig_.left);
      if (t && t->in_bounds) ++seen;
    }
    return total ? double(seen) / total : 0.0;
  }

  void evict_keyframe() {
    // Keep the two newest. First retire keyframes that have lost
    // covisibility with the newest view (they only add unconstrained
    // gauge freedom to the window); otherwise use a distance score that
    // prefers evicting keyframes both crowded by the others and far
    // from the newest, keeping the window spread but anchored to the
    // current view. Well-constrained points are exported first.
    VOBENCH_REQUIRE(window_.size() >= 3, "evict_keyframe: window too small");
    int evict = -1;
    double worst_cov = 0.05;
    for (size_t i = 0; i + 2 < window_.size(); ++i) {
      const double cov = covisible_fraction(*window_[i]);
      if (cov < worst_cov) {
        worst_cov = cov;
        evict = int(i);
      }
    }
    if (evict < 0) {
      double worst = -1;
      const Vec3 newest = window_.back()->world_from_cam.translation;
      for (size_t i = 0; i + 2 < window_.size(); ++i) {
        const Vec3 pi = window_[i]->world_from_cam.translation;
        double crowding = 0;
        for (size_t j = 0; j + 1 < window_.size(); ++j) {
          if (j == i) continue;
          crowding += 1.0 / ((pi - window_[j]->world_from_cam.translation).norm() + 0.01);
        }
        const double score = std::sqrt((pi - newest).norm()) * crowding;
        if (score > worst) {
          worst = score;
          evict = int(i);
        }
      }
    }
    export_keyframe(*window_[evict]);
    window_.erase(window_.begin() + evict);
  }

  std::vector<MapPoint> exportable_points(const Keyframe& kf) const {
    std::vector<MapPoint> out;
    for (const auto& pt : kf.active_points) {
      if (!pt.depth_valid || pt.status != PointStatus::kActive) continue;
      if (pt.observations < cfg_.export_min_observations) continue;
      const double rel_stddev = std::sqrt(std::max(0.0, pt.depth_variance)) /
                                pt.inverse_depth;
      if (rel_stddev > cfg_.export_max_rel_stddev) continue;
      MapPoint mp;
      mp.world = kf.world_from_cam * backproject(pt.pixel, pt.inverse_depth, rig_.left);
      mp.color = pt.color;
      mp.host_depth = 1.0 / pt.inverse_depth;
      mp.host_keyframe = kf.id;
      out.push_back(mp);
    }
    return out;
  }

  void export_keyframe(const Keyframe& kf) {
    const auto pts = exportable_points(kf);
    map_.insert(map_.end(), pts.begin(), pts.end());
  }

  // --- bookkeeping ---------------------------------------------------------

  struct WindowSnapshot {
    std::vector<Pose> poses;
    std::vector<Vec2> affines;
    std::vector<std::vector<double>> idepths;
  };

  WindowSnapshot snapshot_window() const {
    WindowSnapshot s;
    for (const auto& kf : window_) {
      s.poses.push_back(kf->world_from_cam);
      s.affines.emplace_back(kf->frame.affine_a, kf->frame.affine_b);
      std::vector<double> ids;
      for (const auto& pt : kf->active_points) ids.push_back(pt.inverse_depth);
      s.idepths.push_back(std::move(ids));
    }
    return s;
  }

  void restore_window(const WindowSnapshot& s) {
    for (size_t i = 0; i < s.poses.size() && i < window_.size(); ++i) {
      window_[i]->world_from_cam = s.poses[i];
      window_[i]->frame.affine_a = s.affines[i].x();
      window_[i]->frame.affine_b = s.affines[i].y();
      for (size_t k = 0; k < s.idepths[i].size(); ++k)
        window_[i]->active_points[k].inverse_depth = s.idepths[i][k];
    }
  }

  void finish_keyframe(Keyframe& kf, std::chrono::steady_clock::time_point t0) {
    kf.creation_duration =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    keyframe_log_.push_back({kf.id, kf.frame.id, kf.creation_duration});
  }

  void record_frame(int frame_id, std::chrono::steady_clock::time_point t0,
                    bool keyframe) {
    PipelineFrameRecord rec;
    rec.frame_id = frame_id;
    rec.tracking_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    rec.valid_fraction = 1.0;
    rec.is_keyframe = keyframe;
    frame_log_.push_back(rec);
  }

  static TrackingResult make_seed_result(int frame_id, const Pose& pose) {
    TrackingResult r;
    r.frame_id = frame_id;
    r.pose = pose;
    r.valid_residual_fraction = 1.0;
    return r;
  }

  PipelineConfig cfg_;
  StereoRig rig_;
  Pose anchor_;
  std::mt19937_64 rng_;
  std::unique_ptr<Tracker> tracker_;
  TrackingMode track_mode_ = TrackingMode::kForward;

  bool initialized_ = false;
  int init_attempts_ = 0;
  Pose init_pose_guess_ = Pose::identity();
  int next_keyframe_id_ = 0;

  std::vector<std::shared_ptr<Keyframe>> window_;
  std::vector<TrackingResult> history_;
  std::vector<std::pair<int, Pose>> trajectory_;
  std::vector<MapPoint> map_;
  std::vector<PipelineFrameRecord> frame_log_;
  std::vector<PipelineKeyframeRecord> keyframe_log_;
};

}  // namespace vobench
