#pragma once

#include <filesystem>

#include "vobench/dataset.hpp"
#include "vobench/icp.hpp"

namespace vobench {

/// Map-vs-ground-truth accuracy statistics over ICP correspondences.
/// Standard deviation is the population form (divide by N).
struct AccuracyStats {
  size_t n_points = 0;           // reconstructed map size
  size_t n_correspondences = 0;  // N
  double mean = 0;               // meters
  double std_dev = 0;            // meters
  double estimated_scale = 1.0;  // monocular alignment only
};

inline AccuracyStats accuracy_stats(const RegistrationResult& reg, size_t map_size) {
  VOBENCH_REQUIRE(!reg.correspondences.empty(), "accuracy_stats: no correspondences");
  AccuracyStats s;
  s.n_points = map_size;
  s.n_correspondences = reg.correspondences.size();
  s.estimated_scale = reg.transform.scale;
  for (const auto& c : reg.correspondences) s.mean += c.distance;
  s.mean /= double(s.n_correspondences);
  double var = 0;
  for (const auto& c : reg.correspondences) {
    const double d = c.distance - s.mean;
    var += d * d;
  }
  s.std_dev = std::sqrt(var / double(s.n_correspondences));
  return s;
}

struct DepthBin {
  double depth_lo = 0, depth_hi = 0;
  size_t count = 0;
  double mean_error = 0;  // meters, 0 when empty
};

/// Bins correspondence distances by the source point's host-keyframe
/// depth (depth at estimation time). Empty bins are emitted with count
/// zero so the histogram covers the full depth range contiguously.
inline std::vector<DepthBin> depth_binned_errors(const RegistrationResult& reg,
                                                 const std::vector<double>& host_depths,
                                                 double bin_width = 5.0) {
  VOBENCH_REQUIRE(bin_width > 0, "depth_binned_errors: bin width must be positive");
  double max_depth = 0;
  for (const auto& c : reg.correspondences) {
    VOBENCH_REQUIRE(c.source >= 0 && c.source < int(host_depths.size()),
                    "depth_binned_errors: correspondence without host depth");
    max_depth = std::max(max_depth, host_depths[c.source]);
  }
  const size_t n_bins = size_t(std::floor(max_depth / bin_width)) + 1;
  std::vector<DepthBin> bins(n_bins);
  for (size_t b = 0; b < n_bins; ++b) {
    bins[b].depth_lo = double(b) * bin_width;
    bins[b].depth_hi = double(b + 1) * bin_width;
  }
  for (const auto& c : reg.correspondences) {
    auto& bin = bins[size_t(host_depths[c.source] / bin_width)];
    ++bin.count;
    bin.mean_error += c.distance;
  }
  for (auto& b : bins)
    if (b.count) b.mean_error /= double(b.count);
  return bins;
}

/// Histogram of correspondence distances over [0, search_radius].
inline std::vector<size_t> error_histogram(const RegistrationResult& reg,
                                           double bin_width = 0.025,
                                           double search_radius = 0.5) {
  VOBENCH_REQUIRE(bin_width > 0, "error_histogram: bin width must be positive");
  const size_t n_bins = size_t(std::ceil(search_radius / bin_width - 1e-12));
  std::vector<size_t> counts(n_bins, 0);
  for (const auto& c : reg.correspondences) {
    size_t b = size_t(c.distance / bin_width);
    if (b >= n_bins) b = n_bins - 1;  // distance == search radius boundary
    ++counts[b];
  }
  return counts;
}

struct TimingStats {
  size_t total_keyframes = 0;
  double kf_min_ms = 0, kf_max_ms = 0, kf_mean_ms = 0, kf_std_ms = 0;
  double tracking_mean_ms = 0;
  double post_keyframe_mean_ms = 0;  // frames immediately succeeding keyframes
  double other_frame_mean_ms = 0;    // remaining non-keyframe frames
  size_t n_post_keyframe = 0;
};

struct KeyframeLogRow {
  int keyframe_id = -1;
  int frame_id = -1;
  double creation_ms = 0;
};

struct TrackingLogRow {
  int frame_id = -1;
  double tracking_ms = 0;
  double cost = 0;
  double valid_fraction = 0;
  bool is_keyframe = false;
  bool is_post_keyframe = false;
};

inline TimingStats timing_stats(const std::vector<KeyframeLogRow>& keyframe_log,
                                const std::vector<TrackingLogRow>& tracking_log) {
  TimingStats s;
  s.total_keyframes = keyframe_log.size();
  if (!keyframe_log.empty()) {
    s.kf_min_ms = std::numeric_limits<double>::infinity();
    for (const auto& r : keyframe_log) {
      s.kf_min_ms = std::min(s.kf_min_ms, r.creation_ms);
      s.kf_max_ms = std::max(s.kf_max_ms, r.creation_ms);
      s.kf_mean_ms += r.creation_ms;
    }
    s.kf_mean_ms /= double(keyframe_log.size());
    double var = 0;
    for (const auto& r : keyframe_log) {
      const double d = r.creation_ms - s.kf_mean_ms;
      var += d * d;
    }
    s.kf_std_ms = std::sqrt(var / double(keyframe_log.size()));  // population std
  }
  size_t n_all = 0, n_other = 0;
  double sum_all = 0, sum_post = 0, sum_other = 0;
  for (const auto& r : tracking_log) {
    sum_all += r.tracking_ms;
    ++n_all;
    if (r.is_post_keyframe) {
      sum_post += r.tracking_ms;
      ++s.n_post_keyframe;
    } else if (!r.is_keyframe) {
      sum_other += r.tracking_ms;
      ++n_other;
    }
  }
  if (n_all) s.tracking_mean_ms = sum_all / double(n_all);
  if (s.n_post_keyframe) s.post_keyframe_mean_ms = sum_post / double(s.n_post_keyframe);
  if (n_other) s.other_frame_mean_ms = sum_other / double(n_other);
  return s;
}

/// Back-projects every stride-th valid depth pixel of each frame into
/// the world frame and voxel-deduplicates at 5 cm, attaching grayscale.
inline PointCloud fuse_ground_truth(const std::vector<Pose>& poses,
                                    const std::vector<std::vector<float>>& depth_maps,
                                    const std::vector<Image>& images,
                                    const CameraIntrinsics& intr, int stride,
                                    double voxel = 0.05) {
  VOBENCH_REQUIRE(poses.size() == depth_maps.size() && poses.size() == images.size(),
                  "fuse_ground_truth: sequence lengths disagree");
  VOBENCH_REQUIRE(stride >= 1, "fuse_ground_truth: stride must be >= 1");
  PointCloud cloud;
  cloud.source = "ground_truth";
  for (size_t f = 0; f < poses.size(); ++f) {
    const auto& depth = depth_maps[f];
    VOBENCH_REQUIRE(depth.size() == size_t(intr.width) * intr.height,
                    "fuse_ground_truth: depth map size mismatch");
    for (int v = 0; v < intr.height; v += stride) {
      for (int u = 0; u < intr.width; u += stride) {
        const float d = depth[size_t(v) * intr.width + u];
        if (d <= 0) continue;  // sky sentinel
        const Vec3 p = poses[f] * backproject(Vec2(u, v), 1.0 / double(d), intr);
        cloud.points.push_back(p);
        cloud.colors.push_back(images[f].at(u, v));
      }
    }
  }
  return voxel_deduplicate(cloud, voxel);
}

inline PointCloud fuse_ground_truth(const DatasetSequence& seq, int stride,
                                    double voxel = 0.05) {
  return fuse_ground_truth(seq.poses, seq.depth, seq.left, seq.rig.left, stride, voxel);
}

// ---------------------------------------------------------------------------
// Report CSV writers (column names are part of the interface).
// ---------------------------------------------------------------------------

inline void write_accuracy_csv(const std::string& path, const AccuracyStats& s) {
  CsvWriter w(path, {"points", "correspondences", "mean_m", "std_m", "scale"});
  w.row(s.n_points, s.n_correspondences, s.mean, s.std_dev, s.estimated_scale);
}

inline void write_keyframes_csv(const std::string& path, const TimingStats& s) {
  CsvWriter w(path, {"total_kfs", "min_ms", "max_ms", "mean_ms", "std_ms"});
  w.row(s.total_keyframes, s.kf_min_ms, s.kf_max_ms, s.kf_mean_ms, s.kf_std_ms);
}

inline void write_error_histogram_csv(const std::string& path,
                                      const std::vector<size_t>& counts,
                                      double bin_width) {
  CsvWriter w(path, {"bin_lo_m", "bin_hi_m", "count"});
  for (size_t i = 0; i < counts.size(); ++i)
    w.row(double(i) * bin_width, double(i + 1) * bin_width, counts[i]);
}

inline void write_depth_bins_csv(const std::string& path,
                                 const std::vector<DepthBin>& bins) {
  CsvWriter w(path, {"depth_lo_m", "depth_hi_m", "count", "mean_error_m"});
  for (const auto& b : bins) w.row(b.depth_lo, b.depth_hi, b.count, b.mean_error);
}

inline void write_keyframe_log_csv(const std::string& path,
                                   const std::vector<KeyframeLogRow>& rows) {
  CsvWriter w(path, {"keyframe_id", "frame_id", "creation_ms"});
  for (const auto& r : rows) w.row(r.keyframe_id, r.frame_id, r.creation_ms);
}

inline void write_tracking_log_csv(const std::string& path,
                                   const std::vector<TrackingLogRow>& rows) {
  CsvWriter w(path, {"frame_id", "tracking_ms", "cost", "valid_fraction", "is_keyframe",
                     "is_post_keyframe"});
  for (const auto& r : rows)
    w.row(r.frame_id, r.tracking_ms, r.cost, r.valid_fraction, int(r.is_keyframe),
          int(r.is_post_keyframe));
}

inline std::vector<KeyframeLogRow> load_keyframe_log_csv(const std::string& path) {
  const CsvTable t = CsvTable::load(path);
  const int ci = t.column("keyframe_id"), cf = t.column("frame_id"),
            cm = t.column("creation_ms");
  std::vector<KeyframeLogRow> rows;
  for (size_t i = 0; i < t.rows.size(); ++i)
    rows.push_back({int(t.num(i, ci)), int(t.num(i, cf)), t.num(i, cm)});
  return rows;
}

inline std::vector<TrackingLogRow> load_tracking_log_csv(const std::string& path) {
  const CsvTable t = CsvTable::load(path);
  const int cf = t.column("frame_id"), cm = t.column("tracking_ms"),
            cc = t.column("cost"), cv = t.column("valid_fraction"),
            ck = t.column("is_keyframe"), cp = t.column("is_post_keyframe");
  std::vector<TrackingLogRow> rows;
  for (size_t i = 0; i < t.rows.size(); ++i)
    rows.push_back({int(t.num(i, cf)), t.num(i, cm), t.num(i, cc), t.num(i, cv),
                    t.num(i, ck) != 0, t.num(i, cp) != 0});
  return rows;
}

}  // namespace vobench
