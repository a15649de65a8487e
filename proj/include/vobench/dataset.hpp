#pragma once

#include <Eigen/Geometry>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "vobench/common.hpp"
#include "vobench/renderer.hpp"

namespace vobench {

/// Flight path sampled at a fixed frame rate. Waypoints are flown at
/// constant speed along a piecewise-linear path; yaw follows the
/// velocity direction and the camera pitches down from the horizon.
struct TrajectoryConfig {
  std::vector<Vec3> waypoints;
  double altitude_min = 12.0, altitude_max = 20.0;
  double speed = 18.0;       // m/s
  double frame_rate = 10.0;  // Hz
  double pitch = 0.61;       // radians below the horizon

  void validate() const {
    VOBENCH_REQUIRE(waypoints.size() >= 2, "trajectory: need at least two waypoints");
    VOBENCH_REQUIRE(speed > 0, "trajectory: speed must be positive");
    VOBENCH_REQUIRE(frame_rate > 0, "trajectory: frame rate must be positive");
    for (const auto& w : waypoints)
      VOBENCH_REQUIRE(w.z() >= altitude_min - 1e-9 && w.z() <= altitude_max + 1e-9,
                      "trajectory: waypoint altitude outside configured band");
  }

  /// Parses either an explicit `waypoints = x,y,z; x,y,z; ...` list or a
  /// generator (`path = line|serpentine` with length/amplitude/wavelength),
  /// sampled densely so heading changes stay smooth.
  static TrajectoryConfig from_file(const KeyValueFile& kv) {
    TrajectoryConfig c;
    c.altitude_min = kv.num_or("altitude_min", c.altitude_min);
    c.altitude_max = kv.num_or("altitude_max", c.altitude_max);
    c.speed = kv.num_or("speed", c.speed);
    c.frame_rate = kv.num_or("frame_rate", c.frame_rate);
    c.pitch = kv.num_or("pitch", c.pitch);
    const double altitude = kv.num_or("altitude", 0.5 * (c.altitude_min + c.altitude_max));
    if (kv.has("waypoints")) {
      std::stringstream ss(kv.str("waypoints"));
      std::string triple;
      while (std::getline(ss, triple, ';')) {
        std::stringstream ts(triple);
        std::string cell;
        Vec3 w;
        for (int i = 0; i < 3; ++i) {
          VOBENCH_REQUIRE(std::getline(ts, cell, ','), "trajectory: malformed waypoint triple");
          w[i] = std::stod(cell);
        }
        c.waypoints.push_back(w);
      }
    } else {
      const std::string path = kv.str_or("path", "line");
      const double length = kv.num_or("length", 360.0);
      const double spacing = kv.num_or("waypoint_spacing", 4.0);
      const double amplitude = kv.num_or("amplitude", 25.0);
      const double wavelength = kv.num_or("wavelength", 240.0);
      for (double x = 0; x <= length + 1e-9; x += spacing) {
        double y = 0;
        if (path == "serpentine")
          y = amplitude * std::sin(2.0 * M_PI * x / wavelength);
        else
          VOBENCH_REQUIRE(path == "line", "trajectory: unknown path type " + path);
        c.waypoints.emplace_back(x, y, altitude);
      }
    }
    c.validate();
    return c;
  }
};

/// A generated stereo RGB-D sequence: rectified image pairs, the
/// left-aligned ground-truth z-depth, and ground-truth left-camera
/// poses (camera-to-world).
struct DatasetSequence {
  StereoRig rig;
  std::vector<Image> left, right;
  std::vector<std::vector<float>> depth;
  std::vector<Pose> poses;
  std::vector<double> timestamps;

  size_t size() const { return left.size(); }

  void validate() const {
    VOBENCH_REQUIRE(left.size() == right.size() && left.size() == depth.size() &&
                        left.size() == poses.size() && left.size() == timestamps.size(),
                    "sequence: per-frame list sizes disagree");
    for (size_t i = 1; i < timestamps.size(); ++i)
      VOBENCH_REQUIRE(timestamps[i] > timestamps[i - 1],
                      "sequence: timestamps not strictly increasing");
  }
};

namespace detail {

/// Camera-to-world rotation for a heading direction and downward pitch.
/// Camera axes: x right, y down, z forward (optical axis).
inline Mat3 camera_rotation(const Vec3& heading, double pitch) {
  Vec3 h = heading;
  h.z() = 0;
  VOBENCH_REQUIRE(h.norm() > 1e-12, "camera_rotation: vertical heading is degenerate");
  h.normalize();
  const Vec3 forward = std::cos(pitch) * h - std::sin(pitch) * Vec3::UnitZ();
  const Vec3 right(h.y(), -h.x(), 0);
  const Vec3 down = forward.cross(right);
  Mat3 R;
  R.col(0) = right;
  R.col(1) = down;
  R.col(2) = forward;
  return R;
}

/// Centripetal-free (uniform) Catmull-Rom spline through the waypoints
/// with reflected virtual end points, reparameterized by arc length.
/// For collinear, uniformly spaced waypoints every segment degenerates
/// to exact linear interpolation, so straight paths are sampled at
/// exactly constant speed.
class WaypointSpline {
 public:
  explicit WaypointSpline(const std::vector<Vec3>& waypoints) {
    VOBENCH_REQUIRE(waypoints.size() >= 2, "spline: need at least two waypoints");
    pts_.reserve(waypoints.size() + 2);
    pts_.push_back(2.0 * waypoints.front() - waypoints[1]);
    pts_.insert(pts_.end(), waypoints.begin(), waypoints.end());
    pts_.push_back(2.0 * waypoints.back() - waypoints[waypoints.size() - 2]);

    // Per-segment arc length on kSub subintervals via 5-point
    // Gauss-Legendre quadrature; cumulative tables drive the
    // arc-length -> parameter inversion below.
    const size_t n_seg = pts_.size() - 3;
    sub_cum_.assign(n_seg, {});
    seg_cum_.assign(n_seg + 1, 0.0);
    for (size_t s = 0; s < n_seg; ++s) {
      sub_cum_[s].resize(kSub + 1);
      sub_cum_[s][0] = 0.0;
      for (int j = 0; j < kSub; ++j)
        sub_cum_[s][j + 1] =
            sub_cum_[s][j] + quad_length(s, j / double(kSub), (j + 1) / double(kSub));
      seg_cum_[s + 1] = seg_cum_[s] + sub_cum_[s][kSub];
    }
  }

  double total_length() const { return seg_cum_.back(); }

  /// Position and unit tangent at the given arc length from the start.
  void sample(double s, Vec3* position, Vec3* tangent) const {
    s = std::clamp(s, 0.0, total_length());
    size_t seg = size_t(std::upper_bound(seg_cum_.begin(), seg_cum_.end() - 1, s) -
                        seg_cum_.begin());
    seg = seg > 0 ? seg - 1 : 0;
    const double target = s - seg_cum_[seg];
    const auto& cum = sub_cum_[seg];
    size_t sub = size_t(std::upper_bound(cum.begin(), cum.end() - 1, target) - cum.begin());
    sub = sub > 0 ? sub - 1 : 0;
    // Newton iterations on the arc-length function, seeded by linear
    // interpolation inside the bracketing subinterval.
    const double sub_len = cum[sub + 1] - cum[sub];
    double u = (sub + (sub_len > 0 ? (target - cum[sub]) / sub_len : 0.0)) / kSub;
    for (int it = 0; it < 8; ++it) {
      const double f = cum[sub] + quad_length(seg, sub / double(kSub), u) - target;
      const double speed = deriv(seg, u).norm();
      if (speed <= 0) break;
      const double du = f / speed;
      u = std::clamp(u - du, 0.0, 1.0);
      if (std::abs(du) < 1e-14) break;
    }
    if (position) *position = eval(seg, u);
    if (tangent) *tangent = deriv(seg, u).normalized();
  }

 private:
  static constexpr int kSub = 16;

  Vec3 eval(size_t seg, double u) const {
    const Vec3 &p0 = pts_[seg], &p1 = pts_[seg + 1], &p2 = pts_[seg + 2],
               &p3 = pts_[seg + 3];
    const double u2 = u * u, u3 = u2 * u;
    return 0.5 * ((2.0 * p1) + (p2 - p0) * u +
                  (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * u2 +
                  (3.0 * p1 - p0 - 3.0 * p2 + p3) * u3);
  }

  Vec3 deriv(size_t seg, double u) const {
    const Vec3 &p0 = pts_[seg], &p1 = pts_[seg + 1], &p2 = pts_[seg + 2],
               &p3 = pts_[seg + 3];
    const double u2 = u * u;
    return 0.5 * ((p2 - p0) + 2.0 * (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * u +
                  3.0 * (3.0 * p1 - p0 - 3.0 * p2 + p3) * u2);
  }

  double quad_length(size_t seg, double a, double b) const {
    static constexpr double kNode[5] = {-0.9061798459386640, -0.5384693101056831, 0.0,
                                        0.5384693101056831, 0.9061798459386640};
    static constexpr double kWeight[5] = {0.2369268850561891, 0.4786286704993665,
                                          0.5688888888888889, 0.4786286704993665,
                                          0.2369268850561891};
    const double mid = 0.5 * (a + b), half = 0.5 * (b - a);
    double len = 0;
    for (int i = 0; i < 5; ++i)
      len += kWeight[i] * deriv(seg, mid + half * kNode[i]).norm();
    return len * half;
  }

  std::vector<Vec3> pts_;
  std::vector<std::vector<double>> sub_cum_;  // per segment, per subinterval
  std::vector<double> seg_cum_;               // cumulative at segment starts
};

}  // namespace detail

/// Samples a constant-speed spline through the waypoints at the frame
/// rate and renders every frame; yaw follows the velocity direction.
/// Frame count is inclusive of both endpoints.
inline DatasetSequence generate_sequence(const Scene& scene, const TrajectoryConfig& traj,
                                         const StereoRig& rig) {
  traj.validate();
  rig.validate();
  for (const auto& w : traj.waypoints)
    VOBENCH_REQUIRE(w.z() > scene.height_at(w.x(), w.y()),
                    "generate_sequence: waypoint below terrain");

  const detail::WaypointSpline spline(traj.waypoints);
  const double total = spline.total_length();
  VOBENCH_REQUIRE(total > 0, "generate_sequence: degenerate path");

  const double step = traj.speed / traj.frame_rate;
  const int n_frames = int(std::floor(total / step + 1e-9)) + 1;

  DatasetSequence seq;
  seq.rig = rig;
  for (int f = 0; f < n_frames; ++f) {
    const double s = std::min(f * step, total);
    Vec3 pos, dir;
    spline.sample(s, &pos, &dir);
    Pose pose{detail::camera_rotation(dir, traj.pitch), pos};
    auto frame = render_frame(scene, pose, rig);
    seq.left.push_back(std::move(frame.left));
    seq.right.push_back(std::move(frame.right));
    seq.depth.push_back(std::move(frame.left_depth));
    seq.poses.push_back(pose);
    seq.timestamps.push_back(f / traj.frame_rate);
  }
  seq.validate();
  return seq;
}

// ---------------------------------------------------------------------------
// On-disk layout: calib.txt, left/%06d.pgm, right/%06d.pgm,
// depth/%06d.f32 (raw little-endian float32, row-major), poses.csv
// (frame, tx, ty, tz, qw, qx, qy, qz), times.csv (frame, time).
// ---------------------------------------------------------------------------

namespace detail {

inline std::string frame_name(const char* fmt_dir, int idx, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s/%06d.%s", fmt_dir, idx, ext);
  return buf;
}

}  // namespace detail

inline void save_sequence(const std::string& dir, const DatasetSequence& seq) {
  namespace fs = std::filesystem;
  seq.validate();
  fs::create_directories(dir);
  fs::create_directories(dir + "/left");
  fs::create_directories(dir + "/right");
  fs::create_directories(dir + "/depth");
  save_calibration(dir + "/calib.txt", seq.rig);
  CsvWriter poses(dir + "/poses.csv",
                  {"frame", "tx", "ty", "tz", "qw", "qx", "qy", "qz"});
  CsvWriter times(dir + "/times.csv", {"frame", "time"});
  for (size_t i = 0; i < seq.size(); ++i) {
    save_pgm(dir + "/" + detail::frame_name("left", int(i), "pgm"), seq.left[i]);
    save_pgm(dir + "/" + detail::frame_name("right", int(i), "pgm"), seq.right[i]);
    const std::string dpath = dir + "/" + detail::frame_name("depth", int(i), "f32");
    std::ofstream dout(dpath, std::ios::binary);
    VOBENCH_REQUIRE(dout.good(), "cannot write depth file: " + dpath);
    dout.write(reinterpret_cast<const char*>(seq.depth[i].data()),
               std::streamsize(seq.depth[i].size() * sizeof(float)));
    Eigen::Quaterniond q(seq.poses[i].rotation);
    q.normalize();
    const Vec3& t = seq.poses[i].translation;
    poses.row(i, t.x(), t.y(), t.z(), q.w(), q.x(), q.y(), q.z());
    times.row(i, seq.timestamps[i]);
  }
}

inline DatasetSequence load_sequence(const std::string& dir) {
  DatasetSequence seq;
  seq.rig = load_calibration(dir + "/calib.txt");
  const CsvTable poses = CsvTable::load(dir + "/poses.csv");
  const CsvTable times = CsvTable::load(dir + "/times.csv");
  VOBENCH_REQUIRE(poses.rows.size() == times.rows.size(),
                  "sequence: poses.csv and times.csv disagree in length");
  const size_t n = poses.rows.size();
  const size_t npx = size_t(seq.rig.left.width) * seq.rig.left.height;
  for (size_t i = 0; i < n; ++i) {
    seq.left.push_back(load_pgm(dir + "/" + detail::frame_name("left", int(i), "pgm")));
    seq.right.push_back(load_pgm(dir + "/" + detail::frame_name("right", int(i), "pgm")));
    const std::string dpath = dir + "/" + detail::frame_name("depth", int(i), "f32");
    std::ifstream din(dpath, std::ios::binary);
    VOBENCH_REQUIRE(din.good(), "missing depth file: " + dpath);
    std::vector<float> d(npx);
    din.read(reinterpret_cast<char*>(d.data()), std::streamsize(npx * sizeof(float)));
    VOBENCH_REQUIRE(din.gcount() == std::streamsize(npx * sizeof(float)),
                    "truncated depth file: " + dpath);
    seq.depth.push_back(std::move(d));
    Pose p;
    p.translation = Vec3(poses.num(i, 1), poses.num(i, 2), poses.num(i, 3));
    Eigen::Quaterniond q(poses.num(i, 4), poses.num(i, 5), poses.num(i, 6),
                         poses.num(i, 7));
    q.normalize();
    p.rotation = q.toRotationMatrix();
    seq.poses.push_back(p);
    seq.timestamps.push_back(times.num(i, 1));
  }
  seq.validate();
  return seq;
}

}  // namespace vobench
