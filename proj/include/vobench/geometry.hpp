#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <optional>

#include "vobench/common.hpp"

namespace vobench {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat3 = Eigen::Matrix3d;

/// Pinhole camera parameters of a rectified view. Focal lengths are in
/// pixels; pixel_size is the physical pixel width in meters and is kept
/// as metadata only (fx already equals f/delta).
struct CameraIntrinsics {
  double fx = 0, fy = 0;
  double cx = 0, cy = 0;
  int width = 0, height = 0;
  double pixel_size = 0;

  void validate() const {
    VOBENCH_REQUIRE(fx > 0 && fy > 0, "intrinsics: focal length must be positive");
    VOBENCH_REQUIRE(cx > 0 && cx < width, "intrinsics: cx outside image");
    VOBENCH_REQUIRE(cy > 0 && cy < height, "intrinsics: cy outside image");
  }

  /// Intrinsics of the half-resolution pyramid level below this one.
  CameraIntrinsics halved() const {
    CameraIntrinsics h = *this;
    h.fx = 0.5 * fx;
    h.fy = 0.5 * fy;
    h.cx = 0.5 * (cx + 0.5) - 0.5;
    h.cy = 0.5 * (cy + 0.5) - 0.5;
    h.width = width / 2;
    h.height = height / 2;
    return h;
  }

  bool in_bounds(const Vec2& px, double border = 0.0) const {
    return px.x() >= border && px.y() >= border && px.x() <= width - 1 - border &&
           px.y() <= height - 1 - border;
  }
};

namespace se3 {

inline Mat3 hat(const Vec3& w) {
  Mat3 m;
  m << 0, -w.z(), w.y(), w.z(), 0, -w.x(), -w.y(), w.x(), 0;
  return m;
}

}  // namespace se3

/// Rigid body transform: p_out = R * p + t.
struct Pose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static Pose identity() { return {}; }

  Vec3 operator*(const Vec3& p) const { return rotation * p + translation; }

  Pose operator*(const Pose& o) const {
    return {rotation * o.rotation, rotation * o.translation + translation};
  }

  Pose inverse() const {
    return {rotation.transpose(), -(rotation.transpose() * translation)};
  }

  /// Exponential map of a twist [v, w] (translation first).
  static Pose exp(const Vec6& twist) {
    const Vec3 v = twist.head<3>();
    const Vec3 w = twist.tail<3>();
    const double theta = w.norm();
    const Mat3 W = se3::hat(w);
    Mat3 R, V;
    if (theta < 1e-10) {
      R = Mat3::Identity() + W + 0.5 * W * W;
      V = Mat3::Identity() + 0.5 * W + W * W / 6.0;
    } else {
      const double s = std::sin(theta), c = std::cos(theta);
      R = Mat3::Identity() + (s / theta) * W + ((1 - c) / (theta * theta)) * W * W;
      V = Mat3::Identity() + ((1 - c) / (theta * theta)) * W +
          ((theta - s) / (theta * theta * theta)) * W * W;
    }
    return {R, V * v};
  }

  /// Logarithm map; inverse of exp for rotations below pi.
  Vec6 log() const {
    const double tr = rotation.trace();
    const double c = std::min(1.0, std::max(-1.0, (tr - 1.0) * 0.5));
    const double theta = std::acos(c);
    Vec3 w;
    Mat3 Vinv;
    if (theta < 1e-10) {
      const Mat3 W = 0.5 * (rotation - rotation.transpose());
      w = Vec3(W(2, 1), W(0, 2), W(1, 0));
      Vinv = Mat3::Identity() - 0.5 * se3::hat(w);
    } else {
      const Mat3 W = (theta / (2.0 * std::sin(theta))) * (rotation - rotation.transpose());
      w = Vec3(W(2, 1), W(0, 2), W(1, 0));
      const Mat3 Wh = se3::hat(w);
      Vinv = Mat3::Identity() - 0.5 * Wh +
             (1.0 / (theta * theta) - (1.0 + std::cos(theta)) / (2.0 * theta * std::sin(theta))) *
                 Wh * Wh;
    }
    Vec6 tw;
    tw.head<3>() = Vinv * translation;
    tw.tail<3>() = w;
    return tw;
  }

  /// Re-projects the rotation onto SO(3) (nearest orthonormal matrix).
  void orthonormalize() {
    Eigen::JacobiSVD<Mat3> svd(rotation, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Mat3 R = svd.matrixU() * svd.matrixV().transpose();
    if (R.determinant() < 0) {
      Mat3 flip = Mat3::Identity();
      flip(2, 2) = -1;
      R = svd.matrixU() * flip * svd.matrixV().transpose();
    }
    rotation = R;
  }

  bool is_orthonormal(double tol = 1e-9) const {
    return (rotation.transpose() * rotation - Mat3::Identity()).norm() <= tol &&
           std::abs(rotation.determinant() - 1.0) <= tol;
  }
};

/// Similarity transform: p_out = scale * R * p + t. With scale = 1 it
/// acts exactly as its Pose.
struct SimilarityTransform {
  double scale = 1.0;
  Pose pose;

  static SimilarityTransform identity() { return {}; }

  Vec3 operator*(const Vec3& p) const {
    return scale * (pose.rotation * p) + pose.translation;
  }

  SimilarityTransform operator*(const SimilarityTransform& o) const {
    SimilarityTransform r;
    r.scale = scale * o.scale;
    r.pose.rotation = pose.rotation * o.pose.rotation;
    r.pose.translation = scale * (pose.rotation * o.pose.translation) + pose.translation;
    return r;
  }

  SimilarityTransform inverse() const {
    SimilarityTransform r;
    r.scale = 1.0 / scale;
    r.pose.rotation = pose.rotation.transpose();
    r.pose.translation = -(pose.rotation.transpose() * translation_scaled());
    return r;
  }

 private:
  Vec3 translation_scaled() const { return pose.translation / scale; }
};

/// Rectified stereo pair. Both intrinsics share fx, fy, cy; the right
/// camera sits at +baseline along the left camera's x axis.
struct StereoRig {
  double baseline = 0;
  CameraIntrinsics left, right;

  void validate() const {
    VOBENCH_REQUIRE(baseline > 0, "stereo rig: baseline must be positive");
    left.validate();
    right.validate();
    VOBENCH_REQUIRE(left.fx == right.fx && left.fy == right.fy && left.cy == right.cy,
                    "stereo rig: pair is not rectified (fx/fy/cy mismatch)");
  }
};

inline Vec2 project(const Vec3& point, const CameraIntrinsics& intr) {
  VOBENCH_REQUIRE(point.z() > 0, "project: point behind camera");
  return {intr.fx * point.x() / point.z() + intr.cx,
          intr.fy * point.y() / point.z() + intr.cy};
}

inline Vec3 backproject(const Vec2& pixel, double inverse_depth,
                        const CameraIntrinsics& intr) {
  VOBENCH_REQUIRE(inverse_depth > 0, "backproject: invalid inverse depth");
  return Vec3((pixel.x() - intr.cx) / intr.fx, (pixel.y() - intr.cy) / intr.fy, 1.0) /
         inverse_depth;
}

/// Result of transferring a pixel into another frame. in_bounds is a
/// flag, not an error; callers drop out-of-bounds residuals.
struct TransferResult {
  Vec2 pixel;
  double depth = 0;  // z in the target frame
  bool in_bounds = false;
};

/// Projects pixel p with inverse depth d_p from frame i into frame j.
/// Poses map camera to world; the relative transform is T_j^-1 * T_i.
/// Returns nullopt when the transferred point falls behind the camera.
inline std::optional<TransferResult> transfer_point(const Vec2& p, double d_p,
                                                    const Pose& world_from_i,
                                                    const Pose& world_from_j,
                                                    const CameraIntrinsics& intr) {
  const Pose j_from_i = world_from_j.inverse() * world_from_i;
  const Vec3 xj = j_from_i * backproject(p, d_p, intr);
  if (xj.z() <= 0) return std::nullopt;
  TransferResult r;
  r.pixel = project(xj, intr);
  r.depth = xj.z();
  r.in_bounds = intr.in_bounds(r.pixel);
  return r;
}

inline double stereo_depth(double disparity, const StereoRig& rig) {
  VOBENCH_REQUIRE(disparity > 0, "stereo_depth: non-positive disparity");
  return rig.baseline * rig.left.fx / disparity;
}

inline double disparity_from_depth(double depth, const StereoRig& rig) {
  VOBENCH_REQUIRE(depth > 0, "disparity_from_depth: non-positive depth");
  return rig.baseline * rig.left.fx / depth;
}

/// Depth deviations for a +-1 px disparity error at the given depth.
/// The upper deviation is +infinity once disparity drops to 1 px.
struct DepthErrorBound {
  double lower = 0;   // d - depth(disp + 1)
  double upper = 0;   // depth(disp - 1) - d, or infinity
  bool upper_finite = true;
};

inline DepthErrorBound depth_error_bound(double depth, const StereoRig& rig) {
  VOBENCH_REQUIRE(depth > 0, "depth_error_bound: non-positive depth");
  const double bf = rig.baseline * rig.left.fx;
  const double disp = bf / depth;
  DepthErrorBound b;
  b.lower = depth - bf / (disp + 1.0);
  if (disp <= 1.0) {
    b.upper = std::numeric_limits<double>::infinity();
    b.upper_finite = false;
  } else {
    b.upper = bf / (disp - 1.0) - depth;
  }
  return b;
}

/// Calibration file: key=value with fx, fy, cx, cy, width, height,
/// pixel_size, baseline.
inline StereoRig load_calibration(const std::string& path) {
  const KeyValueFile kv = KeyValueFile::load(path);
  CameraIntrinsics intr;
  intr.fx = kv.num("fx");
  intr.fy = kv.num("fy");
  intr.cx = kv.num("cx");
  intr.cy = kv.num("cy");
  intr.width = kv.integer("width");
  intr.height = kv.integer("height");
  intr.pixel_size = kv.num("pixel_size");
  StereoRig rig;
  rig.baseline = kv.num("baseline");
  rig.left = intr;
  rig.right = intr;
  rig.validate();
  return rig;
}

inline void save_calibration(const std::string& path, const StereoRig& rig) {
  std::ofstream out(path);
  VOBENCH_REQUIRE(out.good(), "cannot write calibration file: " + path);
  out.precision(17);
  out << "fx = " << rig.left.fx << "\nfy = " << rig.left.fy << "\ncx = " << rig.left.cx
      << "\ncy = " << rig.left.cy << "\nwidth = " << rig.left.width
      << "\nheight = " << rig.left.height << "\npixel_size = " << rig.left.pixel_size
      << "\nbaseline = " << rig.baseline << "\n";
}

}  // namespace vobench
