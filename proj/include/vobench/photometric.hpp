#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "vobench/geometry.hpp"
#include "vobench/image.hpp"

namespace vobench {

constexpr double kDefaultHuberGamma = 9.0 / 255.0;
constexpr double kGradientWeightC = 50.0 / 255.0;

/// A single grayscale frame with its brightness-transfer state. The
/// affine parameters (a, b) and exposure enter the photometric residual
/// exactly as modeled by the estimator.
struct Frame {
  int id = 0;
  double timestamp = 0;
  Image intensity;
  double exposure = 1.0;  // seconds, must be positive
  double affine_a = 0.0;
  double affine_b = 0.0;

  void prepare() {
    VOBENCH_REQUIRE(exposure > 0, "frame: exposure must be positive");
    if (!intensity.has_gradients()) intensity.compute_gradients();
  }
};

inline int max_pyramid_levels(int width, int height) {
  int levels = 1;
  int m = std::min(width, height);
  while (m >= 2) {
    m /= 2;
    ++levels;
  }
  return levels;
}

/// Coarse-to-fine pyramid: level 0 is the input, each level above is a
/// 2x2 box-filtered half-resolution copy with gradients recomputed.
inline std::vector<Image> build_pyramid(const Image& base, int levels) {
  VOBENCH_REQUIRE(levels >= 1, "build_pyramid: levels must be >= 1");
  VOBENCH_REQUIRE(levels <= max_pyramid_levels(base.width(), base.height()),
                  "build_pyramid: too many levels for image size");
  std::vector<Image> pyr;
  pyr.reserve(levels);
  pyr.push_back(base);
  for (int k = 1; k < levels; ++k) pyr.push_back(pyr.back().downsample());
  for (auto& img : pyr)
    if (!img.has_gradients()) img.compute_gradients();
  return pyr;
}

inline std::vector<CameraIntrinsics> pyramid_intrinsics(const CameraIntrinsics& intr,
                                                        int levels) {
  std::vector<CameraIntrinsics> out;
  out.reserve(levels);
  out.push_back(intr);
  for (int k = 1; k < levels; ++k) out.push_back(out.back().halved());
  return out;
}

/// The 8-pixel spread pattern used for every photometric residual
/// (center plus 7 offsets within radius 2).
struct ResidualPattern {
  static constexpr int kSize = 8;
  std::array<Eigen::Vector2i, kSize> offsets;

  static const ResidualPattern& standard() {
    static const ResidualPattern p = {{{Eigen::Vector2i(0, 0), Eigen::Vector2i(-2, 0),
                                        Eigen::Vector2i(2, 0), Eigen::Vector2i(0, -2),
                                        Eigen::Vector2i(0, 2), Eigen::Vector2i(-1, -1),
                                        Eigen::Vector2i(1, -1), Eigen::Vector2i(-1, 1)}}};
    return p;
  }
};

enum class PointStatus { kCandidate, kActive, kMarginalized, kDropped };

/// A tracked scene point, parameterized by inverse depth in its host
/// keyframe.
struct CandidatePoint {
  int host_frame_id = -1;
  Vec2 pixel = Vec2::Zero();
  double inverse_depth = 0;
  bool depth_valid = false;
  double depth_variance = 0;  // variance of the inverse depth
  // Direct depth measurement retained as a prior in the window
  // optimization (zero variance = no measurement, e.g. mono points).
  double idepth_prior = 0;
  double idepth_prior_variance = 0;
  PointStatus status = PointStatus::kCandidate;
  int observations = 0;  // distinct frames constraining the depth
  float color = 0;       // host intensity, exported with the map
};

/// Huber cost: r^2 inside the knee, gamma*(2|r|-gamma) outside.
inline double huber(double residual, double gamma) {
  VOBENCH_REQUIRE(gamma > 0, "huber: gamma must be positive");
  const double a = std::abs(residual);
  return a <= gamma ? residual * residual : gamma * (2.0 * a - gamma);
}

/// IRLS weight such that weight * r equals d(huber)/dr / 2.
inline double huber_weight(double residual, double gamma) {
  const double a = std::abs(residual);
  return a <= gamma ? 1.0 : gamma / a;
}

/// Gradient-dependent down-weighting: c^2 / (c^2 + |grad|^2).
inline double gradient_weight(const Vec2& pixel_gradient) {
  const double c2 = kGradientWeightC * kGradientWeightC;
  return c2 / (c2 + pixel_gradient.squaredNorm());
}

/// One evaluated photometric residual (pattern SSD between host and
/// target). Offsets that transfer out of bounds are flagged invalid;
/// fewer than 5 valid offsets (or a point behind the camera)
/// invalidates the whole residual.
struct PhotometricResidual {
  bool valid = false;
  double cost = 0;  // sum of w_p * huber(r)
  std::array<double, ResidualPattern::kSize> residuals{};
  std::array<bool, ResidualPattern::kSize> offset_valid{};
  std::array<double, ResidualPattern::kSize> weights{};       // gradient weight w_p
  std::array<Vec2, ResidualPattern::kSize> target_pixels{};   // p' per offset
  std::array<double, ResidualPattern::kSize> target_depths{}; // z in target
  double brightness_scale = 1.0;  // (t_j e^{a_j}) / (t_i e^{a_i})
  int num_valid = 0;
};

constexpr int kMinValidPatternOffsets = 5;
constexpr double kPatternBorder = 2.0;  // interpolation margin in pixels

/// Evaluates Eq.-style weighted SSD of one point between its host frame
/// and a target frame under relative pose target_from_host. Every
/// offset is transferred with the point's inverse depth.
inline PhotometricResidual photometric_residual(
    const CandidatePoint& point, const Frame& host, const Frame& target,
    const Pose& target_from_host, const CameraIntrinsics& intr,
    const ResidualPattern& pattern = ResidualPattern::standard(),
    double gamma = kDefaultHuberGamma) {
  PhotometricResidual out;
  VOBENCH_REQUIRE(point.depth_valid && point.inverse_depth > 0,
                  "photometric_residual: point has no valid inverse depth");
  out.brightness_scale = (target.exposure * std::exp(target.affine_a)) /
                         (host.exposure * std::exp(host.affine_a));

  for (int k = 0; k < ResidualPattern::kSize; ++k) {
    const Vec2 p = point.pixel + pattern.offsets[k].cast<double>();
    if (!host.intensity.in_bounds(p.x(), p.y())) continue;
    const Vec3 xh = backproject(p, point.inverse_depth, intr);
    const Vec3 xt = target_from_host * xh;
    if (xt.z() <= 0) return out;  // behind camera invalidates the residual
    const Vec2 pt = project(xt, intr);
    if (pt.x() < kPatternBorder || pt.y() < kPatternBorder ||
        pt.x() > intr.width - 1 - kPatternBorder ||
        pt.y() > intr.height - 1 - kPatternBorder)
      continue;
    const double ih = host.intensity.interpolate(p.x(), p.y());
    const double it = target.intensity.interpolate(pt.x(), pt.y());
    const double r = (it - target.affine_b) -
                     out.brightness_scale * (ih - host.affine_b);
    out.residuals[k] = r;
    out.offset_valid[k] = true;
    out.weights[k] = gradient_weight(host.intensity.interpolate_gradient(p.x(), p.y()));
    out.target_pixels[k] = pt;
    out.target_depths[k] = xt.z();
    out.cost += out.weights[k] * huber(r, gamma);
    ++out.num_valid;
  }
  out.valid = out.num_valid >= kMinValidPatternOffsets;
  if (!out.valid) out.cost = 0;
  return out;
}

/// Analytic derivatives of a single pattern-offset residual with
/// respect to a left-multiplied twist increment on target_from_host
/// (exp(delta) * T), the point's inverse depth, and the target frame's
/// brightness parameters (a, b).
struct ResidualJacobian {
  bool valid = false;
  double residual = 0;
  Vec6 d_twist = Vec6::Zero();
  double d_idepth = 0;
  double d_affine_a = 0;
  double d_affine_b = 0;
};

inline ResidualJacobian photometric_jacobian(
    const CandidatePoint& point, const Frame& host, const Frame& target,
    const Pose& target_from_host, const CameraIntrinsics& intr, int offset_index,
    const ResidualPattern& pattern = ResidualPattern::standard()) {
  VOBENCH_REQUIRE(offset_index >= 0 && offset_index < ResidualPattern::kSize,
                  "photometric_jacobian: offset index out of range");
  VOBENCH_REQUIRE(target.intensity.has_gradients(),
                  "photometric_jacobian: target frame not prepared");
  ResidualJacobian out;
  const Vec2 p = point.pixel + pattern.offsets[offset_index].cast<double>();
  if (!host.intensity.in_bounds(p.x(), p.y())) return out;
  const Vec3 xh = backproject(p, point.inverse_depth, intr);
  const Vec3 xt = target_from_host * xh;
  if (xt.z() <= 0) return out;
  const Vec2 pt = project(xt, intr);
  if (pt.x() < kPatternBorder || pt.y() < kPatternBorder ||
      pt.x() > intr.width - 1 - kPatternBorder ||
      pt.y() > intr.height - 1 - kPatternBorder)
    return out;

  const double scale = (target.exposure * std::exp(target.affine_a)) /
                       (host.exposure * std::exp(host.affine_a));
  const double ih = host.intensity.interpolate(p.x(), p.y());
  out.residual = (target.intensity.interpolate(pt.x(), pt.y()) - target.affine_b) -
                 scale * (ih - host.affine_b);

  const double iz = 1.0 / xt.z();
  Eigen::Matrix<double, 2, 3> dpi;
  dpi << intr.fx * iz, 0, -intr.fx * xt.x() * iz * iz,  //
      0, intr.fy * iz, -intr.fy * xt.y() * iz * iz;
  const Vec2 grad = target.intensity.interpolate_derivative(pt.x(), pt.y());
  const Eigen::RowVector3d gdpi = grad.transpose() * dpi;

  Eigen::Matrix<double, 3, 6> dx;
  dx.leftCols<3>() = Mat3::Identity();
  dx.rightCols<3>() = -se3::hat(xt);
  out.d_twist = (gdpi * dx).transpose();
  out.d_idepth = gdpi * (-(target_from_host.rotation * xh) / point.inverse_depth);
  out.d_affine_a = -scale * (ih - host.affine_b);
  out.d_affine_b = -1.0;
  out.valid = true;
  return out;
}

constexpr int kSelectionCellSize = 32;
constexpr double kSelectionMargin = 3.0 / 255.0;

/// Grid-partitioned high-gradient pixel selection. Each 32x32 cell
/// contributes its strongest pixels when they exceed the cell's median
/// gradient magnitude plus a fixed margin. Returns at most target_count
/// points; textureless cells contribute nothing.
inline std::vector<CandidatePoint> select_candidates(const Frame& frame,
                                                     int target_count) {
  VOBENCH_REQUIRE(target_count >= 1, "select_candidates: target_count must be >= 1");
  const Image& img = frame.intensity;
  VOBENCH_REQUIRE(img.has_gradients(), "select_candidates: frame not prepared");
  const int border = 2;  // keep the full pattern inside the image
  const int cells_x = (img.width() + kSelectionCellSize - 1) / kSelectionCellSize;
  const int cells_y = (img.height() + kSelectionCellSize - 1) / kSelectionCellSize;
  const int per_cell =
      std::max(1, (target_count + cells_x * cells_y - 1) / (cells_x * cells_y));

  struct Scored {
    float mag2;
    int x, y;
  };
  std::vector<CandidatePoint> out;
  std::vector<Scored> cell;
  std::vector<float> mags;
  for (int cy = 0; cy < cells_y; ++cy) {
    for (int cx = 0; cx < cells_x; ++cx) {
      cell.clear();
      mags.clear();
      const int x0 = std::max(cx * kSelectionCellSize, border);
      const int y0 = std::max(cy * kSelectionCellSize, border);
      const int x1 = std::min((cx + 1) * kSelectionCellSize, img.width() - border);
      const int y1 = std::min((cy + 1) * kSelectionCellSize, img.height() - border);
      for (int y = y0; y < y1; ++y) {
        for (int x = x0; x < x1; ++x) {
          const float m2 = float(img.gradient(x, y).squaredNorm());
          cell.push_back({m2, x, y});
          mags.push_back(std::sqrt(m2));
        }
      }
      if (cell.empty()) continue;
      std::nth_element(mags.begin(), mags.begin() + mags.size() / 2, mags.end());
      const double threshold = mags[mags.size() / 2] + kSelectionMargin;
      const int take = std::min<int>(per_cell, int(cell.size()));
      std::partial_sort(cell.begin(), cell.begin() + take, cell.end(),
                        [](const Scored& a, const Scored& b) {
                          if (a.mag2 != b.mag2) return a.mag2 > b.mag2;
                          return a.y != b.y ? a.y < b.y : a.x < b.x;
                        });
      for (int i = 0; i < take; ++i) {
        if (std::sqrt(double(cell[i].mag2)) < threshold) break;
        CandidatePoint pt;
        pt.host_frame_id = frame.id;
        pt.pixel = Vec2(cell[i].x, cell[i].y);
        pt.color = img.at(cell[i].x, cell[i].y);
        out.push_back(pt);
        if (int(out.size()) >= target_count) return out;
      }
    }
  }
  return out;
}

}  // namespace vobench
