#pragma once

#include <Eigen/SVD>

#include "vobench/point_cloud.hpp"

namespace vobench {

struct IcpParams {
  double search_radius = 0.5;  // meters
  double rmse_delta = 1e-5;    // termination on |RMSE change|
  int max_iterations = 1500;
  bool with_scale = false;  // similarity instead of rigid alignment
};

struct Correspondence {
  int source = -1;
  int target = -1;
  double distance = 0;  // meters, after the iteration's alignment
};

struct RegistrationResult {
  SimilarityTransform transform;  // maps source onto target
  std::vector<Correspondence> correspondences;
  std::vector<double> rmse_trace;
  int iterations = 0;
  bool converged = false;
};

namespace detail {

/// Closed-form least-squares alignment of paired points (rigid, or
/// similarity when with_scale).
inline SimilarityTransform fit_alignment(const std::vector<Vec3>& src,
                                         const std::vector<Vec3>& dst, bool with_scale) {
  const size_t n = src.size();
  VOBENCH_REQUIRE(n >= 3, "fit_alignment: need at least 3 pairs");
  Vec3 mean_s = Vec3::Zero(), mean_d = Vec3::Zero();
  for (size_t i = 0; i < n; ++i) {
    mean_s += src[i];
    mean_d += dst[i];
  }
  mean_s /= double(n);
  mean_d /= double(n);
  Mat3 cov = Mat3::Zero();
  double var_s = 0;
  for (size_t i = 0; i < n; ++i) {
    const Vec3 s = src[i] - mean_s;
    const Vec3 d = dst[i] - mean_d;
    cov += d * s.transpose();
    var_s += s.squaredNorm();
  }
  cov /= double(n);
  var_s /= double(n);

  Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 S = Mat3::Identity();
  if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0) S(2, 2) = -1;

  SimilarityTransform out;
  out.pose.rotation = svd.matrixU() * S * svd.matrixV().transpose();
  out.scale = with_scale ? (svd.singularValues().asDiagonal() * S).trace() / var_s : 1.0;
  VOBENCH_REQUIRE(out.scale > 0, "fit_alignment: degenerate scale");
  out.pose.translation = mean_d - out.scale * (out.pose.rotation * mean_s);
  return out;
}

}  // namespace detail

/// Point-to-point ICP: alternates radius-capped nearest-neighbor
/// correspondence with closed-form (rigid or similarity) alignment
/// until the RMSE of correspondence distances stops changing.
inline RegistrationResult icp_align(const PointCloud& source, const PointCloud& target,
                                    const IcpParams& params,
                                    const SimilarityTransform& initial =
                                        SimilarityTransform::identity()) {
  VOBENCH_REQUIRE(!source.points.empty() && !target.points.empty(),
                  "icp_align: empty cloud");
  const SpatialGrid grid(target, params.search_radius);

  RegistrationResult result;
  result.transform = initial;
  std::vector<Vec3> src_matched, dst_matched;
  std::vector<Correspondence> corr;

  double prev_rmse = std::numeric_limits<double>::infinity();
  for (int iter = 0; iter < params.max_iterations; ++iter) {
    corr.clear();
    src_matched.clear();
    dst_matched.clear();
    double sq_sum = 0;
    for (size_t i = 0; i < source.points.size(); ++i) {
      const Vec3 p = result.transform * source.points[i];
      const int j = grid.nearest_within(p, params.search_radius);
      if (j < 0) continue;
      const double d = (target.points[j] - p).norm();
      corr.push_back({int(i), j, d});
      src_matched.push_back(source.points[i]);
      dst_matched.push_back(target.points[j]);
      sq_sum += d * d;
    }
    if (corr.empty()) throw Error("icp_align: registration failed, zero correspondences");

    const double rmse = std::sqrt(sq_sum / double(corr.size()));
    result.rmse_trace.push_back(rmse);
    result.correspondences = corr;
    result.iterations = iter + 1;
    if (std::abs(prev_rmse - rmse) < params.rmse_delta) {
      result.converged = true;
      break;
    }
    prev_rmse = rmse;
    result.transform = detail::fit_alignment(src_matched, dst_matched, params.with_scale);
  }
  return result;
}

}  // namespace vobench
