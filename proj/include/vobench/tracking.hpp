#pragma once

#include <chrono>

#include "vobench/keyframe.hpp"

namespace vobench {

enum class TrackingMode { kForward, kInverse };

struct TrackerConfig {
  int pyramid_levels = 4;
  int max_iterations = 50;       // per level
  double twist_convergence = 1e-6;
  double huber_gamma = kDefaultHuberGamma;
  double min_valid_fraction = 0.3;  // at the finest level, else lost
  int max_damped_retries = 5;       // consecutive cost increases
  double affine_prior_weight = 1.0;  // weak pull of (a, b) toward 0
};

struct TrackingResult {
  int frame_id = -1;
  Pose pose;  // camera-to-world
  double affine_a = 0, affine_b = 0;
  double final_cost = 0;          // mean weighted Huber cost per valid offset
  double valid_residual_fraction = 0;
  double duration = 0;            // seconds, wall clock
  bool is_post_keyframe = false;  // first frame tracked after a keyframe
  double mean_flow = 0;           // px, mean point displacement vs reference
  bool lost = false;
};

/// Constant-velocity extrapolation of the last relative motion;
/// identity relative motion with fewer than two past poses.
inline Pose predict_pose(const std::vector<TrackingResult>& history) {
  if (history.size() < 2) return history.empty() ? Pose::identity() : history.back().pose;
  const Pose& prev = history[history.size() - 2].pose;
  const Pose& last = history.back().pose;
  return last * (prev.inverse() * last);
}

/// Direct image alignment of a frame against a reference keyframe,
/// coarse to fine, jointly over the 6-DoF relative pose and the
/// frame's brightness parameters (a, b). Forward-compositional and
/// inverse-compositional (precomputed reference Jacobians + Hessian)
/// variants.
class Tracker {
 public:
  explicit Tracker(TrackerConfig config = {}) : config_(config) {}

  const TrackerConfig& config() const { return config_; }

  using Mat8 = Eigen::Matrix<double, 8, 8>;
  using Vec8 = Eigen::Matrix<double, 8, 1>;

  TrackingResult track_frame(Frame& frame, const Keyframe& reference,
                             const Pose& initial_guess, TrackingMode mode) {
    const auto t0 = std::chrono::steady_clock::now();
    VOBENCH_REQUIRE(reference.num_valid_points() >= 50,
                    "track_frame: reference has too few valid points");
    VOBENCH_REQUIRE(initial_guess.translation.allFinite() &&
                        initial_guess.rotation.allFinite(),
                    "track_frame: non-finite initial guess");

    const bool fresh_cache = cache_keyframe_id_ != reference.id || cache_mode_ != mode;
    if (fresh_cache) build_cache(reference, mode);

    frame.prepare();
    const auto target_pyr = build_pyramid(frame.intensity, config_.pyramid_levels);

    // Relative pose: current camera from reference camera.
    Pose rel = initial_guess.inverse() * reference.world_from_cam;
    double aff_a = 0, aff_b = 0;

    TrackingResult result;
    result.frame_id = frame.id;
    result.is_post_keyframe = fresh_cache;

    bool lost = false;
    for (int level = config_.pyramid_levels - 1; level >= 0 && !lost; --level)
      lost = !optimize_level(reference, target_pyr[level], level, mode, rel, aff_a, aff_b);

    // Final evaluation at the finest level for cost/flow/validity.
    double cost = 0, flow = 0;
    int n_offsets = 0, n_points_valid = 0, n_points = 0;
    for (const auto& cp : cache_[0].points) {
      ++n_points;
      const Residuals rr = evaluate_point(cp, target_pyr[0], reference.intr_pyr[0], rel,
                                          aff_a, aff_b, reference.frame);
      if (!rr.valid) continue;
      ++n_points_valid;
      cost += rr.cost;
      n_offsets += rr.num_valid;
      flow += (rr.center_pixel - cp.pixel).norm();
    }
    result.valid_residual_fraction = n_points ? double(n_points_valid) / n_points : 0.0;
    result.final_cost = n_offsets ? cost / n_offsets : 0.0;
    result.mean_flow = n_points_valid ? flow / n_points_valid : 0.0;
    result.pose = reference.world_from_cam * rel.inverse();
    result.affine_a = aff_a;
    result.affine_b = aff_b;
    result.lost = lost || result.valid_residual_fraction < config_.min_valid_fraction;

    const auto t1 = std::chrono::steady_clock::now();
    result.duration = std::max(1e-9, std::chrono::duration<double>(t1 - t0).count());
    return result;
  }

  /// Forward-mode Gauss-Newton Hessian at the given state (no priors);
  /// exposed so the inverse-mode precomputation can be cross-checked.
  Mat8 forward_hessian(const Keyframe& reference, Frame& frame, int level,
                       const Pose& cur_from_ref, double aff_a, double aff_b) {
    if (cache_keyframe_id_ != reference.id) build_cache(reference, TrackingMode::kForward);
    frame.prepare();
    const auto target_pyr = build_pyramid(frame.intensity, config_.pyramid_levels);
    Mat8 H = Mat8::Zero();
    Vec8 g = Vec8::Zero();
    accumulate_forward(reference, target_pyr[level], level, cur_from_ref, aff_a, aff_b,
                       H, g);
    return H;
  }

  /// Precomputed inverse-compositional Hessian of the reference at the
  /// identity increment.
  const Mat8& precomputed_hessian(int level) const {
    VOBENCH_REQUIRE(level >= 0 && level < int(cache_.size()), "no cache at level");
    VOBENCH_REQUIRE(cache_[level].hessian_valid, "inverse-mode cache not built");
    return cache_[level].hessian_ic;
  }

  void invalidate_cache() { cache_keyframe_id_ = -1; }

 private:
  struct CachedPoint {
    Vec2 pixel;  // at this level's resolution
    double idepth = 0;
    std::array<bool, ResidualPattern::kSize> valid{};
    std::array<double, ResidualPattern::kSize> host_intensity{};
    std::array<double, ResidualPattern::kSize> grad_weight{};
    std::array<Vec3, ResidualPattern::kSize> host_point{};  // host camera frame
    std::array<Vec8, ResidualPattern::kSize> jac{};         // inverse mode: dr/d(step)
  };

  struct LevelCache {
    std::vector<CachedPoint> points;
    Mat8 hessian_ic = Mat8::Zero();
    bool hessian_valid = false;
  };

  struct Residuals {
    bool valid = false;
    int num_valid = 0;
    double cost = 0;
    std::array<double, ResidualPattern::kSize> r{};
    std::array<bool, ResidualPattern::kSize> ok{};
    std::array<Vec2, ResidualPattern::kSize> px{};
    std::array<Vec3, ResidualPattern::kSize> xt{};  // target camera frame
    Vec2 center_pixel = Vec2::Zero();
  };

  static Eigen::Matrix<double, 2, 6> warp_jacobian(const Vec3& x,
                                                   const CameraIntrinsics& intr) {
    const double iz = 1.0 / x.z();
    Eigen::Matrix<double, 2, 3> dpi;
    dpi << intr.fx * iz, 0, -intr.fx * x.x() * iz * iz,  //
        0, intr.fy * iz, -intr.fy * x.y() * iz * iz;
    Eigen::Matrix<double, 3, 6> dx;
    dx.leftCols<3>() = Mat3::Identity();
    dx.rightCols<3>() = -se3::hat(x);
    return dpi * dx;
  }

  Residuals evaluate_point(const CachedPoint& cp, const Image& target,
                           const CameraIntrinsics& intr, const Pose& cur_from_ref,
                           double aff_a, double aff_b, const Frame& host) const {
    Residuals out;
    const double scale = std::exp(aff_a - host.affine_a);
    bool center_ok = false;
    for (int k = 0; k < ResidualPattern::kSize; ++k) {
      if (!cp.valid[k]) continue;
      const Vec3 xt = cur_from_ref * cp.host_point[k];
      if (xt.z() <= 0) return out;
      const Vec2 pt(intr.fx * xt.x() / xt.z() + intr.cx,
                    intr.fy * xt.y() / xt.z() + intr.cy);
      if (pt.x() < kPatternBorder || pt.y() < kPatternBorder ||
          pt.x() > intr.width - 1 - kPatternBorder ||
          pt.y() > intr.height - 1 - kPatternBorder)
        continue;
      const double it = target.interpolate(pt.x(), pt.y());
      const double r = (it - aff_b) - scale * (cp.host_intensity[k] - host.affine_b);
      out.r[k] = r;
      out.ok[k] = true;
      out.px[k] = pt;
      out.xt[k] = xt;
      out.cost += cp.grad_weight[k] * huber(r, config_.huber_gamma);
      ++out.num_valid;
      if (k == 0) {
        out.center_pixel = pt;
        center_ok = true;
      }
    }
    out.valid = out.num_valid >= kMinValidPatternOffsets && center_ok;
    return out;
  }

  double total_cost(const Keyframe& reference, const Image& target, int level,
                    const Pose& rel, double aff_a, double aff_b) const {
    const auto& cache = cache_[level];
    const CameraIntrinsics& intr = reference.intr_pyr[level];
    double cost = 0;
    int n = 0;
    for (const auto& cp : cache.points) {
      const Residuals rr = evaluate_point(cp, target, intr, rel, aff_a, aff_b,
                                          reference.frame);
      if (!rr.valid) continue;
      cost += rr.cost;
      n += rr.num_valid;
    }
    if (!n) return std::numeric_limits<double>::infinity();
    const double prior = config_.affine_prior_weight * (aff_a * aff_a + aff_b * aff_b);
    return cost / n + prior / 1000.0;
  }

  int accumulate_forward(const Keyframe& reference, const Image& target, int level,
                         const Pose& rel, double aff_a, double aff_b, Mat8& H,
                         Vec8& g) const {
    const auto& cache = cache_[level];
    const CameraIntrinsics& intr = reference.intr_pyr[level];
    const double scale = std::exp(aff_a - reference.frame.affine_a);
    int n_obs = 0;
    for (const auto& cp : cache.points) {
      const Residuals rr = evaluate_point(cp, target, intr, rel, aff_a, aff_b,
                                          reference.frame);
      if (!rr.valid) continue;
      for (int k = 0; k < ResidualPattern::kSize; ++k) {
        if (!rr.ok[k]) continue;
        const double w = cp.grad_weight[k] * huber_weight(rr.r[k], config_.huber_gamma);
        Vec8 J;
        const Vec2 grad = target.interpolate_derivative(rr.px[k].x(), rr.px[k].y());
        J.head<6>() = (grad.transpose() * warp_jacobian(rr.xt[k], intr)).transpose();
        J(6) = -scale * (cp.host_intensity[k] - reference.frame.affine_b);
        J(7) = -1.0;
        H.noalias() += w * J * J.transpose();
        g.noalias() -= w * J * rr.r[k];
        ++n_obs;
      }
    }
    return n_obs;
  }

  int accumulate_inverse(const Keyframe& reference, const Image& target, int level,
                         const Pose& rel, double aff_a, double aff_b, Vec8& g) const {
    const auto& cache = cache_[level];
    const CameraIntrinsics& intr = reference.intr_pyr[level];
    int n_obs = 0;
    for (const auto& cp : cache.points) {
      const Residuals rr = evaluate_point(cp, target, intr, rel, aff_a, aff_b,
                                          reference.frame);
      if (!rr.valid) continue;
      for (int k = 0; k < ResidualPattern::kSize; ++k) {
        if (!rr.ok[k]) continue;
        const double w = cp.grad_weight[k] * huber_weight(rr.r[k], config_.huber_gamma);
        g.noalias() -= w * cp.jac[k] * rr.r[k];
        ++n_obs;
      }
    }
    return n_obs;
  }

  // One pyramid level of damped Gauss-Newton. Returns false on divergence.
  bool optimize_level(const Keyframe& reference, const Image& target, int level,
                      TrackingMode mode, Pose& rel, double& aff_a, double& aff_b) {
    const auto& cache = cache_[level];
    if (cache.points.empty()) return true;  // nothing at this level, skip

    double lambda = 1e-4;
    double cost = total_cost(reference, target, level, rel, aff_a, aff_b);
    int consecutive_rejects = 0;

    for (int iter = 0; iter < config_.max_iterations; ++iter) {
      Mat8 H = Mat8::Zero();
      Vec8 g = Vec8::Zero();
      int n_obs = 0;
      if (mode == TrackingMode::kInverse) {
        H = cache.hessian_ic;  // reused across all iterations
        n_obs = accumulate_inverse(reference, target, level, rel, aff_a, aff_b, g);
      } else {
        n_obs = accumulate_forward(reference, target, level, rel, aff_a, aff_b, H, g);
      }
      if (n_obs < 8) return false;

      // Weak prior keeping (a, b) near zero.
      const double pw = config_.affine_prior_weight * n_obs / 1000.0;
      H(6, 6) += pw;
      H(7, 7) += pw;
      g(6) -= pw * aff_a;
      g(7) -= pw * aff_b;

      bool accepted = false;
      Vec8 step = Vec8::Zero();
      while (consecutive_rejects < config_.max_damped_retries) {
        Mat8 Hd = H;
        for (int i = 0; i < 8; ++i) Hd(i, i) *= (1.0 + lambda);
        step = Hd.ldlt().solve(g);
        if (!step.allFinite()) return false;

        Pose rel_new = rel;
        double a_new = aff_a, b_new = aff_b;
        apply_step(mode, step, rel_new, a_new, b_new);
        const double cost_new = total_cost(reference, target, level, rel_new, a_new, b_new);
        if (cost_new <= cost + 1e-14) {
          rel = rel_new;
          aff_a = a_new;
          aff_b = b_new;
          cost = cost_new;
          lambda = std::max(1e-9, lambda * 0.5);
          consecutive_rejects = 0;
          accepted = true;
          break;
        }
        lambda *= 8.0;
        ++consecutive_rejects;
      }
      // No improving step even under heavy damping: the level has
      // converged (or stalled); either way continue with the next level.
      if (!accepted) break;
      if (step.head<6>().norm() < config_.twist_convergence) break;
    }
    return true;
  }

  static void apply_step(TrackingMode mode, const Vec8& step, Pose& rel, double& aff_a,
                         double& aff_b) {
    if (mode == TrackingMode::kForward) {
      rel = Pose::exp(step.head<6>()) * rel;
    } else {
      // Inverse compositional: the solved increment warps the reference
      // side, so it composes inversely on the host end of the chain.
      rel = rel * Pose::exp(step.head<6>()).inverse();
    }
    // Brightness parameters stay on the target side in both modes.
    aff_a += step(6);
    aff_b += step(7);
  }

  void build_cache(const Keyframe& reference, TrackingMode mode) {
    cache_.assign(config_.pyramid_levels, {});
    VOBENCH_REQUIRE(int(reference.pyramid.size()) >= config_.pyramid_levels,
                    "track_frame: reference pyramid too shallow");
    const double host_scale = std::exp(-reference.frame.affine_a);
    for (int level = 0; level < config_.pyramid_levels; ++level) {
      auto& lc = cache_[level];
      const Image& img = reference.pyramid[level];
      const CameraIntrinsics& intr = reference.intr_pyr[level];
      const double inv_scale = 1.0 / double(1 << level);
      const auto& pattern = ResidualPattern::standard();
      for (const auto& pt : reference.active_points) {
        if (!pt.depth_valid || pt.status != PointStatus::kActive) continue;
        CachedPoint cp;
        cp.pixel = pt.pixel * inv_scale;
        cp.idepth = pt.inverse_depth;
        int n_valid = 0;
        for (int k = 0; k < ResidualPattern::kSize; ++k) {
          const Vec2 p = cp.pixel + pattern.offsets[k].cast<double>();
          if (p.x() < kPatternBorder || p.y() < kPatternBorder ||
              p.x() > intr.width - 1 - kPatternBorder ||
              p.y() > intr.height - 1 - kPatternBorder)
            continue;
          cp.valid[k] = true;
          cp.host_intensity[k] = img.interpolate(p.x(), p.y());
          cp.grad_weight[k] = gradient_weight(img.interpolate_gradient(p.x(), p.y()));
          cp.host_point[k] = backproject(p, pt.inverse_depth, intr);
          ++n_valid;
        }
        // The center offset anchors flow and validity checks, so a point
        // is only usable when it is in bounds at this level.
        if (n_valid < kMinValidPatternOffsets || !cp.valid[0]) continue;
        if (mode == TrackingMode::kInverse) {
          for (int k = 0; k < ResidualPattern::kSize; ++k) {
            if (!cp.valid[k]) continue;
            const Vec2 p = cp.pixel + pattern.offsets[k].cast<double>();
            const Vec2 grad = img.interpolate_derivative(p.x(), p.y());
            Vec8 J;
            J.head<6>() =
                -(grad.transpose() * warp_jacobian(cp.host_point[k], intr)).transpose();
            J(6) = -host_scale * (cp.host_intensity[k] - reference.frame.affine_b);
            J(7) = -1.0;
            cp.jac[k] = J;
          }
        }
        lc.points.push_back(std::move(cp));
      }
      if (mode == TrackingMode::kInverse) {
        auto& H = lc.hessian_ic;
        H.setZero();
        for (const auto& cp : lc.points)
          for (int k = 0; k < ResidualPattern::kSize; ++k)
            if (cp.valid[k])
              H.noalias() += cp.grad_weight[k] * cp.jac[k] * cp.jac[k].transpose();
        lc.hessian_valid = true;
      }
    }
    cache_keyframe_id_ = reference.id;
    cache_mode_ = mode;
  }

  TrackerConfig config_;
  std::vector<LevelCache> cache_;
  int cache_keyframe_id_ = -1;
  TrackingMode cache_mode_ = TrackingMode::kForward;
};

}  // namespace vobench
