#pragma once

#include <memory>

#include "vobench/keyframe.hpp"
#include "vobench/stereo.hpp"

namespace vobench {

struct BundleAdjustOptions {
  int max_iterations = 10;
  double convergence = 1e-6;     // relative change of total cost
  double huber_gamma = kDefaultHuberGamma;
  double outlier_gamma_factor = 3.0;  // pattern-mean |r| beyond this * gamma
  int outlier_patience = 2;           // consecutive saturated iterations
  double affine_prior = 1.0;          // scaled by observation count / 1000
  // Strength of the per-point inverse-depth measurement prior (points
  // carrying idepth_prior_variance > 0). 1 means a one-sigma depth
  // deviation costs as much as a full residual pattern at the Huber
  // knee; 0 disables the priors.
  double idepth_prior_scale = 1.0;
  bool use_static_stereo = false;     // stereo/lite: host left-right residuals
  double baseline = 0;                // required when use_static_stereo
  int pyramid_level = 0;
  int max_damped_retries = 5;
};

/// Physically plausible inverse-depth range for optimized points;
/// outside it a point cannot correspond to renderable scene geometry
/// and is treated as an outlier.
constexpr double kMinInverseDepth = 1.0 / 500.0;  // 1/m
constexpr double kMaxInverseDepth = 2.0;          // 1/m

struct BundleAdjustReport {
  bool converged = false;
  int iterations = 0;
  double initial_cost = 0;  // mean weighted Huber cost per valid offset
  double final_cost = 0;
  int dropped_observations = 0;
};

namespace detail {

struct BAPointCache {
  int host_idx = -1;
  CandidatePoint* point = nullptr;
  Vec2 pixel_level;  // at the optimized pyramid level
  std::array<bool, ResidualPattern::kSize> valid{};
  std::array<double, ResidualPattern::kSize> host_intensity{};
  std::array<double, ResidualPattern::kSize> grad_weight{};
  std::vector<uint8_t> saturation;  // per window frame
  std::vector<uint8_t> dropped;     // per window frame (sticky within one BA)
  uint8_t stereo_saturation = 0;
  bool stereo_dropped = false;
  int observations = 0;
  double hdd = 0;  // final information on the inverse depth
};

}  // namespace detail

/// Sliding-window photometric bundle adjustment: joint Gauss-Newton
/// (with Levenberg damping) over all window keyframe poses except the
/// gauge-fixed first one, per-frame brightness parameters, and every
/// active inverse depth. Stereo modes add a static left-right residual
/// per point that pins metric scale. Persistently Huber-saturated
/// observations are dropped.
class WindowOptimizer {
 public:
  explicit WindowOptimizer(BundleAdjustOptions opts) : opts_(opts) {
    if (opts_.use_static_stereo)
      VOBENCH_REQUIRE(opts_.baseline > 0, "bundle adjust: stereo residuals need a baseline");
  }

  BundleAdjustReport run(std::vector<std::shared_ptr<Keyframe>>& window) {
    VOBENCH_REQUIRE(window.size() >= 2, "bundle adjust: need at least 2 keyframes");
    const int K = int(window.size());
    const int nf = 8 * (K - 1);  // first keyframe fixed (gauge)
    build_cache(window);

    BundleAdjustReport report;
    double lambda = 1e-4;
    auto [cost, n_obs] = evaluate(window, true);
    report.initial_cost = n_obs ? cost / n_obs : 0.0;

    int damped_retries = 0;
    for (int iter = 0; iter < opts_.max_iterations; ++iter) {
      Eigen::MatrixXd hred = Eigen::MatrixXd::Zero(nf, nf);
      Eigen::VectorXd bred = Eigen::VectorXd::Zero(nf);
      accumulate(window, hred, bred, lambda);

      Eigen::VectorXd delta_f = Eigen::VectorXd::Zero(nf);
      if (nf > 0) {
        Eigen::MatrixXd hd = hred;
        for (int i = 0; i < nf; ++i) hd(i, i) *= (1.0 + lambda);
        delta_f = hd.ldlt().solve(bred);
        if (!delta_f.allFinite())
          throw Error("bundle adjust: rank-deficient normal equations");
      }

      // Snapshot for rejection rollback.
      const auto poses = snapshot_poses(window);
      const auto affines = snapshot_affines(window);
      const auto idepths = snapshot_idepths();

      apply_frame_step(window, delta_f);
      back_substitute_depths(window, delta_f, lambda);

      auto [cost_new, n_new] = evaluate(window, false);
      const double mean_old = n_obs ? cost / n_obs : 0.0;
      const double mean_new = n_new ? cost_new / n_new : std::numeric_limits<double>::infinity();
      if (std::getenv("VOBENCH_BA_DEBUG")) {
        int ndrop = 0, nsdrop = 0;
        for (const auto& c : cache_) {
          for (auto d : c.dropped) ndrop += d;
          nsdrop += c.stereo_dropped;
        }
        std::fprintf(stderr,
                     "  ba it %d lam %.2g mean %.6g -> %.6g n %d->%d drop %d sdrop %d "
                     "lastT %.3f,%.3f,%.3f\n",
                     iter, lambda, mean_old, mean_new, n_obs, n_new, ndrop, nsdrop,
                     window.back()->world_from_cam.translation.x(),
                     window.back()->world_from_cam.translation.y(),
                     window.back()->world_from_cam.translation.z());
      }
      if (mean_new <= mean_old + 1e-14) {
        lambda = std::max(1e-9, lambda * 0.5);
        damped_retries = 0;
        update_saturation(window);
        // Re-baseline on the post-drop observation set: otherwise the
        // next acceptance test compares a mean without the dropped
        // high-cost residuals against one that still includes them,
        // which accepts any step.
        std::tie(cost, n_obs) = evaluate(window, false);
        ++report.iterations;
        if (mean_old - mean_new < opts_.convergence * std::max(mean_old, 1e-12)) {
          report.converged = true;
          break;
        }
      } else {
        restore(window, poses, affines, idepths);
        lambda *= 10.0;
        if (++damped_retries >= opts_.max_damped_retries) break;
        --iter;  // retry the same iteration with more damping
      }
    }

    finalize(window);
    auto [cost_final, n_final] = evaluate(window, false);
    report.final_cost = n_final ? cost_final / n_final : 0.0;
    for (const auto& c : cache_) {
      for (auto d : c.dropped) report.dropped_observations += d;
      report.dropped_observations += c.stereo_dropped;
    }
    return report;
  }

  /// Total photometric cost of the window at its current state (no
  /// priors); usable as an objective probe without optimizing.
  static double photometric_cost(const std::vector<std::shared_ptr<Keyframe>>& window,
                                 const BundleAdjustOptions& opts) {
    WindowOptimizer wo(opts);
    auto kfs = window;
    wo.build_cache(kfs);
    auto [cost, n] = wo.evaluate(kfs, false);
    (void)n;
    return cost;
  }

 private:
  struct Obs {
    bool valid = false;
    int num_valid = 0;
    double cost = 0;
    double mean_abs_r = 0;
    std::array<double, ResidualPattern::kSize> r{};
    std::array<bool, ResidualPattern::kSize> ok{};
    std::array<Vec2, ResidualPattern::kSize> px{};
    std::array<Vec3, ResidualPattern::kSize> xt{};
    std::array<Vec3, ResidualPattern::kSize> xh{};
  };

  void build_cache(std::vector<std::shared_ptr<Keyframe>>& window) {
    cache_.clear();
    const int K = int(window.size());
    const int level = opts_.pyramid_level;
    const double inv_scale = 1.0 / double(1 << level);
    const auto& pattern = ResidualPattern::standard();
    for (int h = 0; h < K; ++h) {
      Keyframe& kf = *window[h];
      VOBENCH_REQUIRE(int(kf.pyramid.size()) > level, "bundle adjust: pyramid too shallow");
      const Image& img = kf.pyramid[level];
      const CameraIntrinsics& intr = kf.intr_pyr[level];
      for (auto& pt : kf.active_points) {
        if (!pt.depth_valid || pt.status != PointStatus::kActive) continue;
        detail::BAPointCache c;
        c.host_idx = h;
        c.point = &pt;
        c.pixel_level = pt.pixel * inv_scale;
        c.saturation.assign(K, 0);
        c.dropped.assign(K, 0);
        int n_valid = 0;
        for (int k = 0; k < ResidualPattern::kSize; ++k) {
          const Vec2 p = c.pixel_level + pattern.offsets[k].cast<double>();
          if (p.x() < kPatternBorder || p.y() < kPatternBorder ||
              p.x() > intr.width - 1 - kPatternBorder ||
              p.y() > intr.height - 1 - kPatternBorder)
            continue;
          c.valid[k] = true;
          c.host_intensity[k] = img.interpolate(p.x(), p.y());
          c.grad_weight[k] = gradient_weight(img.interpolate_gradient(p.x(), p.y()));
          ++n_valid;
        }
        if (n_valid >= kMinValidPatternOffsets) cache_.push_back(std::move(c));
      }
    }
  }

  Obs evaluate_obs(const detail::BAPointCache& c,
                   const std::vector<std::shared_ptr<Keyframe>>& window, int target_idx,
                   bool stereo) const {
    Obs out;
    const int level = opts_.pyramid_level;
    const Keyframe& host = *window[c.host_idx];
    const CameraIntrinsics& intr = host.intr_pyr[level];
    const auto& pattern = ResidualPattern::standard();

    const Image* timg = nullptr;
    Pose t_from_h;
    double aff_a = 0, aff_b = 0, host_a = host.frame.affine_a,
           host_b = host.frame.affine_b;
    if (stereo) {
      timg = &host.right->intensity;  // full resolution only
      t_from_h = Pose{Mat3::Identity(), Vec3(-opts_.baseline, 0, 0)};
    } else {
      const Keyframe& target = *window[target_idx];
      timg = &target.pyramid[level];
      t_from_h = target.world_from_cam.inverse() * host.world_from_cam;
      aff_a = target.frame.affine_a;
      aff_b = target.frame.affine_b;
    }
    const double scale = std::exp(aff_a - host_a);

    for (int k = 0; k < ResidualPattern::kSize; ++k) {
      if (!c.valid[k]) continue;
      const Vec2 p = c.pixel_level + pattern.offsets[k].cast<double>();
      const Vec3 xh = backproject(p, c.point->inverse_depth, intr);
      const Vec3 xt = t_from_h * xh;
      if (xt.z() <= 0) return out;
      const Vec2 pt(intr.fx * xt.x() / xt.z() + intr.cx,
                    intr.fy * xt.y() / xt.z() + intr.cy);
      if (pt.x() < kPatternBorder || pt.y() < kPatternBorder ||
          pt.x() > intr.width - 1 - kPatternBorder ||
          pt.y() > intr.height - 1 - kPatternBorder)
        continue;
      const double it = timg->interpolate(pt.x(), pt.y());
      const double r = (it - aff_b) - scale * (c.host_intensity[k] - host_b);
      out.r[k] = r;
      out.ok[k] = true;
      out.px[k] = pt;
      out.xt[k] = xt;
      out.xh[k] = xh;
      out.cost += c.grad_weight[k] * huber(r, opts_.huber_gamma);
      out.mean_abs_r += std::abs(r);
      ++out.num_valid;
    }
    out.valid = out.num_valid >= kMinValidPatternOffsets;
    if (out.valid) out.mean_abs_r /= out.num_valid;
    return out;
  }

  /// Weight of a point's inverse-depth measurement prior, in the same
  /// units as the weighted photometric costs (see idepth_prior_scale).
  double prior_weight(const detail::BAPointCache& c) const {
    if (opts_.idepth_prior_scale <= 0 || c.point->idepth_prior_variance <= 0 ||
        c.point->status != PointStatus::kActive)
      return 0.0;
    return opts_.idepth_prior_scale * opts_.huber_gamma * opts_.huber_gamma *
           ResidualPattern::kSize / c.point->idepth_prior_variance;
  }

  /// Robust (Huber) down-weighting of a prior residual: beyond two
  /// sigma the prior's pull saturates, so a grossly wrong stereo
  /// measurement (e.g. an occlusion-edge mismatch) cannot keep dragging
  /// a point whose temporal observations clearly disagree.
  double prior_huber_weight(const detail::BAPointCache& c) const {
    const double knee = 2.0 * std::sqrt(c.point->idepth_prior_variance);
    const double d = std::abs(c.point->inverse_depth - c.point->idepth_prior);
    return d <= knee ? 1.0 : knee / d;
  }

  bool stereo_enabled(const std::vector<std::shared_ptr<Keyframe>>& window,
                      int host_idx) const {
    return opts_.use_static_stereo && opts_.pyramid_level == 0 &&
           window[host_idx]->right != nullptr;
  }

  std::pair<double, int> evaluate(const std::vector<std::shared_ptr<Keyframe>>& window,
                                  bool) const {
    double cost = 0;
    int n = 0;
    const int K = int(window.size());
    for (const auto& c : cache_) {
      for (int t = 0; t < K; ++t) {
        if (t == c.host_idx || c.dropped[t]) continue;
        const Obs o = evaluate_obs(c, window, t, false);
        if (!o.valid) continue;
        cost += o.cost;
        n += o.num_valid;
      }
      if (stereo_enabled(window, c.host_idx) && !c.stereo_dropped) {
        const Obs o = evaluate_obs(c, window, -1, true);
        if (o.valid) {
          cost += o.cost;
          n += o.num_valid;
        }
      }
      if (const double wp = prior_weight(c); wp > 0) {
        const double d = c.point->inverse_depth - c.point->idepth_prior;
        const double knee = 2.0 * std::sqrt(c.point->idepth_prior_variance);
        const double ad = std::abs(d);
        cost += wp * (ad <= knee ? d * d : knee * (2.0 * ad - knee));
        n += 1;
      }
    }
    return {cost, n};
  }

  static Eigen::Matrix<double, 2, 3> proj_jacobian(const Vec3& x,
                                                   const CameraIntrinsics& intr) {
    const double iz = 1.0 / x.z();
    Eigen::Matrix<double, 2, 3> dpi;
    dpi << intr.fx * iz, 0, -intr.fx * x.x() * iz * iz,  //
        0, intr.fy * iz, -intr.fy * x.y() * iz * iz;
    return dpi;
  }

  // Schur-complement accumulation: dense frame block, per-point scalar
  // depth blocks folded in immediately.
  void accumulate(const std::vector<std::shared_ptr<Keyframe>>& window,
                  Eigen::MatrixXd& hred, Eigen::VectorXd& bred, double lambda) {
    const int K = int(window.size());
    const int nf = 8 * (K - 1);
    point_hdd_.assign(cache_.size(), 0.0);
    point_bd_.assign(cache_.size(), 0.0);
    point_hfd_.assign(cache_.size(), Eigen::VectorXd::Zero(nf));
    int total_obs = 0;

    for (size_t pi = 0; pi < cache_.size(); ++pi) {
      const auto& c = cache_[pi];
      const Keyframe& host = *window[c.host_idx];
      const CameraIntrinsics& intr = host.intr_pyr[opts_.pyramid_level];
      double& hdd = point_hdd_[pi];
      double& bd = point_bd_[pi];
      Eigen::VectorXd& hfd = point_hfd_[pi];
      const double id = c.point->inverse_depth;

      for (int t = 0; t < K; ++t) {
        if (t == c.host_idx || c.dropped[t]) continue;
        const Obs o = evaluate_obs(c, window, t, false);
        if (!o.valid) continue;
        const Keyframe& target = *window[t];
        const Pose t_from_h = target.world_from_cam.inverse() * host.world_from_cam;
        const double scale =
            std::exp(target.frame.affine_a - host.frame.affine_a);
        const int bh = 8 * (c.host_idx - 1);
        const int bt = 8 * (t - 1);
        for (int k = 0; k < ResidualPattern::kSize; ++k) {
          if (!o.ok[k]) continue;
          const double w =
              c.grad_weight[k] * huber_weight(o.r[k], opts_.huber_gamma);
          const Eigen::Matrix<double, 2, 3> dpi = proj_jacobian(o.xt[k], intr);
          const Vec2 grad =
              target.pyramid[opts_.pyramid_level].interpolate_derivative(o.px[k].x(),
                                                                         o.px[k].y());
          const Eigen::RowVector3d gdpi = grad.transpose() * dpi;

          // Depth: d x_t / d id = -(R_th x_h) / id
          const Vec3 rxh = o.xt[k] - t_from_h.translation;
          const double jd = gdpi * (-rxh / id);

          Eigen::VectorXd jf = Eigen::VectorXd::Zero(nf);
          if (bt >= 0) {
            Eigen::Matrix<double, 3, 6> dxt;
            dxt.leftCols<3>() = Mat3::Identity();
            dxt.rightCols<3>() = -se3::hat(o.xt[k]);
            jf.segment<6>(bt) = (gdpi * dxt).transpose();
            jf(bt + 6) = -scale * (c.host_intensity[k] - host.frame.affine_b);
            jf(bt + 7) = -1.0;
          }
          if (bh >= 0) {
            Eigen::Matrix<double, 3, 6> dxh;
            dxh.leftCols<3>() = Mat3::Identity();
            dxh.rightCols<3>() = -se3::hat(o.xh[k]);
            jf.segment<6>(bh) -=
                (gdpi * t_from_h.rotation * dxh).transpose();
            jf(bh + 6) += scale * (c.host_intensity[k] - host.frame.affine_b);
            jf(bh + 7) += scale;
          }

          hred.noalias() += w * jf * jf.transpose();
          bred.noalias() -= w * jf * o.r[k];
          hfd.noalias() += w * jf * jd;
          hdd += w * jd * jd;
          bd -= w * jd * o.r[k];
          ++total_obs;
        }
      }

      if (stereo_enabled(window, c.host_idx) && !c.stereo_dropped) {
        const Obs o = evaluate_obs(c, window, -1, true);
        if (o.valid) {
          const Image& rimg = host.right->intensity;
          for (int k = 0; k < ResidualPattern::kSize; ++k) {
            if (!o.ok[k]) continue;
            const double w =
                c.grad_weight[k] * huber_weight(o.r[k], opts_.huber_gamma);
            const Eigen::Matrix<double, 2, 3> dpi = proj_jacobian(o.xt[k], intr);
            const Vec2 grad = rimg.interpolate_derivative(o.px[k].x(), o.px[k].y());
            const double jd = (grad.transpose() * dpi * (-o.xh[k] / id))(0);
            hdd += w * jd * jd;
            bd -= w * jd * o.r[k];
            ++total_obs;
          }
        }
      }

      if (const double wp = prior_weight(c); wp > 0) {
        const double hw = wp * prior_huber_weight(c);
        hdd += hw;
        bd -= hw * (id - c.point->idepth_prior);
        ++total_obs;
      }

      // Fold the point into the reduced frame system.
      if (hdd > 1e-12 && nf > 0) {
        const double hdd_damped = hdd * (1.0 + lambda);
        hred.noalias() -= hfd * (hfd.transpose() / hdd_damped);
        bred.noalias() -= hfd * (bd / hdd_damped);
      }
    }

    // Weak prior pulling per-frame brightness parameters toward zero.
    const double pw = opts_.affine_prior * std::max(total_obs, 1) / 1000.0;
    for (int f = 1; f < K; ++f) {
      const int b = 8 * (f - 1);
      hred(b + 6, b + 6) += pw;
      hred(b + 7, b + 7) += pw;
      bred(b + 6) -= pw * window[f]->frame.affine_a;
      bred(b + 7) -= pw * window[f]->frame.affine_b;
    }
  }

  std::vector<Pose> snapshot_poses(const std::vector<std::shared_ptr<Keyframe>>& w) const {
    std::vector<Pose> out;
    for (const auto& kf : w) out.push_back(kf->world_from_cam);
    return out;
  }
  std::vector<Vec2> snapshot_affines(const std::vector<std::shared_ptr<Keyframe>>& w) const {
    std::vector<Vec2> out;
    for (const auto& kf : w) out.emplace_back(kf->frame.affine_a, kf->frame.affine_b);
    return out;
  }
  std::vector<double> snapshot_idepths() const {
    std::vector<double> out;
    for (const auto& c : cache_) out.push_back(c.point->inverse_depth);
    return out;
  }

  void restore(std::vector<std::shared_ptr<Keyframe>>& w, const std::vector<Pose>& poses,
               const std::vector<Vec2>& affines, const std::vector<double>& idepths) {
    for (size_t i = 0; i < w.size(); ++i) {
      w[i]->world_from_cam = poses[i];
      w[i]->frame.affine_a = affines[i].x();
      w[i]->frame.affine_b = affines[i].y();
    }
    for (size_t i = 0; i < cache_.size(); ++i) cache_[i].point->inverse_depth = idepths[i];
  }

  void apply_frame_step(std::vector<std::shared_ptr<Keyframe>>& window,
                        const Eigen::VectorXd& delta_f) {
    for (size_t f = 1; f < window.size(); ++f) {
      const int b = 8 * (int(f) - 1);
      const Vec6 twist = delta_f.segment<6>(b);
      // Increment acts on camera-from-world.
      window[f]->world_from_cam = window[f]->world_from_cam * Pose::exp(-twist);
      window[f]->frame.affine_a += delta_f(b + 6);
      window[f]->frame.affine_b += delta_f(b + 7);
    }
  }

  void back_substitute_depths(const std::vector<std::shared_ptr<Keyframe>>& window,
                              const Eigen::VectorXd& delta_f, double lambda) {
    (void)window;
    for (size_t pi = 0; pi < cache_.size(); ++pi) {
      const double hdd = point_hdd_[pi];
      if (hdd <= 1e-12) continue;
      const double hdd_damped = hdd * (1.0 + lambda);
      const double num = point_bd_[pi] - (delta_f.size()
                                              ? point_hfd_[pi].dot(delta_f)
                                              : 0.0);
      double delta = num / hdd_damped;
      double& id = cache_[pi].point->inverse_depth;
      // Weakly constrained (far) points have a near-singular depth
      // block; an unrestricted Newton step can fling them to infinity
      // where they still vote on the poses with meaningless geometry.
      // Limit each update to a 50% relative change and drop points that
      // leave the physically renderable depth range for good.
      const double max_step = 0.5 * id;
      delta = std::clamp(delta, -max_step, max_step);
      id += delta;
      if (id < kMinInverseDepth || id > kMaxInverseDepth) {
        cache_[pi].point->status = PointStatus::kDropped;
        cache_[pi].point->depth_valid = false;
        for (auto& d : cache_[pi].dropped) d = 1;
        cache_[pi].stereo_dropped = true;
      }
    }
  }

  void update_saturation(const std::vector<std::shared_ptr<Keyframe>>& window) {
    const double limit = opts_.outlier_gamma_factor * opts_.huber_gamma;
    const int K = int(window.size());
    for (auto& c : cache_) {
      for (int t = 0; t < K; ++t) {
        if (t == c.host_idx || c.dropped[t]) continue;
        const Obs o = evaluate_obs(c, window, t, false);
        if (!o.valid) continue;
        if (o.mean_abs_r > limit) {
          if (++c.saturation[t] >= opts_.outlier_patience) c.dropped[t] = 1;
        } else {
          c.saturation[t] = 0;
        }
      }
      if (stereo_enabled(window, c.host_idx) && !c.stereo_dropped) {
        const Obs o = evaluate_obs(c, window, -1, true);
        if (o.valid && o.mean_abs_r > limit) {
          if (++c.stereo_saturation >= opts_.outlier_patience) c.stereo_dropped = true;
        } else {
          c.stereo_saturation = 0;
        }
      }
    }
  }

  // Final per-point information and observation counts, written back to
  // the points (variance of the inverse depth = 1 / H_dd).
  void finalize(const std::vector<std::shared_ptr<Keyframe>>& window) {
    const int K = int(window.size());
    for (auto& c : cache_) {
      const Keyframe& host = *window[c.host_idx];
      const CameraIntrinsics& intr = host.intr_pyr[opts_.pyramid_level];
      double hdd = 0;
      int obs = 0;
      const double id = c.point->inverse_depth;
      for (int t = 0; t < K; ++t) {
        if (t == c.host_idx || c.dropped[t]) continue;
        const Obs o = evaluate_obs(c, window, t, false);
        if (!o.valid) continue;
        const Keyframe& target = *window[t];
        const Pose t_from_h = target.world_from_cam.inverse() * host.world_from_cam;
        for (int k = 0; k < ResidualPattern::kSize; ++k) {
          if (!o.ok[k]) continue;
          const double w = c.grad_weight[k] * huber_weight(o.r[k], opts_.huber_gamma);
          const Vec3 rxh = o.xt[k] - t_from_h.translation;
          const Vec2 grad = target.pyramid[opts_.pyramid_level].interpolate_derivative(
              o.px[k].x(), o.px[k].y());
          const double jd = (grad.transpose() * proj_jacobian(o.xt[k], intr) *
                             (-rxh / id))(0);
          hdd += w * jd * jd;
        }
        ++obs;
      }
      if (stereo_enabled(window, c.host_idx) && !c.stereo_dropped) {
        const Obs o = evaluate_obs(c, window, -1, true);
        if (o.valid) {
          const Image& rimg = host.right->intensity;
          for (int k = 0; k < ResidualPattern::kSize; ++k) {
            if (!o.ok[k]) continue;
            const double w = c.grad_weight[k] * huber_weight(o.r[k], opts_.huber_gamma);
            const Vec2 grad = rimg.interpolate_derivative(o.px[k].x(), o.px[k].y());
            const double jd =
                (grad.transpose() * proj_jacobian(o.xt[k], intr) * (-o.xh[k] / id))(0);
            hdd += w * jd * jd;
          }
          ++obs;
        }
      }
      hdd += prior_weight(c) * prior_huber_weight(c);
      c.hdd = hdd;
      c.observations = obs;
      c.point->observations = obs;
      if (hdd > 1e-12) c.point->depth_variance = 1.0 / hdd;
    }
  }

  BundleAdjustOptions opts_;
  std::vector<detail::BAPointCache> cache_;
  std::vector<double> point_hdd_, point_bd_;
  std::vector<Eigen::VectorXd> point_hfd_;
};

inline BundleAdjustReport bundle_adjust_window(
    std::vector<std::shared_ptr<Keyframe>>& window, const BundleAdjustOptions& opts) {
  WindowOptimizer optimizer(opts);
  return optimizer.run(window);
}

}  // namespace vobench
