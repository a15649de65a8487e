#pragma once

#include <random>

#include "vobench/image.hpp"
#include "vobench/scene.hpp"

namespace vobench {

/// Hits farther than this are treated as sky (depth sentinel 0).
constexpr double kMaxRenderDistance = 300.0;
constexpr double kSkyIntensity = 0.5;

struct RenderedStereoFrame {
  Image left, right;
  std::vector<float> left_depth;  // z-depth in meters, 0 where sky/no-hit
};

namespace detail {

/// Snaps an intensity onto the 8-bit storage grid so that saving to
/// PGM and loading back is the identity.
inline float quantize_intensity(double v) {
  return float(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)) / 255.f;
}

inline Image render_view(const Scene& scene, const Pose& world_from_cam,
                         const CameraIntrinsics& intr, std::vector<float>* depth_out) {
  Image img(intr.width, intr.height);
  if (depth_out) depth_out->assign(size_t(intr.width) * intr.height, 0.f);
  const Mat3& R = world_from_cam.rotation;
  const Vec3& origin = world_from_cam.translation;
  for (int v = 0; v < intr.height; ++v) {
    for (int u = 0; u < intr.width; ++u) {
      // Direction scaled so that the ray parameter equals z-depth.
      const Vec3 dir_cam((u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, 1.0);
      const Vec3 dir = R * dir_cam;
      const auto hit = scene.raycast(origin, dir);
      const double range = hit ? hit->t * dir.norm() : 0.0;
      if (!hit || range > kMaxRenderDistance) {
        img.at(u, v) = quantize_intensity(kSkyIntensity);
        continue;
      }
      // Pixel footprint on the surface, stretched at grazing incidence.
      const Vec3 d_unit = dir.normalized();
      const double cos_inc = std::max(0.08, std::abs(hit->normal.dot(d_unit)));
      const double footprint = range / intr.fx / cos_inc;
      img.at(u, v) = quantize_intensity(scene.texture(hit->point, footprint));
      if (depth_out) (*depth_out)[size_t(v) * intr.width + u] = float(hit->t);
    }
  }
  return img;
}

}  // namespace detail

/// Ray-casts both rectified cameras at the given left-camera pose
/// (camera-to-world; camera frame: x right, y down, z forward; the
/// right camera sits at +baseline along the left camera's x axis).
/// The depth map is left-aligned z-depth, not ray length.
inline RenderedStereoFrame render_frame(const Scene& scene, const Pose& world_from_left,
                                        const StereoRig& rig) {
  const Vec3& o = world_from_left.translation;
  VOBENCH_REQUIRE(o.z() > scene.height_at(o.x(), o.y()), "render_frame: camera below surface");
  RenderedStereoFrame out;
  out.left = detail::render_view(scene, world_from_left, rig.left, &out.left_depth);
  Pose world_from_right = world_from_left;
  world_from_right.translation += world_from_left.rotation * Vec3(rig.baseline, 0, 0);
  out.right = detail::render_view(scene, world_from_right, rig.right, nullptr);
  return out;
}

/// Optional additive Gaussian intensity noise for robustness tests.
inline void add_intensity_noise(Image& img, double sigma, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, sigma);
  for (auto& v : img.data()) v = detail::quantize_intensity(double(v) + n(rng));
}

}  // namespace vobench
