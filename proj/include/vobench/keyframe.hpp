#pragma once

#include <memory>

#include "vobench/photometric.hpp"

namespace vobench {

/// A frame retained in the optimization window. Owns its image pyramid
/// and the active inverse-depth points hosted in it. In stereo modes
/// the rectified right image is kept for static-stereo residuals.
struct Keyframe {
  int id = -1;        // keyframe id (dense, in creation order)
  Frame frame;        // left image, prepared
  std::vector<Image> pyramid;
  std::vector<CameraIntrinsics> intr_pyr;
  Pose world_from_cam;
  std::vector<CandidatePoint> active_points;
  double creation_duration = 0;  // seconds of wall clock
  std::shared_ptr<Frame> right;  // stereo modes only

  void build_pyramids(const CameraIntrinsics& intr, int levels) {
    frame.prepare();
    pyramid = build_pyramid(frame.intensity, levels);
    intr_pyr = pyramid_intrinsics(intr, levels);
  }

  int num_valid_points() const {
    int n = 0;
    for (const auto& p : active_points)
      if (p.depth_valid && p.status == PointStatus::kActive) ++n;
    return n;
  }
};

}  // namespace vobench
