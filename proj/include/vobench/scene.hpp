#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <vector>

#include "vobench/common.hpp"
#include "vobench/geometry.hpp"

namespace vobench {

/// Procedural world used to synthesize sequences: a textured ground
/// plane with boxes and ramps as structure stand-ins.
struct SceneConfig {
  double extent = 400.0;        // primitives are placed in [0,extent] x [-60,60]
  double lateral_extent = 120.0;
  int num_boxes = 30;
  double box_min_size = 4.0, box_max_size = 14.0;
  double box_min_height = 2.0, box_max_height = 10.0;
  int num_ramps = 6;
  int texture_octaves = 10;
  double texture_base_wavelength = 24.0;  // meters, halves per octave
  double texture_amplitude = 0.30;
  uint64_t seed = 1;

  static SceneConfig from_file(const KeyValueFile& kv) {
    SceneConfig c;
    c.extent = kv.num_or("extent", c.extent);
    c.lateral_extent = kv.num_or("lateral_extent", c.lateral_extent);
    c.num_boxes = kv.integer_or("num_boxes", c.num_boxes);
    c.box_min_size = kv.num_or("box_min_size", c.box_min_size);
    c.box_max_size = kv.num_or("box_max_size", c.box_max_size);
    c.box_min_height = kv.num_or("box_min_height", c.box_min_height);
    c.box_max_height = kv.num_or("box_max_height", c.box_max_height);
    c.num_ramps = kv.integer_or("num_ramps", c.num_ramps);
    c.texture_octaves = kv.integer_or("texture_octaves", c.texture_octaves);
    c.texture_base_wavelength =
        kv.num_or("texture_base_wavelength", c.texture_base_wavelength);
    c.texture_amplitude = kv.num_or("texture_amplitude", c.texture_amplitude);
    c.seed = uint64_t(kv.num_or("seed", double(c.seed)));
    VOBENCH_REQUIRE(c.extent > 0 && c.lateral_extent > 0, "scene: extent must be positive");
    return c;
  }
};

namespace detail {

// Integer lattice hash -> [0,1). splitmix64-style mixing.
inline double lattice_hash(int64_t x, int64_t y, int64_t z, uint64_t seed) {
  uint64_t h = seed + 0x9e3779b97f4a7c15ull;
  h ^= uint64_t(x) * 0xbf58476d1ce4e5b9ull;
  h = (h ^ (h >> 30)) * 0x94d049bb133111ebull;
  h ^= uint64_t(y) * 0xd6e8feb86659fd93ull;
  h = (h ^ (h >> 27)) * 0xff51afd7ed558ccdull;
  h ^= uint64_t(z) * 0xc2b2ae3d27d4eb4full;
  h = (h ^ (h >> 31)) * 0x9e3779b97f4a7c15ull;
  h ^= h >> 29;
  return double(h >> 11) * (1.0 / 9007199254740992.0);
}

inline double smoothstep5(double t) { return t * t * t * (t * (6 * t - 15) + 10); }

// Trilinear value noise with quintic fade, C1-continuous.
inline double value_noise(const Vec3& p, uint64_t seed) {
  const double fx = std::floor(p.x()), fy = std::floor(p.y()), fz = std::floor(p.z());
  const int64_t ix = int64_t(fx), iy = int64_t(fy), iz = int64_t(fz);
  const double tx = smoothstep5(p.x() - fx);
  const double ty = smoothstep5(p.y() - fy);
  const double tz = smoothstep5(p.z() - fz);
  double c[2][2][2];
  for (int dz = 0; dz < 2; ++dz)
    for (int dy = 0; dy < 2; ++dy)
      for (int dx = 0; dx < 2; ++dx)
        c[dx][dy][dz] = lattice_hash(ix + dx, iy + dy, iz + dz, seed);
  auto lerp = [](double a, double b, double t) { return a + (b - a) * t; };
  const double x00 = lerp(c[0][0][0], c[1][0][0], tx);
  const double x10 = lerp(c[0][1][0], c[1][1][0], tx);
  const double x01 = lerp(c[0][0][1], c[1][0][1], tx);
  const double x11 = lerp(c[0][1][1], c[1][1][1], tx);
  const double y0 = lerp(x00, x10, ty);
  const double y1 = lerp(x01, x11, ty);
  return lerp(y0, y1, tz);
}

}  // namespace detail

struct RayHit {
  double t = 0;       // distance in units of |direction|
  Vec3 point = Vec3::Zero();
  Vec3 normal = Vec3::UnitZ();
};

/// Axis-aligned box resting on the ground plane.
struct Box {
  Vec3 min_corner, max_corner;

  std::optional<double> intersect(const Vec3& o, const Vec3& d) const {
    double t0 = 0, t1 = std::numeric_limits<double>::infinity();
    for (int i = 0; i < 3; ++i) {
      if (std::abs(d[i]) < 1e-15) {
        if (o[i] < min_corner[i] || o[i] > max_corner[i]) return std::nullopt;
        continue;
      }
      double a = (min_corner[i] - o[i]) / d[i];
      double b = (max_corner[i] - o[i]) / d[i];
      if (a > b) std::swap(a, b);
      t0 = std::max(t0, a);
      t1 = std::min(t1, b);
      if (t0 > t1) return std::nullopt;
    }
    return t0 > 1e-9 ? std::optional<double>(t0) : std::nullopt;
  }

  double sdf(const Vec3& p) const {
    const Vec3 c = 0.5 * (min_corner + max_corner);
    const Vec3 h = 0.5 * (max_corner - min_corner);
    const Vec3 q = (p - c).cwiseAbs() - h;
    const Vec3 qp = q.cwiseMax(0.0);
    return qp.norm() + std::min(0.0, q.maxCoeff());
  }

  /// Outward face normal for a point on (or near) the box surface.
  Vec3 normal_at(const Vec3& p) const {
    int axis = 0;
    double sign = 1, best = std::numeric_limits<double>::infinity();
    for (int i = 0; i < 3; ++i) {
      const double dmin = std::abs(p[i] - min_corner[i]);
      const double dmax = std::abs(p[i] - max_corner[i]);
      if (dmin < best) {
        best = dmin;
        axis = i;
        sign = -1;
      }
      if (dmax < best) {
        best = dmax;
        axis = i;
        sign = 1;
      }
    }
    Vec3 n = Vec3::Zero();
    n[axis] = sign;
    return n;
  }
};

/// Wedge ramp: a box clipped by the slanted halfspace
/// z <= z0 + slope * (x - x0) within the box footprint.
struct Ramp {
  Box box;
  double slope = 0.5;  // rise along +x

  std::optional<double> intersect(const Vec3& o, const Vec3& d) const {
    // Intersect the box interval with the halfspace below the slanted top.
    double t0 = 0, t1 = std::numeric_limits<double>::infinity();
    for (int i = 0; i < 3; ++i) {
      if (std::abs(d[i]) < 1e-15) {
        if (o[i] < box.min_corner[i] || o[i] > box.max_corner[i]) return std::nullopt;
        continue;
      }
      double a = (box.min_corner[i] - o[i]) / d[i];
      double b = (box.max_corner[i] - o[i]) / d[i];
      if (a > b) std::swap(a, b);
      t0 = std::max(t0, a);
      t1 = std::min(t1, b);
    }
    // plane: z - z0 - slope*(x - x0) = 0, inside where value <= 0
    const double g0 = plane_value(o);
    const double gd = d.z() - slope * d.x();
    if (std::abs(gd) < 1e-15) {
      if (g0 > 0) return std::nullopt;
    } else {
      const double tp = -g0 / gd;
      if (gd > 0)
        t1 = std::min(t1, tp);
      else
        t0 = std::max(t0, tp);
    }
    if (t0 > t1 || t0 <= 1e-9) return std::nullopt;
    return t0;
  }

  double sdf(const Vec3& p) const {
    const double plane = plane_value(p) / std::sqrt(1.0 + slope * slope);
    return std::max(box.sdf(p), plane);
  }

  Vec3 normal_at(const Vec3& p) const {
    if (std::abs(plane_value(p)) < 1e-6)
      return Vec3(-slope, 0, 1).normalized();
    return box.normal_at(p);
  }

 private:
  double plane_value(const Vec3& p) const {
    return p.z() - box.min_corner.z() - slope * (p.x() - box.min_corner.x());
  }
};

/// Ray-intersectable world with a continuous grayscale texture field.
/// Fully determined by its SceneConfig (seed included).
class Scene {
 public:
  explicit Scene(const SceneConfig& config) : config_(config) {
    std::mt19937_64 rng(config.seed);
    std::uniform_real_distribution<double> ux(0.0, config.extent);
    std::uniform_real_distribution<double> uy(-config.lateral_extent / 2,
                                              config.lateral_extent / 2);
    std::uniform_real_distribution<double> usize(config.box_min_size, config.box_max_size);
    std::uniform_real_distribution<double> uheight(config.box_min_height,
                                                   config.box_max_height);
    for (int i = 0; i < config.num_boxes; ++i) {
      const double x = ux(rng), y = uy(rng);
      const double sx = usize(rng), sy = usize(rng), h = uheight(rng);
      boxes_.push_back({Vec3(x, y, 0), Vec3(x + sx, y + sy, h)});
    }
    for (int i = 0; i < config.num_ramps; ++i) {
      const double x = ux(rng), y = uy(rng);
      const double sx = usize(rng), sy = usize(rng), h = uheight(rng);
      Ramp r;
      r.box = {Vec3(x, y, 0), Vec3(x + sx, y + sy, h)};
      r.slope = h / sx;
      ramps_.push_back(r);
    }
  }

  const SceneConfig& config() const { return config_; }

  /// Nearest surface hit along a ray with unit-or-not direction; t is in
  /// units of |direction|. Ground plane z=0 included.
  std::optional<RayHit> raycast(const Vec3& origin, const Vec3& dir) const {
    double best = std::numeric_limits<double>::infinity();
    const Box* best_box = nullptr;
    const Ramp* best_ramp = nullptr;
    if (dir.z() < 0) {
      const double t = origin.z() / -dir.z();
      if (t > 1e-9) best = t;
    }
    for (const auto& b : boxes_)
      if (auto t = b.intersect(origin, dir))
        if (*t < best) {
          best = *t;
          best_box = &b;
          best_ramp = nullptr;
        }
    for (const auto& r : ramps_)
      if (auto t = r.intersect(origin, dir))
        if (*t < best) {
          best = *t;
          best_box = nullptr;
          best_ramp = &r;
        }
    if (!std::isfinite(best)) return std::nullopt;
    RayHit hit;
    hit.t = best;
    hit.point = origin + best * dir;
    if (best_ramp)
      hit.normal = best_ramp->normal_at(hit.point);
    else if (best_box)
      hit.normal = best_box->normal_at(hit.point);
    else
      hit.normal = Vec3::UnitZ();
    return hit;
  }

  /// Signed distance to the union of all solids (negative inside).
  double signed_distance(const Vec3& p) const {
    double d = p.z();  // ground halfspace
    for (const auto& b : boxes_) d = std::min(d, b.sdf(p));
    for (const auto& r : ramps_) d = std::min(d, r.sdf(p));
    return d;
  }

  /// Terrain height under (x, y) — highest solid surface on a downward ray.
  double height_at(double x, double y) const {
    const auto hit = raycast(Vec3(x, y, 1e5), Vec3(0, 0, -1));
    return hit ? hit->point.z() : 0.0;
  }

  /// Multi-octave value-noise texture sampled at a world point; smooth
  /// and with nonzero gradient almost everywhere, range kept in (0,1).
  /// A nonzero footprint (pixel size on the surface, meters) fades out
  /// octaves finer than the footprint so distant surfaces do not alias.
  double texture(const Vec3& p, double footprint = 0.0) const {
    double v = 0.5;
    double wavelength = config_.texture_base_wavelength;
    double amplitude = config_.texture_amplitude;
    for (int o = 0; o < config_.texture_octaves; ++o) {
      double w = 1.0;
      if (footprint > 0) {
        w = std::clamp(wavelength / (4.0 * footprint) - 0.5, 0.0, 1.0);
        w = w * w * (3 - 2 * w);
      }
      if (w > 0)
        v += w * amplitude *
             (detail::value_noise(p / wavelength, config_.seed + o * 7919) - 0.5);
      wavelength *= 0.5;
      amplitude *= 0.8;
    }
    return std::clamp(v, 0.02, 0.98);
  }

 private:
  SceneConfig config_;
  std::vector<Box> boxes_;
  std::vector<Ramp> ramps_;
};

}  // namespace vobench
