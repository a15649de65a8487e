#pragma once

#include <cstring>
#include <fstream>
#include <unordered_map>
#include <unordered_set>

#include "vobench/common.hpp"
#include "vobench/geometry.hpp"

namespace vobench {

/// 3D map geometry in the world frame, with optional per-point
/// grayscale color.
struct PointCloud {
  std::vector<Vec3> points;
  std::vector<float> colors;  // empty or same length as points
  std::string source;

  size_t size() const { return points.size(); }

  void validate() const {
    VOBENCH_REQUIRE(colors.empty() || colors.size() == points.size(),
                    "point cloud: color list length mismatch");
    for (const auto& p : points)
      VOBENCH_REQUIRE(p.allFinite(), "point cloud: non-finite coordinate");
  }
};

namespace detail {

struct CellKey {
  int64_t x, y, z;
  bool operator==(const CellKey& o) const { return x == o.x && y == o.y && z == o.z; }
};

struct CellHash {
  size_t operator()(const CellKey& k) const {
    uint64_t h = uint64_t(k.x) * 0x9e3779b97f4a7c15ull;
    h ^= uint64_t(k.y) * 0xbf58476d1ce4e5b9ull + (h << 6);
    h ^= uint64_t(k.z) * 0x94d049bb133111ebull + (h >> 2);
    return size_t(h);
  }
};

inline CellKey cell_of(const Vec3& p, double cell) {
  return {int64_t(std::floor(p.x() / cell)), int64_t(std::floor(p.y() / cell)),
          int64_t(std::floor(p.z() / cell))};
}

}  // namespace detail

/// Uniform hash grid for radius-capped nearest-neighbor queries; cell
/// size equals the search radius so a query visits 27 cells.
class SpatialGrid {
 public:
  SpatialGrid(const PointCloud& cloud, double cell_size)
      : cloud_(cloud), cell_(cell_size) {
    VOBENCH_REQUIRE(cell_size > 0, "spatial grid: cell size must be positive");
    for (size_t i = 0; i < cloud.points.size(); ++i)
      cells_[detail::cell_of(cloud.points[i], cell_)].push_back(int(i));
  }

  /// Index of the nearest point within radius, or -1.
  int nearest_within(const Vec3& q, double radius) const {
    const auto c = detail::cell_of(q, cell_);
    double best_d2 = radius * radius;
    int best = -1;
    for (int64_t dz = -1; dz <= 1; ++dz)
      for (int64_t dy = -1; dy <= 1; ++dy)
        for (int64_t dx = -1; dx <= 1; ++dx) {
          const auto it = cells_.find({c.x + dx, c.y + dy, c.z + dz});
          if (it == cells_.end()) continue;
          for (int idx : it->second) {
            const double d2 = (cloud_.points[idx] - q).squaredNorm();
            if (d2 <= best_d2) {
              best_d2 = d2;
              best = idx;
            }
          }
        }
    return best;
  }

 private:
  const PointCloud& cloud_;
  double cell_;
  std::unordered_map<detail::CellKey, std::vector<int>, detail::CellHash> cells_;
};

/// Keeps one point per voxel (first hit wins); bounds fused-cloud memory.
inline PointCloud voxel_deduplicate(const PointCloud& cloud, double voxel) {
  PointCloud out;
  out.source = cloud.source;
  std::unordered_set<detail::CellKey, detail::CellHash> seen;
  const bool has_color = !cloud.colors.empty();
  for (size_t i = 0; i < cloud.points.size(); ++i) {
    if (!seen.insert(detail::cell_of(cloud.points[i], voxel)).second) continue;
    out.points.push_back(cloud.points[i]);
    if (has_color) out.colors.push_back(cloud.colors[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// PCD (binary little-endian, fields x y z intensity as float32) and
// PLY (ASCII, x y z gray) I/O.
// ---------------------------------------------------------------------------

inline void save_pcd(const std::string& path, const PointCloud& cloud) {
  cloud.validate();
  std::ofstream out(path, std::ios::binary);
  VOBENCH_REQUIRE(out.good(), "cannot write pcd: " + path);
  const size_t n = cloud.size();
  out << "# .PCD v0.7 - Point Cloud Data file format\nVERSION 0.7\n"
      << "FIELDS x y z intensity\nSIZE 4 4 4 4\nTYPE F F F F\nCOUNT 1 1 1 1\n"
      << "WIDTH " << n << "\nHEIGHT 1\nVIEWPOINT 0 0 0 1 0 0 0\nPOINTS " << n
      << "\nDATA binary\n";
  std::vector<float> buf(n * 4);
  for (size_t i = 0; i < n; ++i) {
    buf[4 * i + 0] = float(cloud.points[i].x());
    buf[4 * i + 1] = float(cloud.points[i].y());
    buf[4 * i + 2] = float(cloud.points[i].z());
    buf[4 * i + 3] = cloud.colors.empty() ? 0.f : cloud.colors[i];
  }
  out.write(reinterpret_cast<const char*>(buf.data()),
            std::streamsize(buf.size() * sizeof(float)));
}

inline PointCloud load_pcd(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  VOBENCH_REQUIRE(in.good(), "cannot open pcd: " + path);
  std::string line;
  size_t n = 0;
  bool binary = false;
  while (std::getline(in, line)) {
    std::stringstream ss(line);
    std::string key;
    ss >> key;
    if (key == "POINTS") ss >> n;
    if (key == "FIELDS") {
      std::string rest;
      std::getline(ss, rest);
      VOBENCH_REQUIRE(detail::trim(rest) == "x y z intensity",
                      "pcd: unexpected field layout in " + path);
    }
    if (key == "DATA") {
      std::string mode;
      ss >> mode;
      binary = (mode == "binary");
      break;
    }
  }
  VOBENCH_REQUIRE(binary, "pcd: only binary data supported: " + path);
  PointCloud cloud;
  std::vector<float> buf(n * 4);
  in.read(reinterpret_cast<char*>(buf.data()), std::streamsize(buf.size() * sizeof(float)));
  VOBENCH_REQUIRE(in.gcount() == std::streamsize(buf.size() * sizeof(float)),
                  "pcd: truncated data in " + path);
  for (size_t i = 0; i < n; ++i) {
    cloud.points.emplace_back(buf[4 * i], buf[4 * i + 1], buf[4 * i + 2]);
    cloud.colors.push_back(buf[4 * i + 3]);
  }
  return cloud;
}

inline void save_ply(const std::string& path, const PointCloud& cloud) {
  cloud.validate();
  std::ofstream out(path);
  VOBENCH_REQUIRE(out.good(), "cannot write ply: " + path);
  out << "ply\nformat ascii 1.0\nelement vertex " << cloud.size()
      << "\nproperty float x\nproperty float y\nproperty float z\n"
      << "property float gray\nend_header\n";
  out.precision(9);
  for (size_t i = 0; i < cloud.size(); ++i) {
    out << float(cloud.points[i].x()) << " " << float(cloud.points[i].y()) << " "
        << float(cloud.points[i].z()) << " "
        << (cloud.colors.empty() ? 0.f : cloud.colors[i]) << "\n";
  }
}

inline PointCloud load_ply(const std::string& path) {
  std::ifstream in(path);
  VOBENCH_REQUIRE(in.good(), "cannot open ply: " + path);
  std::string line;
  size_t n = 0;
  while (std::getline(in, line)) {
    std::stringstream ss(line);
    std::string key;
    ss >> key;
    if (key == "element") {
      std::string what;
      ss >> what >> n;
    }
    if (key == "end_header") break;
  }
  PointCloud cloud;
  for (size_t i = 0; i < n; ++i) {
    VOBENCH_REQUIRE(bool(std::getline(in, line)), "ply: truncated vertex list " + path);
    std::stringstream ss(line);
    double x, y, z;
    float g;
    ss >> x >> y >> z >> g;
    cloud.points.emplace_back(x, y, z);
    cloud.colors.push_back(g);
  }
  return cloud;
}

}  // namespace vobench
