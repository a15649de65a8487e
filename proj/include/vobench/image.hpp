#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "vobench/common.hpp"
#include "vobench/geometry.hpp"

namespace vobench {

/// Grayscale image with intensities in [0,1] and precomputed
/// central-difference gradients (forward/backward at the borders).
class Image {
 public:
  Image() = default;

  Image(int width, int height, float fill = 0.f)
      : width_(width), height_(height), data_(size_t(width) * height, fill) {}

  int width() const { return width_; }
  int height() const { return height_; }
  bool empty() const { return data_.empty(); }

  float& at(int x, int y) { return data_[size_t(y) * width_ + x]; }
  float at(int x, int y) const { return data_[size_t(y) * width_ + x]; }

  const std::vector<float>& data() const { return data_; }
  std::vector<float>& data() { return data_; }

  void compute_gradients() {
    gx_.assign(data_.size(), 0.f);
    gy_.assign(data_.size(), 0.f);
    for (int y = 0; y < height_; ++y) {
      for (int x = 0; x < width_; ++x) {
        const int xm = std::max(x - 1, 0), xp = std::min(x + 1, width_ - 1);
        const int ym = std::max(y - 1, 0), yp = std::min(y + 1, height_ - 1);
        gx_[size_t(y) * width_ + x] = (at(xp, y) - at(xm, y)) / float(xp - xm);
        gy_[size_t(y) * width_ + x] = (at(x, yp) - at(x, ym)) / float(yp - ym);
      }
    }
  }

  bool has_gradients() const { return !gx_.empty(); }

  float grad_x(int x, int y) const { return gx_[size_t(y) * width_ + x]; }
  float grad_y(int x, int y) const { return gy_[size_t(y) * width_ + x]; }

  Vec2 gradient(int x, int y) const { return {grad_x(x, y), grad_y(x, y)}; }

  bool in_bounds(double u, double v) const {
    return u >= 0 && v >= 0 && u <= width_ - 1 && v <= height_ - 1;
  }

  /// Bilinear intensity lookup at a real-valued pixel.
  double interpolate(double u, double v) const {
    VOBENCH_REQUIRE(in_bounds(u, v), "interpolate: pixel out of bounds");
    const int x0 = std::min(int(u), width_ - 2 >= 0 ? width_ - 2 : 0);
    const int y0 = std::min(int(v), height_ - 2 >= 0 ? height_ - 2 : 0);
    const double du = u - x0, dv = v - y0;
    return (1 - du) * (1 - dv) * at(x0, y0) + du * (1 - dv) * at(x0 + 1, y0) +
           (1 - du) * dv * at(x0, y0 + 1) + du * dv * at(x0 + 1, y0 + 1);
  }

  /// Bilinear lookup of the precomputed gradient field.
  Vec2 interpolate_gradient(double u, double v) const {
    VOBENCH_REQUIRE(in_bounds(u, v), "interpolate_gradient: pixel out of bounds");
    VOBENCH_REQUIRE(has_gradients(), "interpolate_gradient: gradients not computed");
    const int x0 = std::min(int(u), width_ - 2 >= 0 ? width_ - 2 : 0);
    const int y0 = std::min(int(v), height_ - 2 >= 0 ? height_ - 2 : 0);
    const double du = u - x0, dv = v - y0;
    const auto g = [&](int x, int y) { return Vec2(grad_x(x, y), grad_y(x, y)); };
    return (1 - du) * (1 - dv) * g(x0, y0) + du * (1 - dv) * g(x0 + 1, y0) +
           (1 - du) * dv * g(x0, y0 + 1) + du * dv * g(x0 + 1, y0 + 1);
  }

  /// Exact derivative of the bilinear intensity surface at (u, v).
  /// Used for residual Jacobians so analytic derivatives agree with
  /// finite differences of interpolate() to machine precision; the
  /// central-difference field above remains the smoothed gradient used
  /// for weighting and selection.
  Vec2 interpolate_derivative(double u, double v) const {
    VOBENCH_REQUIRE(in_bounds(u, v), "interpolate_derivative: pixel out of bounds");
    const int x0 = std::min(int(u), width_ - 2 >= 0 ? width_ - 2 : 0);
    const int y0 = std::min(int(v), height_ - 2 >= 0 ? height_ - 2 : 0);
    const double du = u - x0, dv = v - y0;
    const double dx = (1 - dv) * (at(x0 + 1, y0) - at(x0, y0)) +
                      dv * (at(x0 + 1, y0 + 1) - at(x0, y0 + 1));
    const double dy = (1 - du) * (at(x0, y0 + 1) - at(x0, y0)) +
                      du * (at(x0 + 1, y0 + 1) - at(x0 + 1, y0));
    return {dx, dy};
  }

  /// 2x2 box-filtered half-resolution image (odd trailing row/column
  /// padded by edge replication before averaging).
  Image downsample() const {
    const int w2 = (width_ + 1) / 2, h2 = (height_ + 1) / 2;
    Image out(w2, h2);
    for (int y = 0; y < h2; ++y) {
      for (int x = 0; x < w2; ++x) {
        const int x0 = 2 * x, y0 = 2 * y;
        const int x1 = std::min(x0 + 1, width_ - 1), y1 = std::min(y0 + 1, height_ - 1);
        out.at(x, y) =
            0.25f * (at(x0, y0) + at(x1, y0) + at(x0, y1) + at(x1, y1));
      }
    }
    return out;
  }

 private:
  int width_ = 0, height_ = 0;
  std::vector<float> data_;
  std::vector<float> gx_, gy_;
};

/// Binary (P5) 8-bit PGM writer; intensities are quantized from [0,1].
inline void save_pgm(const std::string& path, const Image& img) {
  std::ofstream out(path, std::ios::binary);
  VOBENCH_REQUIRE(out.good(), "cannot write pgm: " + path);
  out << "P5\n" << img.width() << " " << img.height() << "\n255\n";
  std::vector<uint8_t> buf(img.data().size());
  for (size_t i = 0; i < buf.size(); ++i) {
    const float v = std::clamp(img.data()[i], 0.f, 1.f);
    buf[i] = uint8_t(std::lround(v * 255.f));
  }
  out.write(reinterpret_cast<const char*>(buf.data()), buf.size());
}

inline Image load_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  VOBENCH_REQUIRE(in.good(), "cannot open pgm: " + path);
  std::string magic;
  in >> magic;
  VOBENCH_REQUIRE(magic == "P5", "not a binary pgm (P5): " + path);
  int w = 0, h = 0, maxval = 0;
  in >> w >> h >> maxval;
  VOBENCH_REQUIRE(w > 0 && h > 0 && maxval == 255, "unsupported pgm header: " + path);
  in.get();  // single whitespace after header
  std::vector<uint8_t> buf(size_t(w) * h);
  in.read(reinterpret_cast<char*>(buf.data()), buf.size());
  VOBENCH_REQUIRE(in.gcount() == std::streamsize(buf.size()), "truncated pgm: " + path);
  Image img(w, h);
  for (size_t i = 0; i < buf.size(); ++i) img.data()[i] = buf[i] / 255.f;
  return img;
}

}  // namespace vobench
