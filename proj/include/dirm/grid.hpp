#pragma once

#include <Eigen/Dense>

#include "dirm/geometry.hpp"

namespace dirm {

/// Cell index on the BEV grid; i runs along x, j along y.
struct Pixel {
  int i = 0;
  int j = 0;

  friend bool operator==(const Pixel&, const Pixel&) = default;
  friend auto operator<=>(const Pixel&, const Pixel&) = default;
};

/// Uniform BEV raster. h cells along x, w cells along y, square cells.
struct BevGrid {
  double origin_x = 0.0;
  double origin_y = 0.0;
  double cell = 0.5;
  int h = 128;
  int w = 128;

  bool valid() const { return cell > 0.0 && h >= 8 && w >= 8; }
  bool contains(Pixel p) const { return p.i >= 0 && p.i < h && p.j >= 0 && p.j < w; }
  int index(Pixel p) const { return p.i * w + p.j; }
  Vec2 pixel_center(Pixel p) const {
    return {origin_x + (p.i + 0.5) * cell, origin_y + (p.j + 0.5) * cell};
  }
  double extent_x() const { return h * cell; }
  double extent_y() const { return w * cell; }
  double diagonal() const { return std::hypot(extent_x(), extent_y()); }
};

/// Dense per-cell features: row c holds channel c, columns flatten (i, j)
/// as i * w + j. Plays the role of the shared BEV feature tensor.
struct FeatureMap {
  int f = 0;
  int h = 0;
  int w = 0;
  Eigen::MatrixXd data;  // f x (h * w)

  FeatureMap() = default;
  FeatureMap(int f_, int h_, int w_)
      : f(f_), h(h_), w(w_), data(Eigen::MatrixXd::Zero(f_, h_ * w_)) {}

  double& at(int c, Pixel p) { return data(c, p.i * w + p.j); }
  double at(int c, Pixel p) const { return data(c, p.i * w + p.j); }
  bool finite() const { return data.allFinite(); }
};

}  // namespace dirm
