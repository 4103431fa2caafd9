#pragma once

#include <cmath>
#include <random>

#include "dirm/geometry.hpp"

namespace dirm::test {

/// Monte-Carlo BEV IoU, independent of the polygon-clipping path: stratified
/// jittered samples over the overlap of the two axis-aligned bounding boxes,
/// membership tested in each box's own frame. grid_n^2 samples total.
inline double mc_iou_bev(const Box7& a, const Box7& b, int grid_n, std::uint64_t seed) {
  const auto aabb = [](const Box7& box) {
    const double c = std::abs(std::cos(box.theta));
    const double s = std::abs(std::sin(box.theta));
    const double ex = 0.5 * (box.l * c + box.w * s);
    const double ey = 0.5 * (box.l * s + box.w * c);
    return std::array<double, 4>{box.x - ex, box.x + ex, box.y - ey, box.y + ey};
  };
  const auto ra = aabb(a);
  const auto rb = aabb(b);
  const double x0 = std::max(ra[0], rb[0]);
  const double x1 = std::min(ra[1], rb[1]);
  const double y0 = std::max(ra[2], rb[2]);
  const double y1 = std::min(ra[3], rb[3]);
  if (x0 >= x1 || y0 >= y1) return 0.0;

  struct Local {
    double cx, cy, ux, uy, hl, hw;
  };
  const auto local = [](const Box7& box) {
    return Local{box.x, box.y, std::cos(box.theta), std::sin(box.theta), 0.5 * box.l,
                 0.5 * box.w};
  };
  const Local la = local(a);
  const Local lb = local(b);
  const auto inside = [](const Local& L, double px, double py) {
    const double dx = px - L.cx;
    const double dy = py - L.cy;
    const double along = dx * L.ux + dy * L.uy;
    const double across = -dx * L.uy + dy * L.ux;
    return std::abs(along) <= L.hl && std::abs(across) <= L.hw;
  };

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double sx = (x1 - x0) / grid_n;
  const double sy = (y1 - y0) / grid_n;
  long hits = 0;
  for (int gi = 0; gi < grid_n; ++gi) {
    for (int gj = 0; gj < grid_n; ++gj) {
      const double px = x0 + (gi + unit(rng)) * sx;
      const double py = y0 + (gj + unit(rng)) * sy;
      if (inside(la, px, py) && inside(lb, px, py)) ++hits;
    }
  }
  const double inter =
      (x1 - x0) * (y1 - y0) * static_cast<double>(hits) / (static_cast<double>(grid_n) * grid_n);
  const double uni = a.l * a.w + b.l * b.w - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

/// Random boxes biased toward interesting overlaps.
inline Box7 random_box(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Box7 box;
  box.x = 10.0 * unit(rng) - 5.0;
  box.y = 10.0 * unit(rng) - 5.0;
  box.z = 2.0 * unit(rng) - 1.0;
  box.l = 0.3 + 3.7 * unit(rng);
  box.w = 0.3 + 3.7 * unit(rng);
  box.h = 0.3 + 2.7 * unit(rng);
  box.theta = normalize_angle((2.0 * unit(rng) - 1.0) * 3.14159265358979323846);
  return box;
}

/// A partner near `base` so that IoU values spread over (0, 1).
inline Box7 random_partner(const Box7& base, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Box7 box = random_box(rng);
  box.x = base.x + (2.0 * unit(rng) - 1.0) * base.l;
  box.y = base.y + (2.0 * unit(rng) - 1.0) * base.w;
  return box;
}

}  // namespace dirm::test
