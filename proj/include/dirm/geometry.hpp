#pragma once

#include <Eigen/Dense>

#include <span>
#include <vector>

namespace dirm {

using Vec2 = Eigen::Vector2d;

/// 7-attribute box: BEV center (x, y), vertical center z, extents (l, w, h),
/// yaw theta in radians measured CCW from +x. l runs along the heading,
/// w perpendicular to it, h vertically.
struct Box7 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
  double l = 1.0;
  double w = 1.0;
  double h = 1.0;
  double theta = 0.0;

  bool valid() const;
  double bev_area() const { return l * w; }
  double volume() const { return l * w * h; }
  Vec2 center() const { return {x, y}; }
};

/// Wraps an angle into (-pi, pi].
double normalize_angle(double theta);

/// Convex polygon with CCW vertex order; empty (< 3 vertices) means area 0.
struct ConvexPolygon {
  std::vector<Vec2> vertices;

  double area() const;
  bool contains(const Vec2& p) const;
  bool empty() const { return vertices.size() < 3; }
};

/// BEV footprint of a box as a CCW rectangle.
ConvexPolygon bev_corners(const Box7& box);

/// Sutherland-Hodgman intersection of two convex CCW polygons.
/// Degenerate (edge/point) contact comes back with area 0.
ConvexPolygon polygon_clip(const ConvexPolygon& subject, const ConvexPolygon& clip);

/// Rotated-rectangle IoU of the BEV footprints, in [0, 1].
double rotated_iou_bev(const Box7& a, const Box7& b);

/// 3D IoU: BEV intersection area times vertical overlap over the 3D union.
double iou_3d(const Box7& a, const Box7& b);

/// Greedy rotated NMS over parallel box/score arrays. Suppresses boxes whose
/// BEV IoU with an already-kept box exceeds iou_thresh. Ties in score break
/// toward the lower original index. Returns kept indices, best score first.
std::vector<int> rotated_nms(std::span<const Box7> boxes,
                             std::span<const double> scores,
                             double iou_thresh);

}  // namespace dirm
