#include "dirm/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace dirm {

namespace {

constexpr double kEps = 1e-12;

// Cross product of (b - a) and (p - a); > 0 means p lies left of a->b.
double cross(const Vec2& a, const Vec2& b, const Vec2& p) {
  return (b.x() - a.x()) * (p.y() - a.y()) - (b.y() - a.y()) * (p.x() - a.x());
}

Vec2 edge_intersection(const Vec2& a, const Vec2& b, const Vec2& p, const Vec2& q) {
  const double dp = cross(a, b, p);
  const double dq = cross(a, b, q);
  const double t = dp / (dp - dq);
  return p + t * (q - p);
}

struct Aabb {
  double min_x, max_x, min_y, max_y;
};

Aabb bev_aabb(const Box7& b) {
  const double c = std::abs(std::cos(b.theta));
  const double s = std::abs(std::sin(b.theta));
  const double ex = 0.5 * (b.l * c + b.w * s);
  const double ey = 0.5 * (b.l * s + b.w * c);
  return {b.x - ex, b.x + ex, b.y - ey, b.y + ey};
}

bool aabb_disjoint(const Aabb& a, const Aabb& b) {
  return a.max_x < b.min_x || b.max_x < a.min_x || a.max_y < b.min_y || b.max_y < a.min_y;
}

}  // namespace

bool Box7::valid() const {
  return std::isfinite(x) && std::isfinite(y) && std::isfinite(z) && l > 0.0 && w > 0.0 &&
         h > 0.0 && theta > -std::numbers::pi - kEps && theta <= std::numbers::pi + kEps;
}

double normalize_angle(double theta) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  double t = std::fmod(theta + std::numbers::pi, two_pi);
  if (t <= 0.0) t += two_pi;
  return t - std::numbers::pi;
}

double ConvexPolygon::area() const {
  if (vertices.size() < 3) return 0.0;
  double s = 0.0;
  for (size_t i = 0, n = vertices.size(); i < n; ++i) {
    const Vec2& p = vertices[i];
    const Vec2& q = vertices[(i + 1) % n];
    s += p.x() * q.y() - q.x() * p.y();
  }
  return std::max(0.0, 0.5 * s);
}

bool ConvexPolygon::contains(const Vec2& p) const {
  if (vertices.size() < 3) return false;
  for (size_t i = 0, n = vertices.size(); i < n; ++i) {
    if (cross(vertices[i], vertices[(i + 1) % n], p) < -kEps) return false;
  }
  return true;
}

ConvexPolygon bev_corners(const Box7& box) {
  const Vec2 c = box.center();
  const Vec2 u{std::cos(box.theta), std::sin(box.theta)};
  const Vec2 v{-u.y(), u.x()};
  const Vec2 hu = 0.5 * box.l * u;
  const Vec2 hv = 0.5 * box.w * v;
  return ConvexPolygon{{c + hu + hv, c - hu + hv, c - hu - hv, c + hu - hv}};
}

ConvexPolygon polygon_clip(const ConvexPolygon& subject, const ConvexPolygon& clip) {
  if (subject.empty() || clip.empty()) return {};
  std::vector<Vec2> out = subject.vertices;
  const size_t cn = clip.vertices.size();
  for (size_t e = 0; e < cn && !out.empty(); ++e) {
    const Vec2& a = clip.vertices[e];
    const Vec2& b = clip.vertices[(e + 1) % cn];
    std::vector<Vec2> in;
    in.swap(out);
    for (size_t i = 0, n = in.size(); i < n; ++i) {
      const Vec2& cur = in[i];
      const Vec2& nxt = in[(i + 1) % n];
      const bool cur_in = cross(a, b, cur) >= -kEps;
      const bool nxt_in = cross(a, b, nxt) >= -kEps;
      if (cur_in) out.push_back(cur);
      if (cur_in != nxt_in) out.push_back(edge_intersection(a, b, cur, nxt));
    }
  }
  // Drop repeated consecutive vertices left behind by grazing contacts.
  std::vector<Vec2> dedup;
  dedup.reserve(out.size());
  for (const Vec2& p : out) {
    if (dedup.empty() || (p - dedup.back()).norm() > kEps) dedup.push_back(p);
  }
  while (dedup.size() > 1 && (dedup.front() - dedup.back()).norm() <= kEps) dedup.pop_back();
  if (dedup.size() < 3) return {};
  return ConvexPolygon{std::move(dedup)};
}

double rotated_iou_bev(const Box7& a, const Box7& b) {
  if (aabb_disjoint(bev_aabb(a), bev_aabb(b))) return 0.0;
  const double inter = polygon_clip(bev_corners(a), bev_corners(b)).area();
  if (inter <= 0.0) return 0.0;
  const double uni = a.bev_area() + b.bev_area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

double iou_3d(const Box7& a, const Box7& b) {
  const double z_lo = std::max(a.z - 0.5 * a.h, b.z - 0.5 * b.h);
  const double z_hi = std::min(a.z + 0.5 * a.h, b.z + 0.5 * b.h);
  const double dz = z_hi - z_lo;
  if (dz <= 0.0) return 0.0;
  if (aabb_disjoint(bev_aabb(a), bev_aabb(b))) return 0.0;
  const double inter_area = polygon_clip(bev_corners(a), bev_corners(b)).area();
  const double inter_vol = inter_area * dz;
  if (inter_vol <= 0.0) return 0.0;
  const double uni = a.volume() + b.volume() - inter_vol;
  return uni > 0.0 ? inter_vol / uni : 0.0;
}

std::vector<int> rotated_nms(std::span<const Box7> boxes,
                             std::span<const double> scores,
                             double iou_thresh) {
  std::vector<int> order(boxes.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });
  std::vector<int> kept;
  for (int idx : order) {
    bool suppressed = false;
    for (int k : kept) {
      if (rotated_iou_bev(boxes[idx], boxes[k]) > iou_thresh) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(idx);
  }
  return kept;
}

}  // namespace dirm
