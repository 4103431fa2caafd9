#include "dirm/assign.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

namespace dirm {

namespace {

// GTs whose centers share a pixel: the larger BEV area wins the regression
// slot there; the loser still contributes its heatmap splat.
std::vector<std::pair<int, Pixel>> kept_centers(const Frame& frame, const BevGrid& grid,
                                                int* skipped) {
  std::map<std::pair<int, int>, int> owner;
  for (int g = 0; g < static_cast<int>(frame.gts.size()); ++g) {
    const auto px = center_pixel(frame.gts[g].box, grid);
    if (!px) {
      if (skipped) ++(*skipped);
      continue;
    }
    const auto key = std::make_pair(px->i, px->j);
    const auto it = owner.find(key);
    if (it == owner.end() ||
        frame.gts[g].box.bev_area() > frame.gts[it->second].box.bev_area()) {
      owner[key] = g;
    }
  }
  std::vector<std::pair<int, Pixel>> centers;
  centers.reserve(owner.size());
  for (int g = 0; g < static_cast<int>(frame.gts.size()); ++g) {
    const auto px = center_pixel(frame.gts[g].box, grid);
    if (px && owner[{px->i, px->j}] == g) centers.emplace_back(g, *px);
  }
  return centers;
}

void splat_heatmap(AssignmentPlan& plan, const Frame& frame, const BevGrid& grid) {
  for (const GtBox& gt : frame.gts) {
    const auto px = center_pixel(gt.box, grid);
    if (!px) continue;
    const int r = gaussian_radius(gt.box.l / grid.cell, gt.box.w / grid.cell);
    const double sigma = (2.0 * r + 1.0) / 6.0;
    for (int di = -r; di <= r; ++di) {
      for (int dj = -r; dj <= r; ++dj) {
        const Pixel q{px->i + di, px->j + dj};
        if (!grid.contains(q)) continue;
        const double v = std::exp(-(di * di + dj * dj) / (2.0 * sigma * sigma));
        double& cell = plan.heatmap(gt.cls, grid.index(q));
        cell = std::max(cell, v);
      }
    }
  }
}

AssignmentPlan make_plan(const Frame& frame, const BevGrid& grid, int num_classes) {
  if (!grid.valid()) throw std::invalid_argument("assignment: invalid grid");
  for (const GtBox& gt : frame.gts) {
    if (gt.cls < 0 || gt.cls >= num_classes) {
      throw std::invalid_argument("assignment: class id out of range");
    }
  }
  AssignmentPlan plan;
  plan.c = num_classes;
  plan.h = grid.h;
  plan.w = grid.w;
  plan.heatmap = Eigen::MatrixXd::Zero(num_classes, grid.h * grid.w);
  plan.centers = kept_centers(frame, grid, &plan.skipped_out_of_bounds);
  splat_heatmap(plan, frame, grid);
  return plan;
}

void push_sample(AssignmentPlan& plan, AttributeGroup g, int gt_idx, const Box7& gt,
                 Pixel px, double weight, const BevGrid& grid) {
  plan.samples[static_cast<int>(g)].push_back(
      {gt_idx, px, weight, encode_group_target(gt, px, grid, g)});
}

// Candidates ranked by (score desc, pixel lex asc); returns the first n.
std::vector<Pixel> top_candidates(std::vector<Pixel> candidates, std::vector<double> scores,
                                  int n) {
  std::vector<int> order(candidates.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return candidates[a] < candidates[b];
  });
  std::vector<Pixel> out;
  out.reserve(std::min<size_t>(n, order.size()));
  for (int idx : order) {
    if (static_cast<int>(out.size()) >= n) break;
    out.push_back(candidates[idx]);
  }
  return out;
}

}  // namespace

bool plans_bit_equal(const AssignmentPlan& a, const AssignmentPlan& b) {
  if (a.c != b.c || a.h != b.h || a.w != b.w) return false;
  if (a.heatmap != b.heatmap) return false;
  if (a.centers != b.centers) return false;
  for (int g = 0; g < kNumGroups; ++g) {
    if (a.samples[g] != b.samples[g]) return false;
  }
  return true;
}

const char* phase_name(Phase p) { return p == Phase::Static ? "static" : "dynamic"; }

std::optional<Pixel> center_pixel(const Box7& gt, const BevGrid& grid) {
  const Pixel px{static_cast<int>(std::floor((gt.x - grid.origin_x) / grid.cell)),
                 static_cast<int>(std::floor((gt.y - grid.origin_y) / grid.cell))};
  if (!grid.contains(px)) return std::nullopt;
  return px;
}

Vec2 encode_center_offset(const Box7& gt, Pixel px, const BevGrid& grid) {
  return (gt.center() - grid.pixel_center(px)) / grid.cell;
}

Eigen::Vector3d encode_group_target(const Box7& gt, Pixel px, const BevGrid& grid,
                                    AttributeGroup g) {
  Eigen::Vector3d t = Eigen::Vector3d::Zero();
  switch (g) {
    case AttributeGroup::Rxy: {
      const Vec2 d = encode_center_offset(gt, px, grid);
      t.head<2>() = d;
      break;
    }
    case AttributeGroup::Rz:
      t(0) = gt.z;
      break;
    case AttributeGroup::Rlwh:
      t = Eigen::Vector3d(std::log(gt.l), std::log(gt.w), std::log(gt.h));
      break;
    case AttributeGroup::Rtheta:
      t.head<2>() = Vec2(std::sin(gt.theta), std::cos(gt.theta));
      break;
  }
  return t;
}

int gaussian_radius(double l_px, double w_px, double min_overlap) {
  const double height = l_px;
  const double width = w_px;

  const double a1 = 1.0;
  const double b1 = height + width;
  const double c1 = width * height * (1.0 - min_overlap) / (1.0 + min_overlap);
  const double r1 = (b1 + std::sqrt(std::max(0.0, b1 * b1 - 4.0 * a1 * c1))) / 2.0;

  const double a2 = 4.0;
  const double b2 = 2.0 * (height + width);
  const double c2 = (1.0 - min_overlap) * width * height;
  const double r2 = (b2 + std::sqrt(std::max(0.0, b2 * b2 - 4.0 * a2 * c2))) / (2.0 * a2);

  const double a3 = 4.0 * min_overlap;
  const double b3 = -2.0 * min_overlap * (height + width);
  const double c3 = (min_overlap - 1.0) * width * height;
  const double r3 = (b3 + std::sqrt(std::max(0.0, b3 * b3 - 4.0 * a3 * c3))) / (2.0 * a3);

  return std::max(2, static_cast<int>(std::min({r1, r2, r3})));
}

std::vector<Pixel> pixels_in_box(const Box7& gt, const BevGrid& grid) {
  const ConvexPolygon rect = bev_corners(gt);
  double min_x = rect.vertices[0].x(), max_x = min_x;
  double min_y = rect.vertices[0].y(), max_y = min_y;
  for (const Vec2& v : rect.vertices) {
    min_x = std::min(min_x, v.x());
    max_x = std::max(max_x, v.x());
    min_y = std::min(min_y, v.y());
    max_y = std::max(max_y, v.y());
  }
  const int i_lo = std::max(0, static_cast<int>(std::floor((min_x - grid.origin_x) / grid.cell)));
  const int i_hi = std::min(grid.h - 1, static_cast<int>(std::floor((max_x - grid.origin_x) / grid.cell)));
  const int j_lo = std::max(0, static_cast<int>(std::floor((min_y - grid.origin_y) / grid.cell)));
  const int j_hi = std::min(grid.w - 1, static_cast<int>(std::floor((max_y - grid.origin_y) / grid.cell)));

  std::vector<Pixel> out;
  for (int i = i_lo; i <= i_hi; ++i) {
    for (int j = j_lo; j <= j_hi; ++j) {
      if (rect.contains(grid.pixel_center({i, j}))) out.push_back({i, j});
    }
  }
  return out;
}

std::vector<double> point_richness(const Frame& frame, const Box7& gt,
                                   std::span<const Pixel> candidates, const BevGrid& grid) {
  (void)gt;
  // Per-cell counts gathered once per call; candidate lists are tiny.
  std::map<std::pair<int, int>, double> counts;
  for (const Point4& p : frame.points) {
    const int i = static_cast<int>(std::floor((p.x() - grid.origin_x) / grid.cell));
    const int j = static_cast<int>(std::floor((p.y() - grid.origin_y) / grid.cell));
    if (grid.contains({i, j})) counts[{i, j}] += 1.0;
  }
  const auto count_at = [&](int i, int j) {
    const auto it = counts.find({i, j});
    return it == counts.end() ? 0.0 : it->second;
  };

  std::vector<double> scores;
  scores.reserve(candidates.size());
  for (const Pixel& px : candidates) {
    double s = count_at(px.i, px.j);
    for (int di = -1; di <= 1; ++di) {
      for (int dj = -1; dj <= 1; ++dj) {
        if (di == 0 && dj == 0) continue;
        s += 0.5 * count_at(px.i + di, px.j + dj);
      }
    }
    scores.push_back(s);
  }
  return scores;
}

AssignmentPlan assign_baseline(const Frame& frame, const BevGrid& grid, int num_classes) {
  AssignmentPlan plan = make_plan(frame, grid, num_classes);
  for (const auto& [gt_idx, px] : plan.centers) {
    for (int g = 0; g < kNumGroups; ++g) {
      push_sample(plan, static_cast<AttributeGroup>(g), gt_idx, frame.gts[gt_idx].box, px, 1.0,
                  grid);
    }
  }
  return plan;
}

AssignmentPlan assign_multipos(const Frame& frame, const BevGrid& grid, int num_classes,
                               int radius) {
  if (radius < 0) throw std::invalid_argument("assign_multipos: radius must be >= 0");
  AssignmentPlan plan = make_plan(frame, grid, num_classes);
  for (const auto& [gt_idx, px] : plan.centers) {
    const Box7& box = frame.gts[gt_idx].box;
    const ConvexPolygon rect = bev_corners(box);
    std::vector<Pixel> pixels{px};
    for (int di = -radius; di <= radius; ++di) {
      for (int dj = -radius; dj <= radius; ++dj) {
        const Pixel q{px.i + di, px.j + dj};
        if (q == px || !grid.contains(q)) continue;
        if (rect.contains(grid.pixel_center(q))) pixels.push_back(q);
      }
    }
    std::sort(pixels.begin(), pixels.end());
    for (const Pixel& q : pixels) {
      for (int g = 0; g < kNumGroups; ++g) {
        push_sample(plan, static_cast<AttributeGroup>(g), gt_idx, box, q, 1.0, grid);
      }
    }
  }
  return plan;
}

AssignmentPlan assign_dar_static(const Frame& frame, const BevGrid& grid, int num_classes,
                                 const DarGroups& groups, int n) {
  if (n < 1) throw std::invalid_argument("assign_dar_static: n must be >= 1");
  AssignmentPlan plan = make_plan(frame, grid, num_classes);
  for (const auto& [gt_idx, px] : plan.centers) {
    const Box7& box = frame.gts[gt_idx].box;
    std::vector<Pixel> candidates;
    for (const Pixel& q : pixels_in_box(box, grid)) {
      if (q != px) candidates.push_back(q);
    }
    const std::vector<double> scores = point_richness(frame, box, candidates, grid);
    std::vector<Pixel> chosen{px};
    for (const Pixel& q : top_candidates(candidates, scores, n - 1)) chosen.push_back(q);
    if (static_cast<int>(chosen.size()) < n) {
      plan.candidate_shortfall += n - static_cast<int>(chosen.size());
    }
    std::sort(chosen.begin(), chosen.end());

    for (int g = 0; g < kNumGroups; ++g) {
      const auto group = static_cast<AttributeGroup>(g);
      if (groups.enabled(group)) {
        const double weight = 1.0 / static_cast<double>(chosen.size());
        for (const Pixel& q : chosen) push_sample(plan, group, gt_idx, box, q, weight, grid);
      } else {
        push_sample(plan, group, gt_idx, box, px, 1.0, grid);
      }
    }
  }
  return plan;
}

AssignmentPlan assign_dar_dynamic(const Frame& frame, const BevGrid& grid, int num_classes,
                                  const DarGroups& groups, int k,
                                  const SampleQualityFn& quality) {
  if (k < 1) throw std::invalid_argument("assign_dar_dynamic: k must be >= 1");
  if (!quality) throw std::invalid_argument("assign_dar_dynamic: quality function required");
  AssignmentPlan plan = make_plan(frame, grid, num_classes);
  for (const auto& [gt_idx, px] : plan.centers) {
    const Box7& box = frame.gts[gt_idx].box;
    std::vector<Pixel> candidates = pixels_in_box(box, grid);
    if (std::find(candidates.begin(), candidates.end(), px) == candidates.end()) {
      candidates.push_back(px);
    }
    std::vector<double> scores;
    scores.reserve(candidates.size());
    for (const Pixel& q : candidates) scores.push_back(quality(gt_idx, q));

    std::vector<Pixel> chosen = top_candidates(std::move(candidates), std::move(scores), k);
    if (static_cast<int>(chosen.size()) < k) {
      plan.candidate_shortfall += k - static_cast<int>(chosen.size());
    }
    std::sort(chosen.begin(), chosen.end());

    for (int g = 0; g < kNumGroups; ++g) {
      const auto group = static_cast<AttributeGroup>(g);
      if (groups.enabled(group)) {
        const double weight = 1.0 / static_cast<double>(chosen.size());
        for (const Pixel& q : chosen) push_sample(plan, group, gt_idx, box, q, weight, grid);
      } else {
        push_sample(plan, group, gt_idx, box, px, 1.0, grid);
      }
    }
  }
  return plan;
}

SwitchState switch_update(SwitchState state, double measured_center_iou) {
  state.ema_center_iou = state.ema_decay * state.ema_center_iou +
                         (1.0 - state.ema_decay) * measured_center_iou;
  if (state.phase == Phase::Static && state.ema_center_iou >= state.iou_th) {
    state.phase = Phase::Dynamic;
  }
  return state;
}

AssignmentPlan assign_dar_switch(const Frame& frame, const BevGrid& grid, int num_classes,
                                 const DarGroups& groups, const SwitchState& state, int n,
                                 const SampleQualityFn& quality) {
  if (state.k != n) {
    throw std::invalid_argument("assign_dar_switch: k must equal the static sample count");
  }
  if (state.phase == Phase::Static) {
    return assign_dar_static(frame, grid, num_classes, groups, n);
  }
  return assign_dar_dynamic(frame, grid, num_classes, groups, state.k, quality);
}

}  // namespace dirm
