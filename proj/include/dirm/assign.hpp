#pragma once

#include <array>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "dirm/grid.hpp"
#include "dirm/scene.hpp"

namespace dirm {

/// The four per-attribute regression tasks.
enum class AttributeGroup { Rxy = 0, Rz = 1, Rlwh = 2, Rtheta = 3 };

constexpr int kNumGroups = 4;

constexpr int group_dim(AttributeGroup g) {
  switch (g) {
    case AttributeGroup::Rxy: return 2;
    case AttributeGroup::Rz: return 1;
    case AttributeGroup::Rlwh: return 3;
    case AttributeGroup::Rtheta: return 2;
  }
  return 0;
}

/// Which groups get multi-sample assignment. Rxy is always enabled.
struct DarGroups {
  bool z = false;
  bool lwh = false;
  bool theta = false;

  bool enabled(AttributeGroup g) const {
    switch (g) {
      case AttributeGroup::Rxy: return true;
      case AttributeGroup::Rz: return z;
      case AttributeGroup::Rlwh: return lwh;
      case AttributeGroup::Rtheta: return theta;
    }
    return false;
  }
  friend bool operator==(const DarGroups&, const DarGroups&) = default;
};

/// One supervised pixel for one GT in one group.
struct GroupSample {
  int gt = -1;
  Pixel px;
  double weight = 1.0;
  Eigen::Vector3d target = Eigen::Vector3d::Zero();  // first group_dim entries used

  friend bool operator==(const GroupSample& a, const GroupSample& b) {
    return a.gt == b.gt && a.px == b.px && a.weight == b.weight && a.target == b.target;
  }
};

/// Reified assignment: classification heatmap targets plus per-group sample
/// lists. Pixels are unique per (gt, group); groups without multi-sample
/// assignment carry exactly the center pixel per GT.
struct AssignmentPlan {
  int c = 0;
  int h = 0;
  int w = 0;
  Eigen::MatrixXd heatmap;  // c x (h*w), Gaussian splats merged by max
  std::array<std::vector<GroupSample>, kNumGroups> samples;
  std::vector<std::pair<int, Pixel>> centers;  // (gt index, center pixel) of kept GTs
  int skipped_out_of_bounds = 0;
  int candidate_shortfall = 0;

  std::span<const GroupSample> group(AttributeGroup g) const {
    return samples[static_cast<int>(g)];
  }
};

bool plans_bit_equal(const AssignmentPlan& a, const AssignmentPlan& b);

/// DAR's switch-phase machine. Static until the center sample's measured
/// IoU EMA crosses iou_th; Dynamic is absorbing. k equals the static-phase
/// sample count.
enum class Phase { Static, Dynamic };

struct SwitchState {
  Phase phase = Phase::Static;
  double ema_center_iou = 0.0;
  double ema_decay = 0.9;
  double iou_th = 0.6;
  int k = 4;
};

const char* phase_name(Phase p);

/// Floor-convention cell of the GT center; nullopt when outside the grid.
std::optional<Pixel> center_pixel(const Box7& gt, const BevGrid& grid);

/// Sub-cell offset from the pixel center to the GT center, in cells. At the
/// GT's own cell it lies in [-0.5, 0.5); at neighbors |d| exceeds 0.5.
Vec2 encode_center_offset(const Box7& gt, Pixel px, const BevGrid& grid);

/// Regression target for one group at one pixel: (dx, dy) / z / log extents
/// / (sin theta, cos theta).
Eigen::Vector3d encode_group_target(const Box7& gt, Pixel px, const BevGrid& grid,
                                    AttributeGroup g);

/// Overlap-derived Gaussian splat radius in cells (min radius 2).
int gaussian_radius(double l_px, double w_px, double min_overlap = 0.7);

/// Pixels whose centers fall inside the GT's BEV rectangle, clipped to the
/// grid, in (i, j) lexicographic order.
std::vector<Pixel> pixels_in_box(const Box7& gt, const BevGrid& grid);

/// Point-cloud richness of each candidate cell: own count plus half the
/// count of its 8-neighborhood.
std::vector<double> point_richness(const Frame& frame, const Box7& gt,
                                   std::span<const Pixel> candidates, const BevGrid& grid);

/// Measured quality of a candidate pixel for a given GT (normally the
/// rotated IoU of the box decoded there against that GT).
using SampleQualityFn = std::function<double(int gt_index, Pixel px)>;

/// One center sample per GT per group, weight 1, CenterPoint-style heatmap.
AssignmentPlan assign_baseline(const Frame& frame, const BevGrid& grid, int num_classes);

/// Undifferentiated multi-sample control: every group receives the center
/// pixel plus the (2r+1)^2 neighborhood intersected with the GT rectangle,
/// weight 1 each. radius 0 reproduces assign_baseline bit-exactly.
AssignmentPlan assign_multipos(const Frame& frame, const BevGrid& grid, int num_classes,
                               int radius);

/// Decoupled static assignment: enabled groups get the center pixel plus the
/// (n-1) richest in-rectangle cells; others keep the center only.
AssignmentPlan assign_dar_static(const Frame& frame, const BevGrid& grid, int num_classes,
                                 const DarGroups& groups, int n);

/// Decoupled dynamic assignment: enabled groups get the top-k in-rectangle
/// candidates by measured quality (center eligible, not privileged).
AssignmentPlan assign_dar_dynamic(const Frame& frame, const BevGrid& grid, int num_classes,
                                  const DarGroups& groups, int k,
                                  const SampleQualityFn& quality);

/// EMA update plus the one-way Static -> Dynamic transition.
SwitchState switch_update(SwitchState state, double measured_center_iou);

/// Delegates to the static or dynamic strategy according to state.phase,
/// keeping the per-GT sample count fixed across the transition.
AssignmentPlan assign_dar_switch(const Frame& frame, const BevGrid& grid, int num_classes,
                                 const DarGroups& groups, const SwitchState& state, int n,
                                 const SampleQualityFn& quality);

}  // namespace dirm
