#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "dirm/geometry.hpp"
#include "dirm/grid.hpp"

namespace dirm {

/// One labeled object.
struct GtBox {
  int cls = 0;
  Box7 box;
};

/// A LiDAR point: x, y, z in meters plus reflectance in [0, 1].
using Point4 = Eigen::Vector4d;

/// One synthetic scene: the unit of ingestion, assignment and evaluation.
struct Frame {
  std::int64_t frame_id = 0;
  std::vector<Point4> points;
  std::vector<GtBox> gts;
};

/// Per-class size prior (meters) and base reflectance.
struct ClassPrior {
  std::string name;
  double l = 1.0;
  double w = 1.0;
  double h = 1.0;
  double refl = 0.5;
};

/// Vehicle/pedestrian/cyclist-like aspect ratios.
std::vector<ClassPrior> default_class_priors();

/// Scene generator settings. The sensor sits at (sensor_x, sensor_y); the
/// scene occupies [0, extent) x [0, extent).
struct SceneConfig {
  double extent = 64.0;
  double sensor_x = 0.0;
  double sensor_y = 0.0;
  int boxes_min = 3;
  int boxes_max = 8;
  int max_retries = 40;
  double margin = 3.0;       // keep box centers this far inside the bounds
  double separation = 0.5;   // required clearance between placed boxes, meters
  double base_rate = 4.0e4;  // surface points at 1 m before clamping
  int min_pts = 12;
  int max_pts = 400;
  int clutter_pts = 200;
  double size_jitter = 0.15;
  std::vector<ClassPrior> classes = default_class_priors();

  bool valid() const;
};

/// Builds one frame from (config, seed): non-overlapping boxes, surface
/// points on the sensor-facing faces with inverse-square density, plus
/// uniform ground clutter. Deterministic in (config, seed).
Frame generate_scene(const SceneConfig& config, std::uint64_t seed, std::int64_t frame_id = 0);

/// Tally kept alongside rasterization.
struct RasterDiag {
  std::int64_t dropped_points = 0;
};

/// Per-cell statistics channels: log1p(count), mean z, max z, mean
/// reflectance, occupancy, range to the grid origin corner (normalized by
/// the grid diagonal). Channels beyond the first six are 3x3 box-filtered
/// copies of the first six, cycled. channels must be >= 6.
FeatureMap rasterize_features(const Frame& frame, const BevGrid& grid, int channels,
                              RasterDiag* diag = nullptr);

/// Range buckets mirroring the usual 0-30 / 30-50 / 50+ meter split.
int range_bucket(double range_m);

}  // namespace dirm
