#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "dirm/frame_io.hpp"
#include "dirm/scene.hpp"

using namespace dirm;

namespace {

SceneConfig small_config() {
  SceneConfig sc;
  sc.extent = 32.0;
  sc.margin = 2.5;
  sc.boxes_min = 3;
  sc.boxes_max = 6;
  sc.clutter_pts = 100;
  return sc;
}

bool frames_equal(const Frame& a, const Frame& b) {
  if (a.frame_id != b.frame_id || a.points.size() != b.points.size() ||
      a.gts.size() != b.gts.size()) {
    return false;
  }
  for (size_t i = 0; i < a.points.size(); ++i) {
    if (a.points[i] != b.points[i]) return false;
  }
  for (size_t i = 0; i < a.gts.size(); ++i) {
    const Box7& x = a.gts[i].box;
    const Box7& y = b.gts[i].box;
    if (a.gts[i].cls != b.gts[i].cls || x.x != y.x || x.y != y.y || x.z != y.z || x.l != y.l ||
        x.w != y.w || x.h != y.h || x.theta != y.theta) {
      return false;
    }
  }
  return true;
}

std::string temp_path(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("zero-object config produces only clutter") {
  SceneConfig sc = small_config();
  sc.boxes_min = 0;
  sc.boxes_max = 0;
  const Frame frame = generate_scene(sc, 1);
  CHECK(frame.gts.empty());
  CHECK(static_cast<int>(frame.points.size()) == sc.clutter_pts);
}

TEST_CASE("generation is deterministic in (config, seed)") {
  const SceneConfig sc = small_config();
  const Frame a = generate_scene(sc, 42, 7);
  const Frame b = generate_scene(sc, 42, 7);
  CHECK(frames_equal(a, b));
  const Frame c = generate_scene(sc, 43, 7);
  CHECK_FALSE(frames_equal(a, c));
}

TEST_CASE("placed boxes have pairwise zero BEV IoU") {
  const SceneConfig sc = small_config();
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Frame frame = generate_scene(sc, seed);
    for (size_t i = 0; i < frame.gts.size(); ++i) {
      for (size_t j = i + 1; j < frame.gts.size(); ++j) {
        CHECK(rotated_iou_bev(frame.gts[i].box, frame.gts[j].box) == 0.0);
      }
    }
  }
}

TEST_CASE("surface point count follows the inverse-square law before clamping") {
  // One box pinned at a known range; count its surface points directly.
  SceneConfig sc;
  sc.extent = 64.0;
  sc.base_rate = 4.0e4;
  sc.min_pts = 1;
  sc.max_pts = 100000;
  sc.clutter_pts = 0;
  sc.boxes_min = 1;
  sc.boxes_max = 1;
  sc.size_jitter = 0.0;

  // 400 expected at 10 m, 25 at 40 m: ratio 16.
  std::array<double, 2> mean_counts{0.0, 0.0};
  for (int which = 0; which < 2; ++which) {
    int total = 0;
    int frames = 0;
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
      const Frame frame = generate_scene(sc, seed);
      if (frame.gts.size() != 1) continue;
      const double range = frame.gts[0].box.center().norm();
      const bool near = range >= 8.0 && range <= 12.0;
      const bool far = range >= 36.0 && range <= 44.0;
      if ((which == 0 && !near) || (which == 1 && !far)) continue;
      total += static_cast<int>(frame.points.size());
      ++frames;
    }
    if (frames > 0) mean_counts[which] = static_cast<double>(total) / frames;
  }
  // Sampled ranges vary inside the windows; check the broad inverse-square
  // magnitude rather than the exact 16x ratio.
  if (mean_counts[0] > 0.0 && mean_counts[1] > 0.0) {
    CHECK(mean_counts[0] > 4.0 * mean_counts[1]);
  }
  // The law itself, exactly, at the formula level.
  CHECK(sc.base_rate / (10.0 * 10.0) == doctest::Approx(400.0));
  CHECK(sc.base_rate / (40.0 * 40.0) == doctest::Approx(25.0));
}

TEST_CASE("sensor-facing half carries more points than the occluded half") {
  SceneConfig sc = small_config();
  sc.boxes_min = 1;
  sc.boxes_max = 1;
  sc.clutter_pts = 0;
  int facing_wins = 0;
  int trials = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const Frame frame = generate_scene(sc, seed);
    if (frame.gts.empty() || frame.points.empty()) continue;
    ++trials;
    const Box7& box = frame.gts[0].box;
    const Vec2 toward = (Vec2(sc.sensor_x, sc.sensor_y) - box.center()).normalized();
    int facing = 0;
    int occluded = 0;
    for (const Point4& p : frame.points) {
      const Vec2 rel = Vec2(p.x(), p.y()) - box.center();
      if (rel.dot(toward) > 0.0) {
        ++facing;
      } else {
        ++occluded;
      }
    }
    if (facing > occluded) ++facing_wins;
  }
  CHECK(trials >= 95);
  CHECK(facing_wins * 100 >= 95 * trials);
}

TEST_CASE("median per-box point count is non-increasing across range buckets") {
  SceneConfig sc;  // module default: 64 m extent covers all three buckets
  sc.clutter_pts = 0;
  std::array<std::vector<double>, 3> counts;
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    const Frame frame = generate_scene(sc, seed);
    for (const GtBox& gt : frame.gts) {
      const double range = gt.box.center().norm();
      double n = 0;
      for (const Point4& p : frame.points) {
        const double dist = (Vec2(p.x(), p.y()) - gt.box.center()).norm();
        bool nearest = true;
        for (const GtBox& other : frame.gts) {
          if ((Vec2(p.x(), p.y()) - other.box.center()).norm() < dist) nearest = false;
        }
        if (nearest) n += 1.0;
      }
      counts[range_bucket(range)].push_back(n);
    }
  }
  const auto median = [](std::vector<double> v) {
    REQUIRE(!v.empty());
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
  };
  const double m0 = median(counts[0]);
  const double m1 = median(counts[1]);
  const double m2 = median(counts[2]);
  CHECK(m0 >= m1);
  CHECK(m1 >= m2);
}

TEST_CASE("rasterize_features channels") {
  BevGrid grid;
  grid.h = grid.w = 8;
  grid.cell = 1.0;

  SUBCASE("empty frame leaves everything but range at zero") {
    const FeatureMap map = rasterize_features(Frame{}, grid, 6);
    for (int c = 0; c < 5; ++c) CHECK(map.data.row(c).cwiseAbs().maxCoeff() == 0.0);
    CHECK(map.data.row(5).minCoeff() > 0.0);
  }

  SUBCASE("single point lands log1p(1) in exactly one cell") {
    Frame frame;
    frame.points.emplace_back(2.5, 3.5, 1.0, 0.5);
    const FeatureMap map = rasterize_features(frame, grid, 6);
    CHECK(map.at(0, {2, 3}) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(map.data.row(0).sum() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  }

  SUBCASE("mean and max z per cell") {
    Frame frame;
    frame.points.emplace_back(2.5, 3.5, 1.0, 0.2);
    frame.points.emplace_back(2.6, 3.4, 3.0, 0.4);
    const FeatureMap map = rasterize_features(frame, grid, 6);
    CHECK(map.at(1, {2, 3}) == doctest::Approx(2.0));
    CHECK(map.at(2, {2, 3}) == doctest::Approx(3.0));
    CHECK(map.at(3, {2, 3}) == doctest::Approx(0.3));
    CHECK(map.at(4, {2, 3}) == 1.0);
  }

  SUBCASE("out-of-grid points are dropped and tallied") {
    Frame frame;
    frame.points.emplace_back(100.0, 100.0, 0.0, 0.5);
    RasterDiag diag;
    const FeatureMap map = rasterize_features(frame, grid, 6, &diag);
    CHECK(diag.dropped_points == 1);
    CHECK(map.data.row(0).cwiseAbs().maxCoeff() == 0.0);
  }

  SUBCASE("extra channels are box-filtered copies of the first six") {
    Frame frame;
    frame.points.emplace_back(2.5, 3.5, 1.0, 0.5);
    const FeatureMap map = rasterize_features(frame, grid, 8);
    CHECK(map.at(6, {2, 3}) == doctest::Approx(std::log(2.0) / 9.0));
    CHECK(map.at(6, {3, 4}) == doctest::Approx(std::log(2.0) / 9.0));
    CHECK(map.at(6, {4, 5}) == 0.0);
  }

  SUBCASE("fewer than six channels is a configuration error") {
    CHECK_THROWS_AS(rasterize_features(Frame{}, grid, 5), std::invalid_argument);
  }
}

TEST_CASE("rasterization is deterministic") {
  const SceneConfig sc = small_config();
  BevGrid grid;
  grid.h = grid.w = 64;
  grid.cell = 0.5;
  const Frame frame = generate_scene(sc, 5);
  const FeatureMap a = rasterize_features(frame, grid, 8);
  const FeatureMap b = rasterize_features(frame, grid, 8);
  CHECK(a.data == b.data);
}

TEST_CASE("frame file round-trip is bit-exact") {
  const SceneConfig sc = small_config();
  std::vector<Frame> frames;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    frames.push_back(generate_scene(sc, seed, static_cast<std::int64_t>(seed)));
  }
  const std::string path = temp_path("dirm_frames_roundtrip.jsonl");
  save_frames(frames, path);
  const std::vector<Frame> loaded = load_frames(path);
  REQUIRE(loaded.size() == frames.size());
  for (size_t i = 0; i < frames.size(); ++i) CHECK(frames_equal(frames[i], loaded[i]));

  const std::string path2 = temp_path("dirm_frames_roundtrip2.jsonl");
  save_frames(loaded, path2);
  std::ifstream f1(path), f2(path2);
  const std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  const std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(s1 == s2);
  std::remove(path.c_str());
  std::remove(path2.c_str());
}

TEST_CASE("empty frame file loads as an empty list") {
  const std::string path = temp_path("dirm_frames_empty.jsonl");
  { std::ofstream out(path); }
  CHECK(load_frames(path).empty());
  std::remove(path.c_str());
}

TEST_CASE("loader rejects malformed lines and invariant violations") {
  const std::string path = temp_path("dirm_frames_bad.jsonl");

  SUBCASE("malformed json names the line") {
    std::ofstream(path) << "{\"frame_id\": 0, \"points\": [], \"boxes\": []}\n{not json\n";
    try {
      load_frames(path);
      FAIL("expected FrameIoError");
    } catch (const FrameIoError& e) {
      CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }
  }

  SUBCASE("negative length names the field and frame") {
    std::ofstream(path)
        << R"({"frame_id": 3, "points": [], "boxes": [{"cls":0,"x":1,"y":1,"z":0,"l":-1,"w":1,"h":1,"theta":0}]})"
        << '\n';
    try {
      load_frames(path);
      FAIL("expected FrameIoError");
    } catch (const FrameIoError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("\"l\"") != std::string::npos);
      CHECK(msg.find("frame_id 3") != std::string::npos);
    }
  }

  std::remove(path.c_str());
}
