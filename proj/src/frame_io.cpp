#include "dirm/frame_io.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include <json.hpp>

namespace dirm {

namespace {

using nlohmann::json;

[[noreturn]] void fail(long line, const std::string& what) {
  std::ostringstream msg;
  msg << "frame file line " << line << ": " << what;
  throw FrameIoError(msg.str());
}

double require_number(const json& obj, const char* field, long line, std::int64_t frame_id) {
  const auto it = obj.find(field);
  if (it == obj.end() || !it->is_number()) {
    std::ostringstream msg;
    msg << "missing or non-numeric field \"" << field << "\" (frame_id " << frame_id << ")";
    fail(line, msg.str());
  }
  return it->get<double>();
}

void require_positive(double v, const char* field, long line, std::int64_t frame_id) {
  if (!(v > 0.0) || !std::isfinite(v)) {
    std::ostringstream msg;
    msg << "field \"" << field << "\" must be positive and finite (frame_id " << frame_id << ")";
    fail(line, msg.str());
  }
}

}  // namespace

void save_frames(const std::vector<Frame>& frames, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FrameIoError("cannot open for writing: " + path);
  for (const Frame& f : frames) {
    json points = json::array();
    for (const Point4& p : f.points) {
      points.push_back(json::array({p.x(), p.y(), p.z(), p.w()}));
    }
    json boxes = json::array();
    for (const GtBox& gt : f.gts) {
      boxes.push_back({{"cls", gt.cls},
                       {"x", gt.box.x},
                       {"y", gt.box.y},
                       {"z", gt.box.z},
                       {"l", gt.box.l},
                       {"w", gt.box.w},
                       {"h", gt.box.h},
                       {"theta", gt.box.theta}});
    }
    json rec{{"frame_id", f.frame_id}, {"points", points}, {"boxes", boxes}};
    out << rec.dump() << '\n';
  }
  if (!out) throw FrameIoError("write failed: " + path);
}

std::vector<Frame> load_frames(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FrameIoError("cannot open: " + path);

  std::vector<Frame> frames;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::parse_error& e) {
      fail(line_no, std::string("parse error: ") + e.what());
    }
    if (!rec.is_object()) fail(line_no, "expected a JSON object");
    if (!rec.contains("frame_id") || !rec["frame_id"].is_number_integer()) {
      fail(line_no, "missing or non-integer field \"frame_id\"");
    }

    Frame frame;
    frame.frame_id = rec["frame_id"].get<std::int64_t>();

    const auto points_it = rec.find("points");
    if (points_it == rec.end() || !points_it->is_array()) {
      fail(line_no, "missing or non-array field \"points\"");
    }
    for (const json& p : *points_it) {
      if (!p.is_array() || p.size() != 4 || !p[0].is_number() || !p[1].is_number() ||
          !p[2].is_number() || !p[3].is_number()) {
        fail(line_no, "field \"points\" entries must be [x,y,z,r] numbers");
      }
      frame.points.emplace_back(p[0].get<double>(), p[1].get<double>(), p[2].get<double>(),
                                p[3].get<double>());
    }

    const auto boxes_it = rec.find("boxes");
    if (boxes_it == rec.end() || !boxes_it->is_array()) {
      fail(line_no, "missing or non-array field \"boxes\"");
    }
    for (const json& b : *boxes_it) {
      if (!b.is_object()) fail(line_no, "field \"boxes\" entries must be objects");
      if (!b.contains("cls") || !b["cls"].is_number_integer()) {
        fail(line_no, "missing or non-integer field \"cls\"");
      }
      GtBox gt;
      gt.cls = b["cls"].get<int>();
      if (gt.cls < 0) fail(line_no, "field \"cls\" must be >= 0");
      gt.box.x = require_number(b, "x", line_no, frame.frame_id);
      gt.box.y = require_number(b, "y", line_no, frame.frame_id);
      gt.box.z = require_number(b, "z", line_no, frame.frame_id);
      gt.box.l = require_number(b, "l", line_no, frame.frame_id);
      gt.box.w = require_number(b, "w", line_no, frame.frame_id);
      gt.box.h = require_number(b, "h", line_no, frame.frame_id);
      gt.box.theta = require_number(b, "theta", line_no, frame.frame_id);
      require_positive(gt.box.l, "l", line_no, frame.frame_id);
      require_positive(gt.box.w, "w", line_no, frame.frame_id);
      require_positive(gt.box.h, "h", line_no, frame.frame_id);
      if (gt.box.theta <= -std::numbers::pi - 1e-12 || gt.box.theta > std::numbers::pi + 1e-12) {
        std::ostringstream msg;
        msg << "field \"theta\" outside (-pi, pi] (frame_id " << frame.frame_id << ")";
        fail(line_no, msg.str());
      }
      frame.gts.push_back(gt);
    }
    frames.push_back(std::move(frame));
  }
  return frames;
}

}  // namespace dirm
