#pragma once

#include <string>
#include <vector>

#include "dirm/scene.hpp"

namespace dirm {

/// Thrown on malformed frame files; the message names the line and field.
struct FrameIoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// JSON Lines, one frame per line:
///   {"frame_id": int, "points": [[x,y,z,r], ...],
///    "boxes": [{"cls":int,"x":f,"y":f,"z":f,"l":f,"w":f,"h":f,"theta":f}, ...]}
/// save followed by load reproduces frames bit-exactly for finite values.
void save_frames(const std::vector<Frame>& frames, const std::string& path);
std::vector<Frame> load_frames(const std::string& path);

}  // namespace dirm
