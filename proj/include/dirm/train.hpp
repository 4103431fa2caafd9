#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "dirm/assign.hpp"
#include "dirm/head.hpp"
#include "dirm/loss.hpp"
#include "dirm/scene.hpp"

namespace dirm {

enum class Strategy { Baseline, Multipos, DarStatic, DarDynamic, DarSwitch };

const char* strategy_name(Strategy s);

struct TrainSettings {
  Strategy strategy = Strategy::Baseline;
  IqpMode iqp = IqpMode::Off;
  DarGroups dar_groups;
  int n = 4;
  int k = 4;
  int multipos_radius = 1;
  double iou_th = 0.6;
  double ema_decay = 0.9;
  bool switch_on_predicted = false;  // trigger on predicted instead of measured IoU
  LossConfig loss;
  int epochs = 12;
  int batch = 4;
  double lr = 1e-2;
  double momentum = 0.9;
  double clip_norm = 5.0;
  int feat_channels = 8;
  int num_classes = 3;
  std::uint64_t seed = 0;
  bool serial = false;
  int threads = 0;  // 0 picks the hardware concurrency
};

struct TrainLogRow {
  int epoch = 0;
  Phase phase = Phase::Static;
  LossBreakdown loss;
  double ema_center_iou = 0.0;
};

/// Raised when a step produces a non-finite loss; names the offending step.
struct TrainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrainResult {
  HeadParams params;
  SwitchState switch_state;
  long steps = 0;
  std::vector<TrainLogRow> log;
};

/// SGD with momentum and global gradient-norm clipping. Each epoch
/// re-assigns samples with the current parameters, accumulates per-frame
/// gradients batch by batch (merged in frame order, so threaded and serial
/// runs match bit-exactly), then feeds the epoch-mean center IoU to the
/// switch machine.
TrainResult train_run(const std::vector<Frame>& frames, const BevGrid& grid,
                      const TrainSettings& settings);

/// Per-frame measured center-sample IoU (decoded at the center pixel against
/// the GT), averaged over GTs; also used for the switch trigger.
double mean_center_iou(const HeadOutputs& out, const Frame& frame, const BevGrid& grid);

/// JSON checkpoint of the named parameter tensors with shape headers.
void save_checkpoint(const std::string& path, const HeadParams& params,
                     const SwitchState& sw, long steps, const std::string& config_hash);

struct Checkpoint {
  HeadParams params;
  SwitchState switch_state;
  long steps = 0;
  std::string config_hash;
};

Checkpoint load_checkpoint(const std::string& path);

/// Runs fn(0..n-1); uses a thread pool unless threads <= 1.
void parallel_for(int n, int threads, const std::function<void(int)>& fn);

}  // namespace dirm
