#pragma once

#include <map>
#include <string>
#include <vector>

#include "dirm/decode.hpp"
#include "dirm/metrics.hpp"
#include "dirm/train.hpp"

namespace dirm {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// One ablation cell: strategy x iqp mode, optionally with the quality
/// branch left untrained (w_iou = 0). Token form "strategy:iqp[:noiou]".
struct AblationCell {
  Strategy strategy = Strategy::Baseline;
  IqpMode iqp = IqpMode::Off;
  bool train_iou = true;
  std::string token;
};

/// Flat key=value run configuration. Unknown keys are rejected; every key
/// has a default, so the canonical dump always lists the full set.
class RunConfig {
 public:
  RunConfig();  // defaults

  /// Parses "key=value" lines ('#' comments allowed). Later values win.
  static RunConfig from_file(const std::string& path);

  void set(const std::string& key, const std::string& value);
  const std::string& get(const std::string& key) const;

  /// Sorted key=value dump; stable across runs.
  std::string canonical() const;
  /// FNV-1a 64 over the canonical dump, as 16 hex chars.
  std::string hash() const;

  /// Typed views (validated; throws ConfigError with the offending key).
  void validate() const;
  SceneConfig scene() const;
  BevGrid grid() const;
  TrainSettings train() const;
  DecodeSettings decode() const;
  MetricsSettings metrics() const;
  std::vector<AblationCell> ablate_cells() const;
  std::vector<std::uint64_t> ablate_seeds() const;

  int gen_train_frames() const;
  int gen_eval_frames() const;
  std::uint64_t seed() const;
  bool serial() const;
  int threads() const;
  std::string out_dir() const;
  /// Paths resolve relative to out_dir unless absolute.
  std::string train_path() const;
  std::string eval_path() const;
  std::string checkpoint_path() const;
  std::string baseline_checkpoint_path() const;  // may be empty

  int num_classes() const;
  int feat_channels() const;

  double get_double(const std::string& key) const;
  int get_int(const std::string& key) const;
  bool get_bool(const std::string& key) const;

 private:
  std::map<std::string, std::string> kv_;
};

Strategy parse_strategy(const std::string& s);
IqpMode parse_iqp(const std::string& s);
AblationCell parse_cell(const std::string& token);

}  // namespace dirm
