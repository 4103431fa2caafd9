#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dirm/config.hpp"

namespace dirm {

/// Frames [first_id, first_id + count) with per-frame seeds seed + frame_id.
std::vector<Frame> generate_frames(const SceneConfig& scene, int count, std::uint64_t seed,
                                   std::int64_t first_id);

/// Rejects frames whose class ids exceed the configured class count.
void validate_frames(const std::vector<Frame>& frames, int num_classes);

struct EvalArtifacts {
  EvalReport report;
  std::vector<Detection> detections;
};

/// Forward + decode + metrics over eval frames with the given parameters.
EvalArtifacts run_eval(const RunConfig& config, const HeadParams& params,
                       const std::vector<Frame>& frames);

struct CellResult {
  std::string cell;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  EvalReport report;
};

/// Trains and evaluates every (cell, seed) pair on the given dataset.
/// Failures are recorded per cell; the rest continue.
std::vector<CellResult> run_ablation(const RunConfig& config,
                                     const std::vector<Frame>& train_frames,
                                     const std::vector<Frame>& eval_frames);

/// Fig-style diagnostics: per-class MRPE plus an MSE sweep over quality
/// thresholds (MSE of iou_pred over pairs with IoU_GT >= t).
struct DiagTable {
  std::vector<std::string> mrpe_keys;  // "overall" + class names
  std::vector<std::optional<double>> mrpe_main;
  std::vector<std::optional<double>> mrpe_baseline;
  std::vector<double> sweep_thresholds;  // {0.0, 0.1, ..., 0.5}
  std::vector<std::optional<double>> mse_main;
  std::vector<std::optional<double>> mse_baseline;
  bool has_baseline = false;
};

DiagTable compute_diag(const RunConfig& config, const std::vector<Frame>& frames,
                       const EvalArtifacts& main_arts, const EvalArtifacts* baseline_arts);

/// MSE of iou_pred over detection/GT pairs with IoU_GT >= threshold.
std::optional<double> iou_mse_above(const std::vector<Detection>& dets,
                                    const std::vector<Frame>& frames, double threshold);

// CLI entry points; each writes its artifacts under config.out_dir() and
// returns a process exit code.
int cmd_gen(const RunConfig& config);
int cmd_train(const RunConfig& config);
int cmd_eval(const RunConfig& config);
int cmd_ablate(const RunConfig& config);
int cmd_diag(const RunConfig& config);

// Artifact writers (deterministic byte-for-byte given equal inputs).
std::string format_double(double v);  // %.17g
void write_train_log(const std::string& path, const std::vector<TrainLogRow>& rows,
                     const std::string& config_hash);
void write_detections(const std::string& path, const std::vector<Detection>& dets);
void write_eval_report_csv(const std::string& path, const EvalReport& report,
                           const std::vector<std::string>& class_names,
                           const std::string& config_hash);
void write_eval_report_json(const std::string& path, const EvalReport& report,
                            const std::vector<std::string>& class_names,
                            const std::string& config_hash);
void write_ablation_csv(const std::string& path, const std::vector<CellResult>& results,
                        const std::vector<std::string>& class_names,
                        const std::string& config_hash);
void write_diag_csv(const std::string& path, const DiagTable& table,
                    const std::string& config_hash);

}  // namespace dirm
