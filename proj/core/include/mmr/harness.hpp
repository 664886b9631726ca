#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "mmr/mcscore.hpp"
#include "mmr/model.hpp"
#include "mmr/synthdata.hpp"

namespace mmr {

// Ground truth of one scene, detached from the image payload.
struct SceneGT {
  std::string scene_id;
  int height = 0;
  int width = 0;
  std::vector<InstanceGT> instances;
};

SceneGT scene_gt(const SceneSample& scene);

// The standard threshold ladder 0.50:0.05:0.95.
std::vector<double> coco_thresholds();

struct APResult {
  std::vector<double> thresholds;
  bool class_agnostic = false;
  // Per-class AP averaged over thresholds; key 0 holds the merged class in
  // class-agnostic mode. Only classes with ground truth appear.
  std::map<int, double> box_ap;
  std::map<int, double> mask_ap;
  double box_map = 0.0;
  double mask_map = 0.0;
};

// Greedy confidence-ordered matching per class and threshold, 101-point
// interpolated precision-recall integration. Throws DataError when the
// ground truth is empty everywhere.
APResult average_precision(const std::vector<DetectionSet>& detections,
                           const std::vector<SceneGT>& gt,
                           const std::vector<double>& thresholds,
                           bool class_agnostic);

void write_ap_result(const APResult& result,
                     const std::filesystem::path& json_path);

// Forward passes under all three conditions for every scene; gt_masks and
// split labels are filled from the scenes.
std::vector<ScenePredictions> run_conditions(
    const DetectorParams& params, const std::vector<SceneSample>& scenes);

struct ConditionResult {
  std::string name;  // both / rgb_off / depth_off
  double box_ap = 0.0;
  double mask_ap = 0.0;
};

// Input-off ablation: "rgb_off" removes the RGB input (depth-only
// condition), "depth_off" removes the depth input. APs are class-agnostic
// means over the standard thresholds; MC scores the both-condition output
// against the two single-modality runs.
struct AblationReport {
  std::string model_id;
  std::vector<ConditionResult> conditions;
  double box_mc = 0.0;
  double mask_mc = 0.0;
};

AblationReport modality_ablation(const DetectorParams& params,
                                 const std::vector<SceneSample>& scenes,
                                 const std::string& model_id);

void write_ablation_report(const AblationReport& report,
                           const std::filesystem::path& json_path);

// Mean gate weights per condition and scale, plus the per-scale fraction
// of scenes whose mean weight of the surviving modality rises when the
// other modality's input is removed.
struct GateShiftReport {
  int levels = 0;
  int scenes = 0;
  // [condition name][level] -> {rgb mean, depth mean}
  std::vector<std::pair<std::string, std::vector<std::array<double, 2>>>>
      mean_weights;
  std::vector<double> depth_up_rgb_removed;  // per level
  std::vector<double> rgb_up_depth_removed;  // per level
};

GateShiftReport gate_shift_analysis(const DetectorParams& params,
                                    const std::vector<SceneSample>& scenes);

void write_gate_shift_report(const GateShiftReport& report,
                             const std::filesystem::path& json_path);

struct SplitComparison {
  std::string split;
  double mean_box_mc = 0.0;
  double mean_mask_mc = 0.0;
  double mean_confidence = 0.0;
  int64_t detections = 0;
};

// Per-split MC means against confidence means, their spreads on a shared
// [0,1] scale, relative drops from the first to the last split, and the
// rank correlation between per-detection mask MC and ground-truth IOU.
struct McConfidenceReport {
  std::vector<SplitComparison> splits;  // report split order
  double mc_variance = 0.0;             // across splits, mask MC / 100
  double confidence_variance = 0.0;     // across splits
  double mc_relative_drop = 0.0;        // first split vs last split
  double confidence_relative_drop = 0.0;
  double spearman_mc_gt = std::numeric_limits<double>::quiet_NaN();
  int64_t ranked_detections = 0;
};

McConfidenceReport mc_vs_confidence(const MCReport& report);

void write_mc_confidence_report(const McConfidenceReport& report,
                                const std::filesystem::path& json_path);
// Per-detection scatter: scene, split, mask MC, confidence, GT IOU.
void write_mc_scatter_csv(const MCReport& report,
                          const std::filesystem::path& csv_path);

// Renders the JSON artifacts above into one markdown summary. Empty paths
// skip their section; image files are embedded by relative path.
void write_markdown_report(const std::filesystem::path& out_md,
                           const std::filesystem::path& ablation_json,
                           const std::filesystem::path& mc_json,
                           const std::filesystem::path& comparison_json,
                           const std::filesystem::path& gate_json,
                           const std::vector<std::string>& image_files);

}  // namespace mmr
