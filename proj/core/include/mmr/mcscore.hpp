#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mmr/geometry.hpp"
#include "mmr/model.hpp"

namespace mmr {

// Which pixel set a detection contributes to a comparison: the inclusive
// integer pixel grid of its box, or its mask.
enum class PixelSetKind { kBox, kMask };

double box_iou(const Box& a, const Box& b);
double mask_iou(const Mask& a, const Mask& b);  // DataError on dim mismatch
double detection_iou(const Detection& a, const Detection& b,
                     PixelSetKind kind);

// IOU of every source detection against the target, strictly filtered to
// values above 0.3. Source order is preserved.
std::vector<double> matched_ious(const std::vector<Detection>& sources,
                                 const Detection& target, PixelSetKind kind);

// Mean of matched_ious; nullopt is the no-match marker (downstream means
// count it as 0).
std::optional<double> avg_iou(const std::vector<Detection>& sources,
                              const Detection& target, PixelSetKind kind);

// Mean over target detections of avg_iou (no-match -> 0). An empty target
// set has no defined score and raises DataError.
double miou(const std::vector<Detection>& sources,
            const std::vector<Detection>& targets, PixelSetKind kind);

// Single-modality consistency score, percent.
double mc_single(const std::vector<Detection>& modality,
                 const std::vector<Detection>& output, PixelSetKind kind);

// Combined consistency score: flat mean over every (modality, output
// detection) pair, percent.
double mc_combined(const std::vector<std::vector<Detection>>& modalities,
                   const std::vector<Detection>& output, PixelSetKind kind);

// One scene's outputs for the consistency report. `output` is the
// detection set whose reliability is scored; rgb_only / depth_only are the
// modality-restricted runs on the same scene. gt_masks may be empty.
struct ScenePredictions {
  DetectionSet output;
  DetectionSet rgb_only;
  DetectionSet depth_only;
  std::string split;
  std::vector<Mask> gt_masks;
};

// A-values of one output detection against each modality set (no-match
// already folded to 0), with the detection's own confidence and, when
// ground truth was supplied, its best mask IOU against any GT instance
// (-1 when unavailable).
struct DetectionRecord {
  std::string scene_id;
  std::string split;
  int label = 0;
  double confidence = 0.0;
  double a_box_rgb = 0.0;
  double a_box_depth = 0.0;
  double a_mask_rgb = 0.0;
  double a_mask_depth = 0.0;
  double gt_iou = -1.0;
};

// Percent scores pooled over one group of detection records.
struct McAggregate {
  double box_mc = 0.0;
  double box_mc_rgb = 0.0;
  double box_mc_depth = 0.0;
  double mask_mc = 0.0;
  double mask_mc_rgb = 0.0;
  double mask_mc_depth = 0.0;
  double mean_confidence = 0.0;
  int64_t detections = 0;
};

struct MCReport {
  std::vector<DetectionRecord> per_detection;
  std::map<int, McAggregate> per_class;
  std::vector<std::pair<std::string, McAggregate>> per_split;  // input order
  McAggregate overall;
  // Reporting variant: mean of the per-modality scores instead of the flat
  // pair mean (identical when every modality contributes equally).
  double box_mc_modality_mean = 0.0;
  double mask_mc_modality_mean = 0.0;
};

// Scores every scene's output detections against the two modality runs.
// Scene-id disagreement within a triple raises DataError, as does a report
// with no output detections at all.
MCReport mc_report(const std::vector<ScenePredictions>& scenes);

void write_mc_report(const MCReport& report,
                     const std::filesystem::path& json_path);
// Per-class table: class, mask MC combined/rgb/depth, box MC
// combined/rgb/depth.
void write_mc_class_csv(const MCReport& report,
                        const std::filesystem::path& csv_path);

}  // namespace mmr
