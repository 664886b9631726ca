#include "mmr/mcscore.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "mmr/errors.hpp"

namespace mmr {
namespace {

using ojson = nlohmann::ordered_json;

constexpr double kMatchThreshold = 0.3;  // strict: a > 0.3 survives

// Accumulates the flat per-(modality, detection) means for one group.
struct Accumulator {
  double box_rgb = 0, box_depth = 0, mask_rgb = 0, mask_depth = 0;
  double confidence = 0;
  int64_t n = 0;

  void add(const DetectionRecord& r) {
    box_rgb += r.a_box_rgb;
    box_depth += r.a_box_depth;
    mask_rgb += r.a_mask_rgb;
    mask_depth += r.a_mask_depth;
    confidence += r.confidence;
    ++n;
  }

  McAggregate finish() const {
    McAggregate a;
    a.detections = n;
    if (n == 0) return a;
    const double d = static_cast<double>(n);
    a.box_mc_rgb = 100.0 * box_rgb / d;
    a.box_mc_depth = 100.0 * box_depth / d;
    a.mask_mc_rgb = 100.0 * mask_rgb / d;
    a.mask_mc_depth = 100.0 * mask_depth / d;
    a.box_mc = 100.0 * (box_rgb + box_depth) / (2.0 * d);
    a.mask_mc = 100.0 * (mask_rgb + mask_depth) / (2.0 * d);
    a.mean_confidence = confidence / d;
    return a;
  }
};

ojson aggregate_json(const McAggregate& a, bool with_confidence) {
  ojson j;
  j["box_mc"] = a.box_mc;
  j["box_mc_rgb"] = a.box_mc_rgb;
  j["box_mc_depth"] = a.box_mc_depth;
  j["mask_mc"] = a.mask_mc;
  j["mask_mc_rgb"] = a.mask_mc_rgb;
  j["mask_mc_depth"] = a.mask_mc_depth;
  if (with_confidence) j["mean_confidence"] = a.mean_confidence;
  j["detections"] = a.detections;
  return j;
}

}  // namespace

double box_iou(const Box& a, const Box& b) {
  const auto inter = Box::intersect(a, b);
  if (!inter) return 0.0;
  const int64_t ic = inter->pixel_count();
  const int64_t uc = a.pixel_count() + b.pixel_count() - ic;
  return static_cast<double>(ic) / static_cast<double>(uc);
}

double mask_iou(const Mask& a, const Mask& b) {
  if (!a.same_dims(b)) throw DataError("mask_iou: dimension mismatch");
  const int64_t uc = Mask::union_count(a, b);
  if (uc == 0) throw DataError("mask_iou: both masks empty");
  return static_cast<double>(Mask::intersection_count(a, b)) /
         static_cast<double>(uc);
}

double detection_iou(const Detection& a, const Detection& b,
                     PixelSetKind kind) {
  return kind == PixelSetKind::kBox ? box_iou(a.box, b.box)
                                    : mask_iou(a.mask, b.mask);
}

std::vector<double> matched_ious(const std::vector<Detection>& sources,
                                 const Detection& target, PixelSetKind kind) {
  std::vector<double> out;
  for (const Detection& s : sources) {
    const double a = detection_iou(s, target, kind);
    if (a > kMatchThreshold) out.push_back(a);
  }
  return out;
}

std::optional<double> avg_iou(const std::vector<Detection>& sources,
                              const Detection& target, PixelSetKind kind) {
  const std::vector<double> matched = matched_ious(sources, target, kind);
  if (matched.empty()) return std::nullopt;
  double s = 0.0;
  for (double a : matched) s += a;
  return s / static_cast<double>(matched.size());
}

double miou(const std::vector<Detection>& sources,
            const std::vector<Detection>& targets, PixelSetKind kind) {
  if (targets.empty())
    throw DataError("miou: empty target set has no defined score");
  double s = 0.0;
  for (const Detection& t : targets) s += avg_iou(sources, t, kind).value_or(0.0);
  return s / static_cast<double>(targets.size());
}

double mc_single(const std::vector<Detection>& modality,
                 const std::vector<Detection>& output, PixelSetKind kind) {
  return 100.0 * miou(modality, output, kind);
}

double mc_combined(const std::vector<std::vector<Detection>>& modalities,
                   const std::vector<Detection>& output, PixelSetKind kind) {
  if (modalities.empty()) throw DataError("mc_combined: no modalities");
  if (output.empty())
    throw DataError("mc_combined: empty output set has no defined score");
  double s = 0.0;
  int64_t n = 0;
  for (const auto& modality : modalities)
    for (const Detection& t : output) {
      s += avg_iou(modality, t, kind).value_or(0.0);
      ++n;
    }
  return 100.0 * s / static_cast<double>(n);
}

MCReport mc_report(const std::vector<ScenePredictions>& scenes) {
  MCReport report;
  Accumulator overall;
  std::map<int, Accumulator> per_class;
  std::vector<std::pair<std::string, Accumulator>> per_split;

  for (const ScenePredictions& scene : scenes) {
    if (scene.rgb_only.scene_id != scene.output.scene_id ||
        scene.depth_only.scene_id != scene.output.scene_id)
      throw DataError("mc_report: scene ids disagree within a triple (" +
                      scene.output.scene_id + ", " + scene.rgb_only.scene_id +
                      ", " + scene.depth_only.scene_id + ")");
    for (const Detection& det : scene.output.detections) {
      DetectionRecord rec;
      rec.scene_id = scene.output.scene_id;
      rec.split = scene.split;
      rec.label = det.label;
      rec.confidence = det.confidence;
      rec.a_box_rgb =
          avg_iou(scene.rgb_only.detections, det, PixelSetKind::kBox)
              .value_or(0.0);
      rec.a_box_depth =
          avg_iou(scene.depth_only.detections, det, PixelSetKind::kBox)
              .value_or(0.0);
      rec.a_mask_rgb =
          avg_iou(scene.rgb_only.detections, det, PixelSetKind::kMask)
              .value_or(0.0);
      rec.a_mask_depth =
          avg_iou(scene.depth_only.detections, det, PixelSetKind::kMask)
              .value_or(0.0);
      for (const Mask& gt : scene.gt_masks)
        rec.gt_iou = std::max(rec.gt_iou, mask_iou(det.mask, gt));

      overall.add(rec);
      per_class[det.label].add(rec);
      auto it = std::find_if(per_split.begin(), per_split.end(),
                             [&](const auto& p) { return p.first == rec.split; });
      if (it == per_split.end()) {
        per_split.emplace_back(rec.split, Accumulator{});
        it = std::prev(per_split.end());
      }
      it->second.add(rec);
      report.per_detection.push_back(std::move(rec));
    }
  }

  if (overall.n == 0)
    throw DataError("mc_report: no output detections to score");

  report.overall = overall.finish();
  for (const auto& [label, acc] : per_class)
    report.per_class[label] = acc.finish();
  for (const auto& [split, acc] : per_split)
    report.per_split.emplace_back(split, acc.finish());
  // With two modalities each contributing one term per output detection,
  // the modality-mean variant coincides with the flat mean; both are kept
  // in the report so the identity stays visible.
  report.box_mc_modality_mean =
      0.5 * (report.overall.box_mc_rgb + report.overall.box_mc_depth);
  report.mask_mc_modality_mean =
      0.5 * (report.overall.mask_mc_rgb + report.overall.mask_mc_depth);
  return report;
}

void write_mc_report(const MCReport& report,
                     const std::filesystem::path& json_path) {
  ojson j;
  ojson dets = ojson::array();
  for (const DetectionRecord& r : report.per_detection) {
    ojson jr;
    jr["scene_id"] = r.scene_id;
    jr["split"] = r.split;
    jr["label"] = r.label;
    jr["confidence"] = r.confidence;
    jr["a_box_rgb"] = r.a_box_rgb;
    jr["a_box_depth"] = r.a_box_depth;
    jr["a_mask_rgb"] = r.a_mask_rgb;
    jr["a_mask_depth"] = r.a_mask_depth;
    if (r.gt_iou >= 0.0)
      jr["gt_iou"] = r.gt_iou;
    else
      jr["gt_iou"] = nullptr;
    dets.push_back(std::move(jr));
  }
  j["per_detection"] = std::move(dets);

  ojson jc = ojson::object();
  for (const auto& [label, agg] : report.per_class)
    jc[std::to_string(label)] = aggregate_json(agg, false);
  j["per_class"] = std::move(jc);

  ojson js = ojson::object();
  for (const auto& [split, agg] : report.per_split)
    js[split] = aggregate_json(agg, true);
  j["per_split"] = std::move(js);

  ojson jm = ojson::object();
  jm["rgb_only"] = ojson{{"box_mc", report.overall.box_mc_rgb},
                         {"mask_mc", report.overall.mask_mc_rgb}};
  jm["depth_only"] = ojson{{"box_mc", report.overall.box_mc_depth},
                           {"mask_mc", report.overall.mask_mc_depth}};
  j["per_modality"] = std::move(jm);

  j["overall"] = aggregate_json(report.overall, true);
  j["box_mc_modality_mean"] = report.box_mc_modality_mean;
  j["mask_mc_modality_mean"] = report.mask_mc_modality_mean;

  std::ofstream out(json_path);
  if (!out) throw DataError("cannot write MC report: " + json_path.string());
  out << j.dump(2) << "\n";
}

void write_mc_class_csv(const MCReport& report,
                        const std::filesystem::path& csv_path) {
  std::ofstream out(csv_path);
  if (!out) throw DataError("cannot write MC CSV: " + csv_path.string());
  out << "class,mask_mc,mask_mc_rgb,mask_mc_depth,box_mc,box_mc_rgb,"
         "box_mc_depth\n";
  out.precision(17);
  for (const auto& [label, a] : report.per_class)
    out << label << ',' << a.mask_mc << ',' << a.mask_mc_rgb << ','
        << a.mask_mc_depth << ',' << a.box_mc << ',' << a.box_mc_rgb << ','
        << a.box_mc_depth << "\n";
}

}  // namespace mmr
