#include "mmr/harness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "mmr/errors.hpp"

namespace mmr {
namespace {

using ojson = nlohmann::ordered_json;

constexpr int kRecallGrid = 101;

struct DetRef {
  double confidence;
  int scene = 0;
  int det = 0;
};

// AP for one class at one threshold from a precomputed per-scene IOU view.
double ap_at_threshold(const std::vector<DetRef>& order,
                       const std::vector<std::vector<std::vector<double>>>& iou,
                       const std::vector<int>& gt_count, int64_t total_gt,
                       double threshold) {
  std::vector<std::vector<char>> used;
  used.reserve(gt_count.size());
  for (int n : gt_count) used.emplace_back(n, 0);

  std::vector<double> precision, recall;
  precision.reserve(order.size());
  recall.reserve(order.size());
  int64_t tp = 0;
  for (size_t k = 0; k < order.size(); ++k) {
    const DetRef& d = order[k];
    const std::vector<double>& row = iou[d.scene][d.det];
    int best = -1;
    double best_iou = 0.0;
    for (size_t g = 0; g < row.size(); ++g) {
      if (used[d.scene][g]) continue;
      if (row[g] > best_iou) {
        best_iou = row[g];
        best = static_cast<int>(g);
      }
    }
    if (best >= 0 && best_iou >= threshold) {
      used[d.scene][best] = 1;
      ++tp;
    }
    precision.push_back(static_cast<double>(tp) / static_cast<double>(k + 1));
    recall.push_back(static_cast<double>(tp) / static_cast<double>(total_gt));
  }

  if (precision.empty()) return 0.0;
  // Suffix-max precision envelope, then sample the 101-point recall grid.
  std::vector<double> envelope(precision);
  for (int k = static_cast<int>(envelope.size()) - 2; k >= 0; --k)
    envelope[k] = std::max(envelope[k], envelope[k + 1]);
  double sum = 0.0;
  size_t k = 0;
  for (int r = 0; r < kRecallGrid; ++r) {
    const double target = static_cast<double>(r) / (kRecallGrid - 1);
    while (k < recall.size() && recall[k] < target) ++k;
    if (k == recall.size()) break;
    sum += envelope[k];
  }
  return sum / kRecallGrid;
}

double mask_iou_or_zero(const Mask& a, const Mask& b) {
  if (a.empty() && b.empty()) return 0.0;
  return mask_iou(a, b);
}

ojson ap_to_json(const APResult& r) {
  ojson j;
  j["thresholds"] = r.thresholds;
  j["class_agnostic"] = r.class_agnostic;
  ojson jb = ojson::object(), jm = ojson::object();
  for (const auto& [cls, ap] : r.box_ap) jb[std::to_string(cls)] = ap;
  for (const auto& [cls, ap] : r.mask_ap) jm[std::to_string(cls)] = ap;
  j["box_ap"] = std::move(jb);
  j["mask_ap"] = std::move(jm);
  j["box_map"] = r.box_map;
  j["mask_map"] = r.mask_map;
  return j;
}

void write_json(const ojson& j, const std::filesystem::path& path,
                const char* what) {
  std::ofstream out(path);
  if (!out)
    throw DataError(std::string("cannot write ") + what + ": " + path.string());
  out << j.dump(2) << "\n";
}

ojson load_json(const std::filesystem::path& path, const char* what) {
  std::ifstream in(path);
  if (!in)
    throw DataError(std::string("cannot open ") + what + ": " + path.string());
  try {
    ojson j;
    in >> j;
    return j;
  } catch (const std::exception& e) {
    throw DataError(std::string("bad JSON in ") + path.string() + ": " +
                    e.what());
  }
}

// Average ranks with ties sharing the mean rank.
std::vector<double> ranks(const std::vector<double>& xs) {
  const size_t n = xs.size();
  std::vector<size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](size_t a, size_t b) { return xs[a] < xs[b]; });
  std::vector<double> rank(n, 0.0);
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && xs[idx[j + 1]] == xs[idx[i]]) ++j;
    const double mean_rank = 0.5 * (i + j) + 1.0;
    for (size_t k = i; k <= j; ++k) rank[idx[k]] = mean_rank;
    i = j + 1;
  }
  return rank;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const size_t n = a.size();
  double ma = 0, mb = 0;
  for (size_t i = 0; i < n; ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0, saa = 0, sbb = 0;
  for (size_t i = 0; i < n; ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0)
    return std::numeric_limits<double>::quiet_NaN();
  return sab / std::sqrt(saa * sbb);
}

}  // namespace

SceneGT scene_gt(const SceneSample& scene) {
  SceneGT gt;
  gt.scene_id = scene.scene_id;
  gt.height = scene.rgb.h;
  gt.width = scene.rgb.w;
  gt.instances = scene.instances;
  return gt;
}

std::vector<double> coco_thresholds() {
  std::vector<double> t;
  for (int i = 0; i < 10; ++i) t.push_back(0.5 + 0.05 * i);
  return t;
}

APResult average_precision(const std::vector<DetectionSet>& detections,
                           const std::vector<SceneGT>& gt,
                           const std::vector<double>& thresholds,
                           bool class_agnostic) {
  if (thresholds.empty()) throw DataError("average_precision: no thresholds");
  for (double t : thresholds)
    if (!(t > 0.0 && t <= 1.0))
      throw DataError("average_precision: thresholds must lie in (0, 1]");

  std::map<std::string, int> scene_index;
  for (size_t i = 0; i < gt.size(); ++i) {
    if (!scene_index.emplace(gt[i].scene_id, static_cast<int>(i)).second)
      throw DataError("average_precision: duplicate scene id " +
                      gt[i].scene_id);
  }

  int64_t total_gt = 0;
  std::map<int, int64_t> gt_per_class;
  for (const SceneGT& s : gt)
    for (const InstanceGT& inst : s.instances) {
      const int cls = class_agnostic ? 0 : inst.label;
      ++gt_per_class[cls];
      ++total_gt;
    }
  if (total_gt == 0)
    throw DataError("average_precision: ground truth is empty everywhere");

  APResult result;
  result.thresholds = thresholds;
  result.class_agnostic = class_agnostic;

  for (const auto& [cls, n_gt] : gt_per_class) {
    // Detections of this class in scene order, then per-scene IOU tables.
    std::vector<DetRef> order;
    std::vector<std::vector<std::vector<double>>> iou_box(gt.size()),
        iou_mask(gt.size());
    std::vector<int> gt_count(gt.size(), 0);
    std::vector<std::vector<int>> gt_ids(gt.size());
    for (size_t s = 0; s < gt.size(); ++s)
      for (size_t g = 0; g < gt[s].instances.size(); ++g)
        if (class_agnostic || gt[s].instances[g].label == cls)
          gt_ids[s].push_back(static_cast<int>(g));
    for (size_t s = 0; s < gt.size(); ++s)
      gt_count[s] = static_cast<int>(gt_ids[s].size());

    for (const DetectionSet& set : detections) {
      const auto it = scene_index.find(set.scene_id);
      if (it == scene_index.end())
        throw DataError("average_precision: detections reference unknown "
                        "scene " +
                        set.scene_id);
      const int s = it->second;
      for (size_t d = 0; d < set.detections.size(); ++d) {
        const Detection& det = set.detections[d];
        if (!class_agnostic && det.label != cls) continue;
        DetRef ref;
        ref.confidence = det.confidence;
        ref.scene = s;
        ref.det = static_cast<int>(iou_box[s].size());
        std::vector<double> row_box, row_mask;
        row_box.reserve(gt_ids[s].size());
        row_mask.reserve(gt_ids[s].size());
        for (int g : gt_ids[s]) {
          const InstanceGT& inst = gt[s].instances[g];
          row_box.push_back(box_iou(det.box, inst.box));
          row_mask.push_back(mask_iou_or_zero(det.mask, inst.mask));
        }
        iou_box[s].push_back(std::move(row_box));
        iou_mask[s].push_back(std::move(row_mask));
        order.push_back(ref);
      }
    }
    std::stable_sort(order.begin(), order.end(),
                     [](const DetRef& a, const DetRef& b) {
                       return a.confidence > b.confidence;
                     });

    double box_sum = 0.0, mask_sum = 0.0;
    for (double t : thresholds) {
      box_sum += ap_at_threshold(order, iou_box, gt_count, n_gt, t);
      mask_sum += ap_at_threshold(order, iou_mask, gt_count, n_gt, t);
    }
    result.box_ap[cls] = box_sum / thresholds.size();
    result.mask_ap[cls] = mask_sum / thresholds.size();
  }

  for (const auto& [cls, ap] : result.box_ap) result.box_map += ap;
  for (const auto& [cls, ap] : result.mask_ap) result.mask_map += ap;
  result.box_map /= result.box_ap.size();
  result.mask_map /= result.mask_ap.size();
  return result;
}

void write_ap_result(const APResult& result,
                     const std::filesystem::path& json_path) {
  write_json(ap_to_json(result), json_path, "AP result");
}

std::vector<ScenePredictions> run_conditions(
    const DetectorParams& params, const std::vector<SceneSample>& scenes) {
  std::vector<ScenePredictions> out;
  out.reserve(scenes.size());
  for (const SceneSample& scene : scenes) {
    ScenePredictions p;
    p.output = detect(params, scene.rgb, scene.depth, ModalityCondition::kBoth,
                      scene.scene_id);
    p.rgb_only = detect(params, scene.rgb, scene.depth,
                        ModalityCondition::kRgbOnly, scene.scene_id);
    p.depth_only = detect(params, scene.rgb, scene.depth,
                          ModalityCondition::kDepthOnly, scene.scene_id);
    p.split = split_name(scene.split);
    for (const InstanceGT& inst : scene.instances)
      p.gt_masks.push_back(inst.mask);
    out.push_back(std::move(p));
  }
  return out;
}

AblationReport modality_ablation(const DetectorParams& params,
                                 const std::vector<SceneSample>& scenes,
                                 const std::string& model_id) {
  if (scenes.empty()) throw DataError("modality_ablation: empty split");
  const std::vector<ScenePredictions> preds = run_conditions(params, scenes);

  std::vector<SceneGT> gt;
  gt.reserve(scenes.size());
  for (const SceneSample& s : scenes) gt.push_back(scene_gt(s));

  const std::vector<double> thresholds = coco_thresholds();
  AblationReport report;
  report.model_id = model_id;

  // Table layout: rgb_off removes the RGB input, so the model runs in the
  // depth-only condition, and vice versa.
  const std::vector<std::pair<std::string, DetectionSet ScenePredictions::*>>
      rows = {{"both", &ScenePredictions::output},
              {"rgb_off", &ScenePredictions::depth_only},
              {"depth_off", &ScenePredictions::rgb_only}};
  for (const auto& [name, member] : rows) {
    std::vector<DetectionSet> sets;
    sets.reserve(preds.size());
    for (const ScenePredictions& p : preds) sets.push_back(p.*member);
    const APResult ap = average_precision(sets, gt, thresholds, true);
    report.conditions.push_back({name, ap.box_map, ap.mask_map});
  }

  bool any_output = false;
  for (const ScenePredictions& p : preds)
    any_output = any_output || !p.output.detections.empty();
  if (any_output) {
    const MCReport mc = mc_report(preds);
    report.box_mc = mc.overall.box_mc;
    report.mask_mc = mc.overall.mask_mc;
  }
  return report;
}

void write_ablation_report(const AblationReport& report,
                           const std::filesystem::path& json_path) {
  ojson j;
  j["model_id"] = report.model_id;
  ojson jc = ojson::object();
  for (const ConditionResult& c : report.conditions)
    jc[c.name] = ojson{{"box_ap", c.box_ap}, {"mask_ap", c.mask_ap}};
  j["conditions"] = std::move(jc);
  j["mc"] = ojson{{"box", report.box_mc}, {"mask", report.mask_mc}};
  write_json(j, json_path, "ablation report");
}

GateShiftReport gate_shift_analysis(const DetectorParams& params,
                                    const std::vector<SceneSample>& scenes) {
  if (scenes.empty()) throw DataError("gate_shift_analysis: no scenes");
  const int levels = params.arch.levels;
  const std::vector<std::pair<std::string, ModalityCondition>> conditions = {
      {"both", ModalityCondition::kBoth},
      {"rgb_only", ModalityCondition::kRgbOnly},
      {"depth_only", ModalityCondition::kDepthOnly}};

  // per condition, per scene, per level: {rgb, depth} mean weights
  std::vector<std::vector<std::vector<std::array<double, 2>>>> means(
      conditions.size());
  for (size_t ci = 0; ci < conditions.size(); ++ci) {
    means[ci].reserve(scenes.size());
    for (const SceneSample& scene : scenes) {
      ForwardContext ctx;
      forward_dense(params, scene.rgb, scene.depth, conditions[ci].second,
                    &ctx);
      std::vector<std::array<double, 2>> per_level(levels);
      for (int j = 0; j < levels; ++j)
        per_level[j] = {mean_gate_weight(ctx.fuse.record, j, 0),
                        mean_gate_weight(ctx.fuse.record, j, 1)};
      means[ci].push_back(std::move(per_level));
    }
  }

  GateShiftReport report;
  report.levels = levels;
  report.scenes = static_cast<int>(scenes.size());
  for (size_t ci = 0; ci < conditions.size(); ++ci) {
    std::vector<std::array<double, 2>> avg(levels, {0.0, 0.0});
    for (const auto& scene_means : means[ci])
      for (int j = 0; j < levels; ++j) {
        avg[j][0] += scene_means[j][0];
        avg[j][1] += scene_means[j][1];
      }
    for (int j = 0; j < levels; ++j) {
      avg[j][0] /= scenes.size();
      avg[j][1] /= scenes.size();
    }
    report.mean_weights.emplace_back(conditions[ci].first, std::move(avg));
  }

  report.depth_up_rgb_removed.assign(levels, 0.0);
  report.rgb_up_depth_removed.assign(levels, 0.0);
  for (size_t s = 0; s < scenes.size(); ++s)
    for (int j = 0; j < levels; ++j) {
      // conditions: 0 = both, 1 = rgb_only (depth removed), 2 = depth_only
      // (rgb removed)
      if (means[2][s][j][1] > means[0][s][j][1])
        report.depth_up_rgb_removed[j] += 1.0;
      if (means[1][s][j][0] > means[0][s][j][0])
        report.rgb_up_depth_removed[j] += 1.0;
    }
  for (int j = 0; j < levels; ++j) {
    report.depth_up_rgb_removed[j] /= scenes.size();
    report.rgb_up_depth_removed[j] /= scenes.size();
  }
  return report;
}

void write_gate_shift_report(const GateShiftReport& report,
                             const std::filesystem::path& json_path) {
  ojson j;
  j["levels"] = report.levels;
  j["scenes"] = report.scenes;
  ojson jw = ojson::object();
  for (const auto& [name, per_level] : report.mean_weights) {
    ojson rows = ojson::array();
    for (const auto& w : per_level)
      rows.push_back(ojson{{"rgb", w[0]}, {"depth", w[1]}});
    jw[name] = std::move(rows);
  }
  j["mean_weights"] = std::move(jw);
  j["depth_up_rgb_removed"] = report.depth_up_rgb_removed;
  j["rgb_up_depth_removed"] = report.rgb_up_depth_removed;
  write_json(j, json_path, "gate shift report");
}

McConfidenceReport mc_vs_confidence(const MCReport& report) {
  McConfidenceReport out;
  for (const auto& [split, agg] : report.per_split) {
    SplitComparison cmp;
    cmp.split = split;
    cmp.mean_box_mc = agg.box_mc;
    cmp.mean_mask_mc = agg.mask_mc;
    cmp.mean_confidence = agg.mean_confidence;
    cmp.detections = agg.detections;
    out.splits.push_back(std::move(cmp));
  }
  if (!out.splits.empty()) {
    double mc_mean = 0, conf_mean = 0;
    for (const SplitComparison& s : out.splits) {
      mc_mean += s.mean_mask_mc / 100.0;
      conf_mean += s.mean_confidence;
    }
    mc_mean /= out.splits.size();
    conf_mean /= out.splits.size();
    for (const SplitComparison& s : out.splits) {
      out.mc_variance += (s.mean_mask_mc / 100.0 - mc_mean) *
                         (s.mean_mask_mc / 100.0 - mc_mean);
      out.confidence_variance += (s.mean_confidence - conf_mean) *
                                 (s.mean_confidence - conf_mean);
    }
    out.mc_variance /= out.splits.size();
    out.confidence_variance /= out.splits.size();

    const SplitComparison& first = out.splits.front();
    const SplitComparison& last = out.splits.back();
    if (first.mean_mask_mc > 0.0)
      out.mc_relative_drop =
          (first.mean_mask_mc - last.mean_mask_mc) / first.mean_mask_mc;
    if (first.mean_confidence > 0.0)
      out.confidence_relative_drop =
          (first.mean_confidence - last.mean_confidence) /
          first.mean_confidence;
  }

  std::vector<double> mc_vals, gt_vals;
  for (const DetectionRecord& r : report.per_detection) {
    if (r.gt_iou < 0.0) continue;
    mc_vals.push_back(50.0 * (r.a_mask_rgb + r.a_mask_depth));
    gt_vals.push_back(r.gt_iou);
  }
  out.ranked_detections = static_cast<int64_t>(mc_vals.size());
  if (mc_vals.size() >= 2)
    out.spearman_mc_gt = pearson(ranks(mc_vals), ranks(gt_vals));
  return out;
}

void write_mc_confidence_report(const McConfidenceReport& report,
                                const std::filesystem::path& json_path) {
  ojson j;
  ojson js = ojson::object();
  for (const SplitComparison& s : report.splits)
    js[s.split] = ojson{{"box_mc", s.mean_box_mc},
                        {"mask_mc", s.mean_mask_mc},
                        {"mean_confidence", s.mean_confidence},
                        {"detections", s.detections}};
  j["splits"] = std::move(js);
  j["mc_variance"] = report.mc_variance;
  j["confidence_variance"] = report.confidence_variance;
  j["mc_relative_drop"] = report.mc_relative_drop;
  j["confidence_relative_drop"] = report.confidence_relative_drop;
  if (std::isnan(report.spearman_mc_gt))
    j["spearman_mc_gt"] = nullptr;
  else
    j["spearman_mc_gt"] = report.spearman_mc_gt;
  j["ranked_detections"] = report.ranked_detections;
  write_json(j, json_path, "comparison report");
}

void write_mc_scatter_csv(const MCReport& report,
                          const std::filesystem::path& csv_path) {
  std::ofstream out(csv_path);
  if (!out) throw DataError("cannot write scatter CSV: " + csv_path.string());
  out << "scene_id,split,mask_mc,confidence,gt_iou\n";
  out.precision(17);
  for (const DetectionRecord& r : report.per_detection) {
    out << r.scene_id << ',' << r.split << ','
        << 50.0 * (r.a_mask_rgb + r.a_mask_depth) << ',' << r.confidence
        << ',';
    if (r.gt_iou >= 0.0) out << r.gt_iou;
    out << "\n";
  }
}

void write_markdown_report(const std::filesystem::path& out_md,
                           const std::filesystem::path& ablation_json,
                           const std::filesystem::path& mc_json,
                           const std::filesystem::path& comparison_json,
                           const std::filesystem::path& gate_json,
                           const std::vector<std::string>& image_files) {
  std::ostringstream md;
  md.precision(4);
  md << "# Multimodal Redundancy Report\n";

  if (!ablation_json.empty()) {
    const ojson j = load_json(ablation_json, "ablation report");
    md << "\n## Modality Ablation (" << j.value("model_id", std::string("?"))
       << ")\n\n";
    md << "| Condition | Box AP | Mask AP |\n|---|---|---|\n";
    for (const auto& [name, row] : j.at("conditions").items())
      md << "| " << name << " | " << row.at("box_ap").get<double>() << " | "
         << row.at("mask_ap").get<double>() << " |\n";
    md << "\nMC score: box " << j.at("mc").at("box").get<double>() << "%, mask "
       << j.at("mc").at("mask").get<double>() << "%\n";
  }

  if (!mc_json.empty()) {
    const ojson j = load_json(mc_json, "MC report");
    md << "\n## Consistency by Split\n\n";
    md << "| Split | Box MC | Mask MC | Mean confidence | Detections |\n"
       << "|---|---|---|---|---|\n";
    for (const auto& [split, row] : j.at("per_split").items())
      md << "| " << split << " | " << row.at("box_mc").get<double>() << " | "
         << row.at("mask_mc").get<double>() << " | "
         << row.at("mean_confidence").get<double>() << " | "
         << row.at("detections").get<int64_t>() << " |\n";
    md << "\n## Consistency by Class\n\n";
    md << "| Class | Box MC | Mask MC | Detections |\n|---|---|---|---|\n";
    for (const auto& [cls, row] : j.at("per_class").items())
      md << "| " << cls << " | " << row.at("box_mc").get<double>() << " | "
         << row.at("mask_mc").get<double>() << " | "
         << row.at("detections").get<int64_t>() << " |\n";
  }

  if (!comparison_json.empty()) {
    const ojson j = load_json(comparison_json, "comparison report");
    md << "\n## MC vs Confidence\n\n";
    md << "| Split | Mask MC | Mean confidence |\n|---|---|---|\n";
    for (const auto& [split, row] : j.at("splits").items())
      md << "| " << split << " | " << row.at("mask_mc").get<double>() << " | "
         << row.at("mean_confidence").get<double>() << " |\n";
    md << "\nRelative drop first to last split: MC "
       << j.at("mc_relative_drop").get<double>() << ", confidence "
       << j.at("confidence_relative_drop").get<double>() << "\n";
    if (!j.at("spearman_mc_gt").is_null())
      md << "\nSpearman rank correlation of MC with ground-truth IOU: "
         << j.at("spearman_mc_gt").get<double>() << " over "
         << j.at("ranked_detections").get<int64_t>() << " detections\n";
  }

  if (!gate_json.empty()) {
    const ojson j = load_json(gate_json, "gate shift report");
    md << "\n## Gate Weight Shift\n\n";
    md << "| Condition | Level | RGB weight | Depth weight |\n"
       << "|---|---|---|---|\n";
    for (const auto& [name, rows] : j.at("mean_weights").items()) {
      int level = 0;
      for (const auto& row : rows)
        md << "| " << name << " | " << level++ << " | "
           << row.at("rgb").get<double>() << " | "
           << row.at("depth").get<double>() << " |\n";
    }
    md << "\nFraction of scenes with higher depth weight after removing the "
          "RGB input, per level:";
    for (const auto& v : j.at("depth_up_rgb_removed"))
      md << " " << v.get<double>();
    md << "\n";
  }

  if (!image_files.empty()) {
    md << "\n## Gate Heatmaps\n\n";
    for (const std::string& img : image_files)
      md << "![" << img << "](" << img << ")\n";
  }

  std::ofstream out(out_md);
  if (!out) throw DataError("cannot write report: " + out_md.string());
  out << md.str();
}

}  // namespace mmr
