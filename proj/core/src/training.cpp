#include "mmr/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "mmr/errors.hpp"
#include "mmr/harness.hpp"

namespace mmr {
namespace {

using ojson = nlohmann::ordered_json;

constexpr double kProbFloor = 1e-12;

double clamp_prob(double p) {
  return std::min(1.0 - kProbFloor, std::max(kProbFloor, p));
}

// Class-agnostic box AP of the current parameters over one scene list.
double val_box_ap(const DetectorParams& params,
                  const std::vector<SceneSample>& scenes,
                  const std::vector<SceneGT>& gt,
                  const std::vector<double>& thresholds,
                  ModalityCondition condition) {
  std::vector<DetectionSet> sets;
  sets.reserve(scenes.size());
  for (const SceneSample& scene : scenes)
    sets.push_back(
        detect(params, scene.rgb, scene.depth, condition, scene.scene_id));
  return average_precision(sets, gt, thresholds, true).box_map;
}

}  // namespace

const char* ensemble_mode_name(EnsembleMode m) {
  switch (m) {
    case EnsembleMode::kStandard:
      return "standard";
    case EnsembleMode::kDynamicEnsemble:
      return "dynamic_ensemble";
  }
  throw DataError("unknown ensemble mode");
}

EnsembleMode parse_ensemble_mode(const std::string& name) {
  if (name == "standard") return EnsembleMode::kStandard;
  if (name == "dynamic_ensemble") return EnsembleMode::kDynamicEnsemble;
  throw DataError("unknown ensemble mode: " + name);
}

void TrainConfig::validate() {
  if (epochs < 1) throw DataError("train: epochs must be >= 1");
  if (batch_size < 1) throw DataError("train: batch_size must be >= 1");
  if (!(lr > 0.0)) throw DataError("train: lr must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0))
    throw DataError("train: momentum must lie in [0, 1)");
  if (!(lr_decay_factor > 0.0 && lr_decay_factor <= 1.0))
    throw DataError("train: lr_decay_factor must lie in (0, 1]");
  if (lr_decay_epochs < 1) throw DataError("train: lr_decay_epochs must be >= 1");
  if (!(lambda_cls >= 0.0) || !(lambda_obj >= 0.0))
    throw DataError("train: loss weights must be non-negative");
  if (mode == EnsembleMode::kStandard) condition_distribution = {1.0, 0.0, 0.0};
  double sum = 0.0;
  for (double p : condition_distribution) {
    if (!(p >= 0.0))
      throw DataError("train: condition distribution entries must be >= 0");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-9)
    throw DataError("train: condition distribution must sum to 1");
  arch.validate();
}

TrainConfig TrainConfig::from_kv(const KvConfig& kv) {
  TrainConfig c;
  c.epochs = kv.get_int("epochs", c.epochs);
  c.batch_size = kv.get_int("batch_size", c.batch_size);
  c.lr = kv.get_double("lr", c.lr);
  c.momentum = kv.get_double("momentum", c.momentum);
  c.lr_decay_factor = kv.get_double("lr_decay_factor", c.lr_decay_factor);
  c.lr_decay_epochs = kv.get_int("lr_decay_epochs", c.lr_decay_epochs);
  c.seed = kv.get_u64("seed", c.seed);
  c.mode = parse_ensemble_mode(
      kv.get_string("mode", ensemble_mode_name(c.mode)));
  c.condition_distribution[0] =
      kv.get_double("p_both", c.condition_distribution[0]);
  c.condition_distribution[1] =
      kv.get_double("p_rgb_only", c.condition_distribution[1]);
  c.condition_distribution[2] =
      kv.get_double("p_depth_only", c.condition_distribution[2]);
  c.lambda_cls = kv.get_double("lambda_cls", c.lambda_cls);
  c.lambda_obj = kv.get_double("lambda_obj", c.lambda_obj);
  c.arch = ArchConfig::from_kv(kv);
  c.validate();
  return c;
}

ModalityCondition sample_condition(Rng& rng,
                                   const std::array<double, 3>& distribution) {
  double sum = 0.0;
  for (double p : distribution) {
    if (!(p >= 0.0))
      throw DataError("sample_condition: negative probability");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-9)
    throw DataError("sample_condition: distribution must sum to 1");
  const double u = rng.uniform();
  double cum = distribution[0];
  if (u < cum) return ModalityCondition::kBoth;
  cum += distribution[1];
  if (u < cum) return ModalityCondition::kRgbOnly;
  return ModalityCondition::kDepthOnly;
}

Targets rasterize_targets(const ArchConfig& arch, const SceneSample& scene) {
  const int stride = ArchConfig::kHeadStride;
  const int full_h = scene.rgb.h, full_w = scene.rgb.w;
  if (full_h % stride != 0 || full_w % stride != 0)
    throw DataError("rasterize_targets: extents not divisible by the stride");
  const int h = full_h / stride, w = full_w / stride;
  const int background = arch.num_classes;
  const int min_coverage = stride * stride / 2;

  Targets t{Grid<int>(h, w, background), Grid<double>(h, w, 0.0)};
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      int best = -1, best_cov = 0;
      for (size_t i = 0; i < scene.instances.size(); ++i) {
        const Mask& mask = scene.instances[i].mask;
        int cov = 0;
        for (int dy = 0; dy < stride; ++dy)
          for (int dx = 0; dx < stride; ++dx)
            cov += mask.test(y * stride + dy, x * stride + dx) ? 1 : 0;
        if (cov > best_cov) {
          best_cov = cov;
          best = static_cast<int>(i);
        }
      }
      if (best >= 0 && best_cov >= min_coverage) {
        t.label.at(y, x) = scene.instances[best].label;
        t.objectness.at(y, x) = 1.0;
      }
    }
  return t;
}

LossResult loss(const DenseMaps& maps, const Targets& targets,
                double lambda_cls, double lambda_obj) {
  const Tensor& probs = maps.class_probs;
  const Tensor& obj = maps.objectness;
  if (targets.label.h != probs.h || targets.label.w != probs.w)
    throw DataError("loss: target resolution mismatch");
  const int h = probs.h, w = probs.w;
  const double n = static_cast<double>(h) * w;

  LossResult r;
  r.gprobs = Tensor::zeros_like(probs);
  r.gobj = Tensor::zeros_like(obj);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int cls = targets.label.at(y, x);
      if (cls < 0 || cls >= probs.c)
        throw DataError("loss: target class out of range");
      const double p = std::max(kProbFloor, probs.at(cls, y, x));
      r.cls += -std::log(p);
      r.gprobs.at(cls, y, x) = lambda_cls * (-1.0 / p) / n;

      const double target = targets.objectness.at(y, x);
      const double o = clamp_prob(obj.at(0, y, x));
      r.obj += -(target * std::log(o) + (1.0 - target) * std::log(1.0 - o));
      r.gobj.at(0, y, x) =
          lambda_obj * (-target / o + (1.0 - target) / (1.0 - o)) / n;
    }
  r.cls /= n;
  r.obj /= n;
  r.total = lambda_cls * r.cls + lambda_obj * r.obj;
  if (!std::isfinite(r.total)) throw NumericError("loss is not finite");
  return r;
}

TrainResult train(const TrainConfig& config,
                  const std::vector<SceneSample>& train_scenes,
                  const std::vector<SceneSample>& val_scenes,
                  TrainLog* live_log) {
  TrainConfig cfg = config;
  cfg.validate();
  if (train_scenes.empty()) throw DataError("train: no training scenes");

  TrainLog local_log;
  TrainLog& log = live_log ? *live_log : local_log;
  log = TrainLog{};

  DetectorParams params = DetectorParams::create(
      cfg.arch, mix_seed(cfg.seed, kInitStream));
  DetectorParams best = params;
  Rng cond_rng(mix_seed(cfg.seed, kConditionStream));
  Rng order_rng(mix_seed(cfg.seed, kOrderStream));

  std::vector<Targets> targets;
  targets.reserve(train_scenes.size());
  for (const SceneSample& scene : train_scenes)
    targets.push_back(rasterize_targets(cfg.arch, scene));

  std::vector<SceneGT> val_gt;
  int64_t val_gt_total = 0;
  for (const SceneSample& scene : val_scenes) {
    val_gt.push_back(scene_gt(scene));
    val_gt_total += static_cast<int64_t>(scene.instances.size());
  }
  const bool run_val = !val_scenes.empty() && val_gt_total > 0;
  const std::vector<double> thresholds = coco_thresholds();

  std::vector<size_t> indices(train_scenes.size());
  std::iota(indices.begin(), indices.end(), 0);
  int global_iter = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr_e =
        cfg.lr * std::pow(cfg.lr_decay_factor, epoch / cfg.lr_decay_epochs);
    order_rng.shuffle(indices);

    double epoch_loss = 0.0;
    int epoch_iters = 0;
    for (size_t start = 0; start < indices.size();
         start += static_cast<size_t>(cfg.batch_size)) {
      const size_t stop =
          std::min(indices.size(), start + static_cast<size_t>(cfg.batch_size));
      const double batch_n = static_cast<double>(stop - start);
      const ModalityCondition condition =
          sample_condition(cond_rng, cfg.condition_distribution);

      params.zero_grad();
      double batch_loss = 0.0, batch_cls = 0.0, batch_obj = 0.0;
      for (size_t k = start; k < stop; ++k) {
        const SceneSample& scene = train_scenes[indices[k]];
        ForwardContext ctx;
        DenseMaps maps =
            forward_dense(params, scene.rgb, scene.depth, condition, &ctx);
        LossResult l;
        try {
          l = loss(maps, targets[indices[k]], cfg.lambda_cls, cfg.lambda_obj);
        } catch (const NumericError& e) {
          throw NumericError("training diverged at epoch " +
                             std::to_string(epoch) + ", iteration " +
                             std::to_string(global_iter) + ": " + e.what());
        }
        batch_loss += l.total / batch_n;
        batch_cls += l.cls / batch_n;
        batch_obj += l.obj / batch_n;
        for (double& g : l.gprobs.v) g /= batch_n;
        for (double& g : l.gobj.v) g /= batch_n;
        model_backward(params, ctx, l.gprobs, l.gobj);
      }
      if (!std::isfinite(batch_loss))
        throw NumericError("training diverged at epoch " +
                           std::to_string(epoch) + ", iteration " +
                           std::to_string(global_iter));

      params.visit([&](ParamTensor& p) {
        for (size_t i = 0; i < p.v.size(); ++i) {
          p.m[i] = cfg.momentum * p.m[i] - lr_e * p.g[i];
          p.v[i] += p.m[i];
        }
      });

      IterationRecord rec;
      rec.epoch = epoch;
      rec.iteration = global_iter++;
      rec.condition = condition;
      rec.loss = batch_loss;
      rec.loss_cls = batch_cls;
      rec.loss_obj = batch_obj;
      rec.lr = lr_e;
      log.iterations.push_back(rec);
      epoch_loss += batch_loss;
      ++epoch_iters;
    }

    EpochRecord er;
    er.epoch = epoch;
    er.mean_loss = epoch_loss / std::max(1, epoch_iters);
    if (run_val) {
      er.val_box_ap_both = val_box_ap(params, val_scenes, val_gt, thresholds,
                                      ModalityCondition::kBoth);
      er.val_box_ap_rgb_only = val_box_ap(params, val_scenes, val_gt,
                                          thresholds,
                                          ModalityCondition::kRgbOnly);
      er.val_box_ap_depth_only = val_box_ap(params, val_scenes, val_gt,
                                            thresholds,
                                            ModalityCondition::kDepthOnly);
      // Each mode keeps the checkpoint that is best at its own objective:
      // standard training validates under full input, the dynamic ensemble
      // under every sampled condition.
      er.val_metric =
          cfg.mode == EnsembleMode::kDynamicEnsemble
              ? (er.val_box_ap_both + er.val_box_ap_rgb_only +
                 er.val_box_ap_depth_only) /
                    3.0
              : er.val_box_ap_both;
      if (er.val_metric > log.best_metric) {
        log.best_metric = er.val_metric;
        log.best_epoch = epoch;
        best = params;
        er.best = true;
      }
    }
    log.epochs.push_back(er);
  }

  if (!run_val) {
    log.best_epoch = cfg.epochs - 1;
    best = params;
  }
  return {std::move(best), std::move(log)};
}

void write_train_log(const TrainLog& log,
                     const std::filesystem::path& jsonl_path,
                     const std::filesystem::path& summary_path) {
  std::ofstream lines(jsonl_path);
  if (!lines)
    throw DataError("cannot write train log: " + jsonl_path.string());
  for (const IterationRecord& r : log.iterations) {
    ojson j;
    j["epoch"] = r.epoch;
    j["iteration"] = r.iteration;
    j["condition"] = condition_name(r.condition);
    j["loss"] = r.loss;
    j["loss_cls"] = r.loss_cls;
    j["loss_obj"] = r.loss_obj;
    j["lr"] = r.lr;
    lines << j.dump() << "\n";
  }

  ojson summary;
  ojson epochs = ojson::array();
  for (const EpochRecord& e : log.epochs) {
    ojson j;
    j["epoch"] = e.epoch;
    j["mean_loss"] = e.mean_loss;
    j["val_box_ap_both"] = e.val_box_ap_both;
    j["val_box_ap_rgb_only"] = e.val_box_ap_rgb_only;
    j["val_box_ap_depth_only"] = e.val_box_ap_depth_only;
    j["val_metric"] = e.val_metric;
    j["best"] = e.best;
    epochs.push_back(std::move(j));
  }
  summary["epochs"] = std::move(epochs);
  summary["best_epoch"] = log.best_epoch;
  summary["best_metric"] = log.best_metric;
  summary["checkpoint"] = log.checkpoint_path;
  std::ofstream out(summary_path);
  if (!out)
    throw DataError("cannot write train summary: " + summary_path.string());
  out << summary.dump(2) << "\n";
}

}  // namespace mmr
