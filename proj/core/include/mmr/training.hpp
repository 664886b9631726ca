#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mmr/kvconfig.hpp"
#include "mmr/model.hpp"
#include "mmr/rng.hpp"
#include "mmr/synthdata.hpp"
#include "mmr/tensor.hpp"

namespace mmr {

// Salts for the independent random streams inside train(), public so the
// exact sequences can be replayed against the primitives.
inline constexpr uint64_t kInitStream = 0xA1;
inline constexpr uint64_t kConditionStream = 0xB2;
inline constexpr uint64_t kOrderStream = 0xC3;

enum class EnsembleMode { kStandard, kDynamicEnsemble };

const char* ensemble_mode_name(EnsembleMode m);
EnsembleMode parse_ensemble_mode(const std::string& name);

struct TrainConfig {
  int epochs = 30;
  int batch_size = 4;
  double lr = 0.05;
  double momentum = 0.9;
  double lr_decay_factor = 0.5;
  int lr_decay_epochs = 10;
  uint64_t seed = 0;
  EnsembleMode mode = EnsembleMode::kDynamicEnsemble;
  // Order: both, rgb_only, depth_only.
  std::array<double, 3> condition_distribution = {1.0 / 3, 1.0 / 3, 1.0 / 3};
  double lambda_cls = 1.0;
  double lambda_obj = 1.0;
  ArchConfig arch;

  // Throws DataError on invalid settings; standard mode pins the condition
  // distribution to always-both.
  void validate();
  static TrainConfig from_kv(const KvConfig& kv);
};

// One i.i.d. draw over {both, rgb_only, depth_only}.
ModalityCondition sample_condition(Rng& rng,
                                   const std::array<double, 3>& distribution);

// Head-resolution targets: a cell takes the class of the instance covering
// most of its input block when that covers at least half the block;
// objectness is 1 exactly on instance cells.
struct Targets {
  Grid<int> label;
  Grid<double> objectness;
};

Targets rasterize_targets(const ArchConfig& arch, const SceneSample& scene);

struct LossResult {
  double total = 0.0;
  double cls = 0.0;  // unweighted per-pixel cross-entropy mean
  double obj = 0.0;  // unweighted per-pixel binary cross-entropy mean
  Tensor gprobs;
  Tensor gobj;
};

LossResult loss(const DenseMaps& maps, const Targets& targets,
                double lambda_cls, double lambda_obj);

struct IterationRecord {
  int epoch = 0;
  int iteration = 0;  // global, 0-based
  ModalityCondition condition = ModalityCondition::kBoth;
  double loss = 0.0;
  double loss_cls = 0.0;
  double loss_obj = 0.0;
  double lr = 0.0;
};

struct EpochRecord {
  int epoch = 0;
  double mean_loss = 0.0;
  double val_box_ap_both = -1.0;
  double val_box_ap_rgb_only = -1.0;
  double val_box_ap_depth_only = -1.0;
  double val_metric = -1.0;  // mean of the three condition APs
  bool best = false;
};

struct TrainLog {
  std::vector<IterationRecord> iterations;
  std::vector<EpochRecord> epochs;
  int best_epoch = -1;
  double best_metric = -1.0;
  std::string checkpoint_path;
};

struct TrainResult {
  DetectorParams params;  // best validation epoch (final when no val)
  TrainLog log;
};

// Serial minibatch momentum-SGD. Each iteration samples one condition for
// the whole batch and zeroes the dropped modality's input. live_log, when
// given, is kept current so a divergence abort still leaves a usable log.
TrainResult train(const TrainConfig& config,
                  const std::vector<SceneSample>& train_scenes,
                  const std::vector<SceneSample>& val_scenes,
                  TrainLog* live_log = nullptr);

void write_train_log(const TrainLog& log,
                     const std::filesystem::path& jsonl_path,
                     const std::filesystem::path& summary_path);

}  // namespace mmr
