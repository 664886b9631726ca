#pragma once

#include <string>
#include <vector>

#include "mmr/layers.hpp"
#include "mmr/rng.hpp"
#include "mmr/tensor.hpp"

namespace mmr {

// Multi-scale feature stack, ordered finest to coarsest. Consecutive levels
// halve in each spatial dimension.
struct FeaturePyramid {
  std::vector<Tensor> levels;
};

// Gate activity captured during fusion, indexed [level][modality].
struct GateRecord {
  std::vector<std::vector<Tensor>> logits;
  std::vector<std::vector<Tensor>> weights;
};

// Everything the fusion backward pass needs from the forward pass.
struct FuseContext {
  GateRecord record;
  std::vector<std::vector<Tensor>> inputs;  // [level][modality]
  std::vector<Tensor> cat;                  // [level] concatenated inputs
  std::vector<Tensor> catg;                 // [level] concatenated gated
  std::vector<Tensor> merged;               // [level] lateral + upsampled
};

// Learnable fusion parameters: one gate conv per (level, modality), plus a
// lateral and a smoothing conv per level. Gate convs start at zero so the
// initial weights are uniform across modalities.
struct FusionParams {
  int modalities = 0;
  int channels = 0;
  int levels = 0;
  std::vector<std::vector<Conv2d>> gate;  // [level][modality], 1x1, N*C -> C
  std::vector<Conv2d> lateral;            // [level], 1x1, N*C -> C
  std::vector<Conv2d> smooth;             // [level], 3x3, C -> C

  static FusionParams create(int modalities, int channels, int levels,
                             Rng& rng);

  template <typename Fn>
  void visit(Fn&& fn) {
    for (auto& per_level : gate)
      for (auto& conv : per_level) {
        fn(conv.w);
        fn(conv.b);
      }
    for (auto& conv : lateral) {
      fn(conv.w);
      fn(conv.b);
    }
    for (auto& conv : smooth) {
      fn(conv.w);
      fn(conv.b);
    }
  }
};

// Soft-gated fusion of per-modality pyramids followed by a top-down merge.
// Per level: gate logits are 1x1 convs over the concatenated modality
// features, weights are a softmax across modalities at every (channel,
// pixel), features are reweighted, concatenated, and projected laterally;
// coarser merged maps are upsampled and added before a 3x3 smooth.
FeaturePyramid fuse(const FusionParams& params,
                    const std::vector<FeaturePyramid>& per_modality,
                    FuseContext* ctx);

// Gradients w.r.t. every modality's input pyramid; parameter gradients are
// accumulated into params.
std::vector<FeaturePyramid> fuse_backward(FusionParams& params,
                                          const FuseContext& ctx,
                                          const FeaturePyramid& gout);

// Channel-mean of one gate weight map, as a 1xHxW tensor.
Tensor gate_heatmap(const GateRecord& record, int level, int modality);

// Mean gate weight over all channels and pixels of one (level, modality).
double mean_gate_weight(const GateRecord& record, int level, int modality);

// Writes per-(level, modality) heatmap PNGs plus a JSON summary of mean
// weights into dir (created if missing).
void export_gate_record(const GateRecord& record,
                        const std::vector<std::string>& modality_names,
                        const std::string& dir);

}  // namespace mmr
