#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mmr/fusion.hpp"
#include "mmr/geometry.hpp"
#include "mmr/kvconfig.hpp"
#include "mmr/layers.hpp"
#include "mmr/rng.hpp"
#include "mmr/tensor.hpp"

namespace mmr {

// Which modality streams carry live input. The dropped stream's input is
// zeroed; both backbones always run.
enum class ModalityCondition { kBoth, kRgbOnly, kDepthOnly };

const char* condition_name(ModalityCondition c);
ModalityCondition parse_condition(const std::string& name);

struct ArchConfig {
  int rgb_channels = 3;
  int depth_channels = 1;
  int stem_channels = 16;
  int channels = 32;
  int head_channels = 32;
  int levels = 3;
  int num_classes = 12;   // background occupies class index num_classes
  double tau_obj = 0.5;   // emission requires mean objectness strictly above
  int a_min = 16;         // minimum full-resolution mask area

  // Input extents must be divisible by this (stem plus `levels` stride-2
  // stages).
  int input_multiple() const { return 1 << (levels + 1); }
  // The head runs on the finest pyramid level: stem + first stage.
  static constexpr int kHeadStride = 4;

  void validate() const;
  static ArchConfig from_kv(const KvConfig& kv);
  KvConfig to_kv() const;
};

// Per-modality encoder: a stem conv then one stride-2 conv per pyramid
// level, SiLU after each. The pyramid is the per-stage activations.
struct BackboneParams {
  Conv2d stem;
  std::vector<Conv2d> stages;

  static BackboneParams create(int in_channels, const ArchConfig& arch,
                               Rng& rng);

  template <typename Fn>
  void visit(Fn&& fn) {
    fn(stem.w);
    fn(stem.b);
    for (auto& conv : stages) {
      fn(conv.w);
      fn(conv.b);
    }
  }
};

struct BackboneCtx {
  Tensor input;
  Tensor stem_z;
  std::vector<Tensor> stage_z;
  std::vector<Tensor> acts;  // acts[0] = stem act, acts[1 + j] = stage j act
};

FeaturePyramid backbone_forward(const BackboneParams& bb, const Tensor& x,
                                BackboneCtx* ctx);
Tensor backbone_backward(BackboneParams& bb, const BackboneCtx& ctx,
                         const std::vector<Tensor>& gpyramid);

// Dense prediction head over the finest fused level. The classifier and
// objectness convs start at zero, so an untrained model emits the uniform
// class distribution and objectness exactly 0.5 everywhere.
struct HeadParams {
  Conv2d conv;  // 3x3, channels -> head_channels
  Conv2d cls;   // 1x1, head_channels -> num_classes + 1
  Conv2d obj;   // 1x1, head_channels -> 1

  static HeadParams create(const ArchConfig& arch, Rng& rng);

  template <typename Fn>
  void visit(Fn&& fn) {
    fn(conv.w);
    fn(conv.b);
    fn(cls.w);
    fn(cls.b);
    fn(obj.w);
    fn(obj.b);
  }
};

struct HeadCtx {
  Tensor input;
  Tensor z;
  Tensor act;
  Tensor probs;
  Tensor obj;
};

struct DetectorParams {
  ArchConfig arch;
  BackboneParams rgb_bb;
  BackboneParams depth_bb;
  FusionParams fusion;
  HeadParams head;

  static DetectorParams create(const ArchConfig& arch, uint64_t seed);

  template <typename Fn>
  void visit(Fn&& fn) {
    rgb_bb.visit(fn);
    depth_bb.visit(fn);
    fusion.visit(fn);
    head.visit(fn);
  }

  size_t param_count() {
    size_t n = 0;
    visit([&](ParamTensor& p) { n += p.size(); });
    return n;
  }

  void zero_grad() {
    visit([](ParamTensor& p) { p.zero_grad(); });
  }
};

// Head-resolution dense outputs plus the geometry needed to map them back
// to full resolution.
struct DenseMaps {
  Tensor class_probs;  // (num_classes + 1) x h x w
  Tensor objectness;   // 1 x h x w
  int stride = ArchConfig::kHeadStride;
  int full_h = 0;
  int full_w = 0;
};

struct ForwardContext {
  BackboneCtx rgb;
  BackboneCtx depth;
  FuseContext fuse;
  FeaturePyramid fused;
  HeadCtx head;
};

DenseMaps forward_dense(const DetectorParams& params, const Tensor& rgb,
                        const Tensor& depth, ModalityCondition condition,
                        ForwardContext* ctx);

// Accumulates parameter gradients given gradients w.r.t. the head's class
// probabilities and objectness outputs.
void model_backward(DetectorParams& params, const ForwardContext& ctx,
                    const Tensor& gprobs, const Tensor& gobj);

struct Detection {
  int label = 0;
  double confidence = 0.0;
  Box box;    // tight box of the full-resolution mask
  Mask mask;  // full resolution
};

struct DetectionSet {
  std::string scene_id;
  ModalityCondition condition = ModalityCondition::kBoth;
  int height = 0;
  int width = 0;
  std::vector<Detection> detections;
};

// Instance decoding: per-cell argmax class (ties to the lowest index),
// 8-connected components of equal-class foreground cells, emitted when the
// component's mean objectness strictly exceeds tau_obj and its
// full-resolution area reaches a_min. Confidence is mean objectness times
// the component's peak class probability.
std::vector<Detection> decode_instances(const ArchConfig& arch,
                                        const DenseMaps& maps);

DetectionSet detect(const DetectorParams& params, const Tensor& rgb,
                    const Tensor& depth, ModalityCondition condition,
                    const std::string& scene_id, ForwardContext* ctx = nullptr);

void write_detection_set(const DetectionSet& set,
                         const std::filesystem::path& path);
DetectionSet read_detection_set(const std::filesystem::path& path);

// Bit-exact parameter serialization with an embedded architecture header.
void save_checkpoint(const DetectorParams& params,
                     const std::filesystem::path& path);
DetectorParams load_checkpoint(const std::filesystem::path& path);

}  // namespace mmr
