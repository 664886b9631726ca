#include "mmr/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "mmr/errors.hpp"

namespace mmr {
namespace {

using ojson = nlohmann::ordered_json;

constexpr char kCheckpointMagic[8] = {'M', 'M', 'R', 'C', '0', '0', '0', '1'};

std::string fmt_double(double v) {
  std::ostringstream ss;
  ss.precision(17);
  ss << v;
  return ss.str();
}

struct HeadBackwardResult {
  Tensor ginput;
};

Tensor head_forward(const HeadParams& head, const Tensor& x, HeadCtx& ctx,
                    Tensor& obj_out) {
  ctx.input = x;
  ctx.z = head.conv.forward(x);
  ctx.act = silu(ctx.z);
  ctx.probs = softmax_channels(head.cls.forward(ctx.act));
  ctx.obj = sigmoid_map(head.obj.forward(ctx.act));
  obj_out = ctx.obj;
  return ctx.probs;
}

HeadBackwardResult head_backward(HeadParams& head, const HeadCtx& ctx,
                                 const Tensor& gprobs, const Tensor& gobj) {
  require_same_shape(gprobs, ctx.probs, "head class gradient");
  require_same_shape(gobj, ctx.obj, "head objectness gradient");
  Tensor gcls_z = softmax_channels_backward(ctx.probs, gprobs);
  Tensor gobj_z = sigmoid_backward(ctx.obj, gobj);
  Tensor gact = head.cls.backward(ctx.act, gcls_z);
  Tensor gact2 = head.obj.backward(ctx.act, gobj_z);
  for (size_t i = 0; i < gact.v.size(); ++i) gact.v[i] += gact2.v[i];
  Tensor gz = silu_backward(ctx.z, gact);
  return {head.conv.backward(ctx.input, gz)};
}

ojson arch_to_json(const ArchConfig& a) {
  ojson j;
  j["rgb_channels"] = a.rgb_channels;
  j["depth_channels"] = a.depth_channels;
  j["stem_channels"] = a.stem_channels;
  j["channels"] = a.channels;
  j["head_channels"] = a.head_channels;
  j["levels"] = a.levels;
  j["num_classes"] = a.num_classes;
  j["tau_obj"] = a.tau_obj;
  j["a_min"] = a.a_min;
  return j;
}

ArchConfig arch_from_json(const ojson& j) {
  ArchConfig a;
  a.rgb_channels = j.at("rgb_channels").get<int>();
  a.depth_channels = j.at("depth_channels").get<int>();
  a.stem_channels = j.at("stem_channels").get<int>();
  a.channels = j.at("channels").get<int>();
  a.head_channels = j.at("head_channels").get<int>();
  a.levels = j.at("levels").get<int>();
  a.num_classes = j.at("num_classes").get<int>();
  a.tau_obj = j.at("tau_obj").get<double>();
  a.a_min = j.at("a_min").get<int>();
  a.validate();
  return a;
}

void append_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void append_double(std::string& out, double v) {
  uint64_t bits;
  std::memcpy(&bits, &v, sizeof bits);
  for (int i = 0; i < 8; ++i)
    out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

uint32_t read_u32(const unsigned char* p) {
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(p[i]) << (8 * i);
  return v;
}

double read_double(const unsigned char* p) {
  uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<uint64_t>(p[i]) << (8 * i);
  double v;
  std::memcpy(&v, &bits, sizeof v);
  return v;
}

}  // namespace

const char* condition_name(ModalityCondition c) {
  switch (c) {
    case ModalityCondition::kBoth:
      return "both";
    case ModalityCondition::kRgbOnly:
      return "rgb_only";
    case ModalityCondition::kDepthOnly:
      return "depth_only";
  }
  throw DataError("unknown modality condition");
}

ModalityCondition parse_condition(const std::string& name) {
  if (name == "both") return ModalityCondition::kBoth;
  if (name == "rgb_only") return ModalityCondition::kRgbOnly;
  if (name == "depth_only") return ModalityCondition::kDepthOnly;
  throw DataError("unknown modality condition: " + name);
}

void ArchConfig::validate() const {
  if (rgb_channels < 1 || depth_channels < 1)
    throw DataError("arch: modality channel counts must be >= 1");
  if (stem_channels < 1 || channels < 1 || head_channels < 1)
    throw DataError("arch: feature widths must be >= 1");
  if (levels < 1) throw DataError("arch: levels must be >= 1");
  if (num_classes < 1) throw DataError("arch: num_classes must be >= 1");
  if (!(tau_obj >= 0.0 && tau_obj < 1.0))
    throw DataError("arch: tau_obj must lie in [0, 1)");
  if (a_min < 1) throw DataError("arch: a_min must be >= 1");
}

ArchConfig ArchConfig::from_kv(const KvConfig& kv) {
  ArchConfig a;
  a.rgb_channels = kv.get_int("rgb_channels", a.rgb_channels);
  a.depth_channels = kv.get_int("depth_channels", a.depth_channels);
  a.stem_channels = kv.get_int("stem_channels", a.stem_channels);
  a.channels = kv.get_int("channels", a.channels);
  a.head_channels = kv.get_int("head_channels", a.head_channels);
  a.levels = kv.get_int("levels", a.levels);
  a.num_classes = kv.get_int("num_classes", a.num_classes);
  a.tau_obj = kv.get_double("tau_obj", a.tau_obj);
  a.a_min = kv.get_int("a_min", a.a_min);
  a.validate();
  return a;
}

KvConfig ArchConfig::to_kv() const {
  KvConfig kv;
  kv.set("rgb_channels", std::to_string(rgb_channels));
  kv.set("depth_channels", std::to_string(depth_channels));
  kv.set("stem_channels", std::to_string(stem_channels));
  kv.set("channels", std::to_string(channels));
  kv.set("head_channels", std::to_string(head_channels));
  kv.set("levels", std::to_string(levels));
  kv.set("num_classes", std::to_string(num_classes));
  kv.set("tau_obj", fmt_double(tau_obj));
  kv.set("a_min", std::to_string(a_min));
  return kv;
}

BackboneParams BackboneParams::create(int in_channels, const ArchConfig& arch,
                                      Rng& rng) {
  BackboneParams bb;
  bb.stem = Conv2d(in_channels, arch.stem_channels, 3, 2, 1);
  bb.stem.init_he(rng);
  int prev = arch.stem_channels;
  bb.stages.reserve(arch.levels);
  for (int j = 0; j < arch.levels; ++j) {
    bb.stages.emplace_back(prev, arch.channels, 3, 2, 1);
    bb.stages.back().init_he(rng);
    prev = arch.channels;
  }
  return bb;
}

FeaturePyramid backbone_forward(const BackboneParams& bb, const Tensor& x,
                                BackboneCtx* ctx) {
  BackboneCtx local;
  BackboneCtx& c = ctx ? *ctx : local;
  c = BackboneCtx{};
  c.input = x;
  c.stem_z = bb.stem.forward(x);
  c.acts.push_back(silu(c.stem_z));
  for (const Conv2d& conv : bb.stages) {
    c.stage_z.push_back(conv.forward(c.acts.back()));
    c.acts.push_back(silu(c.stage_z.back()));
  }
  FeaturePyramid pyr;
  for (size_t j = 1; j < c.acts.size(); ++j) pyr.levels.push_back(c.acts[j]);
  return pyr;
}

Tensor backbone_backward(BackboneParams& bb, const BackboneCtx& ctx,
                         const std::vector<Tensor>& gpyramid) {
  const int n_stages = static_cast<int>(bb.stages.size());
  if (static_cast<int>(gpyramid.size()) != n_stages)
    throw DataError("backbone_backward: gradient level count mismatch");
  Tensor gact;  // gradient w.r.t. the activation feeding the next stage
  for (int j = n_stages - 1; j >= 0; --j) {
    Tensor total = gpyramid[j];
    if (j < n_stages - 1) {
      require_same_shape(total, gact, "backbone gradient");
      for (size_t i = 0; i < total.v.size(); ++i) total.v[i] += gact.v[i];
    }
    Tensor gz = silu_backward(ctx.stage_z[j], total);
    gact = bb.stages[j].backward(ctx.acts[j], gz);
  }
  Tensor gstem_z = silu_backward(ctx.stem_z, gact);
  return bb.stem.backward(ctx.input, gstem_z);
}

HeadParams HeadParams::create(const ArchConfig& arch, Rng& rng) {
  HeadParams h;
  h.conv = Conv2d(arch.channels, arch.head_channels, 3, 1, 1);
  h.conv.init_he(rng);
  // cls and obj stay zero: softmax gives the uniform distribution and the
  // objectness sigmoid gives exactly 0.5, below the strict tau_obj test.
  h.cls = Conv2d(arch.head_channels, arch.num_classes + 1, 1, 1, 0);
  h.obj = Conv2d(arch.head_channels, 1, 1, 1, 0);
  return h;
}

DetectorParams DetectorParams::create(const ArchConfig& arch, uint64_t seed) {
  arch.validate();
  Rng rng(seed);
  DetectorParams p;
  p.arch = arch;
  p.rgb_bb = BackboneParams::create(arch.rgb_channels, arch, rng);
  p.depth_bb = BackboneParams::create(arch.depth_channels, arch, rng);
  p.fusion = FusionParams::create(2, arch.channels, arch.levels, rng);
  p.head = HeadParams::create(arch, rng);
  return p;
}

DenseMaps forward_dense(const DetectorParams& params, const Tensor& rgb,
                        const Tensor& depth, ModalityCondition condition,
                        ForwardContext* ctx) {
  const ArchConfig& arch = params.arch;
  if (rgb.c != arch.rgb_channels)
    throw DataError("forward: rgb has " + std::to_string(rgb.c) +
                    " channels, expected " + std::to_string(arch.rgb_channels));
  if (depth.c != arch.depth_channels)
    throw DataError("forward: depth has " + std::to_string(depth.c) +
                    " channels, expected " +
                    std::to_string(arch.depth_channels));
  if (rgb.h != depth.h || rgb.w != depth.w)
    throw DataError("forward: rgb and depth extents differ");
  const int mult = arch.input_multiple();
  if (rgb.h <= 0 || rgb.w <= 0 || rgb.h % mult != 0 || rgb.w % mult != 0)
    throw DataError("forward: input extents must be positive multiples of " +
                    std::to_string(mult));

  Tensor rgb_in = rgb;
  Tensor depth_in = depth;
  if (condition == ModalityCondition::kRgbOnly) depth_in.fill(0.0);
  if (condition == ModalityCondition::kDepthOnly) rgb_in.fill(0.0);

  ForwardContext local;
  ForwardContext& c = ctx ? *ctx : local;
  c = ForwardContext{};

  std::vector<FeaturePyramid> pyramids;
  pyramids.push_back(backbone_forward(params.rgb_bb, rgb_in, &c.rgb));
  pyramids.push_back(backbone_forward(params.depth_bb, depth_in, &c.depth));
  c.fused = fuse(params.fusion, pyramids, &c.fuse);

  DenseMaps maps;
  maps.class_probs = head_forward(params.head, c.fused.levels[0], c.head,
                                  maps.objectness);
  maps.stride = ArchConfig::kHeadStride;
  maps.full_h = rgb.h;
  maps.full_w = rgb.w;
  return maps;
}

void model_backward(DetectorParams& params, const ForwardContext& ctx,
                    const Tensor& gprobs, const Tensor& gobj) {
  HeadBackwardResult hb = head_backward(params.head, ctx.head, gprobs, gobj);

  FeaturePyramid gout;
  gout.levels.push_back(std::move(hb.ginput));
  for (size_t j = 1; j < ctx.fused.levels.size(); ++j)
    gout.levels.push_back(Tensor::zeros_like(ctx.fused.levels[j]));

  std::vector<FeaturePyramid> gmods =
      fuse_backward(params.fusion, ctx.fuse, gout);
  backbone_backward(params.rgb_bb, ctx.rgb, gmods[0].levels);
  backbone_backward(params.depth_bb, ctx.depth, gmods[1].levels);
}

std::vector<Detection> decode_instances(const ArchConfig& arch,
                                        const DenseMaps& maps) {
  const Tensor& probs = maps.class_probs;
  const Tensor& obj = maps.objectness;
  if (probs.c != arch.num_classes + 1)
    throw DataError("decode: class map has " + std::to_string(probs.c) +
                    " channels, expected " +
                    std::to_string(arch.num_classes + 1));
  if (obj.c != 1 || obj.h != probs.h || obj.w != probs.w)
    throw DataError("decode: objectness map shape mismatch");
  if (maps.full_h != probs.h * maps.stride ||
      maps.full_w != probs.w * maps.stride)
    throw DataError("decode: full extents do not match stride");

  const int h = probs.h, w = probs.w;
  const int background = arch.num_classes;
  Grid<int> label(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      int best = 0;
      double best_p = probs.at(0, y, x);
      for (int ch = 1; ch < probs.c; ++ch) {
        const double p = probs.at(ch, y, x);
        if (p > best_p) {
          best_p = p;
          best = ch;
        }
      }
      label.at(y, x) = best;
    }

  std::vector<Detection> out;
  Grid<int> seen(h, w, 0);
  std::vector<std::pair<int, int>> stack, cells;
  for (int y0 = 0; y0 < h; ++y0)
    for (int x0 = 0; x0 < w; ++x0) {
      if (seen.at(y0, x0) || label.at(y0, x0) == background) continue;
      const int cls = label.at(y0, x0);
      cells.clear();
      stack.assign(1, {y0, x0});
      seen.at(y0, x0) = 1;
      while (!stack.empty()) {
        auto [cy, cx] = stack.back();
        stack.pop_back();
        cells.push_back({cy, cx});
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            if (dy == 0 && dx == 0) continue;
            const int ny = cy + dy, nx = cx + dx;
            if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
            if (seen.at(ny, nx) || label.at(ny, nx) != cls) continue;
            seen.at(ny, nx) = 1;
            stack.push_back({ny, nx});
          }
      }

      double mean_obj = 0.0, peak = 0.0;
      for (auto [cy, cx] : cells) {
        mean_obj += obj.at(0, cy, cx);
        peak = std::max(peak, probs.at(cls, cy, cx));
      }
      mean_obj /= static_cast<double>(cells.size());
      if (!(mean_obj > arch.tau_obj)) continue;

      const int64_t area =
          static_cast<int64_t>(cells.size()) * maps.stride * maps.stride;
      if (area < arch.a_min) continue;

      Detection det;
      det.label = cls;
      det.confidence = mean_obj * peak;
      det.mask = Mask(maps.full_h, maps.full_w);
      for (auto [cy, cx] : cells)
        for (int dy = 0; dy < maps.stride; ++dy)
          for (int dx = 0; dx < maps.stride; ++dx)
            det.mask.set(cy * maps.stride + dy, cx * maps.stride + dx);
      det.box = *det.mask.bbox();
      out.push_back(std::move(det));
    }
  return out;
}

DetectionSet detect(const DetectorParams& params, const Tensor& rgb,
                    const Tensor& depth, ModalityCondition condition,
                    const std::string& scene_id, ForwardContext* ctx) {
  DenseMaps maps = forward_dense(params, rgb, depth, condition, ctx);
  DetectionSet set;
  set.scene_id = scene_id;
  set.condition = condition;
  set.height = maps.full_h;
  set.width = maps.full_w;
  set.detections = decode_instances(params.arch, maps);
  return set;
}

void write_detection_set(const DetectionSet& set,
                         const std::filesystem::path& path) {
  ojson j;
  j["scene_id"] = set.scene_id;
  j["condition"] = condition_name(set.condition);
  j["height"] = set.height;
  j["width"] = set.width;
  ojson dets = ojson::array();
  for (const Detection& d : set.detections) {
    ojson jd;
    jd["label"] = d.label;
    jd["confidence"] = d.confidence;
    jd["box"] = {d.box.x0, d.box.y0, d.box.x1, d.box.y1};
    ojson runs = ojson::array();
    for (const auto& run : rle_encode(d.mask)) runs.push_back({run[0], run[1]});
    jd["mask_rle"] = std::move(runs);
    dets.push_back(std::move(jd));
  }
  j["detections"] = std::move(dets);
  std::ofstream out(path);
  if (!out) throw DataError("cannot write detections: " + path.string());
  out << j.dump(2) << "\n";
}

DetectionSet read_detection_set(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open detections: " + path.string());
  ojson j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw DataError("bad detections JSON in " + path.string() + ": " +
                    e.what());
  }
  try {
    DetectionSet set;
    set.scene_id = j.at("scene_id").get<std::string>();
    set.condition = parse_condition(j.at("condition").get<std::string>());
    set.height = j.at("height").get<int>();
    set.width = j.at("width").get<int>();
    for (const auto& jd : j.at("detections")) {
      Detection d;
      d.label = jd.at("label").get<int>();
      d.confidence = jd.at("confidence").get<double>();
      const auto& box = jd.at("box");
      if (box.size() != 4) throw DataError("detection box needs 4 entries");
      d.box = Box{box[0].get<int>(), box[1].get<int>(), box[2].get<int>(),
                  box[3].get<int>()};
      std::vector<std::array<int64_t, 2>> runs;
      for (const auto& run : jd.at("mask_rle"))
        runs.push_back({run[0].get<int64_t>(), run[1].get<int64_t>()});
      d.mask = rle_decode(runs, set.height, set.width);
      set.detections.push_back(std::move(d));
    }
    return set;
  } catch (const ojson::exception& e) {
    throw DataError("bad detections JSON in " + path.string() + ": " +
                    e.what());
  }
}

void save_checkpoint(const DetectorParams& params,
                     const std::filesystem::path& path) {
  DetectorParams& p = const_cast<DetectorParams&>(params);
  ojson header;
  header["version"] = 1;
  header["arch"] = arch_to_json(params.arch);
  header["param_count"] = p.param_count();
  const std::string header_text = header.dump();

  std::string blob(kCheckpointMagic, sizeof kCheckpointMagic);
  append_u32(blob, static_cast<uint32_t>(header_text.size()));
  blob += header_text;
  p.visit([&](ParamTensor& t) {
    for (double v : t.v) append_double(blob, v);
  });

  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint: " + path.string());
  out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  if (!out) throw DataError("checkpoint write failed: " + path.string());
}

DetectorParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path.string());
  std::string blob((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());

  const size_t fixed = sizeof kCheckpointMagic + 4;
  if (blob.size() < fixed ||
      std::memcmp(blob.data(), kCheckpointMagic, sizeof kCheckpointMagic) != 0)
    throw DataError("not a checkpoint file: " + path.string());
  const uint32_t header_len =
      read_u32(reinterpret_cast<const unsigned char*>(blob.data()) +
               sizeof kCheckpointMagic);
  if (header_len > (1u << 20) || blob.size() < fixed + header_len)
    throw DataError("truncated checkpoint header: " + path.string());

  ojson header;
  try {
    header = ojson::parse(blob.substr(fixed, header_len));
  } catch (const std::exception& e) {
    throw DataError("bad checkpoint header: " + std::string(e.what()));
  }
  if (header.at("version").get<int>() != 1)
    throw DataError("unsupported checkpoint version");
  ArchConfig arch = arch_from_json(header.at("arch"));
  DetectorParams params = DetectorParams::create(arch, 0);

  const size_t declared = header.at("param_count").get<size_t>();
  if (params.param_count() != declared)
    throw DataError("checkpoint parameter count mismatch");
  const size_t payload = blob.size() - fixed - header_len;
  if (payload != declared * sizeof(double))
    throw DataError("checkpoint payload size mismatch");

  const unsigned char* cursor =
      reinterpret_cast<const unsigned char*>(blob.data()) + fixed + header_len;
  params.visit([&](ParamTensor& t) {
    for (double& v : t.v) {
      v = read_double(cursor);
      cursor += sizeof(double);
    }
  });
  return params;
}

}  // namespace mmr
