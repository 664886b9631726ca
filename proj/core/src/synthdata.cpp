#include "mmr/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "mmr/errors.hpp"
#include "mmr/image_io.hpp"
#include "mmr/rng.hpp"

namespace mmr {

namespace {

using ojson = nlohmann::ordered_json;

constexpr double kBackgroundDepth = 1.0;
constexpr double kBackgroundGray = 0.45;
constexpr int kBorderMargin = 2;
constexpr int kPlacementGap = 6;    // dilation radius enforced between objects
constexpr int kMaxPlaceAttempts = 200;
constexpr int kMinMaskPixels = 16;
constexpr int kCheckerPeriod = 3;

constexpr double kInpaintTol = 1e-6;
constexpr int kInpaintMaxIters = 10000;

struct Rgb {
  double r, g, b;
};

// Base colors for textured classes; depth-dominant classes paint near the
// background gray instead and only use the per-class tint below.
Rgb base_color(int class_id) {
  static const Rgb kPalette[12] = {
      {0.85, 0.20, 0.20},  // 0
      {0.95, 0.75, 0.10},  // 1
      {0.45, 0.45, 0.45},  // 2 (unused: near-background class)
      {0.45, 0.45, 0.45},  // 3 (unused: near-background class)
      {0.20, 0.45, 0.85},  // 4
      {0.20, 0.75, 0.30},  // 5
      {0.70, 0.30, 0.80},  // 6
      {0.10, 0.80, 0.80},  // 7
      {0.90, 0.50, 0.10},  // 8
      {0.45, 0.45, 0.45},  // 9 (unused: near-background class)
      {0.55, 0.85, 0.20},  // 10
      {0.85, 0.30, 0.60},  // 11
  };
  return kPalette[class_id];
}

// Faint tint distinguishing depth-dominant classes; magnitude stays at the
// pixel-noise level so their RGB contrast is far below textured classes'.
Rgb depth_dominant_tint(int class_id) {
  const double d = 0.01;
  switch (class_id % 3) {
    case 0: return {d, 0.0, 0.0};
    case 1: return {0.0, d, 0.0};
    default: return {0.0, 0.0, d};
  }
}

double clamp01(double v) { return std::min(1.0, std::max(0.0, v)); }

double quantize255(double v) {
  return static_cast<double>(std::llround(clamp01(v) * 255.0)) / 255.0;
}

struct Footprint {
  int shape;      // 0 rect, 1 ellipse, 2 triangle
  int cx, cy;
  double a, b;    // half extents

  bool contains(int x, int y) const {
    const double lx = x - cx, ly = y - cy;
    switch (shape) {
      case 0:
        return std::abs(lx) <= a && std::abs(ly) <= b;
      case 1:
        return (lx / a) * (lx / a) + (ly / b) * (ly / b) <= 1.0;
      default: {
        if (ly < -b || ly > b) return false;
        const double half_width = a * (ly + b) / (2.0 * b);
        return std::abs(lx) <= half_width;
      }
    }
  }

  // Height profile in (0,1]: flat slabs, domed ellipses, ramped wedges.
  double profile(int x, int y) const {
    const double lx = x - cx, ly = y - cy;
    switch (shape) {
      case 0:
        return 1.0;
      case 1: {
        const double r2 =
            std::min(1.0, (lx / a) * (lx / a) + (ly / b) * (ly / b));
        return 1.0 - 0.4 * r2;
      }
      default: {
        const double t = std::min(1.0, std::max(0.0, (ly + b) / (2.0 * b)));
        return 0.6 + 0.4 * t;
      }
    }
  }
};

ModalitySignature sample_signature(Rng& rng, const std::array<double, 4>& mix) {
  double total = 0.0;
  for (double w : mix) total += w;
  const double u = rng.uniform() * total;
  double acc = 0.0;
  for (int i = 0; i < 4; ++i) {
    acc += mix[i];
    if (u < acc) return static_cast<ModalitySignature>(i);
  }
  return ModalitySignature::kAdversarial;
}

int sample_class(Rng& rng, ModalitySignature sig, ClassPool pool) {
  std::vector<int> candidates;
  for (const ClassSpec& c : class_catalog()) {
    if (c.signature == sig && c.novel == (pool == ClassPool::kNovel)) {
      candidates.push_back(c.id);
    }
  }
  return candidates[rng.next_below(candidates.size())];
}

std::string format_id(const char* prefix, int index) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s_%06d", prefix, index);
  return buf;
}

ojson signature_json(ModalitySignature s) { return signature_name(s); }

ojson instances_to_json(const SceneSample& scene) {
  ojson arr = ojson::array();
  for (const InstanceGT& inst : scene.instances) {
    ojson rle = ojson::array();
    for (const auto& run : rle_encode(inst.mask)) {
      rle.push_back({run[0], run[1]});
    }
    arr.push_back({{"label", inst.label},
                   {"signature", signature_json(inst.signature)},
                   {"box", {inst.box.x0, inst.box.y0, inst.box.x1, inst.box.y1}},
                   {"mask_rle", std::move(rle)}});
  }
  return arr;
}

}  // namespace

const char* split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
    default: return "test_novel";
  }
}

Split parse_split(const std::string& name) {
  if (name == "train") return Split::kTrain;
  if (name == "val") return Split::kVal;
  if (name == "test") return Split::kTest;
  if (name == "test_novel") return Split::kTestNovel;
  throw DataError("unknown split: " + name);
}

const char* signature_name(ModalitySignature s) {
  switch (s) {
    case ModalitySignature::kRgbDominant: return "rgb_dominant";
    case ModalitySignature::kDepthDominant: return "depth_dominant";
    case ModalitySignature::kBalanced: return "balanced";
    default: return "adversarial";
  }
}

ModalitySignature parse_signature(const std::string& name) {
  if (name == "rgb_dominant") return ModalitySignature::kRgbDominant;
  if (name == "depth_dominant") return ModalitySignature::kDepthDominant;
  if (name == "balanced") return ModalitySignature::kBalanced;
  if (name == "adversarial") return ModalitySignature::kAdversarial;
  throw DataError("unknown modality signature: " + name);
}

const std::vector<ClassSpec>& class_catalog() {
  static const std::vector<ClassSpec> kCatalog = {
      {0, "tile", ModalitySignature::kRgbDominant, 0, false},
      {1, "decal", ModalitySignature::kRgbDominant, 1, false},
      {2, "slab", ModalitySignature::kDepthDominant, 0, false},
      {3, "dome", ModalitySignature::kDepthDominant, 1, false},
      {4, "block", ModalitySignature::kBalanced, 0, false},
      {5, "puck", ModalitySignature::kBalanced, 1, false},
      {6, "brick", ModalitySignature::kBalanced, 0, false},
      {7, "glass", ModalitySignature::kAdversarial, 1, false},
      {8, "patch", ModalitySignature::kRgbDominant, 2, true},
      {9, "wedge", ModalitySignature::kDepthDominant, 2, true},
      {10, "prism", ModalitySignature::kBalanced, 2, true},
      {11, "shard", ModalitySignature::kAdversarial, 2, true},
  };
  return kCatalog;
}

GeneratorConfig GeneratorConfig::from_kv(const KvConfig& kv) {
  GeneratorConfig c;
  c.image_size = kv.get_int("image_size", c.image_size);
  c.objects_min = kv.get_int("objects_min", c.objects_min);
  c.objects_max = kv.get_int("objects_max", c.objects_max);
  c.class_mix[0] = kv.get_double("mix_rgb_dominant", c.class_mix[0]);
  c.class_mix[1] = kv.get_double("mix_depth_dominant", c.class_mix[1]);
  c.class_mix[2] = kv.get_double("mix_balanced", c.class_mix[2]);
  c.class_mix[3] = kv.get_double("mix_adversarial", c.class_mix[3]);
  if (kv.has("novel_mix_rgb_dominant") || kv.has("novel_mix_depth_dominant") ||
      kv.has("novel_mix_balanced") || kv.has("novel_mix_adversarial")) {
    std::array<double, 4> m = c.class_mix;
    m[0] = kv.get_double("novel_mix_rgb_dominant", m[0]);
    m[1] = kv.get_double("novel_mix_depth_dominant", m[1]);
    m[2] = kv.get_double("novel_mix_balanced", m[2]);
    m[3] = kv.get_double("novel_mix_adversarial", m[3]);
    c.novel_class_mix = m;
  }
  c.rgb_noise = kv.get_double("rgb_noise", c.rgb_noise);
  c.depth_noise = kv.get_double("depth_noise", c.depth_noise);
  c.seed = kv.get_u64("seed", c.seed);
  c.scenes = kv.get_int("scenes", c.scenes);
  c.novel_scenes = kv.get_int("novel_scenes", c.novel_scenes);
  kv.ensure_all_consumed();
  c.validate();
  return c;
}

KvConfig GeneratorConfig::to_kv() const {
  KvConfig kv;
  auto fmt = [](double v) {
    std::ostringstream ss;
    ss.precision(17);
    ss << v;
    return ss.str();
  };
  kv.set("image_size", std::to_string(image_size));
  kv.set("objects_min", std::to_string(objects_min));
  kv.set("objects_max", std::to_string(objects_max));
  kv.set("mix_rgb_dominant", fmt(class_mix[0]));
  kv.set("mix_depth_dominant", fmt(class_mix[1]));
  kv.set("mix_balanced", fmt(class_mix[2]));
  kv.set("mix_adversarial", fmt(class_mix[3]));
  if (novel_class_mix) {
    kv.set("novel_mix_rgb_dominant", fmt((*novel_class_mix)[0]));
    kv.set("novel_mix_depth_dominant", fmt((*novel_class_mix)[1]));
    kv.set("novel_mix_balanced", fmt((*novel_class_mix)[2]));
    kv.set("novel_mix_adversarial", fmt((*novel_class_mix)[3]));
  }
  kv.set("rgb_noise", fmt(rgb_noise));
  kv.set("depth_noise", fmt(depth_noise));
  kv.set("seed", std::to_string(seed));
  kv.set("scenes", std::to_string(scenes));
  kv.set("novel_scenes", std::to_string(novel_scenes));
  return kv;
}

uint64_t GeneratorConfig::hash() const { return fnv1a64(to_kv().serialize()); }

void GeneratorConfig::validate() const {
  if (image_size < 32) {
    throw DataError("image_size must be >= 32, got " +
                    std::to_string(image_size));
  }
  if (objects_min < 0 || objects_max < objects_min) {
    throw DataError("invalid object count range");
  }
  double mix_total = 0.0;
  for (double w : class_mix) {
    if (w < 0.0) throw DataError("class_mix weights must be non-negative");
    mix_total += w;
  }
  if (mix_total <= 0.0) throw DataError("class_mix weights must not all be 0");
  if (novel_class_mix) {
    double novel_total = 0.0;
    for (double w : *novel_class_mix) {
      if (w < 0.0) throw DataError("class_mix weights must be non-negative");
      novel_total += w;
    }
    if (novel_total <= 0.0) {
      throw DataError("class_mix weights must not all be 0");
    }
  }
  if (rgb_noise < 0.0 || depth_noise < 0.0) {
    throw DataError("noise levels must be non-negative");
  }
  if (scenes < 0 || novel_scenes < 0) {
    throw DataError("scene counts must be non-negative");
  }
}

SceneSample generate_scene(const GeneratorConfig& config, uint64_t seed,
                           ClassPool pool) {
  config.validate();
  Rng rng(seed);
  const int hw = config.image_size;

  SceneSample scene;
  scene.scene_id = "scene_" + std::to_string(seed);
  scene.rgb = Tensor(3, hw, hw);
  scene.depth_raw = Grid<float>(hw, hw);

  // Per-pixel noise fields, drawn up front so object painting reuses the
  // same values regardless of placement order.
  Tensor rgb_noise(3, hw, hw);
  for (double& v : rgb_noise.v) v = rng.normal(0.0, config.rgb_noise);
  Grid<double> depth_noise(hw, hw);
  for (double& v : depth_noise.v) v = rng.normal(0.0, config.depth_noise);

  // Background: flat gray plane at the farthest depth.
  Grid<double> depth_d(hw, hw);
  for (int y = 0; y < hw; ++y) {
    for (int x = 0; x < hw; ++x) {
      for (int c = 0; c < 3; ++c) {
        scene.rgb.at(c, y, x) =
            quantize255(kBackgroundGray + rgb_noise.at(c, y, x));
      }
      depth_d.at(y, x) = kBackgroundDepth + depth_noise.at(y, x);
    }
  }

  const int n_objects = config.objects_min == config.objects_max
                            ? config.objects_min
                            : rng.uniform_int(config.objects_min,
                                              config.objects_max);

  // `blocked` holds the dilation of every placed footprint, enforcing a
  // minimum gap so instances stay disjoint and decodable.
  Grid<uint8_t> blocked(hw, hw, 0);
  const double a_min = std::max(5.0, 0.05 * hw);
  const double a_max = std::max(a_min + 1.0, 0.11 * hw);

  const std::array<double, 4>& mix =
      (pool == ClassPool::kNovel && config.novel_class_mix)
          ? *config.novel_class_mix
          : config.class_mix;
  for (int obj = 0; obj < n_objects; ++obj) {
    const ModalitySignature sig = sample_signature(rng, mix);
    const int label = sample_class(rng, sig, pool);
    const int shape = class_catalog()[label].shape;

    Footprint fp{};
    bool placed = false;
    for (int attempt = 0; attempt < kMaxPlaceAttempts && !placed; ++attempt) {
      const double a = rng.uniform(a_min, a_max);
      const double b = rng.uniform(a_min, a_max);
      const int ext_x = static_cast<int>(std::ceil(a));
      const int ext_y = static_cast<int>(std::ceil(b));
      const int lo_x = kBorderMargin + ext_x;
      const int hi_x = hw - 1 - kBorderMargin - ext_x;
      const int lo_y = kBorderMargin + ext_y;
      const int hi_y = hw - 1 - kBorderMargin - ext_y;
      if (lo_x > hi_x || lo_y > hi_y) continue;
      const int cx = rng.uniform_int(lo_x, hi_x);
      const int cy = rng.uniform_int(lo_y, hi_y);
      const Footprint cand{shape, cx, cy, a, b};

      bool free = true;
      for (int y = cy - ext_y; y <= cy + ext_y && free; ++y) {
        for (int x = cx - ext_x; x <= cx + ext_x && free; ++x) {
          if (cand.contains(x, y) && blocked.at(y, x)) free = false;
        }
      }
      if (free) {
        fp = cand;
        placed = true;
      }
    }
    if (!placed) {
      throw DataError("cannot place object " + std::to_string(obj) +
                      " without overlap after " +
                      std::to_string(kMaxPlaceAttempts) + " attempts");
    }

    const double height = rng.uniform(0.10, 0.28);

    Mask mask(hw, hw);
    const int ext_x = static_cast<int>(std::ceil(fp.a));
    const int ext_y = static_cast<int>(std::ceil(fp.b));
    for (int y = fp.cy - ext_y; y <= fp.cy + ext_y; ++y) {
      for (int x = fp.cx - ext_x; x <= fp.cx + ext_x; ++x) {
        if (!fp.contains(x, y)) continue;
        mask.set(y, x);
        // Paint RGB.
        Rgb color;
        if (sig == ModalitySignature::kDepthDominant) {
          const Rgb tint = depth_dominant_tint(label);
          color = {kBackgroundGray + tint.r, kBackgroundGray + tint.g,
                   kBackgroundGray + tint.b};
        } else {
          const Rgb ca = base_color(label);
          const Rgb cb = {1.0 - ca.r, 1.0 - ca.g, 1.0 - ca.b};
          const int checker = ((x - fp.cx + 1000 * kCheckerPeriod) / kCheckerPeriod +
                               (y - fp.cy + 1000 * kCheckerPeriod) / kCheckerPeriod) % 2;
          color = checker ? cb : ca;
        }
        scene.rgb.at(0, y, x) = quantize255(color.r + rgb_noise.at(0, y, x));
        scene.rgb.at(1, y, x) = quantize255(color.g + rgb_noise.at(1, y, x));
        scene.rgb.at(2, y, x) = quantize255(color.b + rgb_noise.at(2, y, x));
        // Paint depth: raised objects are closer to the camera (smaller
        // raw value); rgb-dominant objects stay at background level.
        if (sig != ModalitySignature::kRgbDominant) {
          depth_d.at(y, x) = kBackgroundDepth - height * fp.profile(x, y) +
                             depth_noise.at(y, x);
        }
      }
    }

    // Block the dilated footprint for subsequent placements.
    for (int y = fp.cy - ext_y - kPlacementGap; y <= fp.cy + ext_y + kPlacementGap; ++y) {
      for (int x = fp.cx - ext_x - kPlacementGap; x <= fp.cx + ext_x + kPlacementGap; ++x) {
        if (y < 0 || y >= hw || x < 0 || x >= hw) continue;
        bool near = false;
        for (int dy = -kPlacementGap; dy <= kPlacementGap && !near; ++dy) {
          for (int dx = -kPlacementGap; dx <= kPlacementGap && !near; ++dx) {
            if (fp.contains(x + dx, y + dy)) near = true;
          }
        }
        if (near) blocked.at(y, x) = 1;
      }
    }

    std::vector<std::pair<int, int>> invalid_pixels;
    if (sig == ModalitySignature::kAdversarial) {
      const int n_blobs = rng.uniform_int(1, 3);
      for (int i = 0; i < n_blobs; ++i) {
        const int px = rng.uniform_int(fp.cx - ext_x, fp.cx + ext_x);
        const int py = rng.uniform_int(fp.cy - ext_y, fp.cy + ext_y);
        const double r = rng.uniform(2.0, 4.0);
        for (int y = py - 4; y <= py + 4; ++y) {
          for (int x = px - 4; x <= px + 4; ++x) {
            if (y < 0 || y >= hw || x < 0 || x >= hw) continue;
            const double d2 = static_cast<double>(x - px) * (x - px) +
                              static_cast<double>(y - py) * (y - py);
            if (d2 <= r * r && mask.test(y, x)) invalid_pixels.push_back({y, x});
          }
        }
      }
    }
    for (const auto& [y, x] : invalid_pixels) {
      depth_d.at(y, x) = std::numeric_limits<double>::quiet_NaN();
    }

    InstanceGT inst;
    inst.label = label;
    inst.mask = std::move(mask);
    inst.signature = sig;
    const auto box = inst.mask.bbox();
    if (!box || inst.mask.count() < kMinMaskPixels ||
        box->x0 >= box->x1 || box->y0 >= box->y1) {
      throw DataError("generated instance is degenerate");
    }
    inst.box = *box;
    scene.instances.push_back(std::move(inst));
  }

  // Raw depth is stored in 32-bit floats so the on-disk round trip is
  // lossless; everything downstream consumes the float values.
  for (int y = 0; y < hw; ++y) {
    for (int x = 0; x < hw; ++x) {
      scene.depth_raw.at(y, x) = static_cast<float>(depth_d.at(y, x));
    }
  }

  const Grid<double> depth_norm = preprocess_depth(scene.depth_raw);
  scene.depth = Tensor(1, hw, hw);
  for (int y = 0; y < hw; ++y) {
    for (int x = 0; x < hw; ++x) scene.depth.at(0, y, x) = depth_norm.at(y, x);
  }
  return scene;
}

Grid<double> inpaint_invalid(const Grid<double>& depth) {
  std::vector<std::pair<int, int>> invalid;
  double sum = 0.0;
  int64_t valid_count = 0;
  for (int y = 0; y < depth.h; ++y) {
    for (int x = 0; x < depth.w; ++x) {
      const double v = depth.at(y, x);
      if (std::isnan(v)) {
        invalid.push_back({y, x});
      } else {
        sum += v;
        ++valid_count;
      }
    }
  }
  if (valid_count == 0) throw DataError("inpaint: no valid pixels");
  if (invalid.empty()) return depth;

  Grid<double> cur = depth;
  const double init = sum / static_cast<double>(valid_count);
  for (const auto& [y, x] : invalid) cur.at(y, x) = init;

  Grid<double> next = cur;
  for (int iter = 0; iter < kInpaintMaxIters; ++iter) {
    double max_change = 0.0;
    for (const auto& [y, x] : invalid) {
      double acc = 0.0;
      int n = 0;
      if (y > 0) { acc += cur.at(y - 1, x); ++n; }
      if (y + 1 < depth.h) { acc += cur.at(y + 1, x); ++n; }
      if (x > 0) { acc += cur.at(y, x - 1); ++n; }
      if (x + 1 < depth.w) { acc += cur.at(y, x + 1); ++n; }
      const double v = acc / n;
      next.at(y, x) = v;
      max_change = std::max(max_change, std::abs(v - cur.at(y, x)));
    }
    for (const auto& [y, x] : invalid) cur.at(y, x) = next.at(y, x);
    if (max_change < kInpaintTol) break;
  }
  return cur;
}

Grid<double> preprocess_depth(const Grid<double>& depth_raw) {
  Grid<double> filled = inpaint_invalid(depth_raw);
  double vmin = std::numeric_limits<double>::infinity();
  double vmax = -std::numeric_limits<double>::infinity();
  for (double v : filled.v) {
    vmin = std::min(vmin, v);
    vmax = std::max(vmax, v);
  }
  if (!(vmax > vmin)) {
    throw DataError("degenerate depth map: min equals max");
  }
  // Flip so the farthest valid depth (background plane) maps to 0 and the
  // closest point to 1.
  Grid<double> out(filled.h, filled.w);
  const double range = vmax - vmin;
  for (size_t i = 0; i < filled.v.size(); ++i) {
    out.v[i] = 1.0 - (filled.v[i] - vmin) / range;
  }
  return out;
}

Grid<double> preprocess_depth(const Grid<float>& depth_raw) {
  Grid<double> d(depth_raw.h, depth_raw.w);
  for (size_t i = 0; i < d.v.size(); ++i) {
    d.v[i] = static_cast<double>(depth_raw.v[i]);
  }
  return preprocess_depth(d);
}

std::pair<DatasetManifest, std::vector<SceneSample>> generate_dataset(
    const GeneratorConfig& config) {
  config.validate();
  const int n_train = static_cast<int>(std::lround(0.8 * config.scenes));
  const int n_val = static_cast<int>(std::lround(0.1 * config.scenes));
  const int n_test = config.scenes - n_train - n_val;
  if (n_test < 0) throw DataError("scene count too small to split");

  DatasetManifest manifest;
  manifest.version = 1;
  manifest.seed = config.seed;
  manifest.config_hash = to_hex(config.hash());
  manifest.image_size = config.image_size;
  manifest.classes = class_catalog();

  std::vector<SceneSample> scenes;
  scenes.reserve(config.scenes + config.novel_scenes);

  auto emit = [&](Split split, const char* prefix, int index_in_split,
                  uint64_t stream, ClassPool pool) {
    SceneSample s = generate_scene(config, mix_seed(config.seed, stream), pool);
    s.split = split;
    s.scene_id = format_id(prefix, index_in_split);
    manifest.split_scenes[split_name(split)].push_back(s.scene_id);
    scenes.push_back(std::move(s));
  };

  manifest.split_scenes["train"] = {};
  manifest.split_scenes["val"] = {};
  manifest.split_scenes["test"] = {};
  manifest.split_scenes["test_novel"] = {};
  for (int i = 0; i < config.scenes; ++i) {
    if (i < n_train) {
      emit(Split::kTrain, "train", i, i, ClassPool::kBase);
    } else if (i < n_train + n_val) {
      emit(Split::kVal, "val", i - n_train, i, ClassPool::kBase);
    } else {
      emit(Split::kTest, "test", i - n_train - n_val, i, ClassPool::kBase);
    }
  }
  for (int i = 0; i < config.novel_scenes; ++i) {
    emit(Split::kTestNovel, "test_novel", i, config.scenes + i,
         ClassPool::kNovel);
  }
  return {std::move(manifest), std::move(scenes)};
}

namespace {

ojson classes_to_json(const std::vector<ClassSpec>& classes) {
  ojson arr = ojson::array();
  for (const ClassSpec& c : classes) {
    arr.push_back({{"id", c.id},
                   {"name", c.name},
                   {"signature", signature_name(c.signature)},
                   {"shape", c.shape},
                   {"novel", c.novel}});
  }
  return arr;
}

std::vector<ClassSpec> classes_from_json(const ojson& arr) {
  std::vector<ClassSpec> out;
  for (const auto& c : arr) {
    out.push_back({c.at("id").get<int>(), c.at("name").get<std::string>(),
                   parse_signature(c.at("signature").get<std::string>()),
                   c.at("shape").get<int>(), c.at("novel").get<bool>()});
  }
  return out;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open file for writing: " + path.string());
  out << text;
  if (!out) throw DataError("write failed: " + path.string());
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open file: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

void write_dataset(const DatasetManifest& manifest,
                   const std::vector<SceneSample>& scenes,
                   const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  fs::create_directories(root);
  DatasetManifest out = manifest;
  out.checksums.clear();

  for (const SceneSample& scene : scenes) {
    const std::string rel_dir =
        std::string(split_name(scene.split)) + "/" + scene.scene_id;
    const fs::path dir = root / split_name(scene.split) / scene.scene_id;
    fs::create_directories(dir);

    const int hw = scene.rgb.h;
    ImageU8 rgb(hw, hw);
    for (int y = 0; y < hw; ++y) {
      for (int x = 0; x < hw; ++x) {
        for (int c = 0; c < 3; ++c) {
          rgb.at(y, x, c) = static_cast<uint8_t>(
              std::llround(scene.rgb.at(c, y, x) * 255.0));
        }
      }
    }
    write_png_rgb8(dir / "rgb.png", rgb);

    write_float_grid(dir / "depth_raw.bin", scene.depth_raw);

    ImageU16 depth16(hw, hw);
    for (int y = 0; y < hw; ++y) {
      for (int x = 0; x < hw; ++x) {
        depth16.at(y, x) = static_cast<uint16_t>(
            std::llround(scene.depth.at(0, y, x) * 65535.0));
      }
    }
    write_png_gray16(dir / "depth.png", depth16);

    ojson ann = {{"scene_id", scene.scene_id},
                 {"split", split_name(scene.split)},
                 {"height", hw},
                 {"width", hw},
                 {"instances", instances_to_json(scene)}};
    write_text(dir / "annotations.json", ann.dump(2) + "\n");

    for (const char* f : {"rgb.png", "depth_raw.bin", "depth.png",
                          "annotations.json"}) {
      out.checksums[rel_dir + "/" + f] = to_hex(fnv1a64_file(dir / f));
    }
  }

  ojson splits = ojson::object();
  for (const char* name : {"train", "val", "test", "test_novel"}) {
    ojson ids = ojson::array();
    auto it = out.split_scenes.find(name);
    if (it != out.split_scenes.end()) {
      for (const std::string& id : it->second) ids.push_back(id);
    }
    splits[name] = std::move(ids);
  }
  ojson checks = ojson::object();
  for (const auto& [path, hash] : out.checksums) checks[path] = hash;

  ojson m = {{"version", out.version},
             {"seed", out.seed},
             {"config_hash", out.config_hash},
             {"image_size", out.image_size},
             {"classes", classes_to_json(out.classes)},
             {"splits", std::move(splits)},
             {"checksums", std::move(checks)}};
  write_text(root / "manifest.json", m.dump(2) + "\n");
}

DatasetReader::DatasetReader(const std::filesystem::path& root) : root_(root) {
  const auto manifest_path = root / "manifest.json";
  if (!std::filesystem::exists(manifest_path)) {
    throw DataError("dataset manifest missing: " + manifest_path.string());
  }
  ojson m;
  try {
    m = ojson::parse(read_text(manifest_path));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed manifest: " + std::string(e.what()));
  }
  const int version = m.at("version").get<int>();
  if (version != 1) {
    throw DataError("unsupported dataset version: " + std::to_string(version));
  }
  manifest_.version = version;
  manifest_.seed = m.at("seed").get<uint64_t>();
  manifest_.config_hash = m.at("config_hash").get<std::string>();
  manifest_.image_size = m.at("image_size").get<int>();
  manifest_.classes = classes_from_json(m.at("classes"));
  for (const auto& [name, ids] : m.at("splits").items()) {
    std::vector<std::string> list;
    for (const auto& id : ids) list.push_back(id.get<std::string>());
    manifest_.split_scenes[name] = std::move(list);
  }
  for (const auto& [path, hash] : m.at("checksums").items()) {
    manifest_.checksums[path] = hash.get<std::string>();
  }
}

const std::vector<std::string>& DatasetReader::scene_ids(Split split) const {
  static const std::vector<std::string> kEmpty;
  auto it = manifest_.split_scenes.find(split_name(split));
  return it == manifest_.split_scenes.end() ? kEmpty : it->second;
}

SceneSample DatasetReader::load_scene(Split split,
                                      const std::string& scene_id) const {
  namespace fs = std::filesystem;
  const std::string rel_dir =
      std::string(split_name(split)) + "/" + scene_id;
  const fs::path dir = root_ / split_name(split) / scene_id;

  for (const char* f : {"rgb.png", "depth_raw.bin", "depth.png",
                        "annotations.json"}) {
    const std::string rel = rel_dir + "/" + f;
    auto it = manifest_.checksums.find(rel);
    if (it == manifest_.checksums.end()) {
      throw DataError("file not in manifest: " + rel);
    }
    if (to_hex(fnv1a64_file(dir / f)) != it->second) {
      throw DataError("corrupted scene file (checksum mismatch): " + rel);
    }
  }

  SceneSample scene;
  scene.scene_id = scene_id;
  scene.split = split;

  const ImageU8 rgb = read_png_rgb8(dir / "rgb.png");
  scene.rgb = Tensor(3, rgb.h, rgb.w);
  for (int y = 0; y < rgb.h; ++y) {
    for (int x = 0; x < rgb.w; ++x) {
      for (int c = 0; c < 3; ++c) {
        scene.rgb.at(c, y, x) = static_cast<double>(rgb.at(y, x, c)) / 255.0;
      }
    }
  }

  scene.depth_raw = read_float_grid(dir / "depth_raw.bin");
  const Grid<double> depth_norm = preprocess_depth(scene.depth_raw);
  scene.depth = Tensor(1, depth_norm.h, depth_norm.w);
  for (int y = 0; y < depth_norm.h; ++y) {
    for (int x = 0; x < depth_norm.w; ++x) {
      scene.depth.at(0, y, x) = depth_norm.at(y, x);
    }
  }

  ojson ann;
  try {
    ann = ojson::parse(read_text(dir / "annotations.json"));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed annotations: " + std::string(e.what()));
  }
  if (ann.at("scene_id").get<std::string>() != scene_id) {
    throw DataError("annotations scene_id mismatch in " + rel_dir);
  }
  const int h = ann.at("height").get<int>();
  const int w = ann.at("width").get<int>();
  for (const auto& inst : ann.at("instances")) {
    InstanceGT gt;
    gt.label = inst.at("label").get<int>();
    gt.signature = parse_signature(inst.at("signature").get<std::string>());
    const auto& box = inst.at("box");
    gt.box = Box{box.at(0).get<int>(), box.at(1).get<int>(),
                 box.at(2).get<int>(), box.at(3).get<int>()};
    std::vector<std::array<int64_t, 2>> runs;
    for (const auto& run : inst.at("mask_rle")) {
      runs.push_back({run.at(0).get<int64_t>(), run.at(1).get<int64_t>()});
    }
    gt.mask = rle_decode(runs, h, w);
    scene.instances.push_back(std::move(gt));
  }
  return scene;
}

std::vector<SceneSample> DatasetReader::load_split(Split split) const {
  std::vector<SceneSample> out;
  for (const std::string& id : scene_ids(split)) {
    out.push_back(load_scene(split, id));
  }
  return out;
}

}  // namespace mmr
