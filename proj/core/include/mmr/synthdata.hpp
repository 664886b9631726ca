#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mmr/geometry.hpp"
#include "mmr/kvconfig.hpp"
#include "mmr/tensor.hpp"

namespace mmr {

enum class Split { kTrain, kVal, kTest, kTestNovel };

const char* split_name(Split s);
Split parse_split(const std::string& name);

enum class ModalitySignature {
  kRgbDominant,   // flat (background-level depth), strongly textured RGB
  kDepthDominant, // raised, near-background RGB
  kBalanced,      // raised and textured
  kAdversarial    // raised and textured, with invalid-depth patches
};

const char* signature_name(ModalitySignature s);
ModalitySignature parse_signature(const std::string& name);

struct ClassSpec {
  int id;
  std::string name;
  ModalitySignature signature;
  int shape;  // 0 = rectangle, 1 = ellipse, 2 = triangle
  bool novel;
};

// Fixed 12-class catalog: 8 base classes plus 4 novel classes that only
// ever appear in the test_novel split.
const std::vector<ClassSpec>& class_catalog();

struct InstanceGT {
  int label = 0;
  Mask mask;  // visible pixels; instances are generated pairwise disjoint
  Box box;    // tight bounding box of the mask
  ModalitySignature signature = ModalitySignature::kBalanced;

  bool operator==(const InstanceGT&) const = default;
};

struct SceneSample {
  std::string scene_id;
  Tensor rgb;             // 3 x H x W in [0,1], quantized to the 8-bit grid
  Grid<float> depth_raw;  // metric-like depth, NaN marks invalid pixels
  Tensor depth;           // 1 x H x W in [0,1], preprocess_depth(depth_raw)
  std::vector<InstanceGT> instances;
  Split split = Split::kTrain;
};

struct GeneratorConfig {
  int image_size = 128;
  int objects_min = 2;
  int objects_max = 5;
  // Signature mix, order: rgb_dominant, depth_dominant, balanced, adversarial.
  std::array<double, 4> class_mix = {0.2, 0.2, 0.45, 0.15};
  // Optional override for novel-pool scenes; unset means reuse class_mix.
  std::optional<std::array<double, 4>> novel_class_mix;
  double rgb_noise = 0.01;
  double depth_noise = 0.004;
  uint64_t seed = 0;
  int scenes = 200;        // base scenes, split 80/10/10
  int novel_scenes = 20;   // extra scenes drawn from the novel class pool

  static GeneratorConfig from_kv(const KvConfig& kv);
  KvConfig to_kv() const;
  uint64_t hash() const;
  void validate() const;  // throws DataError on invalid settings
};

enum class ClassPool { kBase, kNovel };

// Pure function of (config, seed): same arguments, bit-identical scene.
SceneSample generate_scene(const GeneratorConfig& config, uint64_t seed,
                           ClassPool pool = ClassPool::kBase);

// Replaces NaN pixels by iterative 4-neighbor diffusion averaging; valid
// pixels are never modified. Throws DataError if no valid pixel exists.
Grid<double> inpaint_invalid(const Grid<double>& depth);

// Inpaint, then per-scene min-max normalize and flip so the farthest valid
// depth (the background plane) maps to 0 and the closest point to 1.
Grid<double> preprocess_depth(const Grid<double>& depth_raw);
Grid<double> preprocess_depth(const Grid<float>& depth_raw);

struct DatasetManifest {
  int version = 1;
  uint64_t seed = 0;
  std::string config_hash;
  int image_size = 0;
  std::vector<ClassSpec> classes;
  std::map<std::string, std::vector<std::string>> split_scenes;  // by split name
  std::map<std::string, std::string> checksums;  // relative path -> fnv1a64 hex
};

// Generates the full dataset: `scenes` base scenes split 80/10/10 into
// train/val/test plus `novel_scenes` scenes over the novel class pool.
std::pair<DatasetManifest, std::vector<SceneSample>> generate_dataset(
    const GeneratorConfig& config);

void write_dataset(const DatasetManifest& manifest,
                   const std::vector<SceneSample>& scenes,
                   const std::filesystem::path& root);

class DatasetReader {
 public:
  explicit DatasetReader(const std::filesystem::path& root);

  const DatasetManifest& manifest() const { return manifest_; }
  const std::vector<std::string>& scene_ids(Split split) const;
  SceneSample load_scene(Split split, const std::string& scene_id) const;
  std::vector<SceneSample> load_split(Split split) const;

 private:
  std::filesystem::path root_;
  DatasetManifest manifest_;
};

}  // namespace mmr
