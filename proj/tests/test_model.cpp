#include <cmath>
#include <fstream>
#include <vector>

#include <doctest.h>

#include "mmr/errors.hpp"
#include "mmr/model.hpp"
#include "test_util.hpp"

using namespace mmr;

namespace {

ArchConfig tiny_arch() {
  ArchConfig arch;
  arch.stem_channels = 4;
  arch.channels = 6;
  arch.head_channels = 6;
  arch.levels = 2;
  arch.num_classes = 3;
  return arch;
}

Tensor random_image(int c, int h, int w, uint64_t seed) {
  Rng rng(seed);
  Tensor t(c, h, w);
  for (double& v : t.v) v = rng.uniform();
  return t;
}

// Dense maps for decode tests: every cell starts as confident background.
DenseMaps background_maps(const ArchConfig& arch, int cells_h, int cells_w) {
  DenseMaps maps;
  maps.class_probs = Tensor(arch.num_classes + 1, cells_h, cells_w);
  maps.objectness = Tensor(1, cells_h, cells_w);
  maps.full_h = cells_h * maps.stride;
  maps.full_w = cells_w * maps.stride;
  for (int y = 0; y < cells_h; ++y)
    for (int x = 0; x < cells_w; ++x) {
      maps.class_probs.at(arch.num_classes, y, x) = 1.0;
      maps.objectness.at(0, y, x) = 0.1;
    }
  return maps;
}

void paint_cell(DenseMaps& maps, const ArchConfig& arch, int y, int x,
                int label, double prob, double obj) {
  for (int c = 0; c <= arch.num_classes; ++c) maps.class_probs.at(c, y, x) = 0.0;
  maps.class_probs.at(label, y, x) = prob;
  maps.class_probs.at(arch.num_classes, y, x) = 1.0 - prob;
  maps.objectness.at(0, y, x) = obj;
}

}  // namespace

TEST_SUITE_BEGIN("model");

TEST_CASE("condition names round trip") {
  for (auto c : {ModalityCondition::kBoth, ModalityCondition::kRgbOnly,
                 ModalityCondition::kDepthOnly}) {
    CHECK(parse_condition(condition_name(c)) == c);
  }
  CHECK(std::string(condition_name(ModalityCondition::kRgbOnly)) == "rgb_only");
  CHECK(std::string(condition_name(ModalityCondition::kDepthOnly)) ==
        "depth_only");
  CHECK_THROWS_AS(parse_condition("rgb"), DataError);
}

TEST_CASE("arch validation and kv round trip") {
  ArchConfig arch = tiny_arch();
  CHECK_NOTHROW(arch.validate());
  CHECK(arch.input_multiple() == 8);

  const ArchConfig back = ArchConfig::from_kv(arch.to_kv());
  CHECK(back.channels == arch.channels);
  CHECK(back.levels == arch.levels);
  CHECK(back.num_classes == arch.num_classes);
  CHECK(back.tau_obj == arch.tau_obj);
  CHECK(back.a_min == arch.a_min);

  arch.levels = 0;
  CHECK_THROWS_AS(arch.validate(), DataError);
  arch = tiny_arch();
  arch.num_classes = 0;
  CHECK_THROWS_AS(arch.validate(), DataError);
  arch = tiny_arch();
  arch.tau_obj = 1.5;
  CHECK_THROWS_AS(arch.validate(), DataError);
}

TEST_CASE("detector creation is seed-deterministic") {
  const ArchConfig arch = tiny_arch();
  DetectorParams a = DetectorParams::create(arch, 17);
  DetectorParams b = DetectorParams::create(arch, 17);
  DetectorParams c = DetectorParams::create(arch, 18);
  CHECK(a.param_count() == b.param_count());
  CHECK(a.param_count() > 0);

  bool same_ab = true, same_ac = true;
  std::vector<ParamTensor*> pa, pb, pc;
  a.visit([&](ParamTensor& p) { pa.push_back(&p); });
  b.visit([&](ParamTensor& p) { pb.push_back(&p); });
  c.visit([&](ParamTensor& p) { pc.push_back(&p); });
  REQUIRE(pa.size() == pb.size());
  for (size_t i = 0; i < pa.size(); ++i) {
    same_ab = same_ab && pa[i]->v == pb[i]->v;
    same_ac = same_ac && pa[i]->v == pc[i]->v;
  }
  CHECK(same_ab);
  CHECK(!same_ac);
}

TEST_CASE("forward produces head-resolution maps") {
  const ArchConfig arch = tiny_arch();
  const DetectorParams params = DetectorParams::create(arch, 1);
  const Tensor rgb = random_image(3, 16, 24, 2);
  const Tensor depth = random_image(1, 16, 24, 3);
  const DenseMaps maps =
      forward_dense(params, rgb, depth, ModalityCondition::kBoth, nullptr);
  CHECK(maps.class_probs.c == arch.num_classes + 1);
  CHECK(maps.class_probs.h == 4);
  CHECK(maps.class_probs.w == 6);
  CHECK(maps.objectness.c == 1);
  CHECK(maps.full_h == 16);
  CHECK(maps.full_w == 24);
  CHECK(maps.stride == 4);

  // Probabilities normalize per cell.
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 6; ++x) {
      double s = 0.0;
      for (int c = 0; c <= arch.num_classes; ++c)
        s += maps.class_probs.at(c, y, x);
      CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("forward validates inputs") {
  const ArchConfig arch = tiny_arch();
  const DetectorParams params = DetectorParams::create(arch, 1);
  const Tensor rgb = random_image(3, 16, 16, 4);
  const Tensor depth = random_image(1, 16, 16, 5);
  // Extents not divisible by the stride stack.
  CHECK_THROWS_AS(forward_dense(params, random_image(3, 12, 16, 6), depth,
                                ModalityCondition::kBoth, nullptr),
                  DataError);
  // Channel mismatches.
  CHECK_THROWS_AS(forward_dense(params, random_image(1, 16, 16, 7), depth,
                                ModalityCondition::kBoth, nullptr),
                  DataError);
  CHECK_THROWS_AS(forward_dense(params, rgb, random_image(3, 16, 16, 8),
                                ModalityCondition::kBoth, nullptr),
                  DataError);
  // RGB and depth extents must agree.
  CHECK_THROWS_AS(forward_dense(params, rgb, random_image(1, 8, 8, 9),
                                ModalityCondition::kBoth, nullptr),
                  DataError);
}

TEST_CASE("modality conditions zero the dropped stream") {
  const ArchConfig arch = tiny_arch();
  // He-randomize the gates so fused outputs respond to both streams.
  DetectorParams params = DetectorParams::create(arch, 11);
  {
    Rng rng(99);
    for (auto& per_level : params.fusion.gate)
      for (auto& conv : per_level) conv.init_he(rng);
    params.head.cls.init_he(rng);
    params.head.obj.init_he(rng);
  }
  const Tensor rgb = random_image(3, 16, 16, 12);
  const Tensor depth = random_image(1, 16, 16, 13);
  Tensor zero_rgb(3, 16, 16);
  Tensor zero_depth(1, 16, 16);

  ForwardContext ctx_cond, ctx_manual;
  const DenseMaps a = forward_dense(params, rgb, depth,
                                    ModalityCondition::kRgbOnly, &ctx_cond);
  const DenseMaps b = forward_dense(params, rgb, zero_depth,
                                    ModalityCondition::kBoth, &ctx_manual);
  CHECK(a.class_probs.v == b.class_probs.v);
  CHECK(a.objectness.v == b.objectness.v);
  CHECK(ctx_cond.depth.input.v == zero_depth.v);

  const DenseMaps c = forward_dense(params, rgb, depth,
                                    ModalityCondition::kDepthOnly, nullptr);
  const DenseMaps d = forward_dense(params, zero_rgb, depth,
                                    ModalityCondition::kBoth, nullptr);
  CHECK(c.class_probs.v == d.class_probs.v);

  const DenseMaps e = forward_dense(params, rgb, depth,
                                    ModalityCondition::kBoth, nullptr);
  CHECK(e.class_probs.v != a.class_probs.v);
}

TEST_CASE("untrained model emits objectness one half and no detections") {
  const ArchConfig arch = tiny_arch();
  const DetectorParams params = DetectorParams::create(arch, 2);
  const Tensor rgb = random_image(3, 16, 16, 14);
  const Tensor depth = random_image(1, 16, 16, 15);
  DenseMaps maps =
      forward_dense(params, rgb, depth, ModalityCondition::kBoth, nullptr);
  for (double v : maps.objectness.v) CHECK(v == 0.5);
  for (double v : maps.class_probs.v) {
    CHECK(v == doctest::Approx(1.0 / (arch.num_classes + 1)).epsilon(1e-12));
  }
  // Strictly-greater tau keeps the untrained model silent.
  CHECK(decode_instances(arch, maps).empty());
  const DetectionSet set =
      detect(params, rgb, depth, ModalityCondition::kBoth, "scene_x");
  CHECK(set.detections.empty());
  CHECK(set.scene_id == "scene_x");
  CHECK(set.height == 16);
  CHECK(set.width == 16);
}

TEST_CASE("decode emits a component with the documented confidence") {
  const ArchConfig arch = tiny_arch();
  DenseMaps maps = background_maps(arch, 4, 6);
  // A 2x2 block of class 1 cells; peak prob 0.8, mean objectness 0.9.
  paint_cell(maps, arch, 1, 1, 1, 0.8, 0.9);
  paint_cell(maps, arch, 1, 2, 1, 0.7, 0.9);
  paint_cell(maps, arch, 2, 1, 1, 0.6, 0.9);
  paint_cell(maps, arch, 2, 2, 1, 0.5, 0.9);

  const auto dets = decode_instances(arch, maps);
  REQUIRE(dets.size() == 1);
  const Detection& det = dets[0];
  CHECK(det.label == 1);
  CHECK(det.confidence == doctest::Approx(0.9 * 0.8).epsilon(1e-12));
  // Mask covers the 2x2 cells upsampled by the stride.
  CHECK(det.mask.count() == 8 * 8);
  CHECK(det.box == Box{4, 4, 11, 11});
  CHECK(det.mask.test(4, 4));
  CHECK(!det.mask.test(3, 4));
}

TEST_CASE("decode respects the strict objectness threshold") {
  const ArchConfig arch = tiny_arch();
  DenseMaps maps = background_maps(arch, 4, 4);
  paint_cell(maps, arch, 0, 0, 0, 0.9, 0.5);
  paint_cell(maps, arch, 0, 1, 0, 0.9, 0.5);
  // Mean objectness exactly tau_obj = 0.5: not emitted.
  CHECK(decode_instances(arch, maps).empty());
  paint_cell(maps, arch, 0, 0, 0, 0.9, 0.5 + 1e-9);
  paint_cell(maps, arch, 0, 1, 0, 0.9, 0.5 + 1e-9);
  CHECK(decode_instances(arch, maps).size() == 1);
}

TEST_CASE("decode filters small components by area") {
  ArchConfig arch = tiny_arch();
  arch.a_min = 17;  // one cell covers 16 full-resolution pixels
  DenseMaps maps = background_maps(arch, 4, 4);
  paint_cell(maps, arch, 2, 2, 0, 0.9, 0.9);
  CHECK(decode_instances(arch, maps).empty());
  arch.a_min = 16;
  CHECK(decode_instances(arch, maps).size() == 1);
}

TEST_CASE("decode argmax ties break to the lowest class index") {
  const ArchConfig arch = tiny_arch();
  DenseMaps maps = background_maps(arch, 2, 2);
  // Classes 0 and 2 tie at 0.4 > background 0.2.
  for (int c = 0; c <= arch.num_classes; ++c) maps.class_probs.at(c, 0, 0) = 0.0;
  maps.class_probs.at(0, 0, 0) = 0.4;
  maps.class_probs.at(2, 0, 0) = 0.4;
  maps.class_probs.at(arch.num_classes, 0, 0) = 0.2;
  maps.objectness.at(0, 0, 0) = 0.9;
  ArchConfig small = arch;
  small.a_min = 1;
  const auto dets = decode_instances(small, maps);
  REQUIRE(dets.size() == 1);
  CHECK(dets[0].label == 0);
}

TEST_CASE("decode merges 8-connected same-class cells and splits classes") {
  ArchConfig arch = tiny_arch();
  arch.a_min = 1;
  DenseMaps maps = background_maps(arch, 4, 4);
  // Diagonal pair of class 1: one component via 8-connectivity.
  paint_cell(maps, arch, 0, 0, 1, 0.9, 0.9);
  paint_cell(maps, arch, 1, 1, 1, 0.8, 0.9);
  // Adjacent cell of a different class: separate component.
  paint_cell(maps, arch, 0, 1, 2, 0.9, 0.9);
  auto dets = decode_instances(arch, maps);
  REQUIRE(dets.size() == 2);
  int label1 = 0, label2 = 0;
  for (const auto& d : dets) {
    if (d.label == 1) ++label1;
    if (d.label == 2) ++label2;
  }
  CHECK(label1 == 1);
  CHECK(label2 == 1);
  for (const auto& d : dets) {
    if (d.label == 1) CHECK(d.mask.count() == 2 * 16);
  }
}

TEST_CASE("detection set json round trip") {
  test_util::TempDir dir("dets");
  DetectionSet set;
  set.scene_id = "scene_42";
  set.condition = ModalityCondition::kDepthOnly;
  set.height = 16;
  set.width = 16;
  Detection det;
  det.label = 3;
  det.confidence = 0.625;
  Mask m(16, 16);
  for (int y = 2; y < 6; ++y)
    for (int x = 3; x < 9; ++x) m.set(y, x);
  det.mask = m;
  det.box = *m.bbox();
  set.detections.push_back(det);

  const auto path = dir / "set.json";
  write_detection_set(set, path);
  const DetectionSet back = read_detection_set(path);
  CHECK(back.scene_id == set.scene_id);
  CHECK(back.condition == set.condition);
  CHECK(back.height == 16);
  CHECK(back.width == 16);
  REQUIRE(back.detections.size() == 1);
  CHECK(back.detections[0].label == 3);
  CHECK(back.detections[0].confidence == 0.625);
  CHECK(back.detections[0].mask == m);
  CHECK(back.detections[0].box == det.box);

  test_util::spit(dir / "bad.json", "{\"scene_id\": 3}");
  CHECK_THROWS_AS(read_detection_set(dir / "bad.json"), DataError);
  CHECK_THROWS_AS(read_detection_set(dir / "missing.json"), DataError);
}

TEST_CASE("checkpoint round trip is bit-exact") {
  test_util::TempDir dir("ckpt");
  const ArchConfig arch = tiny_arch();
  DetectorParams params = DetectorParams::create(arch, 33);
  // Make values non-symmetric so a layout mix-up cannot go unnoticed.
  {
    Rng rng(55);
    params.visit([&](ParamTensor& p) {
      for (double& v : p.v) v += rng.normal(0.0, 0.3);
    });
  }
  const auto path = dir / "model.bin";
  save_checkpoint(params, path);
  DetectorParams back = load_checkpoint(path);
  CHECK(back.arch.channels == arch.channels);
  CHECK(back.arch.levels == arch.levels);
  CHECK(back.arch.num_classes == arch.num_classes);

  std::vector<ParamTensor*> pa, pb;
  params.visit([&](ParamTensor& p) { pa.push_back(&p); });
  back.visit([&](ParamTensor& p) { pb.push_back(&p); });
  REQUIRE(pa.size() == pb.size());
  for (size_t i = 0; i < pa.size(); ++i) {
    REQUIRE(pa[i]->size() == pb[i]->size());
    for (size_t k = 0; k < pa[i]->size(); ++k) {
      CHECK(pa[i]->v[k] == pb[i]->v[k]);
    }
  }

  // Same input, same output, through a save/load cycle.
  const Tensor rgb = random_image(3, 16, 16, 60);
  const Tensor depth = random_image(1, 16, 16, 61);
  const DenseMaps ma =
      forward_dense(params, rgb, depth, ModalityCondition::kBoth, nullptr);
  const DenseMaps mb =
      forward_dense(back, rgb, depth, ModalityCondition::kBoth, nullptr);
  CHECK(ma.class_probs.v == mb.class_probs.v);
  CHECK(ma.objectness.v == mb.objectness.v);
}

TEST_CASE("checkpoint loader rejects malformed files") {
  test_util::TempDir dir("badckpt");
  const ArchConfig arch = tiny_arch();
  DetectorParams params = DetectorParams::create(arch, 1);
  const auto path = dir / "model.bin";
  save_checkpoint(params, path);

  SUBCASE("wrong magic") {
    std::string bytes = test_util::slurp(path);
    bytes[0] = 'X';
    test_util::spit(dir / "bad.bin", bytes);
    CHECK_THROWS_WITH_AS(load_checkpoint(dir / "bad.bin"),
                         doctest::Contains("not a checkpoint"), DataError);
  }
  SUBCASE("truncated payload") {
    std::string bytes = test_util::slurp(path);
    bytes.resize(bytes.size() - 9);
    test_util::spit(dir / "bad.bin", bytes);
    CHECK_THROWS_AS(load_checkpoint(dir / "bad.bin"), DataError);
  }
  SUBCASE("missing file") {
    CHECK_THROWS_AS(load_checkpoint(dir / "absent.bin"), DataError);
  }
}

TEST_SUITE_END();
