#include <array>
#include <cmath>
#include <functional>
#include <vector>

#include <doctest.h>

#include "mmr/errors.hpp"
#include "mmr/training.hpp"
#include "test_util.hpp"

using namespace mmr;

namespace {

ArchConfig tiny_arch() {
  ArchConfig arch;
  arch.stem_channels = 4;
  arch.channels = 6;
  arch.head_channels = 6;
  arch.levels = 2;
  arch.num_classes = 12;
  return arch;
}

GeneratorConfig tiny_data_config() {
  GeneratorConfig cfg;
  cfg.image_size = 32;
  cfg.objects_min = 1;
  cfg.objects_max = 1;
  cfg.seed = 77;
  return cfg;
}

// Scalar-loop reference for the weighted loss over dense maps.
double reference_loss(const DenseMaps& maps, const Targets& targets,
                      double lambda_cls, double lambda_obj) {
  const int h = maps.class_probs.h, w = maps.class_probs.w;
  double ce = 0.0, bce = 0.0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double p =
          std::max(1e-12, maps.class_probs.at(targets.label.at(y, x), y, x));
      ce += -std::log(p);
      const double q = maps.objectness.at(0, y, x);
      const double t = targets.objectness.at(y, x);
      bce += -(t * std::log(std::max(1e-12, q)) +
               (1.0 - t) * std::log(std::max(1e-12, 1.0 - q)));
    }
  }
  const double n = static_cast<double>(h) * w;
  return lambda_cls * ce / n + lambda_obj * bce / n;
}

}  // namespace

TEST_SUITE_BEGIN("training");

TEST_CASE("ensemble mode names round trip") {
  CHECK(parse_ensemble_mode("standard") == EnsembleMode::kStandard);
  CHECK(parse_ensemble_mode("dynamic_ensemble") ==
        EnsembleMode::kDynamicEnsemble);
  CHECK(std::string(ensemble_mode_name(EnsembleMode::kStandard)) == "standard");
  CHECK_THROWS_AS(parse_ensemble_mode("ensemble"), DataError);
}

TEST_CASE("train config validation") {
  TrainConfig cfg;
  cfg.arch = tiny_arch();
  CHECK_NOTHROW(cfg.validate());
  cfg.epochs = 0;
  CHECK_THROWS_AS(cfg.validate(), DataError);
  cfg = TrainConfig{};
  cfg.arch = tiny_arch();
  cfg.lr = 0.0;
  CHECK_THROWS_AS(cfg.validate(), DataError);
  cfg = TrainConfig{};
  cfg.arch = tiny_arch();
  cfg.momentum = 1.0;
  CHECK_THROWS_AS(cfg.validate(), DataError);

  // Standard mode pins the distribution to always-both.
  cfg = TrainConfig{};
  cfg.arch = tiny_arch();
  cfg.mode = EnsembleMode::kStandard;
  cfg.condition_distribution = {0.2, 0.4, 0.4};
  cfg.validate();
  CHECK(cfg.condition_distribution ==
        std::array<double, 3>{1.0, 0.0, 0.0});
}

TEST_CASE("condition sampling follows the distribution") {
  SUBCASE("degenerate distribution always yields both") {
    Rng rng(4);
    for (int i = 0; i < 200; ++i) {
      CHECK(sample_condition(rng, {1.0, 0.0, 0.0}) ==
            ModalityCondition::kBoth);
    }
  }

  SUBCASE("uniform draw frequencies near one third") {
    Rng rng(1);
    std::array<int, 3> counts = {0, 0, 0};
    const int n = 30000;
    const std::array<double, 3> dist = {1.0 / 3, 1.0 / 3, 1.0 / 3};
    for (int i = 0; i < n; ++i) {
      counts[static_cast<int>(sample_condition(rng, dist))]++;
    }
    for (int c : counts) {
      const double f = static_cast<double>(c) / n;
      CHECK(f > 0.323);
      CHECK(f < 0.343);
    }
  }

  SUBCASE("same seed, same sequence") {
    Rng a(9), b(9);
    const std::array<double, 3> dist = {0.5, 0.25, 0.25};
    for (int i = 0; i < 500; ++i) {
      CHECK(sample_condition(a, dist) == sample_condition(b, dist));
    }
  }

  SUBCASE("one uniform consumed per draw") {
    Rng a(13), b(13);
    const std::array<double, 3> dist = {0.3, 0.4, 0.3};
    for (int i = 0; i < 50; ++i) sample_condition(a, dist);
    for (int i = 0; i < 50; ++i) b.uniform();
    CHECK(a.next_u64() == b.next_u64());
  }

  SUBCASE("invalid distributions are rejected") {
    Rng rng(2);
    CHECK_THROWS_AS(sample_condition(rng, {-0.1, 0.6, 0.5}), DataError);
    CHECK_THROWS_AS(sample_condition(rng, {0.5, 0.4, 0.0}), DataError);
  }

  SUBCASE("chi-square sanity over the three bins") {
    Rng rng(21);
    std::array<int, 3> counts = {0, 0, 0};
    const int n = 6000;
    const std::array<double, 3> dist = {1.0 / 3, 1.0 / 3, 1.0 / 3};
    for (int i = 0; i < n; ++i) {
      counts[static_cast<int>(sample_condition(rng, dist))]++;
    }
    const double expected = n / 3.0;
    double chi2 = 0.0;
    for (int c : counts) {
      chi2 += (c - expected) * (c - expected) / expected;
    }
    // 99th percentile of chi-square with 2 dof.
    CHECK(chi2 < 9.21);
  }
}

TEST_CASE("target rasterization follows the coverage rule") {
  ArchConfig arch = tiny_arch();
  SceneSample scene;
  scene.rgb = Tensor(3, 16, 16);
  scene.depth = Tensor(1, 16, 16);

  InstanceGT inst;
  inst.label = 5;
  Mask m(16, 16);
  // Covers cell (0,0) fully (16 px), cell (0,1) half (8 px, counts), and
  // cell (1,0) below half (4 px, background).
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) m.set(y, x);
  for (int y = 0; y < 2; ++y)
    for (int x = 4; x < 8; ++x) m.set(y, x);
  for (int y = 4; y < 6; ++y)
    for (int x = 0; x < 2; ++x) m.set(y, x);
  inst.mask = m;
  inst.box = *m.bbox();
  scene.instances.push_back(inst);

  const Targets t = rasterize_targets(arch, scene);
  REQUIRE(t.label.h == 4);
  REQUIRE(t.label.w == 4);
  CHECK(t.label.at(0, 0) == 5);
  CHECK(t.label.at(0, 1) == 5);  // exactly half the block counts
  CHECK(t.label.at(1, 0) == arch.num_classes);
  CHECK(t.label.at(3, 3) == arch.num_classes);
  CHECK(t.objectness.at(0, 0) == 1.0);
  CHECK(t.objectness.at(0, 1) == 1.0);
  CHECK(t.objectness.at(1, 0) == 0.0);
}

TEST_CASE("target rasterization ties go to the earlier instance") {
  ArchConfig arch = tiny_arch();
  SceneSample scene;
  scene.rgb = Tensor(3, 8, 8);
  scene.depth = Tensor(1, 8, 8);
  // Two instances each covering half of cell (0,0).
  for (int label : {2, 7}) {
    InstanceGT inst;
    inst.label = label;
    Mask m(8, 8);
    const int x0 = label == 2 ? 0 : 2;
    for (int y = 0; y < 4; ++y)
      for (int x = x0; x < x0 + 2; ++x) m.set(y, x);
    inst.mask = m;
    inst.box = *m.bbox();
    scene.instances.push_back(inst);
  }
  const Targets t = rasterize_targets(arch, scene);
  CHECK(t.label.at(0, 0) == 2);
}

TEST_CASE("loss matches a scalar reference and known endpoints") {
  const ArchConfig arch = tiny_arch();

  SUBCASE("perfect one-hot predictions cost nothing") {
    DenseMaps maps;
    maps.class_probs = Tensor(arch.num_classes + 1, 2, 2);
    maps.objectness = Tensor(1, 2, 2);
    Targets t{Grid<int>(2, 2, arch.num_classes), Grid<double>(2, 2, 0.0)};
    t.label.at(0, 0) = 3;
    t.objectness.at(0, 0) = 1.0;
    for (int y = 0; y < 2; ++y)
      for (int x = 0; x < 2; ++x) {
        maps.class_probs.at(t.label.at(y, x), y, x) = 1.0;
        maps.objectness.at(0, y, x) = t.objectness.at(y, x);
      }
    const LossResult r = loss(maps, t, 1.0, 1.0);
    CHECK(r.total < 1e-6);
  }

  SUBCASE("uniform class probabilities cost ln(K+1)") {
    DenseMaps maps;
    maps.class_probs = Tensor(arch.num_classes + 1, 2, 2);
    for (double& v : maps.class_probs.v) v = 1.0 / (arch.num_classes + 1);
    maps.objectness = Tensor(1, 2, 2);
    for (double& v : maps.objectness.v) v = 0.5;
    const Targets t{Grid<int>(2, 2, 0), Grid<double>(2, 2, 0.0)};
    const LossResult r = loss(maps, t, 1.0, 0.0);
    CHECK(r.cls == doctest::Approx(std::log(arch.num_classes + 1.0)));
    CHECK(r.obj == doctest::Approx(std::log(2.0)));
    CHECK(r.total == doctest::Approx(std::log(arch.num_classes + 1.0)));
  }

  SUBCASE("random maps match the scalar reference") {
    Rng rng(3);
    DenseMaps maps;
    maps.class_probs = Tensor(arch.num_classes + 1, 8, 8);
    maps.objectness = Tensor(1, 8, 8);
    Targets t{Grid<int>(8, 8, 0), Grid<double>(8, 8, 0.0)};
    for (int y = 0; y < 8; ++y)
      for (int x = 0; x < 8; ++x) {
        double sum = 0.0;
        for (int c = 0; c <= arch.num_classes; ++c) {
          const double e = std::exp(rng.normal());
          maps.class_probs.at(c, y, x) = e;
          sum += e;
        }
        for (int c = 0; c <= arch.num_classes; ++c)
          maps.class_probs.at(c, y, x) /= sum;
        maps.objectness.at(0, y, x) = rng.uniform(0.01, 0.99);
        t.label.at(y, x) = static_cast<int>(rng.next_below(arch.num_classes + 1));
        t.objectness.at(y, x) = rng.bernoulli(0.3) ? 1.0 : 0.0;
      }
    const LossResult r = loss(maps, t, 0.7, 1.3);
    CHECK(r.total ==
          doctest::Approx(reference_loss(maps, t, 0.7, 1.3)).epsilon(1e-10));
  }

  SUBCASE("loss gradients match finite differences") {
    Rng rng(5);
    DenseMaps maps;
    maps.class_probs = Tensor(3, 2, 3);
    maps.objectness = Tensor(1, 2, 3);
    Targets t{Grid<int>(2, 3, 0), Grid<double>(2, 3, 0.0)};
    for (int y = 0; y < 2; ++y)
      for (int x = 0; x < 3; ++x) {
        for (int c = 0; c < 3; ++c)
          maps.class_probs.at(c, y, x) = rng.uniform(0.05, 0.9);
        maps.objectness.at(0, y, x) = rng.uniform(0.1, 0.9);
        t.label.at(y, x) = static_cast<int>(rng.next_below(2));
        t.objectness.at(y, x) = rng.bernoulli(0.5) ? 1.0 : 0.0;
      }
    const LossResult r = loss(maps, t, 0.8, 1.1);
    auto value = [&] { return loss(maps, t, 0.8, 1.1).total; };
    auto fd = [&](double* x) {
      const double saved = *x;
      const double step = 1e-6;
      *x = saved + step;
      const double up = value();
      *x = saved - step;
      const double down = value();
      *x = saved;
      return (up - down) / (2.0 * step);
    };
    for (size_t i = 0; i < maps.class_probs.v.size(); i += 2) {
      CHECK(fd(&maps.class_probs.v[i]) ==
            doctest::Approx(r.gprobs.v[i]).epsilon(1e-5));
    }
    for (size_t i = 0; i < maps.objectness.v.size(); ++i) {
      CHECK(fd(&maps.objectness.v[i]) ==
            doctest::Approx(r.gobj.v[i]).epsilon(1e-5));
    }
  }
}

TEST_CASE("training runs, logs, and is deterministic") {
  GeneratorConfig data_cfg = tiny_data_config();
  std::vector<SceneSample> train_scenes, val_scenes;
  for (uint64_t s = 1; s <= 6; ++s) {
    train_scenes.push_back(generate_scene(data_cfg, s));
  }
  val_scenes.push_back(generate_scene(data_cfg, 100));
  val_scenes.back().split = Split::kVal;

  TrainConfig cfg;
  cfg.arch = tiny_arch();
  cfg.epochs = 2;
  cfg.batch_size = 3;
  cfg.lr = 0.01;
  cfg.seed = 3;
  cfg.mode = EnsembleMode::kDynamicEnsemble;

  TrainResult a = train(cfg, train_scenes, val_scenes);
  CHECK(a.log.iterations.size() == 4);  // 2 epochs x ceil(6/3) batches
  CHECK(a.log.epochs.size() == 2);
  CHECK(a.log.best_epoch >= 0);
  for (const auto& it : a.log.iterations) {
    CHECK(std::isfinite(it.loss));
    CHECK(it.lr == cfg.lr);
  }

  SUBCASE("condition sequence replays from the seeded stream") {
    Rng replay(mix_seed(cfg.seed, kConditionStream));
    for (const auto& it : a.log.iterations) {
      CHECK(it.condition ==
            sample_condition(replay, cfg.condition_distribution));
    }
  }

  SUBCASE("standard mode trains under both only") {
    TrainConfig std_cfg = cfg;
    std_cfg.mode = EnsembleMode::kStandard;
    const TrainResult r = train(std_cfg, train_scenes, val_scenes);
    for (const auto& it : r.log.iterations) {
      CHECK(it.condition == ModalityCondition::kBoth);
    }
  }

  SUBCASE("same config and data give bit-identical checkpoints") {
    TrainResult b = train(cfg, train_scenes, val_scenes);
    std::vector<ParamTensor*> pa, pb;
    a.params.visit([&](ParamTensor& p) { pa.push_back(&p); });
    b.params.visit([&](ParamTensor& p) { pb.push_back(&p); });
    REQUIRE(pa.size() == pb.size());
    bool identical = true;
    for (size_t i = 0; i < pa.size(); ++i) {
      identical = identical && pa[i]->v == pb[i]->v;
    }
    CHECK(identical);
    REQUIRE(b.log.iterations.size() == a.log.iterations.size());
    for (size_t i = 0; i < a.log.iterations.size(); ++i) {
      CHECK(a.log.iterations[i].loss == b.log.iterations[i].loss);
    }
  }

  SUBCASE("training without validation keeps the final parameters") {
    const TrainResult r = train(cfg, train_scenes, {});
    CHECK(r.log.best_epoch == cfg.epochs - 1);
    for (const auto& e : r.log.epochs) {
      CHECK(e.val_metric == -1.0);
    }
  }

  SUBCASE("log writer emits jsonl and summary") {
    test_util::TempDir dir("trainlog");
    write_train_log(a.log, dir / "log.jsonl", dir / "summary.json");
    const std::string jsonl = test_util::slurp(dir / "log.jsonl");
    CHECK(std::count(jsonl.begin(), jsonl.end(), '\n') >= 4);
    const std::string summary = test_util::slurp(dir / "summary.json");
    CHECK(summary.find("best_epoch") != std::string::npos);
    CHECK(summary.find("val_box_ap_both") != std::string::npos);
  }
}

TEST_CASE("learning rate decays by the configured schedule") {
  GeneratorConfig data_cfg = tiny_data_config();
  const std::vector<SceneSample> train_scenes = {generate_scene(data_cfg, 1)};

  TrainConfig cfg;
  cfg.arch = tiny_arch();
  cfg.epochs = 5;
  cfg.batch_size = 1;
  cfg.lr = 0.04;
  cfg.lr_decay_factor = 0.5;
  cfg.lr_decay_epochs = 2;
  cfg.seed = 1;

  const TrainResult r = train(cfg, train_scenes, {});
  REQUIRE(r.log.iterations.size() == 5);
  CHECK(r.log.iterations[0].lr == doctest::Approx(0.04));
  CHECK(r.log.iterations[1].lr == doctest::Approx(0.04));
  CHECK(r.log.iterations[2].lr == doctest::Approx(0.02));
  CHECK(r.log.iterations[3].lr == doctest::Approx(0.02));
  CHECK(r.log.iterations[4].lr == doctest::Approx(0.01));
}

TEST_CASE("training moves every parameter group") {
  GeneratorConfig data_cfg = tiny_data_config();
  std::vector<SceneSample> train_scenes;
  for (uint64_t s = 1; s <= 4; ++s) {
    train_scenes.push_back(generate_scene(data_cfg, s));
  }

  TrainConfig cfg;
  cfg.arch = tiny_arch();
  cfg.epochs = 3;
  cfg.batch_size = 2;
  cfg.lr = 0.02;
  cfg.seed = 2;

  DetectorParams init =
      DetectorParams::create(cfg.arch, mix_seed(cfg.seed, kInitStream));
  const TrainResult r = train(cfg, train_scenes, {});

  std::vector<ParamTensor*> p0, p1;
  init.visit([&](ParamTensor& p) { p0.push_back(&p); });
  DetectorParams trained = r.params;
  trained.visit([&](ParamTensor& p) { p1.push_back(&p); });

  // Both backbones, the fusion stack, and the head all receive gradient.
  auto moved = [&](size_t lo, size_t hi) {
    for (size_t i = lo; i < hi; ++i) {
      if (p0[i]->v != p1[i]->v) return true;
    }
    return false;
  };
  const size_t per_bb = 2 + 2 * static_cast<size_t>(cfg.arch.levels);
  size_t cursor = 0;
  CHECK(moved(cursor, cursor + per_bb));  // rgb backbone
  cursor += per_bb;
  CHECK(moved(cursor, cursor + per_bb));  // depth backbone
  cursor += per_bb;
  CHECK(moved(cursor, p0.size()));        // fusion + head
}

TEST_CASE("train rejects bad inputs") {
  TrainConfig cfg;
  cfg.arch = tiny_arch();
  cfg.epochs = 1;
  CHECK_THROWS_AS(train(cfg, {}, {}), DataError);

  GeneratorConfig data_cfg = tiny_data_config();
  data_cfg.image_size = 36;  // not divisible by the stride stack
  const std::vector<SceneSample> bad = {generate_scene(data_cfg, 1)};
  CHECK_THROWS_AS(train(cfg, bad, {}), DataError);
}

TEST_SUITE_END();
