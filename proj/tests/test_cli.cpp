// End-to-end checks of the mmr command-line tool: exit codes, artifact
// layout, and the generate/train/evaluate/ablate/report pipeline.

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <string>

#include <doctest.h>

#include "mmr/geometry.hpp"
#include "mmr/model.hpp"
#include "test_util.hpp"

#ifndef MMR_CLI_PATH
#error "MMR_CLI_PATH must point at the mmr binary"
#endif

namespace {

namespace fs = std::filesystem;
using namespace test_util;

struct CliResult {
  int code = -1;
  std::string out;
  std::string err;
};

CliResult run_cli(const std::string& args, const fs::path& scratch) {
  const fs::path out_path = scratch / "cli_stdout.txt";
  const fs::path err_path = scratch / "cli_stderr.txt";
  const std::string cmd = std::string(MMR_CLI_PATH) + " " + args + " > " +
                          out_path.string() + " 2> " + err_path.string();
  const int status = std::system(cmd.c_str());
  CliResult r;
  if (status >= 0 && WIFEXITED(status)) r.code = WEXITSTATUS(status);
  r.out = slurp(out_path);
  r.err = slurp(err_path);
  return r;
}

constexpr const char* kGenConfig =
    "image_size = 32\n"
    "objects_min = 1\n"
    "objects_max = 2\n"
    "seed = 13\n"
    "scenes = 10\n"
    "novel_scenes = 2\n";

constexpr const char* kArchLines =
    "stem_channels = 4\n"
    "channels = 6\n"
    "head_channels = 6\n"
    "levels = 2\n"
    "num_classes = 12\n";

std::string train_config(const std::string& lr) {
  return "epochs = 2\n"
         "batch_size = 2\n"
         "lr = " + lr + "\n"
         "momentum = 0.9\n"
         "lr_decay_factor = 0.5\n"
         "lr_decay_epochs = 10\n"
         "seed = 3\n"
         "mode = dynamic_ensemble\n" + kArchLines;
}

mmr::DetectionSet sample_detections() {
  mmr::Detection det;
  det.label = 2;
  det.confidence = 0.75;
  det.box = mmr::Box{2, 2, 6, 6};
  det.mask = mmr::Mask(16, 16);
  for (int y = 2; y <= 6; ++y)
    for (int x = 2; x <= 6; ++x) det.mask.set(y, x);
  mmr::DetectionSet set;
  set.scene_id = "scene_0";
  set.height = 16;
  set.width = 16;
  set.detections = {det};
  return set;
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("usage errors exit 1") {
  TempDir tmp("cli-usage");
  CHECK(run_cli("", tmp.path()).code == 1);
  CHECK(run_cli("bogus-subcommand", tmp.path()).code == 1);

  // Mismatched mc-score file counts are rejected before any file opens.
  const CliResult r = run_cli(
      "mc-score --output a.json b.json --rgb-only a.json "
      "--depth-only a.json b.json --out x.json",
      tmp.path());
  CHECK(r.code == 1);
  CHECK(r.err.find("must match") != std::string::npos);
}

TEST_CASE("help exits 0") {
  TempDir tmp("cli-help");
  const CliResult r = run_cli("--help", tmp.path());
  CHECK(r.code == 0);
  CHECK(r.out.find("Multimodal redundancy") != std::string::npos);
}

TEST_CASE("evaluate on a missing checkpoint exits 2 and names the path") {
  TempDir tmp("cli-missing");
  const fs::path ckpt = tmp / "nope.bin";
  const CliResult r = run_cli("evaluate --checkpoint " + ckpt.string() +
                                  " --data " + (tmp / "d").string() +
                                  " --out " + (tmp / "ap.json").string(),
                              tmp.path());
  CHECK(r.code == 2);
  CHECK(r.err.find("checkpoint not found") != std::string::npos);
  CHECK(r.err.find(ckpt.string()) != std::string::npos);
}

TEST_CASE("unknown config keys exit 2") {
  TempDir tmp("cli-badkey");
  spit(tmp / "gen.conf", std::string(kGenConfig) + "imagesize = 64\n");
  const CliResult r =
      run_cli("generate-data --config " + (tmp / "gen.conf").string() +
                  " --out " + (tmp / "data").string(),
              tmp.path());
  CHECK(r.code == 2);
  CHECK(r.err.find("unknown config keys") != std::string::npos);
}

TEST_CASE("pipeline: generate, train, evaluate, ablate, heatmaps, report") {
  TempDir tmp("cli-pipeline");
  spit(tmp / "gen.conf", kGenConfig);
  spit(tmp / "train.conf", train_config("0.02"));
  const std::string data = (tmp / "data").string();
  const std::string run = (tmp / "run").string();

  CliResult r = run_cli(
      "generate-data --config " + (tmp / "gen.conf").string() + " --out " + data,
      tmp.path());
  REQUIRE(r.code == 0);
  CHECK(r.out.find("wrote 12 scenes") != std::string::npos);
  CHECK(fs::exists(tmp / "data" / "manifest.json"));

  r = run_cli("train --config " + (tmp / "train.conf").string() + " --data " +
                  data + " --out " + run,
              tmp.path());
  REQUIRE(r.code == 0);
  CHECK(r.out.find("best epoch") != std::string::npos);
  const fs::path ckpt = tmp / "run" / "checkpoint.bin";
  CHECK(fs::exists(ckpt));
  CHECK(fs::exists(tmp / "run" / "train_log.jsonl"));
  CHECK(fs::exists(tmp / "run" / "train_summary.json"));

  r = run_cli("evaluate --checkpoint " + ckpt.string() + " --data " + data +
                  " --split test --condition both --class-agnostic --out " +
                  (tmp / "ap.json").string(),
              tmp.path());
  REQUIRE(r.code == 0);
  CHECK(r.out.find("box mAP") != std::string::npos);
  CHECK(slurp(tmp / "ap.json").find("\"box_map\"") != std::string::npos);

  r = run_cli("evaluate --checkpoint " + ckpt.string() + " --data " + data +
                  " --split val --condition depth_only --out " +
                  (tmp / "ap2.json").string(),
              tmp.path());
  CHECK(r.code == 0);

  r = run_cli("evaluate --checkpoint " + ckpt.string() + " --data " + data +
                  " --condition xyz --out " + (tmp / "ap3.json").string(),
              tmp.path());
  CHECK(r.code == 2);

  const std::string ablation = (tmp / "ablation.json").string();
  r = run_cli("ablate --checkpoint " + ckpt.string() + " --data " + data +
                  " --split test --model-id tiny --out " + ablation,
              tmp.path());
  REQUIRE(r.code == 0);
  CHECK(r.out.find("rgb_off: box AP") != std::string::npos);
  CHECK(slurp(tmp / "ablation.json").find("\"rgb_off\"") != std::string::npos);

  r = run_cli("gate-heatmap --checkpoint " + ckpt.string() + " --data " + data +
                  " --split test --out " + (tmp / "gates").string(),
              tmp.path());
  REQUIRE(r.code == 0);
  CHECK(fs::exists(tmp / "gates" / "both" / "gate_L0_rgb.png"));
  CHECK(fs::exists(tmp / "gates" / "both" / "gate_L1_depth.png"));
  CHECK(fs::exists(tmp / "gates" / "rgb_only" / "gate_summary.json"));
  CHECK(fs::exists(tmp / "gates" / "depth_only" / "gate_L0_rgb.png"));

  // Consistency scoring over detection-set files; identical sets score 100.
  const fs::path dets = tmp / "dets.json";
  mmr::write_detection_set(sample_detections(), dets);
  r = run_cli("mc-score --output " + dets.string() + " --rgb-only " +
                  dets.string() + " --depth-only " + dets.string() +
                  " --out " + (tmp / "mc.json").string() + " --csv " +
                  (tmp / "mc.csv").string(),
              tmp.path());
  REQUIRE(r.code == 0);
  CHECK(r.out.find("MC box 100%") != std::string::npos);
  CHECK(slurp(tmp / "mc.json").find("\"overall\"") != std::string::npos);
  CHECK(slurp(tmp / "mc.csv").find("class,") != std::string::npos);

  r = run_cli("report --ablation " + ablation + " --mc " +
                  (tmp / "mc.json").string() + " --out " +
                  (tmp / "report.md").string(),
              tmp.path());
  REQUIRE(r.code == 0);
  const std::string md = slurp(tmp / "report.md");
  CHECK(md.find("# Multimodal Redundancy Report") == 0);
  CHECK(md.find("## Modality Ablation (tiny)") != std::string::npos);
  CHECK(md.find("## Consistency by Split") != std::string::npos);

  r = run_cli("report --ablation " + (tmp / "absent.json").string() +
                  " --out " + (tmp / "r2.md").string(),
              tmp.path());
  CHECK(r.code == 2);
}

TEST_CASE("numeric divergence exits 3 and still writes the log") {
  TempDir tmp("cli-diverge");
  spit(tmp / "gen.conf", kGenConfig);
  spit(tmp / "train.conf", train_config("1e30"));
  const std::string data = (tmp / "data").string();

  CliResult r = run_cli(
      "generate-data --config " + (tmp / "gen.conf").string() + " --out " + data,
      tmp.path());
  REQUIRE(r.code == 0);

  r = run_cli("train --config " + (tmp / "train.conf").string() + " --data " +
                  data + " --out " + (tmp / "run").string(),
              tmp.path());
  CHECK(r.code == 3);
  CHECK(r.err.find("error:") != std::string::npos);
  CHECK(fs::exists(tmp / "run" / "train_log.jsonl"));
  CHECK(fs::exists(tmp / "run" / "train_summary.json"));
  CHECK(!fs::exists(tmp / "run" / "checkpoint.bin"));
}

}  // TEST_SUITE
