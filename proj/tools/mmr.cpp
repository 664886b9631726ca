// Command-line front end: data generation, training, evaluation, ablation,
// consistency scoring, gate inspection, and report rendering.

#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mmr/errors.hpp"
#include "mmr/fusion.hpp"
#include "mmr/harness.hpp"
#include "mmr/mcscore.hpp"
#include "mmr/model.hpp"
#include "mmr/synthdata.hpp"
#include "mmr/training.hpp"

namespace fs = std::filesystem;

namespace {

void require_file(const fs::path& path, const char* what) {
  if (!fs::exists(path))
    throw mmr::DataError(std::string(what) + " not found: " + path.string());
}

void run_generate(const fs::path& config_path, const fs::path& out_dir) {
  require_file(config_path, "config");
  const mmr::KvConfig kv = mmr::KvConfig::parse_file(config_path);
  const mmr::GeneratorConfig config = mmr::GeneratorConfig::from_kv(kv);
  kv.ensure_all_consumed();
  auto [manifest, scenes] = mmr::generate_dataset(config);
  mmr::write_dataset(manifest, scenes, out_dir);
  std::cout << "wrote " << scenes.size() << " scenes to " << out_dir.string()
            << "\n";
}

void run_train(const fs::path& config_path, const fs::path& data_dir,
               const fs::path& out_dir) {
  require_file(config_path, "config");
  const mmr::KvConfig kv = mmr::KvConfig::parse_file(config_path);
  mmr::TrainConfig config = mmr::TrainConfig::from_kv(kv);
  kv.ensure_all_consumed();

  mmr::DatasetReader reader(data_dir);
  const std::vector<mmr::SceneSample> train_scenes =
      reader.load_split(mmr::Split::kTrain);
  const std::vector<mmr::SceneSample> val_scenes =
      reader.load_split(mmr::Split::kVal);

  fs::create_directories(out_dir);
  const fs::path jsonl = out_dir / "train_log.jsonl";
  const fs::path summary = out_dir / "train_summary.json";
  mmr::TrainLog log;
  mmr::TrainResult result;
  try {
    result = mmr::train(config, train_scenes, val_scenes, &log);
  } catch (const mmr::NumericError&) {
    log.checkpoint_path = "";
    mmr::write_train_log(log, jsonl, summary);
    throw;
  }
  const fs::path ckpt = out_dir / "checkpoint.bin";
  mmr::save_checkpoint(result.params, ckpt);
  result.log.checkpoint_path = ckpt.string();
  mmr::write_train_log(result.log, jsonl, summary);
  std::cout << "best epoch " << result.log.best_epoch << ", metric "
            << result.log.best_metric << ", checkpoint " << ckpt.string()
            << "\n";
}

void run_evaluate(const fs::path& ckpt_path, const fs::path& data_dir,
                  const std::string& split, const std::string& condition,
                  bool class_agnostic, const fs::path& out_json) {
  require_file(ckpt_path, "checkpoint");
  const mmr::DetectorParams params = mmr::load_checkpoint(ckpt_path);
  mmr::DatasetReader reader(data_dir);
  const std::vector<mmr::SceneSample> scenes =
      reader.load_split(mmr::parse_split(split));
  const mmr::ModalityCondition cond = mmr::parse_condition(condition);

  std::vector<mmr::DetectionSet> sets;
  std::vector<mmr::SceneGT> gt;
  for (const mmr::SceneSample& scene : scenes) {
    sets.push_back(mmr::detect(params, scene.rgb, scene.depth, cond,
                               scene.scene_id));
    gt.push_back(mmr::scene_gt(scene));
  }
  const mmr::APResult ap = mmr::average_precision(
      sets, gt, mmr::coco_thresholds(), class_agnostic);
  mmr::write_ap_result(ap, out_json);
  std::cout << "box mAP " << ap.box_map << ", mask mAP " << ap.mask_map
            << " -> " << out_json.string() << "\n";
}

void run_ablate(const fs::path& ckpt_path, const fs::path& data_dir,
                const std::string& split, const std::string& model_id,
                const fs::path& out_json) {
  require_file(ckpt_path, "checkpoint");
  const mmr::DetectorParams params = mmr::load_checkpoint(ckpt_path);
  mmr::DatasetReader reader(data_dir);
  const std::vector<mmr::SceneSample> scenes =
      reader.load_split(mmr::parse_split(split));
  const mmr::AblationReport report =
      mmr::modality_ablation(params, scenes, model_id);
  mmr::write_ablation_report(report, out_json);
  for (const mmr::ConditionResult& c : report.conditions)
    std::cout << c.name << ": box AP " << c.box_ap << ", mask AP " << c.mask_ap
              << "\n";
}

void run_mc_score(const std::vector<std::string>& output_files,
                  const std::vector<std::string>& rgb_files,
                  const std::vector<std::string>& depth_files,
                  const fs::path& out_json, const fs::path& out_csv) {
  if (output_files.empty())
    throw mmr::UsageError("mc-score: at least one --output file is required");
  if (rgb_files.size() != output_files.size() ||
      depth_files.size() != output_files.size())
    throw mmr::UsageError(
        "mc-score: --output, --rgb-only, and --depth-only file counts must "
        "match");

  std::vector<mmr::ScenePredictions> scenes;
  for (size_t i = 0; i < output_files.size(); ++i) {
    mmr::ScenePredictions p;
    p.output = mmr::read_detection_set(output_files[i]);
    p.rgb_only = mmr::read_detection_set(rgb_files[i]);
    p.depth_only = mmr::read_detection_set(depth_files[i]);
    p.split = "all";
    scenes.push_back(std::move(p));
  }
  const mmr::MCReport report = mmr::mc_report(scenes);
  mmr::write_mc_report(report, out_json);
  if (!out_csv.empty()) mmr::write_mc_class_csv(report, out_csv);
  std::cout << "MC box " << report.overall.box_mc << "%, mask "
            << report.overall.mask_mc << "% -> " << out_json.string() << "\n";
}

void run_gate_heatmap(const fs::path& ckpt_path, const fs::path& data_dir,
                      const std::string& split, const std::string& scene_id,
                      const fs::path& out_dir) {
  require_file(ckpt_path, "checkpoint");
  const mmr::DetectorParams params = mmr::load_checkpoint(ckpt_path);
  mmr::DatasetReader reader(data_dir);
  const mmr::Split sp = mmr::parse_split(split);
  const std::string id =
      scene_id.empty() ? reader.scene_ids(sp).at(0) : scene_id;
  const mmr::SceneSample scene = reader.load_scene(sp, id);

  const std::vector<mmr::ModalityCondition> conditions = {
      mmr::ModalityCondition::kBoth, mmr::ModalityCondition::kRgbOnly,
      mmr::ModalityCondition::kDepthOnly};
  for (mmr::ModalityCondition cond : conditions) {
    mmr::ForwardContext ctx;
    mmr::forward_dense(params, scene.rgb, scene.depth, cond, &ctx);
    mmr::export_gate_record(ctx.fuse.record, {"rgb", "depth"},
                            (out_dir / mmr::condition_name(cond)).string());
  }
  std::cout << "gate heatmaps for " << id << " -> " << out_dir.string()
            << "\n";
}

void run_report(const fs::path& ablation, const fs::path& mc,
                const fs::path& comparison, const fs::path& gates,
                const std::vector<std::string>& images,
                const fs::path& out_md) {
  mmr::write_markdown_report(out_md, ablation, mc, comparison, gates, images);
  std::cout << "report -> " << out_md.string() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multimodal redundancy detection toolkit"};
  app.require_subcommand(1);

  std::string config_path, data_dir, out_path, ckpt_path;
  std::string split = "test", condition = "both", scene_id, model_id = "model";
  bool class_agnostic = false;
  std::string csv_path;
  std::vector<std::string> output_files, rgb_files, depth_files, images;
  std::string ablation_json, mc_json, comparison_json, gate_json;

  CLI::App* gen = app.add_subcommand("generate-data", "Generate a dataset");
  gen->add_option("--config", config_path, "Generator config file")
      ->required();
  gen->add_option("--out", out_path, "Output dataset directory")->required();

  CLI::App* tr = app.add_subcommand("train", "Train a detector");
  tr->add_option("--config", config_path, "Train config file")->required();
  tr->add_option("--data", data_dir, "Dataset directory")->required();
  tr->add_option("--out", out_path, "Output directory")->required();

  CLI::App* ev = app.add_subcommand("evaluate", "Evaluate a checkpoint");
  ev->add_option("--checkpoint", ckpt_path, "Checkpoint file")->required();
  ev->add_option("--data", data_dir, "Dataset directory")->required();
  ev->add_option("--split", split, "Dataset split");
  ev->add_option("--condition", condition, "Input condition");
  ev->add_flag("--class-agnostic", class_agnostic, "Merge classes");
  ev->add_option("--out", out_path, "Output JSON path")->required();

  CLI::App* ab = app.add_subcommand("ablate", "Modality-off ablation");
  ab->add_option("--checkpoint", ckpt_path, "Checkpoint file")->required();
  ab->add_option("--data", data_dir, "Dataset directory")->required();
  ab->add_option("--split", split, "Dataset split");
  ab->add_option("--model-id", model_id, "Identifier in the report");
  ab->add_option("--out", out_path, "Output JSON path")->required();

  CLI::App* mc = app.add_subcommand("mc-score", "Consistency score");
  mc->add_option("--output", output_files, "Fused DetectionSet JSON files")
      ->required();
  mc->add_option("--rgb-only", rgb_files, "RGB-only DetectionSet JSON files")
      ->required();
  mc->add_option("--depth-only", depth_files,
                 "Depth-only DetectionSet JSON files")
      ->required();
  mc->add_option("--out", out_path, "Output JSON path")->required();
  mc->add_option("--csv", csv_path, "Optional per-class CSV path");

  CLI::App* gh = app.add_subcommand("gate-heatmap", "Export gate heatmaps");
  gh->add_option("--checkpoint", ckpt_path, "Checkpoint file")->required();
  gh->add_option("--data", data_dir, "Dataset directory")->required();
  gh->add_option("--split", split, "Dataset split");
  gh->add_option("--scene", scene_id, "Scene id (default: first in split)");
  gh->add_option("--out", out_path, "Output directory")->required();

  CLI::App* rp = app.add_subcommand("report", "Render a markdown summary");
  rp->add_option("--ablation", ablation_json, "AblationReport JSON");
  rp->add_option("--mc", mc_json, "MCReport JSON");
  rp->add_option("--comparison", comparison_json, "MC-vs-confidence JSON");
  rp->add_option("--gates", gate_json, "Gate shift JSON");
  rp->add_option("--images", images, "Heatmap images to embed");
  rp->add_option("--out", out_path, "Output markdown path")->required();

  try {
    app.parse(argc, argv);
    if (gen->parsed()) run_generate(config_path, out_path);
    if (tr->parsed()) run_train(config_path, data_dir, out_path);
    if (ev->parsed())
      run_evaluate(ckpt_path, data_dir, split, condition, class_agnostic,
                   out_path);
    if (ab->parsed()) run_ablate(ckpt_path, data_dir, split, model_id,
                                 out_path);
    if (mc->parsed())
      run_mc_score(output_files, rgb_files, depth_files, out_path, csv_path);
    if (gh->parsed())
      run_gate_heatmap(ckpt_path, data_dir, split, scene_id, out_path);
    if (rp->parsed())
      run_report(ablation_json, mc_json, comparison_json, gate_json, images,
                 out_path);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);  // help text to stdout, exit 0
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n";
    return 1;
  } catch (const mmr::UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const mmr::DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const mmr::NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
