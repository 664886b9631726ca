#include "mmr/fusion.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "mmr/errors.hpp"
#include "mmr/image_io.hpp"

namespace mmr {
namespace {

using ojson = nlohmann::ordered_json;

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "elementwise product");
  Tensor y = a;
  for (size_t i = 0; i < y.v.size(); ++i) y.v[i] *= b.v[i];
  return y;
}

void add_into(Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "elementwise sum");
  for (size_t i = 0; i < a.v.size(); ++i) a.v[i] += b.v[i];
}

void check_pyramids(const FusionParams& p,
                    const std::vector<FeaturePyramid>& mods) {
  if (static_cast<int>(mods.size()) != p.modalities)
    throw DataError("fuse: expected " + std::to_string(p.modalities) +
                    " modality pyramids, got " + std::to_string(mods.size()));
  for (const auto& pyr : mods) {
    if (static_cast<int>(pyr.levels.size()) != p.levels)
      throw DataError("fuse: pyramid has " +
                      std::to_string(pyr.levels.size()) + " levels, expected " +
                      std::to_string(p.levels));
    for (int j = 0; j < p.levels; ++j) {
      const Tensor& t = pyr.levels[j];
      if (t.c != p.channels)
        throw DataError("fuse: level " + std::to_string(j) + " has " +
                        std::to_string(t.c) + " channels, expected " +
                        std::to_string(p.channels));
      require_same_shape(t, mods[0].levels[j], "fuse modality level");
      if (j + 1 < p.levels) {
        const Tensor& n = pyr.levels[j + 1];
        if (t.h != 2 * n.h || t.w != 2 * n.w)
          throw DataError("fuse: level " + std::to_string(j + 1) +
                          " must halve the previous level's extent");
      }
    }
  }
}

}  // namespace

FusionParams FusionParams::create(int modalities, int channels, int levels,
                                  Rng& rng) {
  if (modalities < 1 || channels < 1 || levels < 1)
    throw DataError("fusion: modalities, channels, and levels must be >= 1");
  FusionParams p;
  p.modalities = modalities;
  p.channels = channels;
  p.levels = levels;
  p.gate.resize(levels);
  for (int j = 0; j < levels; ++j) {
    p.gate[j].reserve(modalities);
    for (int m = 0; m < modalities; ++m)
      p.gate[j].emplace_back(modalities * channels, channels, 1, 1, 0);
  }
  // Gate convs stay zero: softmax of zero logits gives every modality the
  // same initial weight 1/N.
  p.lateral.reserve(levels);
  p.smooth.reserve(levels);
  for (int j = 0; j < levels; ++j) {
    p.lateral.emplace_back(modalities * channels, channels, 1, 1, 0);
    p.lateral.back().init_he(rng);
    p.smooth.emplace_back(channels, channels, 3, 1, 1);
    p.smooth.back().init_he(rng);
  }
  return p;
}

FeaturePyramid fuse(const FusionParams& params,
                    const std::vector<FeaturePyramid>& per_modality,
                    FuseContext* ctx) {
  check_pyramids(params, per_modality);
  FuseContext local;
  FuseContext& c = ctx ? *ctx : local;
  c = FuseContext{};
  const int n = params.modalities;
  const int j_count = params.levels;
  c.record.logits.resize(j_count);
  c.record.weights.resize(j_count);
  c.inputs.resize(j_count);

  std::vector<Tensor> lat;
  lat.reserve(j_count);
  for (int j = 0; j < j_count; ++j) {
    std::vector<const Tensor*> parts;
    parts.reserve(n);
    for (int m = 0; m < n; ++m) parts.push_back(&per_modality[m].levels[j]);
    Tensor cat = concat_channels(parts);

    std::vector<Tensor> logits;
    logits.reserve(n);
    for (int m = 0; m < n; ++m)
      logits.push_back(params.gate[j][m].forward(cat));
    std::vector<Tensor> weights = softmax_modality(logits);

    std::vector<Tensor> gated;
    gated.reserve(n);
    for (int m = 0; m < n; ++m)
      gated.push_back(mul(per_modality[m].levels[j], weights[m]));
    std::vector<const Tensor*> gated_parts;
    gated_parts.reserve(n);
    for (const Tensor& t : gated) gated_parts.push_back(&t);
    Tensor catg = concat_channels(gated_parts);

    lat.push_back(params.lateral[j].forward(catg));

    for (int m = 0; m < n; ++m) c.inputs[j].push_back(per_modality[m].levels[j]);
    c.cat.push_back(std::move(cat));
    c.record.logits[j] = std::move(logits);
    c.record.weights[j] = std::move(weights);
    c.catg.push_back(std::move(catg));
  }

  c.merged.resize(j_count);
  c.merged[j_count - 1] = lat[j_count - 1];
  for (int j = j_count - 2; j >= 0; --j) {
    Tensor up = upsample2(c.merged[j + 1]);
    add_into(up, lat[j]);
    c.merged[j] = std::move(up);
  }

  FeaturePyramid out;
  out.levels.reserve(j_count);
  for (int j = 0; j < j_count; ++j)
    out.levels.push_back(params.smooth[j].forward(c.merged[j]));
  return out;
}

std::vector<FeaturePyramid> fuse_backward(FusionParams& params,
                                          const FuseContext& ctx,
                                          const FeaturePyramid& gout) {
  const int n = params.modalities;
  const int j_count = params.levels;
  if (static_cast<int>(gout.levels.size()) != j_count)
    throw DataError("fuse_backward: gradient level count mismatch");

  std::vector<Tensor> gmerged(j_count);
  for (int j = 0; j < j_count; ++j) {
    require_same_shape(gout.levels[j], ctx.merged[j], "fuse_backward gout");
    gmerged[j] = params.smooth[j].backward(ctx.merged[j], gout.levels[j]);
  }
  // merged[j] = lateral[j] + upsample2(merged[j+1]); accumulate top-down
  // contributions finest-first.
  for (int j = 0; j + 1 < j_count; ++j)
    add_into(gmerged[j + 1], upsample2_backward(gmerged[j]));

  std::vector<int> sizes(n, params.channels);
  std::vector<std::vector<Tensor>> ginputs(j_count);
  for (int j = 0; j < j_count; ++j) {
    Tensor gcatg = params.lateral[j].backward(ctx.catg[j], gmerged[j]);
    std::vector<Tensor> ggated = split_channels(gcatg, sizes);

    std::vector<Tensor> gf(n), gw(n);
    for (int m = 0; m < n; ++m) {
      gf[m] = mul(ggated[m], ctx.record.weights[j][m]);
      gw[m] = mul(ggated[m], ctx.inputs[j][m]);
    }
    std::vector<Tensor> glogits =
        softmax_modality_backward(ctx.record.weights[j], gw);

    Tensor gcat = Tensor::zeros_like(ctx.cat[j]);
    for (int m = 0; m < n; ++m)
      add_into(gcat, params.gate[j][m].backward(ctx.cat[j], glogits[m]));
    std::vector<Tensor> gcat_parts = split_channels(gcat, sizes);
    for (int m = 0; m < n; ++m) add_into(gf[m], gcat_parts[m]);
    ginputs[j] = std::move(gf);
  }

  std::vector<FeaturePyramid> out(n);
  for (int m = 0; m < n; ++m) {
    out[m].levels.reserve(j_count);
    for (int j = 0; j < j_count; ++j)
      out[m].levels.push_back(std::move(ginputs[j][m]));
  }
  return out;
}

Tensor gate_heatmap(const GateRecord& record, int level, int modality) {
  if (level < 0 || level >= static_cast<int>(record.weights.size()))
    throw DataError("gate_heatmap: level " + std::to_string(level) +
                    " out of range");
  const auto& per_mod = record.weights[level];
  if (modality < 0 || modality >= static_cast<int>(per_mod.size()))
    throw DataError("gate_heatmap: modality " + std::to_string(modality) +
                    " out of range");
  const Tensor& w = per_mod[modality];
  Tensor heat(1, w.h, w.w);
  for (int y = 0; y < w.h; ++y)
    for (int x = 0; x < w.w; ++x) {
      double s = 0.0;
      for (int ch = 0; ch < w.c; ++ch) s += w.at(ch, y, x);
      heat.at(0, y, x) = s / w.c;
    }
  return heat;
}

double mean_gate_weight(const GateRecord& record, int level, int modality) {
  Tensor heat = gate_heatmap(record, level, modality);
  double s = 0.0;
  for (double v : heat.v) s += v;
  return s / static_cast<double>(heat.v.size());
}

void export_gate_record(const GateRecord& record,
                        const std::vector<std::string>& modality_names,
                        const std::string& dir) {
  const int j_count = static_cast<int>(record.weights.size());
  if (j_count == 0) throw DataError("export_gate_record: empty record");
  const int n = static_cast<int>(record.weights[0].size());
  if (static_cast<int>(modality_names.size()) != n)
    throw DataError("export_gate_record: need one name per modality");

  std::filesystem::create_directories(dir);
  ojson summary;
  summary["levels"] = j_count;
  summary["modalities"] = modality_names;
  ojson means = ojson::array();
  for (int j = 0; j < j_count; ++j) {
    ojson row = ojson::object();
    for (int m = 0; m < n; ++m) {
      Tensor heat = gate_heatmap(record, j, m);
      ImageU16 img;
      img.h = heat.h;
      img.w = heat.w;
      img.v.resize(static_cast<size_t>(heat.h) * heat.w);
      for (size_t i = 0; i < img.v.size(); ++i) {
        double v = std::min(1.0, std::max(0.0, heat.v[i]));
        img.v[i] = static_cast<uint16_t>(std::llround(v * 65535.0));
      }
      const std::string file =
          "gate_L" + std::to_string(j) + "_" + modality_names[m] + ".png";
      write_png_gray16((std::filesystem::path(dir) / file).string(), img);
      row[modality_names[m]] = mean_gate_weight(record, j, m);
    }
    means.push_back(std::move(row));
  }
  summary["mean_weights"] = std::move(means);

  std::ofstream out(std::filesystem::path(dir) / "gate_summary.json");
  if (!out) throw DataError("export_gate_record: cannot write summary");
  out << summary.dump(2) << "\n";
}

}  // namespace mmr
