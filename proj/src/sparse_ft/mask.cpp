#include <algorithm>
#include <set>

#include "snf/error.hpp"
#include "snf/rng.hpp"
#include "snf/sparse_ft.hpp"

namespace snf {

std::string mode_name(FinetuneMode mode) {
  switch (mode) {
    case FinetuneMode::kTarget: return "target";
    case FinetuneMode::kRandom: return "random";
    case FinetuneMode::kFfnOnly: return "ffn_only";
    case FinetuneMode::kFull: return "full";
  }
  return "unknown";
}

FinetuneMode parse_mode(const std::string& name) {
  if (name == "target") return FinetuneMode::kTarget;
  if (name == "random") return FinetuneMode::kRandom;
  if (name == "ffn_only") return FinetuneMode::kFfnOnly;
  if (name == "full") return FinetuneMode::kFull;
  throw ConfigError("unknown fine-tuning mode '" + name +
                    "' (expected target, random, ffn_only or full)");
}

std::size_t ParamMask::trainable_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors) n += t.indices.size();
  return n;
}

namespace {

std::string projection_name(TensorId id) {
  const std::string full = tensor_name(id);
  const auto dot = full.rfind('.');
  return id.layer < 0 ? full : full.substr(dot + 1);
}

void check_neurons(const ModelConfig& cfg, const std::vector<Neuron>& neurons) {
  for (const auto& n : neurons)
    if (n.layer < 0 || n.layer >= cfg.n_layers || n.index < 0 || n.index >= cfg.d_ff)
      throw DataError("neuron (" + std::to_string(n.layer) + ", " + std::to_string(n.index) +
                      ") outside model with " + std::to_string(cfg.n_layers) + " layers x " +
                      std::to_string(cfg.d_ff) + " neurons");
}

}  // namespace

std::vector<MaskSummaryRow> ParamMask::summary() const {
  std::vector<MaskSummaryRow> rows;
  for (const auto& t : tensors) rows.push_back({t.id.layer, projection_name(t.id), t.indices.size()});
  return rows;
}

std::vector<Neuron> random_neurons(const ModelConfig& cfg, std::size_t count,
                                   std::uint64_t seed) {
  const std::size_t total = std::size_t(cfg.n_layers) * std::size_t(cfg.d_ff);
  if (count > total)
    throw ConfigError("random mask: " + std::to_string(count) + " neurons requested but model has " +
                      std::to_string(total));
  // Partial Fisher-Yates over neuron ids.
  std::vector<std::size_t> ids(total);
  for (std::size_t i = 0; i < total; ++i) ids[i] = i;
  Rng rng(mix_seed(seed, 0x7a4d));
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(total - i));
    std::swap(ids[i], ids[j]);
  }
  std::vector<Neuron> out;
  for (std::size_t i = 0; i < count; ++i)
    out.push_back({int(ids[i] / std::size_t(cfg.d_ff)), int(ids[i] % std::size_t(cfg.d_ff))});
  std::sort(out.begin(), out.end());
  return out;
}

ParamMask build_mask(const ModelConfig& cfg, const std::vector<Neuron>& neurons,
                     FinetuneMode mode, std::uint64_t seed) {
  cfg.validate();
  check_neurons(cfg, neurons);
  const std::set<Neuron> unique(neurons.begin(), neurons.end());
  std::vector<Neuron> chosen(unique.begin(), unique.end());
  if (mode == FinetuneMode::kRandom) chosen = random_neurons(cfg, chosen.size(), seed);

  // selected[layer][j]
  std::vector<std::vector<std::uint8_t>> selected(
      std::size_t(cfg.n_layers), std::vector<std::uint8_t>(std::size_t(cfg.d_ff), 0));
  for (const auto& n : chosen) selected[std::size_t(n.layer)][std::size_t(n.index)] = 1;

  ParamMask mask;
  const auto shapes = ModelParams<float>::zeros(cfg);
  shapes.for_each([&](TensorId id, const Matrix<float>& m) {
    TensorMask t;
    t.id = id;
    t.rows = m.rows;
    t.cols = m.cols;
    t.trainable.assign(m.size(), 0);
    for (std::size_t r = 0; r < m.rows; ++r)
      for (std::size_t c = 0; c < m.cols; ++c) {
        bool on = false;
        switch (mode) {
          case FinetuneMode::kFull: on = true; break;
          case FinetuneMode::kFfnOnly: on = is_ffn_projection(id.kind); break;
          case FinetuneMode::kTarget:
          case FinetuneMode::kRandom:
            if (id.kind == TensorKind::kGate || id.kind == TensorKind::kUp)
              on = selected[std::size_t(id.layer)][c] != 0;
            else if (id.kind == TensorKind::kDown)
              on = selected[std::size_t(id.layer)][r] != 0;
            break;
        }
        if (on) {
          t.trainable[r * m.cols + c] = 1;
          t.indices.push_back(static_cast<std::uint32_t>(r * m.cols + c));
        }
      }
    mask.tensors.push_back(std::move(t));
  });
  return mask;
}

std::vector<MaskSummaryRow> target_mask_summary(const ModelConfig& cfg,
                                                const std::vector<Neuron>& neurons) {
  check_neurons(cfg, neurons);
  const std::set<Neuron> unique(neurons.begin(), neurons.end());
  std::vector<std::size_t> per_layer(std::size_t(cfg.n_layers), 0);
  for (const auto& n : unique) ++per_layer[std::size_t(n.layer)];
  const auto d = std::size_t(cfg.d_model);

  std::vector<MaskSummaryRow> rows;
  auto add = [&](TensorId id, std::size_t count) {
    rows.push_back({id.layer, projection_name(id), count});
  };
  add({TensorKind::kTokenEmbedding}, 0);
  for (int l = 0; l < cfg.n_layers; ++l) {
    const std::size_t k = per_layer[std::size_t(l)];
    for (TensorKind kind : {TensorKind::kAttnNorm, TensorKind::kQuery, TensorKind::kKey,
                            TensorKind::kValue, TensorKind::kAttnOutput, TensorKind::kFfnNorm})
      add({kind, l}, 0);
    add({TensorKind::kGate, l}, d * k);
    add({TensorKind::kUp, l}, d * k);
    add({TensorKind::kDown, l}, k * d);
  }
  add({TensorKind::kFinalNorm}, 0);
  add({TensorKind::kUnembedding}, 0);
  return rows;
}

std::string mask_summary_csv(const ParamMask& mask) {
  std::string out = "layer,projection,trainable_count\n";
  for (const auto& row : mask.summary())
    out += std::to_string(row.layer) + "," + row.projection + "," + std::to_string(row.trainable) + "\n";
  return out;
}

}  // namespace snf
