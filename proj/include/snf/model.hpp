#pragma once
// Minimal decoder-only transformer: pre-norm RMSNorm, rotary causal
// self-attention and a SwiGLU feed-forward block, with exact hand-written
// reverse-mode gradients.
//
// Weight orientation is (input_dim x output_dim) everywhere, so a projection
// is y = x * W with x a row vector. Neuron j of layer i owns column j of
// gate and up and row j of down.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "snf/tensor.hpp"

namespace snf {

using TokenId = std::int32_t;

// Byte-level tokenizer: ids 0..255 are raw bytes, 256 marks sequence start.
inline constexpr TokenId kBosToken = 256;
inline constexpr int kByteVocabSize = 257;

std::vector<TokenId> encode_bytes(std::span<const std::uint8_t> bytes,
                                  bool prepend_bos = true);

struct ModelConfig {
  int d_model = 64;
  int n_layers = 4;
  int n_heads = 4;
  int d_ff = 256;
  int vocab_size = kByteVocabSize;
  int max_seq_len = 65;
  std::uint32_t seed = 0;

  int head_dim() const { return d_model / n_heads; }
  // Throws ConfigError on any violated invariant.
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

// Canonical JSON text (fixed key order); also the fingerprint input.
std::string config_to_json(const ModelConfig& cfg);
ModelConfig config_from_json(const std::string& text);

enum class TensorKind {
  kTokenEmbedding,
  kAttnNorm,
  kQuery,
  kKey,
  kValue,
  kAttnOutput,
  kFfnNorm,
  kGate,
  kUp,
  kDown,
  kFinalNorm,
  kUnembedding,
};

struct TensorId {
  TensorKind kind;
  int layer = -1;  // -1 for tensors outside the layer stack
  bool operator==(const TensorId&) const = default;
};

std::string tensor_name(TensorId id);
bool is_ffn_projection(TensorKind kind);

template <typename T>
struct LayerParams {
  Matrix<T> attn_norm;  // 1 x d_model
  Matrix<T> wq, wk, wv, wo;
  Matrix<T> ffn_norm;  // 1 x d_model
  Matrix<T> gate;      // d_model x d_ff
  Matrix<T> up;        // d_model x d_ff
  Matrix<T> down;      // d_ff x d_model

  bool operator==(const LayerParams&) const = default;
};

template <typename T>
struct ModelParams {
  Matrix<T> token_embedding;  // vocab x d_model
  std::vector<LayerParams<T>> layers;
  Matrix<T> final_norm;   // 1 x d_model
  Matrix<T> unembedding;  // d_model x vocab

  // Zero-filled tensors with the shapes implied by cfg.
  static ModelParams zeros(const ModelConfig& cfg);

  // Visits every tensor in declaration order: token_embedding, then per
  // layer attn_norm, wq, wk, wv, wo, ffn_norm, gate, up, down, then
  // final_norm and unembedding. This order is the checkpoint order and the
  // index order of ParamMask.
  template <typename F>
  void for_each(F&& fn) {
    visit(*this, fn);
  }
  template <typename F>
  void for_each(F&& fn) const {
    visit(*this, fn);
  }

  std::size_t tensor_count() const { return 3 + 9 * layers.size(); }
  std::size_t parameter_count() const;

  bool operator==(const ModelParams&) const = default;

 private:
  template <typename Self, typename F>
  static void visit(Self& self, F& fn) {
    fn(TensorId{TensorKind::kTokenEmbedding}, self.token_embedding);
    for (int i = 0; i < static_cast<int>(self.layers.size()); ++i) {
      auto& l = self.layers[static_cast<std::size_t>(i)];
      fn(TensorId{TensorKind::kAttnNorm, i}, l.attn_norm);
      fn(TensorId{TensorKind::kQuery, i}, l.wq);
      fn(TensorId{TensorKind::kKey, i}, l.wk);
      fn(TensorId{TensorKind::kValue, i}, l.wv);
      fn(TensorId{TensorKind::kAttnOutput, i}, l.wo);
      fn(TensorId{TensorKind::kFfnNorm, i}, l.ffn_norm);
      fn(TensorId{TensorKind::kGate, i}, l.gate);
      fn(TensorId{TensorKind::kUp, i}, l.up);
      fn(TensorId{TensorKind::kDown, i}, l.down);
    }
    fn(TensorId{TensorKind::kFinalNorm}, self.final_norm);
    fn(TensorId{TensorKind::kUnembedding}, self.unembedding);
  }
};

template <typename T>
struct BasicModel {
  ModelConfig config;
  ModelParams<T> params;

  bool operator==(const BasicModel&) const = default;
};

// Float32 storage is the production path; BasicModel<double> exists for
// gradient checking.
using ModelBundle = BasicModel<float>;

// Scaled Gaussian init (std 0.02, attention output and down projections
// scaled by 1/sqrt(2 n_layers)), norm scales 1. Deterministic in cfg.seed.
template <typename T>
BasicModel<T> init_model(const ModelConfig& cfg);

template <typename To, typename From>
BasicModel<To> convert_model(const BasicModel<From>& model);

template <typename T>
struct ForwardTrace {
  std::vector<Matrix<T>> gate_pre;  // per layer, tokens x d_ff, before SiLU
  std::vector<Matrix<T>> post_ffn;  // per layer, tokens x d_model
  Matrix<T> logits;                 // tokens x vocab
};

template <typename T>
struct ForwardResult {
  Matrix<T> logits;
  std::optional<ForwardTrace<T>> trace;
};

// Throws DataError for an empty or over-long sequence or an id outside the
// vocabulary.
template <typename T>
ForwardResult<T> forward(const BasicModel<T>& model,
                         std::span<const TokenId> tokens,
                         bool want_trace = false);

template <typename T>
struct LossAndGrads {
  double loss = 0.0;         // mean next-token cross-entropy
  std::size_t positions = 0;  // number of predicted positions
  ModelParams<T> grads;
};

// Mean next-token cross-entropy over every predicted position of the batch
// and its exact gradient. Sequences are processed in order and their
// gradients summed in that order.
template <typename T>
LossAndGrads<T> loss_and_grads(const BasicModel<T>& model,
                               const std::vector<std::vector<TokenId>>& batch);

struct LossSum {
  double total = 0.0;  // summed cross-entropy in nats
  std::size_t positions = 0;
  double mean() const { return positions ? total / double(positions) : 0.0; }
};

// Forward-only cross-entropy, for validation and perplexity.
template <typename T>
LossSum sequence_loss(const BasicModel<T>& model,
                      std::span<const TokenId> tokens);

struct FiringCounts {
  int n_layers = 0;
  int d_ff = 0;
  std::vector<std::uint64_t> counts;  // n_layers x d_ff
  std::uint64_t positions = 0;
};

// Counts, per (layer, neuron), positions whose gate pre-activation is > 0.
// For SiLU this is the same event as a positive activation. The first
// skip_leading positions (e.g. a BOS marker) are ignored.
template <typename T>
FiringCounts record_ffn_firings(const ForwardTrace<T>& trace,
                                std::size_t skip_leading = 0);

template <typename T>
T silu(T z);

}  // namespace snf
