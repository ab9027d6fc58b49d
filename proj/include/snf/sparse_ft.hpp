#pragma once
// Parameter masks over the model, masked AdamW, and the fine-tuning loop
// with validation-driven checkpoint selection.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "snf/corpus.hpp"
#include "snf/lape.hpp"
#include "snf/model.hpp"

namespace snf {

enum class FinetuneMode { kTarget, kRandom, kFfnOnly, kFull };
std::string mode_name(FinetuneMode mode);
FinetuneMode parse_mode(const std::string& name);  // throws ConfigError

struct TensorMask {
  TensorId id;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> trainable;  // rows * cols, 1 = trainable
  std::vector<std::uint32_t> indices;   // flat indices of trainable entries, ascending

  bool operator==(const TensorMask&) const = default;
};

struct MaskSummaryRow {
  int layer = -1;
  std::string projection;  // tensor name without the layer prefix
  std::size_t trainable = 0;
  bool operator==(const MaskSummaryRow&) const = default;
};

// One TensorMask per model tensor, in ModelParams declaration order.
struct ParamMask {
  std::vector<TensorMask> tensors;

  std::size_t trainable_count() const;
  std::vector<MaskSummaryRow> summary() const;
  bool operator==(const ParamMask&) const = default;
};

// Target mode: gate/up column j and down row j of layer i are trainable iff
// (i, j) is in `neurons`. Random mode draws |neurons| distinct FFN neurons
// uniformly with `seed` and masks them the same way. ffn_only marks every
// gate/up/down entry; full marks everything. Throws DataError for a neuron
// outside the model and ConfigError when random needs more neurons than
// exist.
ParamMask build_mask(const ModelConfig& cfg, const std::vector<Neuron>& neurons,
                     FinetuneMode mode, std::uint64_t seed = 0);

// Per-(layer, projection) trainable counts build_mask would produce for
// target mode, computed from shapes alone so it also works at sizes too
// large to materialize.
std::vector<MaskSummaryRow> target_mask_summary(const ModelConfig& cfg,
                                                const std::vector<Neuron>& neurons);

// Neurons drawn by random mode.
std::vector<Neuron> random_neurons(const ModelConfig& cfg, std::size_t count,
                                   std::uint64_t seed);

struct TrainConfig {
  double learning_rate = 1e-4;
  std::size_t batch_size = 2;
  double weight_decay = 0.01;
  int epochs = 1;
  double grad_clip_norm = 1.0;
  std::size_t val_interval_steps = 500;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t seed = 0;
  std::size_t seq_len = 64;
  std::size_t max_steps = 0;  // 0: no cap beyond the epoch count

  void validate() const;
  // Defaults for a mode: learning rate 1e-5 for ffn_only and full, 1e-4
  // otherwise.
  static TrainConfig for_mode(FinetuneMode mode);
};

// Adam moments for trainable entries only, stored compactly in the order of
// TensorMask::indices.
template <typename T>
struct OptimizerState {
  std::int64_t step = 0;
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
};

template <typename T>
OptimizerState<T> make_optimizer_state(const ParamMask& mask);

struct StepReport {
  bool applied = false;
  double grad_norm = 0.0;  // over trainable entries, before clipping
  double clip_scale = 1.0;
  std::string reason;  // set when the step was rejected
};

// Clips the gradient by its global norm over trainable entries, then applies
// AdamW (decoupled weight decay, bias-corrected moments) to trainable
// entries only. Frozen weights and moments are never written. A non-finite
// trainable gradient rejects the step and leaves everything untouched.
template <typename T>
StepReport masked_step(BasicModel<T>& model, const ModelParams<T>& grads,
                       const ParamMask& mask, OptimizerState<T>& state,
                       const TrainConfig& cfg);

// Dense moments for reference_adamw_step, one vector per tensor.
template <typename T>
struct DenseAdamState {
  std::int64_t step = 0;
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
};

// Unmasked AdamW with global-norm clipping over every entry.
template <typename T>
StepReport reference_adamw_step(BasicModel<T>& model, const ModelParams<T>& grads,
                                DenseAdamState<T>& state, const TrainConfig& cfg);

struct LogEntry {
  std::size_t step = 0;
  double train_loss = 0.0;
  std::optional<double> val_loss;
};

struct FinetuneRun {
  FinetuneMode mode = FinetuneMode::kTarget;
  ParamMask mask;
  ModelBundle best;
  std::vector<LogEntry> log;
  std::size_t best_step = 0;
  double best_val_loss = 0.0;
  double initial_val_loss = 0.0;  // before the first step, not part of the log
  std::size_t total_steps = 0;
};

using StepCallback = std::function<void(const LogEntry&)>;

// Generic masked training loop: one step per batch (capped by
// cfg.max_steps), validation every val_interval_steps and after the final
// step, best checkpoint by validation loss (earliest on ties). Throws
// DataError on empty input, a non-finite loss or a rejected step.
FinetuneRun train_masked(const ModelBundle& base,
                         const std::vector<Batch>& batches,
                         const std::vector<Sequence>& validation,
                         const ParamMask& mask, FinetuneMode mode,
                         const TrainConfig& cfg, const StepCallback& on_step = {});

// One epoch (per cfg.epochs) over the corpus train split with validation on
// its validation split.
FinetuneRun finetune(const ModelBundle& base, const LanguageCorpus& corpus,
                     const ParamMask& mask, FinetuneMode mode, const TrainConfig& cfg,
                     const StepCallback& on_step = {});

// Mean next-token cross-entropy over sequences.
double mean_loss(const ModelBundle& model, const std::vector<Sequence>& sequences);

// exp(mean next-token cross-entropy) over the split. Throws DataError for
// an empty split.
double perplexity(const ModelBundle& model, const LanguageCorpus& corpus, Split split,
                  std::size_t seq_len);

std::string run_log_jsonl(const std::vector<LogEntry>& log);
std::string mask_summary_csv(const ParamMask& mask);

}  // namespace snf
