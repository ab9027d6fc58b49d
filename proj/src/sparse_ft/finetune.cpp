#include <cmath>
#include <cstdio>

#include "json.hpp"
#include "snf/error.hpp"
#include "snf/rng.hpp"
#include "snf/sparse_ft.hpp"

namespace snf {

double mean_loss(const ModelBundle& model, const std::vector<Sequence>& sequences) {
  LossSum total;
  for (const auto& seq : sequences) {
    const LossSum s = sequence_loss(model, std::span<const TokenId>(seq));
    total.total += s.total;
    total.positions += s.positions;
  }
  if (total.positions == 0) throw DataError("mean_loss: no predicted positions");
  return total.mean();
}

double perplexity(const ModelBundle& model, const LanguageCorpus& corpus, Split split,
                  std::size_t seq_len) {
  return std::exp(mean_loss(model, eval_sequences(corpus, split, seq_len)));
}

FinetuneRun train_masked(const ModelBundle& base, const std::vector<Batch>& batches,
                         const std::vector<Sequence>& validation, const ParamMask& mask,
                         FinetuneMode mode, const TrainConfig& cfg,
                         const StepCallback& on_step) {
  cfg.validate();
  if (batches.empty()) throw DataError("training: no training batches");
  if (validation.empty()) throw DataError("training: validation split is empty");

  FinetuneRun run;
  run.mode = mode;
  run.mask = mask;
  run.total_steps = cfg.max_steps ? std::min(cfg.max_steps, batches.size()) : batches.size();

  ModelBundle model = base;
  OptimizerState<float> state = make_optimizer_state<float>(mask);
  run.initial_val_loss = mean_loss(model, validation);
  run.best = model;
  bool have_best = false;

  for (std::size_t step = 1; step <= run.total_steps; ++step) {
    const Batch& batch = batches[step - 1];
    LossAndGrads<float> lg = loss_and_grads(model, batch);
    if (!std::isfinite(lg.loss))
      throw DataError("training: non-finite loss at step " + std::to_string(step));
    const StepReport rep = masked_step(model, lg.grads, mask, state, cfg);
    if (!rep.applied)
      throw DataError("training: step " + std::to_string(step) + " rejected: " + rep.reason);

    LogEntry entry{step, lg.loss, std::nullopt};
    if (step % cfg.val_interval_steps == 0 || step == run.total_steps) {
      const double val = mean_loss(model, validation);
      if (!std::isfinite(val))
        throw DataError("training: non-finite validation loss at step " + std::to_string(step));
      entry.val_loss = val;
      if (!have_best || val < run.best_val_loss) {
        have_best = true;
        run.best_val_loss = val;
        run.best_step = step;
        run.best = model;
      }
    }
    run.log.push_back(entry);
    if (on_step) on_step(entry);
  }
  return run;
}

FinetuneRun finetune(const ModelBundle& base, const LanguageCorpus& corpus,
                     const ParamMask& mask, FinetuneMode mode, const TrainConfig& cfg,
                     const StepCallback& on_step) {
  cfg.validate();
  std::vector<Batch> batches;
  for (int e = 0; e < cfg.epochs; ++e) {
    auto epoch = make_batches(corpus, Split::kTrain, cfg.seq_len, cfg.batch_size,
                              mix_seed(cfg.seed, std::uint64_t(e)));
    for (auto& b : epoch) batches.push_back(std::move(b));
  }
  return train_masked(base, batches, eval_sequences(corpus, Split::kValidation, cfg.seq_len),
                      mask, mode, cfg, on_step);
}

std::string run_log_jsonl(const std::vector<LogEntry>& log) {
  std::string out;
  for (const auto& e : log) {
    nlohmann::ordered_json j;
    j["step"] = e.step;
    j["train_loss"] = e.train_loss;
    j["val_loss"] = e.val_loss ? nlohmann::ordered_json(*e.val_loss) : nlohmann::ordered_json();
    out += j.dump() + "\n";
  }
  return out;
}

}  // namespace snf
