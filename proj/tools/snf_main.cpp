// snf: pretrain, identify, finetune, eval, analyze and synth subcommands.
// Exit codes: 0 success, 1 usage, 2 config error, 3 data error,
// 4 consistency (fingerprint) error.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "snf/error.hpp"
#include "snf/pipeline.hpp"

namespace {

using namespace snf;
using namespace snf::pipeline;

struct CorpusFlags {
  std::string corpora;
  std::string parallel;
  std::optional<std::uint64_t> synthetic;
  double scale = 1.0;
  std::string target = "tt";

  void add(CLI::App* app) {
    app->add_option("--corpora", corpora, "corpora/<lang>/*.txt root");
    app->add_option("--parallel", parallel, "parallel/<lang>.txt directory");
    app->add_option("--synthetic", synthetic, "use the synthetic toy setting with this seed");
    app->add_option("--synthetic-scale", scale, "scale of the synthetic byte budgets");
    app->add_option("--target", target, "target (low-resource) language id");
  }
  CorpusSource source() const {
    CorpusSource s;
    s.corpora_dir = corpora;
    s.parallel_dir = parallel;
    s.synthetic = synthetic.has_value();
    s.synthetic_seed = synthetic.value_or(0);
    s.synthetic_scale = scale;
    s.target_lang = target;
    return s;
  }
};

struct TrainFlags {
  std::optional<double> lr;
  std::optional<std::size_t> batch_size;
  std::optional<double> weight_decay;
  std::optional<int> epochs;
  std::optional<double> clip;
  std::optional<std::size_t> val_interval;
  std::optional<std::size_t> seq_len;
  std::optional<std::size_t> max_steps;

  void add(CLI::App* app) {
    app->add_option("--lr", lr, "learning rate");
    app->add_option("--batch-size", batch_size, "sequences per step");
    app->add_option("--weight-decay", weight_decay, "decoupled weight decay");
    app->add_option("--epochs", epochs, "passes over the training split");
    app->add_option("--grad-clip", clip, "global gradient-norm clip");
    app->add_option("--val-interval", val_interval, "steps between validations");
    app->add_option("--seq-len", seq_len, "bytes per training sequence");
    app->add_option("--max-steps", max_steps, "stop after this many steps (0: no cap)");
  }
  void apply(TrainConfig& c) const {
    if (lr) c.learning_rate = *lr;
    if (batch_size) c.batch_size = *batch_size;
    if (weight_decay) c.weight_decay = *weight_decay;
    if (epochs) c.epochs = *epochs;
    if (clip) c.grad_clip_norm = *clip;
    if (val_interval) c.val_interval_steps = *val_interval;
    if (seq_len) c.seq_len = *seq_len;
    if (max_steps) c.max_steps = *max_steps;
  }
};

// Pretraining defaults for the toy base model.
std::vector<Split> parse_splits(const std::vector<std::string>& names) {
  std::vector<Split> out;
  for (const auto& n : names) {
    if (n == "train") out.push_back(Split::kTrain);
    else if (n == "validation") out.push_back(Split::kValidation);
    else if (n == "probe") out.push_back(Split::kProbe);
    else throw ConfigError("unknown split '" + n + "' (train, validation, probe)");
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Language-specific FFN subnetworks: identification, sparse fine-tuning, analysis"};
  app.require_subcommand(1);
  std::uint64_t seed = 0;
  app.add_option("--seed", seed, "seed recorded in every artifact")->capture_default_str();

  // pretrain
  auto* pre = app.add_subcommand("pretrain", "train a base model on the general languages");
  CorpusFlags pre_corpus;
  TrainFlags pre_train;
  ModelConfig model_cfg;
  std::string pre_out;
  bool include_target = false;
  pre_corpus.add(pre);
  pre_train.add(pre);
  pre->add_option("--d-model", model_cfg.d_model)->capture_default_str();
  pre->add_option("--n-layers", model_cfg.n_layers)->capture_default_str();
  pre->add_option("--n-heads", model_cfg.n_heads)->capture_default_str();
  pre->add_option("--d-ff", model_cfg.d_ff)->capture_default_str();
  pre->add_option("--max-seq-len", model_cfg.max_seq_len)->capture_default_str();
  pre->add_flag("--include-target", include_target, "also pretrain on the target language");
  pre->add_option("--out", pre_out, "output directory")->required();

  // identify
  auto* ident = app.add_subcommand("identify", "find language-specific neurons");
  CorpusFlags ident_corpus;
  std::string ident_ckpt, ident_stats, ident_out;
  SelectionConfig sel;
  ident_corpus.add(ident);
  ident->add_option("--checkpoint", ident_ckpt, "base checkpoint");
  ident->add_option("--from-stats", ident_stats, "reselect from a stats.json dump");
  ident->add_option("--k-percent", sel.k_percent, "fraction of all FFN neurons")->capture_default_str();
  ident->add_option("--tau-activity", sel.tau_activity)->capture_default_str();
  ident->add_option("--tau-selectivity", sel.tau_selectivity)->capture_default_str();
  ident->add_option("--out", ident_out, "output directory")->required();

  // finetune
  auto* ft = app.add_subcommand("finetune", "fine-tune a checkpoint in one of four modes");
  CorpusFlags ft_corpus;
  TrainFlags ft_train;
  std::string ft_ckpt, ft_spec, ft_lang, ft_mode = "target", ft_out;
  ft_corpus.add(ft);
  ft_train.add(ft);
  ft->add_option("--checkpoint", ft_ckpt, "base checkpoint")->required();
  ft->add_option("--spec", ft_spec, "subnetwork spec (target and random modes)");
  ft->add_option("--lang", ft_lang, "training language (default: the spec's)");
  ft->add_option("--mode", ft_mode, "target, random, ffn_only or full")->capture_default_str();
  ft->add_option("--out", ft_out, "output directory")->required();

  // eval
  auto* ev = app.add_subcommand("eval", "per-language perplexity table");
  CorpusFlags ev_corpus;
  std::string ev_ckpt, ev_out;
  std::vector<std::string> ev_splits{"validation"};
  std::size_t ev_seq_len = 64;
  ev_corpus.add(ev);
  ev->add_option("--checkpoint", ev_ckpt)->required();
  ev->add_option("--split", ev_splits, "splits to evaluate")->capture_default_str();
  ev->add_option("--seq-len", ev_seq_len)->capture_default_str();
  ev->add_option("--out", ev_out, "output CSV")->required();

  // analyze
  auto* an = app.add_subcommand("analyze", "layers, overlap, deltas or similarity report");
  CorpusFlags an_corpus;
  std::string an_kind, an_ckpt, an_before, an_after, an_out, an_mask_mode = "target",
                                                           an_pooling = "mean";
  std::vector<std::string> an_specs, an_langs, an_pairs;
  an_corpus.add(an);
  an->add_option("kind", an_kind, "layers, overlap, deltas or similarity")->required();
  an->add_option("--spec", an_specs, "subnetwork spec(s)");
  an->add_option("--checkpoint", an_ckpt);
  an->add_option("--before", an_before);
  an->add_option("--after", an_after);
  an->add_option("--mask-mode", an_mask_mode, "mask used for masked-scope deltas")->capture_default_str();
  an->add_option("--languages", an_langs, "similarity languages (default: all parallel)");
  an->add_option("--pair", an_pairs, "similarity pair as a:b (repeatable)");
  an->add_option("--pooling", an_pooling, "mean or last")->capture_default_str();
  an->add_option("--out", an_out, "output directory")->required();

  // synth
  auto* sy = app.add_subcommand("synth", "write the synthetic toy setting as text directories");
  double sy_scale = 1.0;
  std::string sy_out;
  sy->add_option("--synthetic-scale", sy_scale)->capture_default_str();
  sy->add_option("--out", sy_out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    if (*pre) {
      PretrainOptions o;
      o.model = model_cfg;
      o.model.seed = static_cast<std::uint32_t>(seed);
      o.train = pretrain_defaults();
      o.train.seed = seed;
      pre_train.apply(o.train);
      o.corpus = pre_corpus.source();
      o.out_dir = pre_out;
      o.include_target = include_target;
      const auto r = cmd_pretrain(o);
      std::printf("pretrained %zu steps, best step %zu, val loss %.6f -> %s\n", r.run.total_steps,
                  r.run.best_step, r.run.best_val_loss, r.checkpoint.string().c_str());
    } else if (*ident) {
      IdentifyOptions o;
      o.checkpoint = ident_ckpt;
      if (!ident_stats.empty()) o.stats_path = ident_stats;
      else if (ident_ckpt.empty()) throw ConfigError("identify needs --checkpoint or --from-stats");
      o.corpus = ident_corpus.source();
      o.selection = sel;
      o.out_dir = ident_out;
      o.threads = threads_from_env();
      o.seed = seed;
      const auto r = cmd_identify(o);
      if (r.selection.no_candidates) std::fprintf(stderr, "warning: no candidate neurons\n");
      for (const auto& s : r.selection.specs)
        std::printf("%s: %zu neurons\n", s.lang_id.c_str(), s.neurons.size());
    } else if (*ft) {
      FinetuneOptions o;
      o.mode = parse_mode(ft_mode);
      o.train = TrainConfig::for_mode(o.mode);
      o.train.seed = seed;
      ft_train.apply(o.train);
      o.checkpoint = ft_ckpt;
      if (!ft_spec.empty()) o.spec = ft_spec;
      o.lang = ft_lang;
      o.corpus = ft_corpus.source();
      o.out_dir = ft_out;
      const auto r = cmd_finetune(o);
      std::printf("%s: %zu steps, trainable %zu, val loss %.6f -> %.6f (best step %zu)\n",
                  ft_mode.c_str(), r.run.total_steps, r.run.mask.trainable_count(),
                  r.run.initial_val_loss, r.run.best_val_loss, r.run.best_step);
    } else if (*ev) {
      EvalOptions o;
      o.checkpoint = ev_ckpt;
      o.corpus = ev_corpus.source();
      o.splits = parse_splits(ev_splits);
      o.seq_len = ev_seq_len;
      o.out_file = ev_out;
      o.seed = seed;
      for (const auto& r : cmd_eval(o))
        std::printf("%s,%s,%.6f\n", r.lang.c_str(), split_name(r.split).c_str(), r.perplexity);
    } else if (*an) {
      AnalyzeOptions o;
      o.kind = parse_analysis_kind(an_kind);
      for (const auto& s : an_specs) o.specs.emplace_back(s);
      if (!an_ckpt.empty()) o.checkpoint = an_ckpt;
      if (!an_before.empty()) o.before = an_before;
      if (!an_after.empty()) o.after = an_after;
      o.mask_mode = parse_mode(an_mask_mode);
      o.mask_seed = seed;
      o.corpus = an_corpus.source();
      o.languages = an_langs;
      for (const auto& p : an_pairs) {
        const auto colon = p.find(':');
        if (colon == std::string::npos) throw ConfigError("--pair expects a:b, got '" + p + "'");
        o.pairs.emplace_back(p.substr(0, colon), p.substr(colon + 1));
      }
      if (an_pooling == "mean") o.pooling = Pooling::kMean;
      else if (an_pooling == "last") o.pooling = Pooling::kLastToken;
      else throw ConfigError("unknown pooling '" + an_pooling + "' (mean, last)");
      o.out_dir = an_out;
      o.seed = seed;
      for (const auto& f : cmd_analyze(o)) std::printf("%s\n", f.string().c_str());
    } else if (*sy) {
      cmd_synth(seed, sy_scale, sy_out);
    }
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 3;
  } catch (const ConsistencyError& e) {
    std::fprintf(stderr, "consistency error: %s\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
