#include "snf/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <set>

#include "snf/checkpoint.hpp"
#include "snf/error.hpp"
#include "snf/rng.hpp"

namespace snf::pipeline {

using nlohmann::ordered_json;

nlohmann::ordered_json CorpusSource::to_json() const {
  ordered_json j;
  if (synthetic) {
    j["synthetic_seed"] = synthetic_seed;
    j["synthetic_scale"] = synthetic_scale;
  } else {
    j["corpora_dir"] = corpora_dir.generic_string();
    j["parallel_dir"] = parallel_dir.generic_string();
  }
  j["target"] = target_lang;
  return j;
}

const LanguageCorpus& Corpora::get(const std::string& lang) const {
  for (const auto& c : languages)
    if (c.lang_id == lang) return c;
  throw DataError("no corpus for language '" + lang + "'");
}

std::vector<const LanguageCorpus*> Corpora::general() const {
  std::vector<const LanguageCorpus*> out;
  for (const auto& c : languages)
    if (c.lang_id != target) out.push_back(&c);
  return out;
}

std::vector<std::string> Corpora::ids() const {
  std::vector<std::string> out;
  for (const auto& c : languages) out.push_back(c.lang_id);
  return out;
}

std::map<std::string, std::vector<std::string>> Corpora::parallel() const {
  std::map<std::string, std::vector<std::string>> out;
  for (const auto& c : languages)
    if (!c.parallel.empty()) out[c.lang_id] = c.parallel;
  return out;
}

ToySetting scaled_toy_setting(std::uint64_t seed, double scale) {
  if (!(scale > 0.0) || !std::isfinite(scale))
    throw ConfigError("synthetic scale must be positive");
  ToySetting s = ToySetting::make(seed);
  auto scaled = [&](std::size_t n) {
    return std::max<std::size_t>(10'000, static_cast<std::size_t>(std::llround(double(n) * scale)));
  };
  s.general_train_bytes = scaled(s.general_train_bytes);
  s.target_train_bytes = scaled(s.target_train_bytes);
  for (auto* spec : {&s.general[0], &s.general[1], &s.general[2], &s.general[3], &s.target})
    spec->probe_bytes = scaled(spec->probe_bytes);
  return s;
}

Corpora load_corpora(const CorpusSource& source) {
  Corpora out;
  out.target = source.target_lang;
  if (source.synthetic) {
    out.languages = scaled_toy_setting(source.synthetic_seed, source.synthetic_scale).build();
  } else {
    if (source.corpora_dir.empty()) throw ConfigError("no corpora given (use --corpora or --synthetic)");
    auto map = load_corpus_dir(source.corpora_dir);
    if (!source.parallel_dir.empty()) load_parallel_dir(source.parallel_dir, map);
    for (auto& [lang, corpus] : map) out.languages.push_back(std::move(corpus));
  }
  return out;
}

nlohmann::ordered_json Provenance::to_json() const {
  ordered_json j;
  j["command"] = command;
  j["seed"] = seed;
  j["model_fingerprint"] = model_fingerprint;
  j["config_hash"] = config_hash;
  j["config"] = config;
  return j;
}

Provenance make_provenance(const std::string& command, std::uint64_t seed,
                           const std::string& model_fingerprint, nlohmann::ordered_json config) {
  Provenance p;
  p.command = command;
  p.seed = seed;
  p.model_fingerprint = model_fingerprint;
  Fnv1a h;
  h.update(config.dump());
  p.config_hash = fingerprint_hex(h.digest());
  p.config = std::move(config);
  return p;
}

void write_provenance(const Provenance& p, const fs::path& path) {
  write_file_bytes(path, p.to_json().dump(2) + "\n");
}

nlohmann::ordered_json train_config_json(const TrainConfig& cfg) {
  ordered_json j;
  j["learning_rate"] = cfg.learning_rate;
  j["batch_size"] = cfg.batch_size;
  j["weight_decay"] = cfg.weight_decay;
  j["epochs"] = cfg.epochs;
  j["grad_clip_norm"] = cfg.grad_clip_norm;
  j["val_interval_steps"] = cfg.val_interval_steps;
  j["beta1"] = cfg.beta1;
  j["beta2"] = cfg.beta2;
  j["eps"] = cfg.eps;
  j["seed"] = cfg.seed;
  j["seq_len"] = cfg.seq_len;
  j["max_steps"] = cfg.max_steps;
  return j;
}

nlohmann::ordered_json selection_config_json(const SelectionConfig& cfg) {
  ordered_json j;
  j["k_percent"] = cfg.k_percent;
  j["tau_activity"] = cfg.tau_activity;
  j["tau_selectivity"] = cfg.tau_selectivity;
  return j;
}

namespace {

std::vector<Sequence> validation_sequences(const std::vector<const LanguageCorpus*>& corpora,
                                           std::size_t seq_len) {
  std::vector<Sequence> out;
  for (const auto* c : corpora) {
    auto seqs = eval_sequences(*c, Split::kValidation, seq_len);
    for (auto& s : seqs) out.push_back(std::move(s));
  }
  return out;
}

std::string model_fp(const ModelBundle& model) { return fingerprint_hex(fingerprint(model)); }

ordered_json model_config_json(const ModelConfig& cfg) {
  return ordered_json::parse(config_to_json(cfg));
}

void write_text(const fs::path& path, const std::string& text) { write_file_bytes(path, text); }

fs::path meta_path(const fs::path& file) { return fs::path(file.string() + ".meta.json"); }

}  // namespace

TrainConfig pretrain_defaults() {
  TrainConfig c;
  c.learning_rate = 2e-3;
  c.batch_size = 16;
  c.weight_decay = 0.01;
  c.val_interval_steps = 250;
  c.seq_len = 64;
  return c;
}

PretrainResult cmd_pretrain(const PretrainOptions& opts) {
  opts.model.validate();
  opts.train.validate();
  if (static_cast<int>(opts.train.seq_len) + 1 > opts.model.max_seq_len)
    throw ConfigError("seq_len + 1 exceeds the model's max_seq_len");
  const Corpora corpora = load_corpora(opts.corpus);
  std::vector<const LanguageCorpus*> langs =
      opts.include_target ? std::vector<const LanguageCorpus*>{} : corpora.general();
  if (opts.include_target)
    for (const auto& c : corpora.languages) langs.push_back(&c);
  if (langs.size() < 2)
    throw DataError("pretraining needs at least two languages, found " +
                    std::to_string(langs.size()));

  std::vector<Batch> batches;
  for (int e = 0; e < opts.train.epochs; ++e) {
    auto epoch = make_mixed_batches(langs, Split::kTrain, opts.train.seq_len,
                                    opts.train.batch_size,
                                    mix_seed(opts.train.seed, std::uint64_t(e)));
    for (auto& b : epoch) batches.push_back(std::move(b));
  }
  const auto init = init_model<float>(opts.model);
  const auto mask = build_mask(opts.model, {}, FinetuneMode::kFull);
  PretrainResult result{ModelBundle{}, {}, opts.out_dir / "base.snfg"};
  result.run = train_masked(init, batches, validation_sequences(langs, opts.train.seq_len), mask,
                            FinetuneMode::kFull, opts.train);
  result.model = result.run.best;

  save_checkpoint(result.model, result.checkpoint);
  write_text(opts.out_dir / "pretrain_log.jsonl", run_log_jsonl(result.run.log));
  ordered_json config;
  config["model"] = model_config_json(opts.model);
  config["train"] = train_config_json(opts.train);
  config["corpus"] = opts.corpus.to_json();
  std::vector<std::string> ids;
  for (const auto* c : langs) ids.push_back(c->lang_id);
  config["languages"] = ids;
  auto prov = make_provenance("pretrain", opts.train.seed, model_fp(result.model), config);
  prov.config["best_step"] = result.run.best_step;
  prov.config["best_val_loss"] = result.run.best_val_loss;
  write_provenance(prov, opts.out_dir / "base.meta.json");
  return result;
}

IdentifyResult cmd_identify(const IdentifyOptions& opts) {
  opts.selection.validate();
  IdentifyResult result;
  std::string fp;
  if (opts.stats_path) {
    const auto j = nlohmann::json::parse(read_file_bytes(*opts.stats_path), nullptr, false);
    if (j.is_discarded()) throw DataError("stats dump is not valid JSON: " + opts.stats_path->string());
    result.stats = stats_from_json(j);
    if (!j.contains("model_fingerprint") || !j["model_fingerprint"].is_string() ||
        j["model_fingerprint"].get<std::string>().empty())
      throw ConsistencyError("stats dump carries no model fingerprint: " + opts.stats_path->string());
    fp = j["model_fingerprint"].get<std::string>();
    if (!opts.checkpoint.empty()) {
      const auto model = load_checkpoint(opts.checkpoint);
      if (model_fp(model) != fp)
        throw ConsistencyError("stats dump was collected on model " + fp + ", checkpoint is " +
                               model_fp(model));
    }
  } else {
    const auto model = load_checkpoint(opts.checkpoint);
    fp = model_fp(model);
    const Corpora corpora = load_corpora(opts.corpus);
    std::vector<LanguageProbe> probes;
    for (const auto& c : corpora.languages) probes.push_back({c.lang_id, c.probe});
    result.stats = collect_stats(model, probes, opts.threads);
  }

  const auto table = lape_scores(result.stats);
  result.selection = select_subnetworks(table, result.stats, opts.selection);
  for (auto& spec : result.selection.specs) {
    spec.model_fingerprint = fp;
    spec.seed = opts.seed;
    const auto path = opts.out_dir / ("spec_" + spec.lang_id + ".json");
    save_spec(spec, path);
    result.spec_files.push_back(path);
  }
  auto stats_json = stats_to_json(result.stats);
  stats_json["model_fingerprint"] = fp;
  write_text(opts.out_dir / "stats.json", stats_json.dump() + "\n");

  ordered_json config;
  config["selection"] = selection_config_json(opts.selection);
  if (!opts.stats_path) config["corpus"] = opts.corpus.to_json();
  auto prov = make_provenance("identify", opts.seed, fp, config);
  prov.config["candidate_count"] = result.selection.candidate_count;
  prov.config["selected"] = result.selection.selected.size();
  prov.config["no_candidates"] = result.selection.no_candidates;
  write_provenance(prov, opts.out_dir / "identify.meta.json");
  return result;
}

FinetuneResult cmd_finetune(const FinetuneOptions& opts) {
  opts.train.validate();
  const auto base = load_checkpoint(opts.checkpoint);
  const std::string fp = model_fp(base);
  if (static_cast<int>(opts.train.seq_len) + 1 > base.config.max_seq_len)
    throw ConfigError("seq_len + 1 exceeds the model's max_seq_len");

  std::optional<SubnetworkSpec> spec;
  if (opts.spec) {
    spec = load_spec(*opts.spec);
    if (spec->model_fingerprint.empty())
      throw ConsistencyError("spec carries no model fingerprint: " + opts.spec->string());
    if (spec->model_fingerprint != fp)
      throw ConsistencyError("spec " + opts.spec->string() + " was identified on model " +
                             spec->model_fingerprint + ", checkpoint is " + fp);
  } else if (opts.mode == FinetuneMode::kTarget || opts.mode == FinetuneMode::kRandom) {
    throw ConfigError("mode " + mode_name(opts.mode) + " needs a subnetwork spec (--spec)");
  }

  const Corpora corpora = load_corpora(opts.corpus);
  std::string lang = opts.lang;
  if (lang.empty()) lang = spec ? spec->lang_id : corpora.target;
  const LanguageCorpus& corpus = corpora.get(lang);

  const auto mask =
      build_mask(base.config, spec ? spec->neurons : std::vector<Neuron>{}, opts.mode, opts.train.seed);
  FinetuneResult result;
  result.run = finetune(base, corpus, mask, opts.mode, opts.train);
  result.checkpoint = opts.out_dir / "best.snfg";
  save_checkpoint(result.run.best, result.checkpoint);
  write_text(opts.out_dir / "run_log.jsonl", run_log_jsonl(result.run.log));
  write_text(opts.out_dir / "mask_summary.csv", mask_summary_csv(mask));

  ordered_json config;
  config["mode"] = mode_name(opts.mode);
  config["lang"] = lang;
  config["train"] = train_config_json(opts.train);
  config["corpus"] = opts.corpus.to_json();
  if (spec) config["spec_neurons"] = spec->neurons.size();
  auto prov = make_provenance("finetune", opts.train.seed, fp, config);
  prov.config["trainable"] = mask.trainable_count();
  prov.config["total_steps"] = result.run.total_steps;
  prov.config["best_step"] = result.run.best_step;
  prov.config["initial_val_loss"] = result.run.initial_val_loss;
  prov.config["best_val_loss"] = result.run.best_val_loss;
  prov.config["best_fingerprint"] = model_fp(result.run.best);
  write_provenance(prov, opts.out_dir / "finetune.meta.json");
  return result;
}

std::vector<EvalRow> cmd_eval(const EvalOptions& opts) {
  const auto model = load_checkpoint(opts.checkpoint);
  if (opts.seq_len == 0 || static_cast<int>(opts.seq_len) + 1 > model.config.max_seq_len)
    throw ConfigError("eval seq_len must be in [1, max_seq_len - 1]");
  const Corpora corpora = load_corpora(opts.corpus);
  std::vector<EvalRow> rows;
  for (const auto& c : corpora.languages)
    for (Split s : opts.splits) rows.push_back({c.lang_id, s, perplexity(model, c, s, opts.seq_len)});

  const std::string fp = model_fp(model);
  ordered_json config;
  config["corpus"] = opts.corpus.to_json();
  config["seq_len"] = opts.seq_len;
  const auto prov = make_provenance("eval", opts.seed, fp, config);
  std::string out = "# seed=" + std::to_string(opts.seed) + "\n# model_fingerprint=" + fp +
                    "\n# config_hash=" + prov.config_hash + "\nlang,split,perplexity\n";
  for (const auto& r : rows) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.9g", r.perplexity);
    out += r.lang + "," + split_name(r.split) + "," + buf + "\n";
  }
  write_text(opts.out_file, out);
  return rows;
}

AnalysisKind parse_analysis_kind(const std::string& name) {
  if (name == "layers") return AnalysisKind::kLayers;
  if (name == "overlap") return AnalysisKind::kOverlap;
  if (name == "deltas") return AnalysisKind::kDeltas;
  if (name == "similarity") return AnalysisKind::kSimilarity;
  throw ConfigError("unknown analysis '" + name + "' (layers, overlap, deltas, similarity)");
}

namespace {

std::vector<SubnetworkSpec> load_specs(const std::vector<fs::path>& paths) {
  if (paths.empty()) throw ConfigError("analysis needs at least one spec (--spec)");
  std::vector<SubnetworkSpec> specs;
  for (const auto& p : paths) specs.push_back(load_spec(p));
  return specs;
}

void check_same_fingerprint(const std::vector<SubnetworkSpec>& specs, const std::string& fp) {
  for (const auto& s : specs)
    if (s.model_fingerprint != fp)
      throw ConsistencyError("spec for '" + s.lang_id + "' was identified on model " +
                             s.model_fingerprint + ", expected " + fp);
}

}  // namespace

std::vector<fs::path> cmd_analyze(const AnalyzeOptions& opts) {
  std::vector<fs::path> written;
  auto emit = [&](const fs::path& file, const std::string& csv, const std::string& fp,
                  ordered_json config) {
    write_text(file, csv);
    write_provenance(make_provenance("analyze", opts.seed, fp, std::move(config)), meta_path(file));
    written.push_back(file);
  };

  switch (opts.kind) {
    case AnalysisKind::kLayers: {
      const auto specs = load_specs(opts.specs);
      const std::string fp = specs.front().model_fingerprint;
      check_same_fingerprint(specs, fp);
      int n_layers = 0;
      if (opts.checkpoint) {
        const auto model = load_checkpoint(*opts.checkpoint);
        check_same_fingerprint(specs, model_fp(model));
        n_layers = model.config.n_layers;
      } else {
        for (const auto& s : specs)
          for (const auto& n : s.neurons) n_layers = std::max(n_layers, n.layer + 1);
      }
      for (const auto& s : specs) {
        ordered_json config;
        config["analysis"] = "layers";
        config["lang"] = s.lang_id;
        config["n_layers"] = n_layers;
        emit(opts.out_dir / ("histogram_" + s.lang_id + ".csv"),
             histogram_csv(layer_histogram(s, n_layers)), fp, config);
      }
      break;
    }
    case AnalysisKind::kOverlap: {
      const auto specs = load_specs(opts.specs);
      const auto m = overlap(specs);
      ordered_json config;
      config["analysis"] = "overlap";
      config["languages"] = m.languages;
      emit(opts.out_dir / "overlap.csv", overlap_csv(m), specs.front().model_fingerprint, config);
      break;
    }
    case AnalysisKind::kDeltas: {
      if (!opts.before || !opts.after)
        throw ConfigError("deltas needs --before and --after checkpoints");
      const auto before = load_checkpoint(*opts.before);
      const auto after = load_checkpoint(*opts.after);
      const std::string fp = model_fp(before);
      std::optional<ParamMask> mask;
      ordered_json config;
      config["analysis"] = "deltas";
      config["after_fingerprint"] = model_fp(after);
      if (!opts.specs.empty()) {
        if (opts.specs.size() != 1) throw ConfigError("deltas takes at most one spec");
        const auto specs = load_specs(opts.specs);
        check_same_fingerprint(specs, fp);
        mask = build_mask(before.config, specs.front().neurons, opts.mask_mode, opts.mask_seed);
        config["mask_mode"] = mode_name(opts.mask_mode);
        config["mask_seed"] = opts.mask_seed;
        config["lang"] = specs.front().lang_id;
      }
      const auto stats = weight_deltas(before, after, mask ? &*mask : nullptr);
      config["scope"] = mask ? "masked" : "all";
      emit(opts.out_dir / "deltas.csv", deltas_csv(stats), fp, config);
      break;
    }
    case AnalysisKind::kSimilarity: {
      if (!opts.checkpoint) throw ConfigError("similarity needs --checkpoint");
      const auto model = load_checkpoint(*opts.checkpoint);
      const Corpora corpora = load_corpora(opts.corpus);
      const auto parallel = corpora.parallel();
      std::vector<std::string> languages = opts.languages;
      if (languages.empty())
        for (const auto& [lang, _] : parallel) languages.push_back(lang);
      const auto report =
          cross_lingual_similarity(model, parallel, languages, opts.pairs, opts.pooling);
      ordered_json config;
      config["analysis"] = "similarity";
      config["languages"] = languages;
      config["pooling"] = opts.pooling == Pooling::kMean ? "mean" : "last";
      config["corpus"] = opts.corpus.to_json();
      config["grand_mean"] = report.grand_mean;
      config["degenerate"] = report.degenerate;
      emit(opts.out_dir / "similarity.csv", similarity_csv(report), model_fp(model), config);
      break;
    }
  }
  return written;
}

void cmd_synth(std::uint64_t seed, double scale, const fs::path& out_dir) {
  const auto corpora = scaled_toy_setting(seed, scale).build();
  write_corpus_dir(corpora, out_dir / "corpora", out_dir / "parallel");
}

unsigned threads_from_env() {
  const char* v = std::getenv("SNF_THREADS");
  if (!v) return 1;
  char* end = nullptr;
  const long n = std::strtol(v, &end, 10);
  if (end == v || *end != '\0' || n < 1) return 1;
  return static_cast<unsigned>(std::min<long>(n, 256));
}

}  // namespace snf::pipeline
