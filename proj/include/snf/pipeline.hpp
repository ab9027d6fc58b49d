#pragma once
// End-to-end commands behind the `snf` CLI: pretrain a base model,
// identify language subnetworks, fine-tune, evaluate and analyze. Each
// command writes its artifacts into an output directory together with a
// provenance record (seed, model fingerprint, config hash).

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "snf/analysis.hpp"
#include "snf/corpus.hpp"
#include "snf/lape.hpp"
#include "snf/model.hpp"
#include "snf/sparse_ft.hpp"

namespace snf::pipeline {

namespace fs = std::filesystem;

// Where corpora come from: a corpora/<lang>/*.txt tree (plus an optional
// parallel/ directory) or the built-in synthetic toy setting.
struct CorpusSource {
  fs::path corpora_dir;
  fs::path parallel_dir;
  bool synthetic = false;
  std::uint64_t synthetic_seed = 0;
  double synthetic_scale = 1.0;  // multiplies the toy setting's byte budgets
  std::string target_lang = "tt";

  nlohmann::ordered_json to_json() const;
};

struct Corpora {
  std::vector<LanguageCorpus> languages;  // sorted by id for directories
  std::string target;

  const LanguageCorpus& get(const std::string& lang) const;  // throws DataError
  std::vector<const LanguageCorpus*> general() const;        // all but target
  std::vector<std::string> ids() const;
  std::map<std::string, std::vector<std::string>> parallel() const;
};

// Throws DataError (missing/empty corpora) or ConfigError.
Corpora load_corpora(const CorpusSource& source);

ToySetting scaled_toy_setting(std::uint64_t seed, double scale);

// Provenance record written next to every artifact.
struct Provenance {
  std::string command;
  std::uint64_t seed = 0;
  std::string model_fingerprint;
  std::string config_hash;
  nlohmann::ordered_json config;

  nlohmann::ordered_json to_json() const;
};
Provenance make_provenance(const std::string& command, std::uint64_t seed,
                           const std::string& model_fingerprint, nlohmann::ordered_json config);
void write_provenance(const Provenance& p, const fs::path& path);

nlohmann::ordered_json train_config_json(const TrainConfig& cfg);
nlohmann::ordered_json selection_config_json(const SelectionConfig& cfg);

// Pretraining defaults for the toy model: lr 2e-3, batch 16, weight decay
// 0.01, validation every 250 steps, 64-byte sequences.
TrainConfig pretrain_defaults();

struct PretrainOptions {
  ModelConfig model;
  TrainConfig train;
  CorpusSource corpus;
  fs::path out_dir;
  bool include_target = false;  // mix the target language into pretraining
};

struct PretrainResult {
  ModelBundle model;
  FinetuneRun run;
  fs::path checkpoint;
};

// Writes base.snfg, pretrain_log.jsonl and base.meta.json. Requires at least
// two pretraining languages.
PretrainResult cmd_pretrain(const PretrainOptions& opts);

struct IdentifyOptions {
  fs::path checkpoint;
  CorpusSource corpus;
  std::optional<fs::path> stats_path;  // reselect from a stats dump instead of probing
  SelectionConfig selection;
  fs::path out_dir;
  unsigned threads = 1;
  std::uint64_t seed = 0;
};

struct IdentifyResult {
  ActivationStats stats;
  SelectionResult selection;
  std::vector<fs::path> spec_files;
};

// Writes spec_<lang>.json per language, stats.json and identify.meta.json.
IdentifyResult cmd_identify(const IdentifyOptions& opts);

struct FinetuneOptions {
  fs::path checkpoint;
  std::optional<fs::path> spec;  // required for target and random modes
  std::string lang;              // language to fine-tune on; defaults to the spec's
  CorpusSource corpus;
  FinetuneMode mode = FinetuneMode::kTarget;
  TrainConfig train;
  fs::path out_dir;
};

struct FinetuneResult {
  FinetuneRun run;
  fs::path checkpoint;
};

// Writes best.snfg, run_log.jsonl, mask_summary.csv and finetune.meta.json.
// Throws ConsistencyError when the spec was identified on another model.
FinetuneResult cmd_finetune(const FinetuneOptions& opts);

struct EvalOptions {
  fs::path checkpoint;
  CorpusSource corpus;
  std::vector<Split> splits{Split::kValidation};
  std::size_t seq_len = 64;
  fs::path out_file;
  std::uint64_t seed = 0;
};

struct EvalRow {
  std::string lang;
  Split split;
  double perplexity;
};

// CSV (lang,split,perplexity) preceded by '#' lines naming seed and
// fingerprint.
std::vector<EvalRow> cmd_eval(const EvalOptions& opts);

enum class AnalysisKind { kLayers, kOverlap, kDeltas, kSimilarity };
AnalysisKind parse_analysis_kind(const std::string& name);

struct AnalyzeOptions {
  AnalysisKind kind = AnalysisKind::kLayers;
  std::vector<fs::path> specs;           // layers, overlap, deltas (mask)
  std::optional<fs::path> checkpoint;    // layers (shape), similarity
  std::optional<fs::path> before;        // deltas
  std::optional<fs::path> after;         // deltas
  FinetuneMode mask_mode = FinetuneMode::kTarget;  // deltas with a spec
  std::uint64_t mask_seed = 0;
  CorpusSource corpus;                   // similarity
  std::vector<std::string> languages;    // similarity; default: all
  std::vector<std::pair<std::string, std::string>> pairs;  // similarity
  Pooling pooling = Pooling::kMean;
  fs::path out_dir;
  std::uint64_t seed = 0;
};

// Writes the analysis CSVs (histogram_<lang>.csv, overlap.csv, deltas.csv
// or similarity.csv) with a .meta.json provenance record each. Returns the
// files written.
std::vector<fs::path> cmd_analyze(const AnalyzeOptions& opts);

// Generates the toy setting and writes it as corpora/ and parallel/ under
// out_dir.
void cmd_synth(std::uint64_t seed, double scale, const fs::path& out_dir);

// Reads SNF_THREADS; 1 when unset or invalid.
unsigned threads_from_env();

}  // namespace snf::pipeline
