#pragma once
// Language activation probability entropy (LAPE): per-language firing
// probabilities of FFN neurons, their normalized entropy, and selection of
// low-entropy neurons into per-language subnetworks.

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "snf/corpus.hpp"
#include "snf/model.hpp"

namespace snf {

struct Neuron {
  int layer = 0;
  int index = 0;
  auto operator<=>(const Neuron&) const = default;
};

// Firing counts indexed [(layer * d_ff + neuron) * n_languages + language].
struct ActivationStats {
  int n_layers = 0;
  int d_ff = 0;
  std::vector<std::string> languages;
  std::vector<std::uint64_t> counts;
  std::vector<std::uint64_t> totals;  // positions seen per language

  ActivationStats() = default;
  ActivationStats(int layers, int dff, std::vector<std::string> langs);

  std::size_t n_languages() const { return languages.size(); }
  std::size_t n_neurons() const { return std::size_t(n_layers) * std::size_t(d_ff); }
  std::size_t offset(int layer, int neuron) const {
    return (std::size_t(layer) * std::size_t(d_ff) + std::size_t(neuron)) * n_languages();
  }
  std::uint64_t count(int layer, int neuron, std::size_t lang) const {
    return counts[offset(layer, neuron) + lang];
  }
  double probability(int layer, int neuron, std::size_t lang) const {
    return double(count(layer, neuron, lang)) / double(totals[lang]);
  }

  // Adds another partial result over the same shape and language order.
  void merge(const ActivationStats& other);
  // Throws DataError when counts exceed totals or shapes disagree.
  void validate() const;
  std::uint64_t fingerprint() const;

  bool operator==(const ActivationStats&) const = default;
};

struct LanguageProbe {
  std::string lang_id;
  std::vector<Document> documents;
};

// Runs the model over every probe document (chunked to max_seq_len - 1
// bytes, BOS-prefixed, BOS position excluded) and counts positive gate
// pre-activations. Documents are partitioned over `threads` workers (0 means
// one); the merged counts do not depend on the partition.
ActivationStats collect_stats(const ModelBundle& model,
                              const std::vector<LanguageProbe>& probes,
                              unsigned threads = 1);

// Normalized rows are indexed like ActivationStats::counts; scores by
// layer * d_ff + neuron.
struct LapeTable {
  int n_layers = 0;
  int d_ff = 0;
  std::size_t n_languages = 0;
  std::vector<double> normalized;
  std::vector<double> score;
  std::vector<std::uint8_t> undefined;  // 1 when the probability row is all zero

  double score_at(int layer, int neuron) const {
    return score[std::size_t(layer) * std::size_t(d_ff) + std::size_t(neuron)];
  }
};

// Entropy (natural log) of each neuron's probability row normalized to sum
// to one. Throws DataError when any language has a zero total.
LapeTable lape_scores(const ActivationStats& stats);

struct SelectionConfig {
  double k_percent = 0.05;  // fraction of all FFN neurons, in (0, 1]
  double tau_activity = 0.95;
  double tau_selectivity = 0.95;

  void validate() const;
};

struct SubnetworkSpec {
  std::string lang_id;
  std::vector<Neuron> neurons;  // sorted, unique
  SelectionConfig selection;
  std::string model_fingerprint;  // 16 hex digits, empty when unknown
  std::uint64_t stats_fingerprint = 0;
  std::uint64_t seed = 0;

  bool operator==(const SubnetworkSpec& o) const {
    return lang_id == o.lang_id && neurons == o.neurons &&
           model_fingerprint == o.model_fingerprint &&
           stats_fingerprint == o.stats_fingerprint && seed == o.seed &&
           selection.k_percent == o.selection.k_percent &&
           selection.tau_activity == o.selection.tau_activity &&
           selection.tau_selectivity == o.selection.tau_selectivity;
  }
};

struct SelectionResult {
  std::vector<SubnetworkSpec> specs;  // one per language, in stats order
  std::vector<Neuron> selected;       // ranked union before language assignment
  std::size_t candidate_count = 0;
  bool no_candidates = false;  // warning flag, not a failure

  const SubnetworkSpec& spec_for(const std::string& lang) const;
};

// Number of neurons the bottom-K cut takes out of total_neurons.
std::size_t selection_budget(double k_percent, std::size_t total_neurons);

// Candidates: defined neurons with max_k p >= tau_activity and some
// p >= tau_selectivity. The lowest-scoring candidates (ties by layer, then
// index) are kept up to selection_budget() of all neurons; each kept neuron
// joins every language with p >= tau_selectivity.
SelectionResult select_subnetworks(const LapeTable& table,
                                   const ActivationStats& stats,
                                   const SelectionConfig& cfg);

nlohmann::ordered_json spec_to_json(const SubnetworkSpec& spec);
// Throws DataError when the document does not match the SubnetworkSpec schema.
SubnetworkSpec spec_from_json(const nlohmann::json& j);
// Empty when valid; otherwise a description of the first schema violation.
std::string validate_spec_json(const nlohmann::json& j);

void save_spec(const SubnetworkSpec& spec, const std::filesystem::path& path);
SubnetworkSpec load_spec(const std::filesystem::path& path);

nlohmann::ordered_json stats_to_json(const ActivationStats& stats);
ActivationStats stats_from_json(const nlohmann::json& j);

}  // namespace snf
