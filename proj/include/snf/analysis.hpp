#pragma once
// Read-only analyses over subnetworks and checkpoints. Reports are data
// (CSV), not figures.

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "snf/lape.hpp"
#include "snf/model.hpp"
#include "snf/sparse_ft.hpp"

namespace snf {

// Per-layer neuron counts of a spec; sums to spec.neurons.size().
std::vector<std::size_t> layer_histogram(const SubnetworkSpec& spec, int n_layers);
std::string histogram_csv(const std::vector<std::size_t>& hist);

struct OverlapMatrix {
  std::vector<std::string> languages;
  std::vector<std::vector<std::size_t>> intersection;
  std::vector<std::vector<double>> jaccard;  // |A n B| / |A u B|, 0 when both empty
};

// Throws ConsistencyError when the specs carry different model fingerprints.
OverlapMatrix overlap(const std::vector<SubnetworkSpec>& specs);
std::string overlap_csv(const OverlapMatrix& m);

enum class DeltaScope { kMaskedOnly, kAll };

struct DeltaRow {
  int layer = 0;
  std::string projection;  // gate, up or down
  std::size_t count = 0;
  double mean = 0, std = 0, q25 = 0, q50 = 0, q75 = 0, max = 0;  // of |after - before|
};

struct DeltaStats {
  DeltaScope scope = DeltaScope::kAll;
  std::vector<DeltaRow> rows;  // per layer: gate, up, down
};

// Absolute weight changes of the FFN projections. With a mask the scope is
// restricted to trainable entries. Throws ConsistencyError when configs
// differ.
DeltaStats weight_deltas(const ModelBundle& before, const ModelBundle& after,
                         const ParamMask* mask = nullptr);
std::string deltas_csv(const DeltaStats& stats);

enum class Pooling { kMean, kLastToken };

struct SimilarityReport {
  std::vector<std::pair<std::string, std::string>> pairs;
  // cosine[layer][pair]: mean over aligned sentences
  std::vector<std::vector<double>> cosine;
  std::vector<double> layer_average;  // per pair
  double grand_mean = 0.0;
  std::size_t degenerate = 0;  // zero-norm pooled vectors, scored as cosine 0
};

// Cosine similarity per layer between pooled post-FFN states of aligned
// sentences. `languages` lists the bundle order; `pairs` defaults to every
// (i < j) pair of that list. Sentences are BOS-prefixed and truncated to
// max_seq_len - 1 bytes; the BOS position is excluded from pooling. Throws
// DataError when the lists are misaligned or empty.
SimilarityReport cross_lingual_similarity(
    const ModelBundle& model, const std::map<std::string, std::vector<std::string>>& parallel,
    const std::vector<std::string>& languages,
    const std::vector<std::pair<std::string, std::string>>& pairs = {},
    Pooling pooling = Pooling::kMean);
std::string similarity_csv(const SimilarityReport& report);

// Pooled representation used by cross_lingual_similarity: one d_model
// vector per layer.
std::vector<std::vector<double>> pooled_states(const ModelBundle& model,
                                               const std::string& sentence,
                                               Pooling pooling = Pooling::kMean);

// Cosine with the zero-norm convention (0 and `degenerate` set).
double cosine(const std::vector<double>& a, const std::vector<double>& b, bool* degenerate);

}  // namespace snf
