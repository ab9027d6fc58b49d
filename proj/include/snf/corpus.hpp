#pragma once
// Multilingual byte corpora: seeded synthetic languages (order-2 Markov
// chains over a byte alphabet) and plain-text directories, split into
// train / validation / probe, plus optional index-aligned parallel
// sentences.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "snf/model.hpp"

namespace snf {

using Document = std::vector<std::uint8_t>;

enum class Split { kTrain, kValidation, kProbe };
std::string split_name(Split split);

struct LanguageCorpus {
  std::string lang_id;
  std::vector<Document> train;
  std::vector<Document> validation;
  std::vector<Document> probe;
  std::vector<std::string> parallel;  // aligned by index across a bundle

  const std::vector<Document>& split(Split s) const;
  std::size_t split_bytes(Split s) const;
};

struct ByteRange {
  std::uint8_t first = 0;
  std::uint8_t last = 0;
};

struct SynthLanguageSpec {
  std::string lang_id;
  std::vector<ByteRange> alphabet;
  std::uint64_t seed = 0;
  // Standard deviation of the Gaussian transition logits; larger values give
  // peakier, more predictable languages.
  double sharpness = 2.5;
  std::size_t document_bytes = 1000;
  std::size_t validation_bytes = 10'000;
  std::size_t probe_bytes = 100'000;

  // Distinct symbols, in ascending byte order.
  std::vector<std::uint8_t> symbols() const;
};

// Row-stochastic transition table of the order-2 chain: entry
// [(a * A + b) * A + c] is P(next = c | prev2 = a, prev1 = b), indices into
// symbols(). Throws ConfigError for an empty alphabet.
std::vector<double> markov_transitions(const SynthLanguageSpec& spec);

// n_bytes of training text plus validation and probe splits. Deterministic
// in spec.seed. Throws ConfigError for an empty alphabet or n_bytes < 10000.
LanguageCorpus synth_language(const SynthLanguageSpec& spec, std::size_t n_bytes);

// Fills corpus.parallel for every corpus: sentence i of every language is
// sampled from that language's own chain, driven by one uniform stream
// shared across languages (seeded by seed and i).
void synth_parallel(std::vector<LanguageCorpus>& corpora,
                    const std::vector<SynthLanguageSpec>& specs,
                    std::size_t n_sentences, std::size_t sentence_bytes,
                    std::uint64_t seed);

// Reads <root>/<lang>/*.txt (one document per file, sorted by name) and
// splits documents 80/10/10 into train/validation/probe by a deterministic
// hash of the document index. Throws DataError for a missing root or a
// language folder without documents.
std::map<std::string, LanguageCorpus> load_corpus_dir(const std::filesystem::path& root);

// Reads <dir>/<lang>.txt, one sentence per line, into corpora[lang].parallel.
// Every language present in corpora must have a file; all must have the
// same number of lines.
void load_parallel_dir(const std::filesystem::path& dir,
                       std::map<std::string, LanguageCorpus>& corpora);

// Writes corpora back in the load_corpus_dir / load_parallel_dir layout.
void write_corpus_dir(const std::vector<LanguageCorpus>& corpora,
                      const std::filesystem::path& corpora_root,
                      const std::filesystem::path& parallel_dir);

using Sequence = std::vector<TokenId>;
using Batch = std::vector<Sequence>;

// Concatenates the split, cuts it into seq_len-byte chunks (a shorter tail
// is dropped), shuffles chunk order with seed and groups chunks into
// batches of batch_size (the last batch may be smaller). Every sequence is
// BOS followed by its chunk. Throws DataError for an empty split.
std::vector<Batch> make_batches(const LanguageCorpus& corpus, Split split,
                                std::size_t seq_len, std::size_t batch_size,
                                std::uint64_t seed);

// Same, drawing chunks from several corpora into one shuffled stream.
std::vector<Batch> make_mixed_batches(const std::vector<const LanguageCorpus*>& corpora,
                                      Split split, std::size_t seq_len,
                                      std::size_t batch_size, std::uint64_t seed);

// Unshuffled BOS-prefixed chunks covering the whole split, tail included.
std::vector<Sequence> eval_sequences(const LanguageCorpus& corpus, Split split,
                                     std::size_t seq_len);

// The desk-scale setting: four general languages over disjoint 8-symbol
// alphabets and one low-resource target language written in part of the
// first one's alphabet.
struct ToySetting {
  std::vector<SynthLanguageSpec> general;
  SynthLanguageSpec target;
  std::size_t general_train_bytes = 500'000;
  std::size_t target_train_bytes = 100'000;
  std::size_t parallel_sentences = 64;
  std::size_t parallel_sentence_bytes = 48;

  static ToySetting make(std::uint64_t seed);
  // Builds all five corpora (general first, target last) with parallel sets.
  std::vector<LanguageCorpus> build() const;
};

}  // namespace snf
