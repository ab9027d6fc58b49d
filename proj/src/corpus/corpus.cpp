#include "snf/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "snf/checkpoint.hpp"
#include "snf/error.hpp"
#include "snf/rng.hpp"

namespace snf {

namespace fs = std::filesystem;

std::string split_name(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kValidation: return "validation";
    case Split::kProbe: return "probe";
  }
  return "unknown";
}

const std::vector<Document>& LanguageCorpus::split(Split s) const {
  switch (s) {
    case Split::kTrain: return train;
    case Split::kValidation: return validation;
    case Split::kProbe: return probe;
  }
  return train;
}

std::size_t LanguageCorpus::split_bytes(Split s) const {
  std::size_t n = 0;
  for (const auto& d : split(s)) n += d.size();
  return n;
}

std::vector<std::uint8_t> SynthLanguageSpec::symbols() const {
  std::set<std::uint8_t> set;
  for (const auto& r : alphabet)
    for (int b = r.first; b <= r.last; ++b) set.insert(static_cast<std::uint8_t>(b));
  return {set.begin(), set.end()};
}

std::vector<double> markov_transitions(const SynthLanguageSpec& spec) {
  const auto syms = spec.symbols();
  if (syms.empty()) throw ConfigError("synthetic language '" + spec.lang_id + "': empty alphabet");
  const std::size_t a = syms.size();
  Rng rng(mix_seed(spec.seed, 3));
  std::vector<double> table(a * a * a);
  for (std::size_t ctx = 0; ctx < a * a; ++ctx) {
    double* row = table.data() + ctx * a;
    double mx = -1e300;
    for (std::size_t c = 0; c < a; ++c) {
      row[c] = rng.normal() * spec.sharpness;
      mx = std::max(mx, row[c]);
    }
    double sum = 0.0;
    for (std::size_t c = 0; c < a; ++c) {
      row[c] = std::exp(row[c] - mx);
      sum += row[c];
    }
    for (std::size_t c = 0; c < a; ++c) row[c] /= sum;
  }
  return table;
}

namespace {

class MarkovSampler {
 public:
  explicit MarkovSampler(const SynthLanguageSpec& spec)
      : symbols_(spec.symbols()), cumulative_(markov_transitions(spec)) {
    const std::size_t a = symbols_.size();
    for (std::size_t ctx = 0; ctx < a * a; ++ctx) {
      double acc = 0.0;
      for (std::size_t c = 0; c < a; ++c) {
        acc += cumulative_[ctx * a + c];
        cumulative_[ctx * a + c] = acc;
      }
    }
  }

  std::size_t alphabet_size() const { return symbols_.size(); }

  // Draws n bytes driven by a stream of uniforms; the first two come from
  // the initial state (uniform over symbol pairs).
  template <typename Uniform>
  Document sample(std::size_t n, Uniform&& next_uniform) const {
    const std::size_t a = symbols_.size();
    Document out;
    out.reserve(n);
    auto pick_uniform = [&](double u) {
      return std::min(a - 1, static_cast<std::size_t>(u * double(a)));
    };
    std::size_t prev2 = pick_uniform(next_uniform());
    std::size_t prev1 = pick_uniform(next_uniform());
    if (n > 0) out.push_back(symbols_[prev2]);
    if (n > 1) out.push_back(symbols_[prev1]);
    while (out.size() < n) {
      const double* cum = cumulative_.data() + (prev2 * a + prev1) * a;
      const double u = next_uniform();
      std::size_t c = static_cast<std::size_t>(std::upper_bound(cum, cum + a, u) - cum);
      if (c >= a) c = a - 1;
      out.push_back(symbols_[c]);
      prev2 = prev1;
      prev1 = c;
    }
    return out;
  }

 private:
  std::vector<std::uint8_t> symbols_;
  std::vector<double> cumulative_;
};

std::vector<Document> sample_documents(const MarkovSampler& sampler,
                                       std::size_t total, std::size_t doc_bytes,
                                       std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Document> docs;
  for (std::size_t done = 0; done < total;) {
    const std::size_t n = std::min(doc_bytes, total - done);
    docs.push_back(sampler.sample(n, [&] { return rng.uniform(); }));
    done += n;
  }
  return docs;
}

}  // namespace

LanguageCorpus synth_language(const SynthLanguageSpec& spec, std::size_t n_bytes) {
  if (spec.symbols().empty())
    throw ConfigError("synthetic language '" + spec.lang_id + "': empty alphabet");
  if (n_bytes < 10'000)
    throw ConfigError("synthetic language '" + spec.lang_id +
                      "': n_bytes must be at least 10000");
  if (spec.document_bytes == 0)
    throw ConfigError("synthetic language '" + spec.lang_id + "': document_bytes must be positive");
  const MarkovSampler sampler(spec);
  LanguageCorpus corpus;
  corpus.lang_id = spec.lang_id;
  corpus.train = sample_documents(sampler, n_bytes, spec.document_bytes, mix_seed(spec.seed, 0));
  corpus.validation = sample_documents(sampler, spec.validation_bytes,
                                       spec.document_bytes, mix_seed(spec.seed, 1));
  corpus.probe = sample_documents(sampler, spec.probe_bytes, spec.document_bytes,
                                  mix_seed(spec.seed, 2));
  return corpus;
}

void synth_parallel(std::vector<LanguageCorpus>& corpora,
                    const std::vector<SynthLanguageSpec>& specs,
                    std::size_t n_sentences, std::size_t sentence_bytes,
                    std::uint64_t seed) {
  if (corpora.size() != specs.size())
    throw ConfigError("synth_parallel: one spec per corpus required");
  std::vector<MarkovSampler> samplers;
  for (const auto& s : specs) samplers.emplace_back(s);
  for (auto& c : corpora) c.parallel.clear();
  for (std::size_t i = 0; i < n_sentences; ++i) {
    Rng shared(mix_seed(seed, i));
    std::vector<double> stream(sentence_bytes + 2);
    for (auto& u : stream) u = shared.uniform();
    for (std::size_t k = 0; k < corpora.size(); ++k) {
      std::size_t pos = 0;
      const Document d = samplers[k].sample(sentence_bytes, [&] { return stream[pos++]; });
      corpora[k].parallel.emplace_back(d.begin(), d.end());
    }
  }
}

std::map<std::string, LanguageCorpus> load_corpus_dir(const fs::path& root) {
  if (!fs::is_directory(root))
    throw DataError("corpus directory not found: " + root.string());
  std::vector<fs::path> lang_dirs;
  for (const auto& entry : fs::directory_iterator(root))
    if (entry.is_directory()) lang_dirs.push_back(entry.path());
  std::sort(lang_dirs.begin(), lang_dirs.end());
  if (lang_dirs.empty()) throw DataError("no language folders under " + root.string());

  std::map<std::string, LanguageCorpus> out;
  for (const auto& dir : lang_dirs) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir))
      if (entry.is_regular_file() && entry.path().extension() == ".txt")
        files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw DataError("language folder has no .txt documents: " + dir.string());

    const std::size_t n = files.size();
    // Order document indices by a hash of the index, then cut 80/10/10.
    std::vector<std::pair<std::uint64_t, std::size_t>> keyed;
    for (std::size_t i = 0; i < n; ++i) keyed.emplace_back(mix_seed(0x5eed, i), i);
    std::sort(keyed.begin(), keyed.end());
    const std::size_t n_val = n >= 3 ? std::max<std::size_t>(1, n / 10) : 0;
    const std::size_t n_probe = n >= 3 ? std::max<std::size_t>(1, n / 10) : 0;

    LanguageCorpus corpus;
    corpus.lang_id = dir.filename().string();
    // Assign in file order so that each split keeps documents sorted.
    std::vector<Split> assignment(n, Split::kTrain);
    for (std::size_t r = 0; r < n; ++r) {
      const std::size_t idx = keyed[r].second;
      if (r < n_val) assignment[idx] = Split::kValidation;
      else if (r < n_val + n_probe) assignment[idx] = Split::kProbe;
    }
    for (std::size_t i = 0; i < n; ++i) {
      const std::string bytes = read_file_bytes(files[i]);
      Document doc(bytes.begin(), bytes.end());
      switch (assignment[i]) {
        case Split::kTrain: corpus.train.push_back(std::move(doc)); break;
        case Split::kValidation: corpus.validation.push_back(std::move(doc)); break;
        case Split::kProbe: corpus.probe.push_back(std::move(doc)); break;
      }
    }
    out.emplace(corpus.lang_id, std::move(corpus));
  }
  return out;
}

void load_parallel_dir(const fs::path& dir, std::map<std::string, LanguageCorpus>& corpora) {
  if (!fs::is_directory(dir)) throw DataError("parallel directory not found: " + dir.string());
  std::size_t expected = 0;
  bool first = true;
  for (auto& [lang, corpus] : corpora) {
    const fs::path file = dir / (lang + ".txt");
    std::ifstream in(file, std::ios::binary);
    if (!in) throw DataError("missing parallel file " + file.string());
    corpus.parallel.clear();
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      corpus.parallel.push_back(line);
    }
    if (first) {
      expected = corpus.parallel.size();
      first = false;
    } else if (corpus.parallel.size() != expected) {
      throw DataError("parallel bundle misaligned: " + file.string() + " has " +
                      std::to_string(corpus.parallel.size()) + " lines, expected " +
                      std::to_string(expected));
    }
  }
}

void write_corpus_dir(const std::vector<LanguageCorpus>& corpora,
                      const fs::path& corpora_root, const fs::path& parallel_dir) {
  auto write_doc = [](const fs::path& p, const Document& d) {
    write_file_bytes(p, std::string(d.begin(), d.end()));
  };
  for (const auto& c : corpora) {
    const fs::path dir = corpora_root / c.lang_id;
    fs::create_directories(dir);
    // Interleave the splits so that reloading reproduces a 80/10/10 cut of
    // the same material rather than the synthetic split boundaries.
    std::size_t idx = 0;
    char name[32];
    for (Split s : {Split::kTrain, Split::kValidation, Split::kProbe})
      for (const auto& d : c.split(s)) {
        std::snprintf(name, sizeof name, "doc%06zu.txt", idx++);
        write_doc(dir / name, d);
      }
    if (!c.parallel.empty()) {
      std::string text;
      for (const auto& line : c.parallel) text += line + "\n";
      write_file_bytes(parallel_dir / (c.lang_id + ".txt"), text);
    }
  }
}

namespace {

std::vector<std::uint8_t> concat_split(const LanguageCorpus& corpus, Split split) {
  std::vector<std::uint8_t> stream;
  stream.reserve(corpus.split_bytes(split));
  for (const auto& d : corpus.split(split)) stream.insert(stream.end(), d.begin(), d.end());
  return stream;
}

void append_chunks(const LanguageCorpus& corpus, Split split, std::size_t seq_len,
                   std::vector<Sequence>& chunks) {
  const auto stream = concat_split(corpus, split);
  for (std::size_t off = 0; off + seq_len <= stream.size(); off += seq_len)
    chunks.push_back(encode_bytes(std::span(stream).subspan(off, seq_len)));
}

std::vector<Batch> group(std::vector<Sequence>&& chunks, std::size_t batch_size,
                         std::uint64_t seed) {
  Rng rng(seed);
  rng.shuffle(chunks);
  std::vector<Batch> batches;
  for (std::size_t i = 0; i < chunks.size(); i += batch_size) {
    Batch b;
    for (std::size_t j = i; j < std::min(chunks.size(), i + batch_size); ++j)
      b.push_back(std::move(chunks[j]));
    batches.push_back(std::move(b));
  }
  return batches;
}

}  // namespace

std::vector<Batch> make_batches(const LanguageCorpus& corpus, Split split,
                                std::size_t seq_len, std::size_t batch_size,
                                std::uint64_t seed) {
  return make_mixed_batches({&corpus}, split, seq_len, batch_size, seed);
}

std::vector<Batch> make_mixed_batches(const std::vector<const LanguageCorpus*>& corpora,
                                      Split split, std::size_t seq_len,
                                      std::size_t batch_size, std::uint64_t seed) {
  if (seq_len == 0 || batch_size == 0)
    throw ConfigError("batches: seq_len and batch_size must be positive");
  std::vector<Sequence> chunks;
  for (const auto* c : corpora) {
    if (c->split_bytes(split) == 0)
      throw DataError("language '" + c->lang_id + "': " + split_name(split) + " split is empty");
    append_chunks(*c, split, seq_len, chunks);
  }
  if (chunks.empty())
    throw DataError("batches: " + split_name(split) + " split shorter than one sequence");
  return group(std::move(chunks), batch_size, seed);
}

std::vector<Sequence> eval_sequences(const LanguageCorpus& corpus, Split split,
                                     std::size_t seq_len) {
  if (seq_len == 0) throw ConfigError("eval_sequences: seq_len must be positive");
  const auto stream = concat_split(corpus, split);
  if (stream.empty())
    throw DataError("language '" + corpus.lang_id + "': " + split_name(split) + " split is empty");
  std::vector<Sequence> out;
  for (std::size_t off = 0; off < stream.size(); off += seq_len) {
    const std::size_t n = std::min(seq_len, stream.size() - off);
    out.push_back(encode_bytes(std::span(stream).subspan(off, n)));
  }
  return out;
}

ToySetting ToySetting::make(std::uint64_t seed) {
  ToySetting s;
  auto lang = [&](std::string id, std::vector<ByteRange> alphabet, std::uint64_t stream) {
    SynthLanguageSpec spec;
    spec.lang_id = std::move(id);
    spec.alphabet = std::move(alphabet);
    spec.seed = mix_seed(seed, stream);
    return spec;
  };
  s.general = {
      lang("aa", {{'A', 'H'}}, 10),
      lang("bb", {{'a', 'h'}}, 11),
      lang("cc", {{'0', '7'}}, 12),
      lang("dd", {{0xC0, 0xC7}}, 13),
  };
  // Five of the eight "aa" letters, with its own transition table.
  s.target = lang("tt", {{'A', 'E'}}, 14);
  return s;
}

std::vector<LanguageCorpus> ToySetting::build() const {
  std::vector<LanguageCorpus> out;
  std::vector<SynthLanguageSpec> specs = general;
  for (const auto& g : general) out.push_back(synth_language(g, general_train_bytes));
  out.push_back(synth_language(target, target_train_bytes));
  specs.push_back(target);
  synth_parallel(out, specs, parallel_sentences, parallel_sentence_bytes,
                 mix_seed(target.seed, 99));
  return out;
}

}  // namespace snf
