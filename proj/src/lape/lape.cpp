#include "snf/lape.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

#include "snf/checkpoint.hpp"
#include "snf/error.hpp"

namespace snf {

ActivationStats::ActivationStats(int layers, int dff, std::vector<std::string> langs)
    : n_layers(layers), d_ff(dff), languages(std::move(langs)) {
  counts.assign(n_neurons() * n_languages(), 0);
  totals.assign(n_languages(), 0);
}

void ActivationStats::merge(const ActivationStats& other) {
  if (other.n_layers != n_layers || other.d_ff != d_ff || other.languages != languages)
    throw ConsistencyError("activation stats: cannot merge different shapes or language orders");
  for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
  for (std::size_t k = 0; k < totals.size(); ++k) totals[k] += other.totals[k];
}

void ActivationStats::validate() const {
  if (n_layers < 1 || d_ff < 1) throw DataError("activation stats: empty shape");
  if (languages.empty()) throw DataError("activation stats: no languages");
  if (counts.size() != n_neurons() * n_languages() || totals.size() != n_languages())
    throw DataError("activation stats: size does not match shape");
  for (std::size_t i = 0; i < counts.size(); ++i)
    if (counts[i] > totals[i % n_languages()])
      throw DataError("activation stats: count exceeds language total");
}

std::uint64_t ActivationStats::fingerprint() const {
  Fnv1a h;
  h.update(&n_layers, sizeof n_layers);
  h.update(&d_ff, sizeof d_ff);
  for (const auto& l : languages) {
    h.update(l);
    h.update("\0", 1);
  }
  h.update(totals.data(), totals.size() * sizeof(std::uint64_t));
  h.update(counts.data(), counts.size() * sizeof(std::uint64_t));
  return h.digest();
}

ActivationStats collect_stats(const ModelBundle& model,
                              const std::vector<LanguageProbe>& probes,
                              unsigned threads) {
  if (probes.empty()) throw DataError("collect_stats: language list is empty");
  std::vector<std::string> langs;
  struct Item {
    std::size_t lang;
    const Document* doc;
  };
  std::vector<Item> items;
  for (std::size_t k = 0; k < probes.size(); ++k) {
    langs.push_back(probes[k].lang_id);
    std::size_t bytes = 0;
    for (const auto& d : probes[k].documents) {
      bytes += d.size();
      if (!d.empty()) items.push_back({k, &d});
    }
    if (bytes == 0)
      throw DataError("collect_stats: probe for language '" + probes[k].lang_id + "' is empty");
  }
  const ModelConfig& cfg = model.config;
  const auto chunk = static_cast<std::size_t>(cfg.max_seq_len - 1);

  auto run = [&](std::size_t begin, std::size_t end, ActivationStats& out) {
    for (std::size_t i = begin; i < end; ++i) {
      const Document& doc = *items[i].doc;
      const std::size_t k = items[i].lang;
      for (std::size_t off = 0; off < doc.size(); off += chunk) {
        const std::size_t n = std::min(chunk, doc.size() - off);
        const auto tokens = encode_bytes(std::span(doc).subspan(off, n));
        const auto result = forward(model, std::span<const TokenId>(tokens), true);
        const FiringCounts fired = record_ffn_firings(*result.trace, 1);
        for (int l = 0; l < cfg.n_layers; ++l)
          for (int j = 0; j < cfg.d_ff; ++j)
            out.counts[out.offset(l, j) + k] +=
                fired.counts[std::size_t(l) * std::size_t(cfg.d_ff) + std::size_t(j)];
        out.totals[k] += fired.positions;
      }
    }
  };

  const std::size_t workers =
      std::max<std::size_t>(1, std::min<std::size_t>(threads, items.size()));
  std::vector<ActivationStats> partial(workers, ActivationStats(cfg.n_layers, cfg.d_ff, langs));
  if (workers == 1) {
    run(0, items.size(), partial[0]);
  } else {
    std::vector<std::thread> pool;
    const std::size_t per = (items.size() + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
      const std::size_t b = std::min(items.size(), w * per);
      const std::size_t e = std::min(items.size(), b + per);
      pool.emplace_back(run, b, e, std::ref(partial[w]));
    }
    for (auto& t : pool) t.join();
  }
  ActivationStats stats(cfg.n_layers, cfg.d_ff, langs);
  for (const auto& p : partial) stats.merge(p);
  return stats;
}

LapeTable lape_scores(const ActivationStats& stats) {
  stats.validate();
  for (std::size_t k = 0; k < stats.n_languages(); ++k)
    if (stats.totals[k] == 0)
      throw DataError("lape_scores: language '" + stats.languages[k] + "' has no positions");
  const std::size_t langs = stats.n_languages();
  LapeTable table;
  table.n_layers = stats.n_layers;
  table.d_ff = stats.d_ff;
  table.n_languages = langs;
  table.normalized.assign(stats.counts.size(), 0.0);
  table.score.assign(stats.n_neurons(), 0.0);
  table.undefined.assign(stats.n_neurons(), 0);
  std::vector<double> p(langs), sorted(langs);
  for (std::size_t n = 0; n < stats.n_neurons(); ++n) {
    for (std::size_t k = 0; k < langs; ++k)
      p[k] = double(stats.counts[n * langs + k]) / double(stats.totals[k]);
    // Summing in sorted order makes the score independent of language
    // order, so rows that are permutations of each other tie exactly.
    sorted = p;
    std::sort(sorted.begin(), sorted.end());
    double sum = 0.0;
    for (double x : sorted) sum += x;
    if (sum == 0.0) {
      table.undefined[n] = 1;
      continue;
    }
    for (std::size_t k = 0; k < langs; ++k) table.normalized[n * langs + k] = p[k] / sum;
    double h = 0.0;
    for (double x : sorted) {
      const double q = x / sum;
      if (q > 0.0) h -= q * std::log(q);
    }
    table.score[n] = h > 0.0 ? h : 0.0;
  }
  return table;
}

void SelectionConfig::validate() const {
  if (!(k_percent > 0.0 && k_percent <= 1.0))
    throw ConfigError("selection: k_percent must lie in (0, 1]");
  if (!(tau_activity >= 0.0 && tau_activity <= 1.0))
    throw ConfigError("selection: tau_activity must lie in [0, 1]");
  if (!(tau_selectivity >= 0.0 && tau_selectivity <= 1.0))
    throw ConfigError("selection: tau_selectivity must lie in [0, 1]");
}

const SubnetworkSpec& SelectionResult::spec_for(const std::string& lang) const {
  for (const auto& s : specs)
    if (s.lang_id == lang) return s;
  throw DataError("no subnetwork for language '" + lang + "'");
}

std::size_t selection_budget(double k_percent, std::size_t total_neurons) {
  // The small slack keeps products such as 0.29 * 100 from flooring to 28.
  const double exact = k_percent * double(total_neurons);
  return static_cast<std::size_t>(std::floor(exact * (1.0 + 1e-12) + 1e-9));
}

SelectionResult select_subnetworks(const LapeTable& table, const ActivationStats& stats,
                                   const SelectionConfig& cfg) {
  cfg.validate();
  if (table.n_layers != stats.n_layers || table.d_ff != stats.d_ff ||
      table.n_languages != stats.n_languages())
    throw ConsistencyError("select_subnetworks: table and stats shapes differ");
  const std::size_t langs = stats.n_languages();

  std::vector<std::size_t> candidates;
  for (std::size_t n = 0; n < stats.n_neurons(); ++n) {
    if (table.undefined[n]) continue;
    double peak = 0.0;
    bool selective = false;
    for (std::size_t k = 0; k < langs; ++k) {
      const double p = double(stats.counts[n * langs + k]) / double(stats.totals[k]);
      peak = std::max(peak, p);
      selective = selective || p >= cfg.tau_selectivity;
    }
    if (peak >= cfg.tau_activity && selective) candidates.push_back(n);
  }
  // Neuron ids are layer-major, so id order is (layer, index) order.
  std::stable_sort(candidates.begin(), candidates.end(), [&](std::size_t a, std::size_t b) {
    return table.score[a] < table.score[b];
  });
  const std::size_t keep =
      std::min(candidates.size(), selection_budget(cfg.k_percent, stats.n_neurons()));

  SelectionResult result;
  result.candidate_count = candidates.size();
  result.no_candidates = candidates.empty();
  const std::uint64_t stats_fp = stats.fingerprint();
  for (std::size_t k = 0; k < langs; ++k) {
    SubnetworkSpec spec;
    spec.lang_id = stats.languages[k];
    spec.selection = cfg;
    spec.stats_fingerprint = stats_fp;
    result.specs.push_back(std::move(spec));
  }
  for (std::size_t r = 0; r < keep; ++r) {
    const std::size_t n = candidates[r];
    const Neuron neuron{int(n / std::size_t(stats.d_ff)), int(n % std::size_t(stats.d_ff))};
    result.selected.push_back(neuron);
    for (std::size_t k = 0; k < langs; ++k) {
      const double p = double(stats.counts[n * langs + k]) / double(stats.totals[k]);
      if (p >= cfg.tau_selectivity) result.specs[k].neurons.push_back(neuron);
    }
  }
  for (auto& s : result.specs) std::sort(s.neurons.begin(), s.neurons.end());
  return result;
}

nlohmann::ordered_json spec_to_json(const SubnetworkSpec& spec) {
  nlohmann::ordered_json j;
  j["lang"] = spec.lang_id;
  j["model_fingerprint"] = spec.model_fingerprint;
  j["k_percent"] = spec.selection.k_percent;
  j["tau_activity"] = spec.selection.tau_activity;
  j["tau_selectivity"] = spec.selection.tau_selectivity;
  j["stats_fingerprint"] = fingerprint_hex(spec.stats_fingerprint);
  j["seed"] = spec.seed;
  auto arr = nlohmann::ordered_json::array();
  for (const auto& n : spec.neurons) arr.push_back({n.layer, n.index});
  j["neurons"] = std::move(arr);
  return j;
}

std::string validate_spec_json(const nlohmann::json& j) {
  if (!j.is_object()) return "spec must be a JSON object";
  auto need = [&](const char* key, auto pred, const char* type) -> std::string {
    if (!j.contains(key)) return std::string("missing key '") + key + "'";
    if (!pred(j.at(key))) return std::string("key '") + key + "' must be " + type;
    return {};
  };
  const auto is_string = [](const nlohmann::json& v) { return v.is_string(); };
  const auto is_unit = [](const nlohmann::json& v) {
    return v.is_number() && v.get<double>() >= 0.0 && v.get<double>() <= 1.0;
  };
  for (auto msg : {need("lang", is_string, "a string"),
                   need("model_fingerprint", is_string, "a string"),
                   need("k_percent", is_unit, "a number in [0, 1]"),
                   need("tau_activity", is_unit, "a number in [0, 1]"),
                   need("tau_selectivity", is_unit, "a number in [0, 1]")})
    if (!msg.empty()) return msg;
  if (!j.contains("neurons") || !j.at("neurons").is_array())
    return "key 'neurons' must be an array";
  for (const auto& n : j.at("neurons")) {
    if (!n.is_array() || n.size() != 2 || !n[0].is_number_integer() ||
        !n[1].is_number_integer() || n[0].get<long long>() < 0 || n[1].get<long long>() < 0)
      return "each neuron must be a [layer, index] pair of non-negative integers";
  }
  const auto& fp = j.at("model_fingerprint").get_ref<const std::string&>();
  if (!fp.empty()) {
    try {
      parse_fingerprint_hex(fp);
    } catch (const DataError&) {
      return "model_fingerprint must be 16 lowercase hex digits";
    }
  }
  return {};
}

SubnetworkSpec spec_from_json(const nlohmann::json& j) {
  if (const std::string err = validate_spec_json(j); !err.empty())
    throw DataError("subnetwork spec: " + err);
  SubnetworkSpec spec;
  spec.lang_id = j.at("lang").get<std::string>();
  spec.model_fingerprint = j.at("model_fingerprint").get<std::string>();
  spec.selection.k_percent = j.at("k_percent").get<double>();
  spec.selection.tau_activity = j.at("tau_activity").get<double>();
  spec.selection.tau_selectivity = j.at("tau_selectivity").get<double>();
  if (j.contains("stats_fingerprint"))
    spec.stats_fingerprint = parse_fingerprint_hex(j.at("stats_fingerprint").get<std::string>());
  spec.seed = j.value("seed", std::uint64_t{0});
  for (const auto& n : j.at("neurons")) spec.neurons.push_back({n[0].get<int>(), n[1].get<int>()});
  std::sort(spec.neurons.begin(), spec.neurons.end());
  if (std::adjacent_find(spec.neurons.begin(), spec.neurons.end()) != spec.neurons.end())
    throw DataError("subnetwork spec: duplicate neuron entries");
  return spec;
}

void save_spec(const SubnetworkSpec& spec, const std::filesystem::path& path) {
  write_file_bytes(path, spec_to_json(spec).dump(2) + "\n");
}

SubnetworkSpec load_spec(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file_bytes(path));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("subnetwork spec " + path.string() + ": " + e.what());
  }
  return spec_from_json(j);
}

nlohmann::ordered_json stats_to_json(const ActivationStats& stats) {
  nlohmann::ordered_json j;
  j["n_layers"] = stats.n_layers;
  j["d_ff"] = stats.d_ff;
  j["languages"] = stats.languages;
  j["totals"] = stats.totals;
  j["counts"] = stats.counts;
  j["fingerprint"] = fingerprint_hex(stats.fingerprint());
  return j;
}

ActivationStats stats_from_json(const nlohmann::json& j) {
  ActivationStats s;
  try {
    s.n_layers = j.at("n_layers").get<int>();
    s.d_ff = j.at("d_ff").get<int>();
    s.languages = j.at("languages").get<std::vector<std::string>>();
    s.totals = j.at("totals").get<std::vector<std::uint64_t>>();
    s.counts = j.at("counts").get<std::vector<std::uint64_t>>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("activation stats JSON: ") + e.what());
  }
  s.validate();
  if (j.contains("fingerprint") &&
      j.at("fingerprint").get<std::string>() != fingerprint_hex(s.fingerprint()))
    throw ConsistencyError("activation stats JSON: fingerprint does not match contents");
  return s;
}

}  // namespace snf
