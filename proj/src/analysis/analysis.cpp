#include "snf/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "snf/error.hpp"

namespace snf {

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace

std::vector<std::size_t> layer_histogram(const SubnetworkSpec& spec, int n_layers) {
  std::vector<std::size_t> hist(std::size_t(std::max(0, n_layers)), 0);
  for (const auto& n : spec.neurons) {
    if (n.layer < 0 || n.layer >= n_layers)
      throw DataError("layer_histogram: neuron layer " + std::to_string(n.layer) + " out of range");
    ++hist[std::size_t(n.layer)];
  }
  return hist;
}

std::string histogram_csv(const std::vector<std::size_t>& hist) {
  std::string out = "layer,count\n";
  for (std::size_t l = 0; l < hist.size(); ++l)
    out += std::to_string(l) + "," + std::to_string(hist[l]) + "\n";
  return out;
}

OverlapMatrix overlap(const std::vector<SubnetworkSpec>& specs) {
  for (const auto& s : specs)
    if (s.model_fingerprint != specs.front().model_fingerprint)
      throw ConsistencyError("overlap: specs come from different models (" +
                             specs.front().model_fingerprint + " vs " + s.model_fingerprint + ")");
  OverlapMatrix m;
  const std::size_t n = specs.size();
  std::vector<std::set<Neuron>> sets;
  for (const auto& s : specs) {
    m.languages.push_back(s.lang_id);
    sets.emplace_back(s.neurons.begin(), s.neurons.end());
  }
  m.intersection.assign(n, std::vector<std::size_t>(n, 0));
  m.jaccard.assign(n, std::vector<double>(n, 0.0));
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = 0; b < n; ++b) {
      std::size_t inter = 0;
      for (const auto& x : sets[a]) inter += sets[b].count(x);
      const std::size_t uni = sets[a].size() + sets[b].size() - inter;
      m.intersection[a][b] = inter;
      m.jaccard[a][b] = uni ? double(inter) / double(uni) : 0.0;
    }
  return m;
}

std::string overlap_csv(const OverlapMatrix& m) {
  std::string out = "lang_a,lang_b,intersection,jaccard\n";
  for (std::size_t a = 0; a < m.languages.size(); ++a)
    for (std::size_t b = 0; b < m.languages.size(); ++b)
      out += m.languages[a] + "," + m.languages[b] + "," + std::to_string(m.intersection[a][b]) +
             "," + fmt(m.jaccard[a][b]) + "\n";
  return out;
}

namespace {

double quantile(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) return 0.0;
  const double pos = q * double(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - double(lo)) * (sorted[hi] - sorted[lo]);
}

}  // namespace

DeltaStats weight_deltas(const ModelBundle& before, const ModelBundle& after,
                         const ParamMask* mask) {
  if (!(before.config == after.config))
    throw ConsistencyError("weight_deltas: checkpoints have different configs");
  DeltaStats stats;
  stats.scope = mask ? DeltaScope::kMaskedOnly : DeltaScope::kAll;
  std::vector<const Matrix<float>*> a, b;
  std::vector<TensorId> ids;
  before.params.for_each([&](TensorId id, const Matrix<float>& m) {
    ids.push_back(id);
    a.push_back(&m);
  });
  after.params.for_each([&](TensorId, const Matrix<float>& m) { b.push_back(&m); });
  if (mask && mask->tensors.size() != ids.size())
    throw ConsistencyError("weight_deltas: mask does not match the model");

  for (std::size_t t = 0; t < ids.size(); ++t) {
    if (!is_ffn_projection(ids[t].kind)) continue;
    std::vector<double> d;
    if (mask) {
      for (std::uint32_t idx : mask->tensors[t].indices)
        d.push_back(std::fabs(double(b[t]->data[idx]) - double(a[t]->data[idx])));
    } else {
      d.reserve(a[t]->size());
      for (std::size_t i = 0; i < a[t]->size(); ++i)
        d.push_back(std::fabs(double(b[t]->data[i]) - double(a[t]->data[i])));
    }
    DeltaRow row;
    row.layer = ids[t].layer;
    row.projection = ids[t].kind == TensorKind::kGate ? "gate"
                     : ids[t].kind == TensorKind::kUp ? "up"
                                                      : "down";
    row.count = d.size();
    if (!d.empty()) {
      double sum = 0.0;
      for (double x : d) sum += x;
      row.mean = sum / double(d.size());
      double var = 0.0;
      for (double x : d) var += (x - row.mean) * (x - row.mean);
      row.std = std::sqrt(var / double(d.size()));
      std::sort(d.begin(), d.end());
      row.q25 = quantile(d, 0.25);
      row.q50 = quantile(d, 0.50);
      row.q75 = quantile(d, 0.75);
      row.max = d.back();
    }
    stats.rows.push_back(row);
  }
  return stats;
}

std::string deltas_csv(const DeltaStats& stats) {
  std::string out = "layer,projection,count,mean,std,q25,q50,q75,max\n";
  for (const auto& r : stats.rows)
    out += std::to_string(r.layer) + "," + r.projection + "," + std::to_string(r.count) + "," +
           fmt(r.mean) + "," + fmt(r.std) + "," + fmt(r.q25) + "," + fmt(r.q50) + "," +
           fmt(r.q75) + "," + fmt(r.max) + "\n";
  return out;
}

std::vector<std::vector<double>> pooled_states(const ModelBundle& model,
                                               const std::string& sentence, Pooling pooling) {
  const auto limit = static_cast<std::size_t>(model.config.max_seq_len - 1);
  std::vector<std::uint8_t> bytes(sentence.begin(), sentence.end());
  if (bytes.size() > limit) bytes.resize(limit);
  const auto d = static_cast<std::size_t>(model.config.d_model);
  std::vector<std::vector<double>> pooled(std::size_t(model.config.n_layers),
                                          std::vector<double>(d, 0.0));
  if (bytes.empty()) return pooled;
  const auto tokens = encode_bytes(bytes);
  const auto result = forward(model, std::span<const TokenId>(tokens), true);
  for (std::size_t l = 0; l < pooled.size(); ++l) {
    const Matrix<float>& h = result.trace->post_ffn[l];
    if (pooling == Pooling::kLastToken) {
      for (std::size_t i = 0; i < d; ++i) pooled[l][i] = h(h.rows - 1, i);
    } else {
      for (std::size_t t = 1; t < h.rows; ++t)
        for (std::size_t i = 0; i < d; ++i) pooled[l][i] += h(t, i);
      for (auto& x : pooled[l]) x /= double(h.rows - 1);
    }
  }
  return pooled;
}

double cosine(const std::vector<double>& a, const std::vector<double>& b, bool* degenerate) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) {
    if (degenerate) *degenerate = true;
    return 0.0;
  }
  if (degenerate) *degenerate = false;
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

SimilarityReport cross_lingual_similarity(
    const ModelBundle& model, const std::map<std::string, std::vector<std::string>>& parallel,
    const std::vector<std::string>& languages,
    const std::vector<std::pair<std::string, std::string>>& pairs, Pooling pooling) {
  if (languages.empty()) throw DataError("similarity: no languages given");
  std::size_t n_sent = 0;
  for (std::size_t k = 0; k < languages.size(); ++k) {
    const auto it = parallel.find(languages[k]);
    if (it == parallel.end())
      throw DataError("similarity: no parallel sentences for '" + languages[k] + "'");
    if (k == 0) n_sent = it->second.size();
    else if (it->second.size() != n_sent)
      throw DataError("similarity: parallel bundle misaligned for '" + languages[k] + "'");
  }
  if (n_sent == 0) throw DataError("similarity: parallel bundle is empty");

  SimilarityReport report;
  report.pairs = pairs;
  if (report.pairs.empty())
    for (std::size_t a = 0; a < languages.size(); ++a)
      for (std::size_t b = a + 1; b < languages.size(); ++b)
        report.pairs.emplace_back(languages[a], languages[b]);
  for (const auto& [a, b] : report.pairs)
    if (!parallel.count(a) || !parallel.count(b))
      throw DataError("similarity: pair (" + a + ", " + b + ") not in the bundle");

  // pooled[lang][sentence][layer]
  std::map<std::string, std::vector<std::vector<std::vector<double>>>> pooled;
  for (const auto& [a, b] : report.pairs)
    for (const std::string* lang : {&a, &b})
      if (!pooled.count(*lang)) {
        auto& dst = pooled[*lang];
        for (const auto& s : parallel.at(*lang)) dst.push_back(pooled_states(model, s, pooling));
      }

  const auto layers = static_cast<std::size_t>(model.config.n_layers);
  report.cosine.assign(layers, std::vector<double>(report.pairs.size(), 0.0));
  report.layer_average.assign(report.pairs.size(), 0.0);
  double grand = 0.0;
  for (std::size_t p = 0; p < report.pairs.size(); ++p) {
    const auto& pa = pooled.at(report.pairs[p].first);
    const auto& pb = pooled.at(report.pairs[p].second);
    for (std::size_t l = 0; l < layers; ++l) {
      double sum = 0.0;
      for (std::size_t s = 0; s < n_sent; ++s) {
        bool degenerate = false;
        sum += cosine(pa[s][l], pb[s][l], &degenerate);
        if (degenerate) ++report.degenerate;
      }
      report.cosine[l][p] = sum / double(n_sent);
      report.layer_average[p] += report.cosine[l][p] / double(layers);
    }
    grand += report.layer_average[p];
  }
  report.grand_mean = grand / double(report.pairs.size());
  return report;
}

std::string similarity_csv(const SimilarityReport& report) {
  std::string out = "layer,lang_a,lang_b,mean_cosine\n";
  for (std::size_t l = 0; l < report.cosine.size(); ++l)
    for (std::size_t p = 0; p < report.pairs.size(); ++p)
      out += std::to_string(l) + "," + report.pairs[p].first + "," + report.pairs[p].second + "," +
             fmt(report.cosine[l][p]) + "\n";
  return out;
}

}  // namespace snf
