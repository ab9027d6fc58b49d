#pragma once
// Independent reference computations shared by the unit tests and the
// acceptance harness. They are written for clarity, not speed, and do not
// call into the LAPE implementation.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "snf/lape.hpp"
#include "snf/rng.hpp"

namespace snf::testing {

// Shannon entropy (nats) of a nonnegative row after normalization, summed
// in long double with compensated (Kahan) accumulation.
inline long double entropy_oracle(const std::vector<double>& row) {
  long double total = 0.0L;
  for (double x : row) total += static_cast<long double>(x);
  long double h = 0.0L, carry = 0.0L;
  for (double x : row) {
    if (x <= 0.0) continue;
    const long double q = static_cast<long double>(x) / total;
    const long double term = -q * logl(q) - carry;
    const long double t = h + term;
    carry = (t - h) - term;
    h = t;
  }
  return h;
}

// Exhaustive selection: score every neuron, filter by the two thresholds,
// sort by (score, layer, index) and cut at floor(k * N), then assign each
// survivor to every language clearing tau_selectivity.
inline std::map<std::string, std::set<Neuron>> brute_force_selection(
    const ActivationStats& stats, const SelectionConfig& cfg) {
  struct Entry {
    long double score;
    int layer, index;
    std::vector<double> p;
  };
  const std::size_t L = stats.languages.size();
  std::vector<Entry> all;
  for (int l = 0; l < stats.n_layers; ++l)
    for (int j = 0; j < stats.d_ff; ++j) {
      Entry e{0.0L, l, j, std::vector<double>(L)};
      bool any = false;
      for (std::size_t k = 0; k < L; ++k) {
        e.p[k] = double(stats.count(l, j, k)) / double(stats.totals[k]);
        any = any || e.p[k] > 0.0;
      }
      if (!any) continue;
      const double peak = *std::max_element(e.p.begin(), e.p.end());
      bool selective = false;
      for (double x : e.p) selective = selective || x >= cfg.tau_selectivity;
      if (peak < cfg.tau_activity || !selective) continue;
      e.score = entropy_oracle(e.p);
      all.push_back(std::move(e));
    }
  // Scores closer than 1e-12 are mathematical ties (e.g. permuted rows).
  std::sort(all.begin(), all.end(), [](const Entry& a, const Entry& b) {
    if (fabsl(a.score - b.score) > 1e-12L) return a.score < b.score;
    if (a.layer != b.layer) return a.layer < b.layer;
    return a.index < b.index;
  });
  const long double exact =
      static_cast<long double>(cfg.k_percent) * static_cast<long double>(stats.n_layers) *
      static_cast<long double>(stats.d_ff);
  const auto budget = static_cast<std::size_t>(floorl(exact + 1e-9L));
  std::map<std::string, std::set<Neuron>> out;
  for (const auto& lang : stats.languages) out[lang];
  for (std::size_t r = 0; r < std::min(budget, all.size()); ++r)
    for (std::size_t k = 0; k < L; ++k)
      if (all[r].p[k] >= cfg.tau_selectivity)
        out[stats.languages[k]].insert({all[r].layer, all[r].index});
  return out;
}

// Random stats with a mix of silent, diffuse, language-specific,
// multi-language and duplicated/permuted rows, so that thresholds, ties
// and multi-membership are all exercised.
inline ActivationStats random_stats(Rng& rng, int layers, int dff, std::size_t langs) {
  std::vector<std::string> names;
  for (std::size_t k = 0; k < langs; ++k) names.push_back("l" + std::to_string(k));
  ActivationStats s(layers, dff, names);
  const bool equal_totals = rng.uniform() < 0.5;
  const std::uint64_t common = 50 + rng.below(150);
  for (auto& t : s.totals) t = equal_totals ? common : 50 + rng.below(150);
  std::vector<std::uint64_t> previous;
  for (int l = 0; l < layers; ++l)
    for (int j = 0; j < dff; ++j) {
      const std::size_t off = s.offset(l, j);
      const double kind = rng.uniform();
      std::vector<std::uint64_t> row(langs);
      if (kind < 0.1) {
        // silent
      } else if (kind < 0.15 && !previous.empty()) {
        row = previous;
        if (equal_totals) rng.shuffle(row);
      } else {
        for (std::size_t k = 0; k < langs; ++k) {
          const std::uint64_t t = s.totals[k];
          const double r = rng.uniform();
          if (r < 0.25) row[k] = t - rng.below(t / 10 + 1);  // near-always firing
          else if (r < 0.5) row[k] = 0;
          else row[k] = rng.below(t + 1);
        }
      }
      for (std::size_t k = 0; k < langs; ++k) row[k] = std::min(row[k], s.totals[k]);
      for (std::size_t k = 0; k < langs; ++k) s.counts[off + k] = row[k];
      previous = row;
    }
  return s;
}

inline SelectionConfig random_selection_config(Rng& rng) {
  SelectionConfig c;
  const double ks[] = {0.01, 0.05, 0.1, 0.29, 0.5, 1.0};
  c.k_percent = rng.uniform() < 0.5 ? ks[rng.below(6)] : 0.001 + 0.999 * rng.uniform();
  const double taus[] = {0.0, 0.5, 0.9, 0.95, 1.0};
  c.tau_activity = rng.uniform() < 0.5 ? taus[rng.below(5)] : rng.uniform();
  c.tau_selectivity = rng.uniform() < 0.5 ? taus[rng.below(5)] : rng.uniform();
  return c;
}

}  // namespace snf::testing
