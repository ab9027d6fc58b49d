#include <cmath>
#include <set>

#include "doctest.h"
#include "snf/analysis.hpp"
#include "snf/error.hpp"
#include "test_util.hpp"

using namespace snf;
using namespace snf::testing;

namespace {

SubnetworkSpec make_spec(const std::string& lang, std::vector<Neuron> neurons,
                         const std::string& fp = "00000000000000aa") {
  SubnetworkSpec s;
  s.lang_id = lang;
  std::sort(neurons.begin(), neurons.end());
  s.neurons = std::move(neurons);
  s.model_fingerprint = fp;
  return s;
}

double naive_cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double d = 0, x = 0, y = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    d += a[i] * b[i];
    x += a[i] * a[i];
    y += b[i] * b[i];
  }
  return d / std::sqrt(x * y);
}

}  // namespace

TEST_CASE("layer histogram") {
  CHECK(layer_histogram(make_spec("a", {}), 3) == std::vector<std::size_t>{0, 0, 0});
  CHECK(layer_histogram(make_spec("a", {{0, 1}, {0, 4}, {0, 9}}), 3) ==
        std::vector<std::size_t>{3, 0, 0});

  Rng rng(1);
  std::set<Neuron> picked;
  while (picked.size() < 100) picked.insert({int(rng.below(6)), int(rng.below(64))});
  const auto spec = make_spec("a", {picked.begin(), picked.end()});
  const auto h = layer_histogram(spec, 6);
  std::vector<std::size_t> direct(6, 0);
  for (const auto& n : picked) ++direct[std::size_t(n.layer)];
  CHECK(h == direct);
  std::size_t sum = 0;
  for (auto c : h) sum += c;
  CHECK(sum == 100);

  CHECK(histogram_csv({2, 0}) == "layer,count\n0,2\n1,0\n");
  CHECK_THROWS_AS(layer_histogram(make_spec("a", {{3, 0}}), 3), DataError);
}

TEST_CASE("overlap: identical, disjoint and half-shared specs") {
  const auto a = make_spec("a", {{0, 1}, {1, 2}});
  const auto b = make_spec("b", {{0, 3}, {1, 4}});
  const auto m = overlap({a, a, b});
  CHECK(m.jaccard[0][1] == 1.0);
  CHECK(m.jaccard[0][2] == 0.0);
  CHECK(m.intersection[0][1] == 2);

  // Each spec has 2n neurons, n shared: |n| / |3n| = 1/3.
  const int n = 7;
  std::vector<Neuron> x, y;
  for (int i = 0; i < n; ++i) {
    x.push_back({0, i});
    y.push_back({0, i});
  }
  for (int i = 0; i < n; ++i) {
    x.push_back({1, i});
    y.push_back({2, i});
  }
  const auto h = overlap({make_spec("x", x), make_spec("y", y)});
  CHECK(h.intersection[0][1] == std::size_t(n));
  CHECK(h.jaccard[0][1] == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

  const auto e = overlap({make_spec("e", {}), make_spec("f", {})});
  CHECK(e.jaccard[0][0] == 0.0);

  CHECK_THROWS_AS(overlap({a, make_spec("z", {}, "00000000000000bb")}), ConsistencyError);
}

TEST_CASE("overlap matrix is symmetric with Jaccard in [0, 1]") {
  Rng rng(5);
  std::vector<SubnetworkSpec> specs;
  for (int k = 0; k < 5; ++k) {
    std::set<Neuron> s;
    const std::size_t size = 1 + rng.below(30);
    while (s.size() < size) s.insert({int(rng.below(3)), int(rng.below(20))});
    specs.push_back(make_spec("l" + std::to_string(k), {s.begin(), s.end()}));
  }
  const auto m = overlap(specs);
  for (std::size_t a = 0; a < 5; ++a) {
    CHECK(m.jaccard[a][a] == 1.0);
    for (std::size_t b = 0; b < 5; ++b) {
      CHECK(m.jaccard[a][b] == m.jaccard[b][a]);
      CHECK(m.intersection[a][b] == m.intersection[b][a]);
      CHECK(m.jaccard[a][b] >= 0.0);
      CHECK(m.jaccard[a][b] <= 1.0);
    }
  }
  const auto csv = overlap_csv(m);
  CHECK(csv.rfind("lang_a,lang_b,intersection,jaccard\n", 0) == 0);
  CHECK(csv.find("l0,l0," + std::to_string(specs[0].neurons.size()) + ",1\n") != std::string::npos);
}

TEST_CASE("weight deltas: identical, perturbed and masked") {
  const auto cfg = tiny_config(16, 2, 32);
  const auto before = init_model<float>(cfg);

  const auto same = weight_deltas(before, before);
  CHECK(same.rows.size() == 6);
  for (const auto& r : same.rows) {
    CHECK(r.mean == 0.0);
    CHECK(r.max == 0.0);
    CHECK(r.std == 0.0);
  }

  auto after = before;
  after.params.layers[1].down(3, 5) += 0.5f;
  const auto d = weight_deltas(before, after);
  for (const auto& r : d.rows) {
    if (r.layer == 1 && r.projection == "down") {
      CHECK(r.max == doctest::Approx(0.5).epsilon(1e-6));
      CHECK(r.count == 32u * 16u);
      CHECK(r.mean == doctest::Approx(r.max / double(r.count)).epsilon(1e-12));
    } else {
      CHECK(r.max == 0.0);
    }
  }

  const auto mask = build_mask(cfg, {{1, 3}}, FinetuneMode::kTarget);
  const auto masked = weight_deltas(before, after, &mask);
  CHECK(masked.scope == DeltaScope::kMaskedOnly);
  const auto summary = mask.summary();
  for (const auto& r : masked.rows)
    for (const auto& s : summary)
      if (s.layer == r.layer && s.projection == r.projection) CHECK(r.count == s.trainable);

  auto other = tiny_config(16, 2, 32);
  other.d_ff = 16;
  CHECK_THROWS_AS(weight_deltas(before, init_model<float>(other)), ConsistencyError);
}

TEST_CASE("delta quantiles interpolate linearly") {
  const auto cfg = tiny_config(16, 1, 16);
  const auto before = init_model<float>(cfg);
  auto after = before;
  // Gate deltas: 0 everywhere except four entries 1, 2, 3, 4.
  for (int i = 0; i < 4; ++i) after.params.layers[0].gate.data[std::size_t(i)] += float(i + 1);
  const auto d = weight_deltas(before, after);
  const auto& g = d.rows[0];
  REQUIRE(g.projection == "gate");
  CHECK(g.count == 256);
  CHECK(g.q75 == 0.0);
  CHECK(g.max == doctest::Approx(4.0).epsilon(1e-6));
  const std::string csv = deltas_csv(d);
  CHECK(csv.rfind("layer,projection,count,mean,std,q25,q50,q75,max\n", 0) == 0);
}

TEST_CASE("similarity: self pairs are 1 and zero states are flagged") {
  const auto cfg = tiny_config(16, 2, 32, 2, kByteVocabSize, 16);
  const auto model = lively_model<float>(cfg, 1.0, 1.0);
  const std::map<std::string, std::vector<std::string>> bundle{
      {"a", {"hello world", "abc"}}, {"b", {"hello world", "abc"}}};
  const auto r = cross_lingual_similarity(model, bundle, {"a", "b"});
  REQUIRE(r.cosine.size() == 2);
  for (const auto& layer : r.cosine) CHECK(layer[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(r.degenerate == 0);

  auto zero = model;
  for (auto& l : zero.params.layers) {
    std::fill(l.wo.data.begin(), l.wo.data.end(), 0.0f);
    std::fill(l.down.data.begin(), l.down.data.end(), 0.0f);
  }
  std::fill(zero.params.token_embedding.data.begin(), zero.params.token_embedding.data.end(), 0.0f);
  const auto z = cross_lingual_similarity(zero, bundle, {"a", "b"});
  CHECK(z.degenerate > 0);
  for (const auto& layer : z.cosine) CHECK(layer[0] == 0.0);

  CHECK_THROWS_AS(cross_lingual_similarity(model, {{"a", {"x"}}, {"b", {"x", "y"}}}, {"a", "b"}),
                  DataError);
  CHECK_THROWS_AS(cross_lingual_similarity(model, bundle, {"a", "c"}), DataError);
}

TEST_CASE("similarity matches a naive recomputation") {
  const auto cfg = tiny_config(16, 2, 32, 2, kByteVocabSize, 16);
  const auto model = lively_model<float>(cfg, 1.0, 1.0);
  const std::map<std::string, std::vector<std::string>> bundle{
      {"a", {"ABCDEFG", "HIJKLMNOPQRSTUVWXYZ"}}, {"b", {"abcdefgh", "xyz"}}, {"c", {"!!", "@#"}}};
  const auto r = cross_lingual_similarity(model, bundle, {"a", "b", "c"});
  REQUIRE(r.pairs.size() == 3);
  for (int layer = 0; layer < 2; ++layer)
    for (std::size_t p = 0; p < 3; ++p) {
      double sum = 0.0;
      for (std::size_t s = 0; s < 2; ++s) {
        std::vector<std::vector<double>> pooled;
        for (const std::string* lang : {&r.pairs[p].first, &r.pairs[p].second}) {
          std::string text = bundle.at(*lang)[s];
          if (text.size() > 15) text.resize(15);
          std::vector<TokenId> tokens{kBosToken};
          for (unsigned char ch : text) tokens.push_back(ch);
          const auto trace = *forward(model, std::span<const TokenId>(tokens), true).trace;
          const auto& h = trace.post_ffn[std::size_t(layer)];
          std::vector<double> v(16, 0.0);
          for (std::size_t t = 1; t < h.rows; ++t)
            for (std::size_t i = 0; i < 16; ++i) v[i] += h(t, i) / double(h.rows - 1);
          pooled.push_back(v);
        }
        sum += naive_cosine(pooled[0], pooled[1]);
      }
      CHECK(std::fabs(r.cosine[std::size_t(layer)][p] - sum / 2.0) < 1e-6);
      CHECK(r.cosine[std::size_t(layer)][p] >= -1.0);
      CHECK(r.cosine[std::size_t(layer)][p] <= 1.0);
    }
  const std::string csv = similarity_csv(r);
  CHECK(csv.rfind("layer,lang_a,lang_b,mean_cosine\n", 0) == 0);
  // 2 layers x 3 pairs + header
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 7);
}

TEST_CASE("last-token pooling") {
  const auto cfg = tiny_config(16, 2, 32, 2, kByteVocabSize, 16);
  const auto model = lively_model<float>(cfg, 1.0, 1.0);
  const auto p = pooled_states(model, "abc", Pooling::kLastToken);
  const std::vector<TokenId> tokens{kBosToken, 'a', 'b', 'c'};
  const auto trace = *forward(model, std::span<const TokenId>(tokens), true).trace;
  for (std::size_t i = 0; i < 16; ++i) CHECK(p[1][i] == double(trace.post_ffn[1](3, i)));
}
