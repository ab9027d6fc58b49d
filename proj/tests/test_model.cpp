#include <cmath>
#include <numbers>

#include "doctest.h"
#include "snf/error.hpp"
#include "snf/model.hpp"
#include "test_util.hpp"

using namespace snf;
using namespace snf::testing;

namespace {

// Straight-line forward pass in double precision with plain loops, written
// independently of the kernel-based implementation.
std::vector<std::vector<double>> naive_forward(const ModelBundle& m,
                                               const std::vector<TokenId>& tokens) {
  const auto& c = m.config;
  const std::size_t n = tokens.size(), d = c.d_model, f = c.d_ff, v = c.vocab_size;
  const std::size_t heads = c.n_heads, hd = d / heads;
  using Mat = std::vector<std::vector<double>>;
  auto mat = [](std::size_t r, std::size_t cols) { return Mat(r, std::vector<double>(cols, 0.0)); };
  auto proj = [&](const Mat& x, const Matrix<float>& w) {
    Mat y = mat(x.size(), w.cols);
    for (std::size_t t = 0; t < x.size(); ++t)
      for (std::size_t o = 0; o < w.cols; ++o) {
        double s = 0.0;
        for (std::size_t i = 0; i < w.rows; ++i) s += x[t][i] * w(i, o);
        y[t][o] = s;
      }
    return y;
  };
  auto norm = [&](const Mat& x, const Matrix<float>& g) {
    Mat y = mat(x.size(), d);
    for (std::size_t t = 0; t < x.size(); ++t) {
      double ss = 0.0;
      for (double e : x[t]) ss += e * e;
      const double r = 1.0 / std::sqrt(ss / double(d) + 1e-5);
      for (std::size_t i = 0; i < d; ++i) y[t][i] = x[t][i] * r * g.data[i];
    }
    return y;
  };
  auto rope = [&](Mat& x) {
    for (std::size_t t = 0; t < n; ++t)
      for (std::size_t h = 0; h < heads; ++h)
        for (std::size_t i = 0; i < hd / 2; ++i) {
          const double ang = double(t) * std::pow(10000.0, -2.0 * double(i) / double(hd));
          double& a = x[t][h * hd + 2 * i];
          double& b = x[t][h * hd + 2 * i + 1];
          const double a0 = a, b0 = b;
          a = a0 * std::cos(ang) - b0 * std::sin(ang);
          b = a0 * std::sin(ang) + b0 * std::cos(ang);
        }
  };

  Mat x = mat(n, d);
  for (std::size_t t = 0; t < n; ++t)
    for (std::size_t i = 0; i < d; ++i) x[t][i] = m.params.token_embedding(tokens[t], i);
  for (const auto& L : m.params.layers) {
    Mat xn = norm(x, L.attn_norm);
    Mat q = proj(xn, L.wq), k = proj(xn, L.wk), val = proj(xn, L.wv);
    rope(q);
    rope(k);
    Mat att = mat(n, d);
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t t = 0; t < n; ++t) {
        std::vector<double> s(t + 1);
        double mx = -1e300;
        for (std::size_t u = 0; u <= t; ++u) {
          double dot = 0.0;
          for (std::size_t i = 0; i < hd; ++i) dot += q[t][h * hd + i] * k[u][h * hd + i];
          s[u] = dot / std::sqrt(double(hd));
          mx = std::max(mx, s[u]);
        }
        double z = 0.0;
        for (auto& e : s) z += (e = std::exp(e - mx));
        for (std::size_t u = 0; u <= t; ++u)
          for (std::size_t i = 0; i < hd; ++i) att[t][h * hd + i] += s[u] / z * val[u][h * hd + i];
      }
    Mat o = proj(att, L.wo);
    for (std::size_t t = 0; t < n; ++t)
      for (std::size_t i = 0; i < d; ++i) x[t][i] += o[t][i];
    Mat xn2 = norm(x, L.ffn_norm);
    Mat g = proj(xn2, L.gate), u = proj(xn2, L.up);
    Mat hmid = mat(n, f);
    for (std::size_t t = 0; t < n; ++t)
      for (std::size_t j = 0; j < f; ++j)
        hmid[t][j] = g[t][j] / (1.0 + std::exp(-g[t][j])) * u[t][j];
    Mat dn = proj(hmid, L.down);
    for (std::size_t t = 0; t < n; ++t)
      for (std::size_t i = 0; i < d; ++i) x[t][i] += dn[t][i];
  }
  Mat logits = proj(norm(x, m.params.final_norm), m.params.unembedding);
  (void)v;
  return logits;
}

}  // namespace

TEST_CASE("forward: zero unembedding gives zero logits") {
  auto model = init_model<float>(tiny_config());
  std::fill(model.params.unembedding.data.begin(), model.params.unembedding.data.end(), 0.0f);
  Rng rng(1);
  const auto tokens = random_tokens(rng, 10, kByteVocabSize);
  const auto out = forward(model, std::span<const TokenId>(tokens));
  CHECK(out.logits.rows == 10);
  CHECK(out.logits.cols == std::size_t(kByteVocabSize));
  for (float x : out.logits.data) CHECK(x == 0.0f);
  CHECK_FALSE(out.trace.has_value());
}

TEST_CASE("forward: deterministic") {
  const auto model = lively_model<float>(tiny_config(32, 2, 64, 4), 5.0);
  Rng rng(2);
  const auto tokens = random_tokens(rng, 16, kByteVocabSize);
  const auto a = forward(model, std::span<const TokenId>(tokens), true);
  const auto b = forward(model, std::span<const TokenId>(tokens), true);
  CHECK(a.logits == b.logits);
  CHECK(a.trace->gate_pre == b.trace->gate_pre);
}

TEST_CASE("forward: matches naive re-implementation") {
  const auto cfg = tiny_config(32, 2, 64, 4, kByteVocabSize, 24, 11);
  const auto model = lively_model<float>(cfg, 5.0);
  Rng rng(3);
  for (int trial = 0; trial < 3; ++trial) {
    const auto tokens = random_tokens(rng, 20, kByteVocabSize);
    const auto got = forward(model, std::span<const TokenId>(tokens)).logits;
    const auto want = naive_forward(model, tokens);
    double max_diff = 0.0, max_ref = 0.0;
    for (std::size_t t = 0; t < got.rows; ++t)
      for (std::size_t v = 0; v < got.cols; ++v) {
        max_diff = std::max(max_diff, std::fabs(double(got(t, v)) - want[t][v]));
        max_ref = std::max(max_ref, std::fabs(want[t][v]));
      }
    CHECK(max_diff / max_ref < 1e-5);
  }
}

TEST_CASE("forward: trace shapes and gate sign property") {
  const auto cfg = tiny_config(32, 2, 64, 4);
  const auto model = lively_model<float>(cfg, 5.0);
  Rng rng(4);
  const auto tokens = random_tokens(rng, 12, kByteVocabSize);
  const auto out = forward(model, std::span<const TokenId>(tokens), true);
  REQUIRE(out.trace.has_value());
  CHECK(out.trace->gate_pre.size() == 2);
  CHECK(out.trace->post_ffn.size() == 2);
  CHECK(out.trace->gate_pre[0].rows == 12);
  CHECK(out.trace->gate_pre[0].cols == 64);
  CHECK(out.trace->post_ffn[1].cols == 32);
  CHECK(out.trace->logits == out.logits);
  for (const auto& z : out.trace->gate_pre)
    for (float x : z.data) CHECK((silu(x) > 0.0f) == (x > 0.0f));
}

TEST_CASE("silu sign property on 10^6 random values") {
  Rng rng(5);
  std::size_t mismatches = 0;
  for (int i = 0; i < 1'000'000; ++i) {
    const double scale = std::pow(10.0, rng.uniform() * 8.0 - 6.0);
    const double z = (rng.uniform() - 0.5) * scale;
    if ((silu(z) > 0.0) != (z > 0.0)) ++mismatches;
    const auto zf = static_cast<float>(z);
    if ((silu(zf) > 0.0f) != (zf > 0.0f)) ++mismatches;
  }
  CHECK(mismatches == 0);
  CHECK(silu(0.0) == 0.0);
}

TEST_CASE("forward: causality") {
  const auto model = lively_model<float>(tiny_config(32, 2, 64, 4), 5.0);
  Rng rng(6);
  auto tokens = random_tokens(rng, 14, kByteVocabSize);
  const auto base = forward(model, std::span<const TokenId>(tokens)).logits;
  tokens[9] = (tokens[9] + 17) % kByteVocabSize;
  tokens[13] = (tokens[13] + 3) % kByteVocabSize;
  const auto changed = forward(model, std::span<const TokenId>(tokens)).logits;
  for (std::size_t t = 0; t < 9; ++t)
    for (std::size_t v = 0; v < base.cols; ++v) CHECK(base(t, v) == changed(t, v));
  bool differs = false;
  for (std::size_t v = 0; v < base.cols; ++v) differs |= base(9, v) != changed(9, v);
  CHECK(differs);
}

TEST_CASE("forward: input validation") {
  const auto model = init_model<float>(tiny_config());
  std::vector<TokenId> too_long(17, 1);
  CHECK_THROWS_AS(forward(model, std::span<const TokenId>(too_long)), DataError);
  std::vector<TokenId> bad{1, 2, kByteVocabSize};
  CHECK_THROWS_AS(forward(model, std::span<const TokenId>(bad)), DataError);
  std::vector<TokenId> negative{1, -1};
  CHECK_THROWS_AS(forward(model, std::span<const TokenId>(negative)), DataError);
  std::vector<TokenId> empty;
  CHECK_THROWS_AS(forward(model, std::span<const TokenId>(empty)), DataError);
}

TEST_CASE("loss: uniform logits give ln V") {
  auto model = init_model<float>(tiny_config(16, 2, 32, 2, 16));
  std::fill(model.params.unembedding.data.begin(), model.params.unembedding.data.end(), 0.0f);
  Rng rng(7);
  std::vector<std::vector<TokenId>> batch{random_tokens(rng, 9, 16), random_tokens(rng, 5, 16)};
  const auto lg = loss_and_grads(model, batch);
  CHECK(lg.positions == 12);
  CHECK(lg.loss == doctest::Approx(std::log(16.0)).epsilon(1e-12));
  CHECK(lg.loss == doctest::Approx(2.7726).epsilon(1e-4));
}

TEST_CASE("loss: errors") {
  const auto model = init_model<float>(tiny_config());
  CHECK_THROWS_AS(loss_and_grads(model, {}), DataError);
  CHECK_THROWS_AS(loss_and_grads(model, {{5}}), DataError);
}

TEST_CASE("gradients: central finite differences (float64)") {
  const auto cfg = tiny_config(16, 2, 32, 2, kByteVocabSize, 16, 3);
  const auto model = lively_model<double>(cfg);
  Rng rng(8);
  std::vector<std::vector<TokenId>> batch{random_tokens(rng, 7, kByteVocabSize),
                                          random_tokens(rng, 5, kByteVocabSize)};
  const auto r = finite_difference_check(model, batch);
  INFO("worst tensor " << r.worst_tensor << " rel err " << r.max_relative_error);
  CHECK(r.entries_checked == model.params.parameter_count());
  CHECK(r.max_relative_error < 1e-5);
}

TEST_CASE("gradients: unused embedding rows are exactly zero") {
  const auto model = lively_model<float>(tiny_config());
  std::vector<std::vector<TokenId>> batch{{256, 10, 20, 30}, {256, 10, 40}};
  const auto lg = loss_and_grads(model, batch);
  const auto& g = lg.grads.token_embedding;
  for (TokenId absent : {0, 11, 41, 255})
    for (std::size_t i = 0; i < g.cols; ++i) CHECK(g(std::size_t(absent), i) == 0.0f);
  bool any = false;
  for (std::size_t i = 0; i < g.cols; ++i) any |= g(10, i) != 0.0f;
  CHECK(any);
}

TEST_CASE("gradients: bit-stable across runs") {
  const auto model = lively_model<float>(tiny_config(32, 2, 64, 4), 5.0);
  Rng rng(9);
  std::vector<std::vector<TokenId>> batch{random_tokens(rng, 12, kByteVocabSize),
                                          random_tokens(rng, 12, kByteVocabSize)};
  const auto a = loss_and_grads(model, batch);
  const auto b = loss_and_grads(model, batch);
  CHECK(a.loss == b.loss);
  CHECK(a.grads == b.grads);
}

TEST_CASE("record_ffn_firings") {
  ForwardTrace<float> trace;
  SUBCASE("all positive") {
    Matrix<float> z(5, 3);
    std::fill(z.data.begin(), z.data.end(), 0.25f);
    trace.gate_pre = {z, z};
    const auto fc = record_ffn_firings(trace);
    CHECK(fc.positions == 5);
    for (auto c : fc.counts) CHECK(c == 5);
  }
  SUBCASE("all negative") {
    Matrix<float> z(5, 3);
    std::fill(z.data.begin(), z.data.end(), -1.0f);
    trace.gate_pre = {z};
    const auto fc = record_ffn_firings(trace);
    for (auto c : fc.counts) CHECK(c == 0);
  }
  SUBCASE("hand-built 3 tokens x 4 neurons") {
    Matrix<float> z(3, 4);
    z.data = {0.5f, -0.1f, 0.0f, 2.0f,   //
              -0.3f, 0.2f, 0.1f, 1.0f,   //
              0.7f, -0.9f, -0.0f, -1.0f};
    trace.gate_pre = {z};
    const auto fc = record_ffn_firings(trace);
    CHECK(fc.positions == 3);
    // Zero is not a firing: SiLU(0) = 0.
    CHECK(fc.counts == std::vector<std::uint64_t>{2, 1, 1, 2});
    const auto skipped = record_ffn_firings(trace, 1);
    CHECK(skipped.positions == 2);
    CHECK(skipped.counts == std::vector<std::uint64_t>{1, 1, 1, 1});
  }
  SUBCASE("malformed trace") {
    CHECK_THROWS_AS(record_ffn_firings(trace), DataError);
  }
}

TEST_CASE("config validation") {
  auto c = tiny_config();
  c.n_heads = 3;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = tiny_config();
  c.vocab_size = 1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = tiny_config();
  c.max_seq_len = 1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK(config_from_json(config_to_json(tiny_config())) == tiny_config());
}
