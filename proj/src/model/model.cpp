#include "snf/model.hpp"

#include <algorithm>
#include <cmath>

#include "json.hpp"

#include "snf/error.hpp"
#include "snf/kernels.hpp"
#include "snf/rng.hpp"

namespace snf {

namespace {

constexpr double kRmsEps = 1e-5;
constexpr double kRopeBase = 10000.0;

}  // namespace

std::vector<TokenId> encode_bytes(std::span<const std::uint8_t> bytes,
                                  bool prepend_bos) {
  std::vector<TokenId> out;
  out.reserve(bytes.size() + 1);
  if (prepend_bos) out.push_back(kBosToken);
  for (std::uint8_t b : bytes) out.push_back(static_cast<TokenId>(b));
  return out;
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("model config: " + msg); };
  if (d_model < 1) fail("d_model must be positive");
  if (n_layers < 1) fail("n_layers must be positive");
  if (n_heads < 1) fail("n_heads must be positive");
  if (d_ff < 1) fail("d_ff must be positive");
  if (vocab_size < 2) fail("vocab_size must be at least 2");
  if (max_seq_len < 2) fail("max_seq_len must be at least 2");
  if (d_model % n_heads != 0) fail("d_model must be divisible by n_heads");
  if (head_dim() % 2 != 0) fail("head dimension must be even for rotary embedding");
}

std::string config_to_json(const ModelConfig& cfg) {
  nlohmann::ordered_json j;
  j["d_model"] = cfg.d_model;
  j["n_layers"] = cfg.n_layers;
  j["n_heads"] = cfg.n_heads;
  j["d_ff"] = cfg.d_ff;
  j["vocab_size"] = cfg.vocab_size;
  j["max_seq_len"] = cfg.max_seq_len;
  j["seed"] = cfg.seed;
  return j.dump();
}

ModelConfig config_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config JSON: ") + e.what());
  }
  ModelConfig cfg;
  try {
    cfg.d_model = j.at("d_model").get<int>();
    cfg.n_layers = j.at("n_layers").get<int>();
    cfg.n_heads = j.at("n_heads").get<int>();
    cfg.d_ff = j.at("d_ff").get<int>();
    cfg.vocab_size = j.at("vocab_size").get<int>();
    cfg.max_seq_len = j.at("max_seq_len").get<int>();
    cfg.seed = j.value("seed", 0u);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config JSON: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

std::string tensor_name(TensorId id) {
  std::string base;
  switch (id.kind) {
    case TensorKind::kTokenEmbedding: return "token_embedding";
    case TensorKind::kFinalNorm: return "final_norm";
    case TensorKind::kUnembedding: return "unembedding";
    case TensorKind::kAttnNorm: base = "attn_norm"; break;
    case TensorKind::kQuery: base = "wq"; break;
    case TensorKind::kKey: base = "wk"; break;
    case TensorKind::kValue: base = "wv"; break;
    case TensorKind::kAttnOutput: base = "wo"; break;
    case TensorKind::kFfnNorm: base = "ffn_norm"; break;
    case TensorKind::kGate: base = "gate"; break;
    case TensorKind::kUp: base = "up"; break;
    case TensorKind::kDown: base = "down"; break;
  }
  return "layers." + std::to_string(id.layer) + "." + base;
}

bool is_ffn_projection(TensorKind kind) {
  return kind == TensorKind::kGate || kind == TensorKind::kUp ||
         kind == TensorKind::kDown;
}

template <typename T>
ModelParams<T> ModelParams<T>::zeros(const ModelConfig& cfg) {
  const auto d = static_cast<std::size_t>(cfg.d_model);
  const auto f = static_cast<std::size_t>(cfg.d_ff);
  const auto v = static_cast<std::size_t>(cfg.vocab_size);
  ModelParams p;
  p.token_embedding = Matrix<T>(v, d);
  p.layers.resize(static_cast<std::size_t>(cfg.n_layers));
  for (auto& l : p.layers) {
    l.attn_norm = Matrix<T>(1, d);
    l.wq = Matrix<T>(d, d);
    l.wk = Matrix<T>(d, d);
    l.wv = Matrix<T>(d, d);
    l.wo = Matrix<T>(d, d);
    l.ffn_norm = Matrix<T>(1, d);
    l.gate = Matrix<T>(d, f);
    l.up = Matrix<T>(d, f);
    l.down = Matrix<T>(f, d);
  }
  p.final_norm = Matrix<T>(1, d);
  p.unembedding = Matrix<T>(d, v);
  return p;
}

template <typename T>
std::size_t ModelParams<T>::parameter_count() const {
  std::size_t n = 0;
  for_each([&](TensorId, const Matrix<T>& m) { n += m.size(); });
  return n;
}

template <typename T>
BasicModel<T> init_model(const ModelConfig& cfg) {
  cfg.validate();
  BasicModel<T> model{cfg, ModelParams<T>::zeros(cfg)};
  Rng rng(cfg.seed);
  const double base_std = 0.02;
  const double out_std = base_std / std::sqrt(2.0 * cfg.n_layers);
  model.params.for_each([&](TensorId id, Matrix<T>& m) {
    switch (id.kind) {
      case TensorKind::kAttnNorm:
      case TensorKind::kFfnNorm:
      case TensorKind::kFinalNorm:
        std::fill(m.data.begin(), m.data.end(), T(1));
        return;
      default:
        break;
    }
    const double std_dev = (id.kind == TensorKind::kAttnOutput ||
                            id.kind == TensorKind::kDown)
                               ? out_std
                               : base_std;
    for (auto& x : m.data) x = static_cast<T>(rng.normal() * std_dev);
  });
  return model;
}

template <typename To, typename From>
BasicModel<To> convert_model(const BasicModel<From>& model) {
  BasicModel<To> out{model.config, ModelParams<To>::zeros(model.config)};
  std::vector<const Matrix<From>*> src;
  model.params.for_each([&](TensorId, const Matrix<From>& m) { src.push_back(&m); });
  std::size_t idx = 0;
  out.params.for_each([&](TensorId, Matrix<To>& m) {
    const auto& s = *src[idx++];
    for (std::size_t i = 0; i < m.size(); ++i) m.data[i] = static_cast<To>(s.data[i]);
  });
  return out;
}

template <typename T>
T silu(T z) {
  return z / (T(1) + std::exp(-z));
}

namespace {

template <typename T>
struct RopeTable {
  std::vector<T> cos, sin;  // max_seq_len x head_dim/2
  std::size_t half = 0;

  explicit RopeTable(const ModelConfig& cfg) {
    half = static_cast<std::size_t>(cfg.head_dim() / 2);
    const auto n = static_cast<std::size_t>(cfg.max_seq_len);
    cos.resize(n * half);
    sin.resize(n * half);
    for (std::size_t t = 0; t < n; ++t)
      for (std::size_t i = 0; i < half; ++i) {
        const double freq =
            std::pow(kRopeBase, -2.0 * double(i) / double(cfg.head_dim()));
        const double angle = double(t) * freq;
        cos[t * half + i] = static_cast<T>(std::cos(angle));
        sin[t * half + i] = static_cast<T>(std::sin(angle));
      }
  }
};

template <typename T>
const RopeTable<T>& rope_table(const ModelConfig& cfg) {
  thread_local ModelConfig cached_cfg{};
  thread_local std::optional<RopeTable<T>> table;
  if (!table || !(cached_cfg == cfg)) {
    table.emplace(cfg);
    cached_cfg = cfg;
  }
  return *table;
}

// Rotates (or, with inverse, un-rotates) pairs (2i, 2i+1) of every head.
template <typename T>
void apply_rope(Matrix<T>& x, const ModelConfig& cfg, bool inverse) {
  const auto& rope = rope_table<T>(cfg);
  const auto hd = static_cast<std::size_t>(cfg.head_dim());
  const auto heads = static_cast<std::size_t>(cfg.n_heads);
  for (std::size_t t = 0; t < x.rows; ++t) {
    T* row = x.row(t);
    const T* c = rope.cos.data() + t * rope.half;
    const T* s = rope.sin.data() + t * rope.half;
    for (std::size_t h = 0; h < heads; ++h) {
      T* v = row + h * hd;
      for (std::size_t i = 0; i < rope.half; ++i) {
        const T a = v[2 * i], b = v[2 * i + 1];
        const T sn = inverse ? -s[i] : s[i];
        v[2 * i] = a * c[i] - b * sn;
        v[2 * i + 1] = a * sn + b * c[i];
      }
    }
  }
}

// y = x * rsqrt(mean(x^2) + eps) * g; stores the inverse rms per row.
template <typename T>
void rms_norm(const Matrix<T>& x, const Matrix<T>& g, Matrix<T>& y,
              std::vector<T>& inv_rms) {
  y = Matrix<T>(x.rows, x.cols);
  inv_rms.resize(x.rows);
  for (std::size_t t = 0; t < x.rows; ++t) {
    const T* xr = x.row(t);
    double ss = 0.0;
    for (std::size_t i = 0; i < x.cols; ++i) ss += double(xr[i]) * double(xr[i]);
    const T r = static_cast<T>(1.0 / std::sqrt(ss / double(x.cols) + kRmsEps));
    inv_rms[t] = r;
    T* yr = y.row(t);
    for (std::size_t i = 0; i < x.cols; ++i) yr[i] = xr[i] * r * g.data[i];
  }
}

// Accumulates into dx and dg the gradient of rms_norm given dy.
template <typename T>
void rms_norm_backward(const Matrix<T>& x, const Matrix<T>& g,
                       const std::vector<T>& inv_rms, const Matrix<T>& dy,
                       Matrix<T>& dx, Matrix<T>& dg) {
  const std::size_t n = x.cols;
  for (std::size_t t = 0; t < x.rows; ++t) {
    const T* xr = x.row(t);
    const T* dyr = dy.row(t);
    T* dxr = dx.row(t);
    const T r = inv_rms[t];
    T dot = 0;
    for (std::size_t i = 0; i < n; ++i) {
      dg.data[i] += dyr[i] * xr[i] * r;
      dot += dyr[i] * g.data[i] * xr[i];
    }
    const T coeff = r * r * r * dot / static_cast<T>(n);
    for (std::size_t i = 0; i < n; ++i)
      dxr[i] += r * dyr[i] * g.data[i] - coeff * xr[i];
  }
}

template <typename T>
void matmul(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>& c) {
  c = Matrix<T>(a.rows, b.cols);
  kernels::active<T>().gemm_nn(a.data.data(), b.data.data(), c.data.data(),
                               a.rows, a.cols, b.cols);
}

// c += a * b^T
template <typename T>
void matmul_nt_acc(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>& c) {
  kernels::active<T>().gemm_nt(a.data.data(), b.data.data(), c.data.data(),
                               a.rows, a.cols, b.rows);
}

// c += a^T * b
template <typename T>
void matmul_tn_acc(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>& c) {
  kernels::active<T>().gemm_tn(a.data.data(), b.data.data(), c.data.data(),
                               a.cols, a.rows, b.cols);
}

template <typename T>
Matrix<T> head_slice(const Matrix<T>& x, std::size_t head, std::size_t hd) {
  Matrix<T> out(x.rows, hd);
  for (std::size_t t = 0; t < x.rows; ++t)
    std::copy_n(x.row(t) + head * hd, hd, out.row(t));
  return out;
}

template <typename T>
void head_store(const Matrix<T>& src, Matrix<T>& x, std::size_t head,
                std::size_t hd) {
  for (std::size_t t = 0; t < x.rows; ++t)
    std::copy_n(src.row(t), hd, x.row(t) + head * hd);
}

template <typename T>
struct LayerCache {
  Matrix<T> x_in;
  std::vector<T> inv_rms1;
  Matrix<T> xn1;
  Matrix<T> q, k, v;            // q and k after rotary embedding
  std::vector<Matrix<T>> probs;  // per head, tokens x tokens
  Matrix<T> attn;                // concatenated head outputs
  Matrix<T> x_mid;
  std::vector<T> inv_rms2;
  Matrix<T> xn2;
  Matrix<T> z, u, h;  // gate pre-activation, up, silu(z) * u
  Matrix<T> x_out;
};

template <typename T>
struct ForwardCache {
  std::vector<LayerCache<T>> layers;
  Matrix<T> x_final;
  std::vector<T> inv_rms_f;
  Matrix<T> xn_f;
  Matrix<T> logits;
};

template <typename T>
void check_tokens(const ModelConfig& cfg, std::span<const TokenId> tokens) {
  if (tokens.empty()) throw DataError("forward: empty token sequence");
  if (tokens.size() > static_cast<std::size_t>(cfg.max_seq_len))
    throw DataError("forward: sequence length " + std::to_string(tokens.size()) +
                    " exceeds max_seq_len " + std::to_string(cfg.max_seq_len));
  for (TokenId id : tokens)
    if (id < 0 || id >= cfg.vocab_size)
      throw DataError("forward: token id " + std::to_string(id) +
                      " outside vocabulary of size " +
                      std::to_string(cfg.vocab_size));
}

template <typename T>
void run_forward(const BasicModel<T>& model, std::span<const TokenId> tokens,
                 ForwardCache<T>& cache) {
  const auto& cfg = model.config;
  const auto& p = model.params;
  const std::size_t n = tokens.size();
  const auto d = static_cast<std::size_t>(cfg.d_model);
  const auto hd = static_cast<std::size_t>(cfg.head_dim());
  const auto heads = static_cast<std::size_t>(cfg.n_heads);
  const T scale = static_cast<T>(1.0 / std::sqrt(double(hd)));

  Matrix<T> x(n, d);
  for (std::size_t t = 0; t < n; ++t)
    std::copy_n(p.token_embedding.row(static_cast<std::size_t>(tokens[t])), d,
                x.row(t));

  cache.layers.resize(p.layers.size());
  for (std::size_t li = 0; li < p.layers.size(); ++li) {
    const auto& w = p.layers[li];
    auto& c = cache.layers[li];
    c.x_in = x;
    rms_norm(c.x_in, w.attn_norm, c.xn1, c.inv_rms1);
    matmul(c.xn1, w.wq, c.q);
    matmul(c.xn1, w.wk, c.k);
    matmul(c.xn1, w.wv, c.v);
    apply_rope(c.q, cfg, false);
    apply_rope(c.k, cfg, false);

    c.attn = Matrix<T>(n, d);
    c.probs.resize(heads);
    for (std::size_t h = 0; h < heads; ++h) {
      const Matrix<T> qh = head_slice(c.q, h, hd);
      const Matrix<T> kh = head_slice(c.k, h, hd);
      const Matrix<T> vh = head_slice(c.v, h, hd);
      Matrix<T> scores(n, n);
      matmul_nt_acc(qh, kh, scores);
      Matrix<T>& prob = c.probs[h];
      prob = Matrix<T>(n, n);
      for (std::size_t t = 0; t < n; ++t) {
        const T* sr = scores.row(t);
        T* pr = prob.row(t);
        T mx = sr[0] * scale;
        for (std::size_t s = 1; s <= t; ++s) mx = std::max(mx, sr[s] * scale);
        T sum = 0;
        for (std::size_t s = 0; s <= t; ++s) {
          pr[s] = std::exp(sr[s] * scale - mx);
          sum += pr[s];
        }
        const T inv = T(1) / sum;
        for (std::size_t s = 0; s <= t; ++s) pr[s] *= inv;
      }
      Matrix<T> oh;
      matmul(prob, vh, oh);
      head_store(oh, c.attn, h, hd);
    }
    Matrix<T> o;
    matmul(c.attn, w.wo, o);
    c.x_mid = c.x_in;
    for (std::size_t i = 0; i < o.size(); ++i) c.x_mid.data[i] += o.data[i];

    rms_norm(c.x_mid, w.ffn_norm, c.xn2, c.inv_rms2);
    matmul(c.xn2, w.gate, c.z);
    matmul(c.xn2, w.up, c.u);
    c.h = Matrix<T>(c.z.rows, c.z.cols);
    for (std::size_t i = 0; i < c.z.size(); ++i)
      c.h.data[i] = silu(c.z.data[i]) * c.u.data[i];
    Matrix<T> f;
    matmul(c.h, w.down, f);
    c.x_out = c.x_mid;
    for (std::size_t i = 0; i < f.size(); ++i) c.x_out.data[i] += f.data[i];
    x = c.x_out;
  }
  cache.x_final = x;
  rms_norm(cache.x_final, p.final_norm, cache.xn_f, cache.inv_rms_f);
  matmul(cache.xn_f, p.unembedding, cache.logits);
}

// Cross-entropy of row t against target; optionally writes
// (softmax - onehot) * grad_scale into drow.
template <typename T>
double row_cross_entropy(const T* logits, std::size_t vocab, TokenId target,
                         T* drow, double grad_scale) {
  double mx = logits[0];
  for (std::size_t v = 1; v < vocab; ++v) mx = std::max(mx, double(logits[v]));
  double sum = 0.0;
  for (std::size_t v = 0; v < vocab; ++v) sum += std::exp(double(logits[v]) - mx);
  const double lse = mx + std::log(sum);
  if (drow != nullptr) {
    for (std::size_t v = 0; v < vocab; ++v)
      drow[v] = static_cast<T>(std::exp(double(logits[v]) - lse) * grad_scale);
    drow[static_cast<std::size_t>(target)] -= static_cast<T>(grad_scale);
  }
  return lse - double(logits[static_cast<std::size_t>(target)]);
}

template <typename T>
void run_backward(const BasicModel<T>& model, std::span<const TokenId> tokens,
                  const ForwardCache<T>& cache, const Matrix<T>& dlogits,
                  ModelParams<T>& g) {
  const auto& cfg = model.config;
  const auto& p = model.params;
  const std::size_t n = tokens.size();
  const auto d = static_cast<std::size_t>(cfg.d_model);
  const auto hd = static_cast<std::size_t>(cfg.head_dim());
  const auto heads = static_cast<std::size_t>(cfg.n_heads);
  const T scale = static_cast<T>(1.0 / std::sqrt(double(hd)));

  matmul_tn_acc(cache.xn_f, dlogits, g.unembedding);
  Matrix<T> dxn(n, d);
  matmul_nt_acc(dlogits, p.unembedding, dxn);
  Matrix<T> dx(n, d);
  rms_norm_backward(cache.x_final, p.final_norm, cache.inv_rms_f, dxn, dx,
                    g.final_norm);

  for (std::size_t li = p.layers.size(); li-- > 0;) {
    const auto& w = p.layers[li];
    const auto& c = cache.layers[li];
    auto& gw = g.layers[li];

    // FFN block: x_out = x_mid + (silu(z) * u) * down
    matmul_tn_acc(c.h, dx, gw.down);
    Matrix<T> dh(n, static_cast<std::size_t>(cfg.d_ff));
    matmul_nt_acc(dx, w.down, dh);
    Matrix<T> dz(dh.rows, dh.cols), du(dh.rows, dh.cols);
    for (std::size_t i = 0; i < dh.size(); ++i) {
      const T z = c.z.data[i];
      const T sig = T(1) / (T(1) + std::exp(-z));
      const T act = z * sig;
      du.data[i] = dh.data[i] * act;
      dz.data[i] = dh.data[i] * c.u.data[i] * sig * (T(1) + z * (T(1) - sig));
    }
    matmul_tn_acc(c.xn2, dz, gw.gate);
    matmul_tn_acc(c.xn2, du, gw.up);
    Matrix<T> dxn2(n, d);
    matmul_nt_acc(dz, w.gate, dxn2);
    matmul_nt_acc(du, w.up, dxn2);
    Matrix<T> dx_mid = dx;
    rms_norm_backward(c.x_mid, w.ffn_norm, c.inv_rms2, dxn2, dx_mid, gw.ffn_norm);

    // Attention block: x_mid = x_in + attn * wo
    matmul_tn_acc(c.attn, dx_mid, gw.wo);
    Matrix<T> dattn(n, d);
    matmul_nt_acc(dx_mid, w.wo, dattn);
    Matrix<T> dq(n, d), dk(n, d), dv(n, d);
    for (std::size_t h = 0; h < heads; ++h) {
      const Matrix<T> qh = head_slice(c.q, h, hd);
      const Matrix<T> kh = head_slice(c.k, h, hd);
      const Matrix<T> vh = head_slice(c.v, h, hd);
      const Matrix<T> doh = head_slice(dattn, h, hd);
      const Matrix<T>& prob = c.probs[h];
      Matrix<T> dp(n, n);
      matmul_nt_acc(doh, vh, dp);
      Matrix<T> dvh(n, hd);
      matmul_tn_acc(prob, doh, dvh);
      Matrix<T> ds(n, n);
      for (std::size_t t = 0; t < n; ++t) {
        const T* pr = prob.row(t);
        const T* dpr = dp.row(t);
        T* dsr = ds.row(t);
        T rowdot = 0;
        for (std::size_t s = 0; s <= t; ++s) rowdot += pr[s] * dpr[s];
        for (std::size_t s = 0; s <= t; ++s)
          dsr[s] = pr[s] * (dpr[s] - rowdot) * scale;
      }
      Matrix<T> dqh(n, hd), dkh(n, hd);
      kernels::active<T>().gemm_nn(ds.data.data(), kh.data.data(),
                                   dqh.data.data(), n, n, hd);
      matmul_tn_acc(ds, qh, dkh);
      head_store(dqh, dq, h, hd);
      head_store(dkh, dk, h, hd);
      head_store(dvh, dv, h, hd);
    }
    apply_rope(dq, cfg, true);
    apply_rope(dk, cfg, true);
    matmul_tn_acc(c.xn1, dq, gw.wq);
    matmul_tn_acc(c.xn1, dk, gw.wk);
    matmul_tn_acc(c.xn1, dv, gw.wv);
    Matrix<T> dxn1(n, d);
    matmul_nt_acc(dq, w.wq, dxn1);
    matmul_nt_acc(dk, w.wk, dxn1);
    matmul_nt_acc(dv, w.wv, dxn1);
    dx = dx_mid;
    rms_norm_backward(c.x_in, w.attn_norm, c.inv_rms1, dxn1, dx, gw.attn_norm);
  }

  for (std::size_t t = 0; t < n; ++t)
    kernels::active<T>().axpy(T(1), dx.row(t),
                              g.token_embedding.row(static_cast<std::size_t>(tokens[t])),
                              d);
}

}  // namespace

template <typename T>
ForwardResult<T> forward(const BasicModel<T>& model,
                         std::span<const TokenId> tokens, bool want_trace) {
  check_tokens<T>(model.config, tokens);
  ForwardCache<T> cache;
  run_forward(model, tokens, cache);
  ForwardResult<T> result;
  if (want_trace) {
    ForwardTrace<T> trace;
    for (auto& layer : cache.layers) {
      trace.gate_pre.push_back(std::move(layer.z));
      trace.post_ffn.push_back(std::move(layer.x_out));
    }
    trace.logits = cache.logits;
    result.trace = std::move(trace);
  }
  result.logits = std::move(cache.logits);
  return result;
}

template <typename T>
LossAndGrads<T> loss_and_grads(const BasicModel<T>& model,
                               const std::vector<std::vector<TokenId>>& batch) {
  if (batch.empty()) throw DataError("loss_and_grads: empty batch");
  std::size_t positions = 0;
  for (const auto& seq : batch) {
    if (seq.size() < 2)
      throw DataError("loss_and_grads: sequence of length " +
                      std::to_string(seq.size()) + " has no prediction target");
    check_tokens<T>(model.config, seq);
    positions += seq.size() - 1;
  }
  LossAndGrads<T> out;
  out.positions = positions;
  out.grads = ModelParams<T>::zeros(model.config);
  const double grad_scale = 1.0 / double(positions);
  const auto vocab = static_cast<std::size_t>(model.config.vocab_size);
  double total = 0.0;
  ForwardCache<T> cache;
  for (const auto& seq : batch) {
    run_forward(model, std::span<const TokenId>(seq), cache);
    Matrix<T> dlogits(seq.size(), vocab);
    for (std::size_t t = 0; t + 1 < seq.size(); ++t)
      total += row_cross_entropy(cache.logits.row(t), vocab, seq[t + 1],
                                 dlogits.row(t), grad_scale);
    run_backward(model, std::span<const TokenId>(seq), cache, dlogits, out.grads);
  }
  out.loss = total / double(positions);
  return out;
}

template <typename T>
LossSum sequence_loss(const BasicModel<T>& model, std::span<const TokenId> tokens) {
  check_tokens<T>(model.config, tokens);
  LossSum sum;
  if (tokens.size() < 2) return sum;
  ForwardCache<T> cache;
  run_forward(model, tokens, cache);
  const auto vocab = static_cast<std::size_t>(model.config.vocab_size);
  for (std::size_t t = 0; t + 1 < tokens.size(); ++t)
    sum.total += row_cross_entropy<T>(cache.logits.row(t), vocab, tokens[t + 1],
                                      nullptr, 0.0);
  sum.positions = tokens.size() - 1;
  return sum;
}

template <typename T>
FiringCounts record_ffn_firings(const ForwardTrace<T>& trace,
                                std::size_t skip_leading) {
  FiringCounts out;
  out.n_layers = static_cast<int>(trace.gate_pre.size());
  if (trace.gate_pre.empty()) throw DataError("record_ffn_firings: trace has no layers");
  const std::size_t rows = trace.gate_pre.front().rows;
  const std::size_t dff = trace.gate_pre.front().cols;
  out.d_ff = static_cast<int>(dff);
  out.counts.assign(trace.gate_pre.size() * dff, 0);
  for (std::size_t li = 0; li < trace.gate_pre.size(); ++li) {
    const auto& z = trace.gate_pre[li];
    if (z.rows != rows || z.cols != dff)
      throw DataError("record_ffn_firings: inconsistent gate shapes across layers");
    std::uint64_t* dst = out.counts.data() + li * dff;
    for (std::size_t t = skip_leading; t < rows; ++t) {
      const T* zr = z.row(t);
      for (std::size_t j = 0; j < dff; ++j) dst[j] += zr[j] > T(0) ? 1u : 0u;
    }
  }
  out.positions = rows > skip_leading ? rows - skip_leading : 0;
  return out;
}

#define SNF_INSTANTIATE(T)                                                     \
  template struct ModelParams<T>;                                              \
  template BasicModel<T> init_model<T>(const ModelConfig&);                    \
  template ForwardResult<T> forward<T>(const BasicModel<T>&,                   \
                                       std::span<const TokenId>, bool);        \
  template LossAndGrads<T> loss_and_grads<T>(                                  \
      const BasicModel<T>&, const std::vector<std::vector<TokenId>>&);         \
  template LossSum sequence_loss<T>(const BasicModel<T>&,                      \
                                    std::span<const TokenId>);                 \
  template FiringCounts record_ffn_firings<T>(const ForwardTrace<T>&,          \
                                              std::size_t);                    \
  template T silu<T>(T);

SNF_INSTANTIATE(float)
SNF_INSTANTIATE(double)
#undef SNF_INSTANTIATE

template BasicModel<double> convert_model<double, float>(const BasicModel<float>&);
template BasicModel<float> convert_model<float, double>(const BasicModel<double>&);

}  // namespace snf
