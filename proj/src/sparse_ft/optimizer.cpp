#include <cmath>

#include "snf/error.hpp"
#include "snf/sparse_ft.hpp"

namespace snf {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("train config: learning rate must be positive");
  if (batch_size < 1) throw ConfigError("train config: batch size must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("train config: weight decay must be non-negative");
  if (epochs < 1) throw ConfigError("train config: epochs must be at least 1");
  if (!(grad_clip_norm > 0.0)) throw ConfigError("train config: gradient clip norm must be positive");
  if (val_interval_steps < 1) throw ConfigError("train config: validation interval must be at least 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw ConfigError("train config: Adam betas must lie in [0, 1)");
  if (!(eps > 0.0)) throw ConfigError("train config: Adam epsilon must be positive");
  if (seq_len < 1) throw ConfigError("train config: sequence length must be positive");
}

TrainConfig TrainConfig::for_mode(FinetuneMode mode) {
  TrainConfig cfg;
  if (mode == FinetuneMode::kFull || mode == FinetuneMode::kFfnOnly) cfg.learning_rate = 1e-5;
  return cfg;
}

template <typename T>
OptimizerState<T> make_optimizer_state(const ParamMask& mask) {
  OptimizerState<T> state;
  for (const auto& t : mask.tensors) {
    state.m.emplace_back(t.indices.size(), T(0));
    state.v.emplace_back(t.indices.size(), T(0));
  }
  return state;
}

namespace {

struct AdamCoefficients {
  double lr, decay_factor, beta1, beta2, eps, bias1, bias2;
};

AdamCoefficients coefficients(const TrainConfig& cfg, std::int64_t step) {
  return {cfg.learning_rate,
          1.0 - cfg.learning_rate * cfg.weight_decay,
          cfg.beta1,
          cfg.beta2,
          cfg.eps,
          1.0 - std::pow(cfg.beta1, double(step)),
          1.0 - std::pow(cfg.beta2, double(step))};
}

// One AdamW update of a single entry. Shared by the masked and the dense
// reference step so both produce identical bits.
template <typename T>
inline void adamw_entry(T& w, T& m, T& v, T g, const AdamCoefficients& c) {
  w = static_cast<T>(double(w) * c.decay_factor);
  m = static_cast<T>(c.beta1 * double(m) + (1.0 - c.beta1) * double(g));
  v = static_cast<T>(c.beta2 * double(v) + (1.0 - c.beta2) * double(g) * double(g));
  const double m_hat = double(m) / c.bias1;
  const double v_hat = double(v) / c.bias2;
  w = static_cast<T>(double(w) - c.lr * m_hat / (std::sqrt(v_hat) + c.eps));
}

double clip_scale_for(double norm, double max_norm) {
  const double coef = max_norm / (norm + 1e-6);
  return coef < 1.0 ? coef : 1.0;
}

template <typename T>
std::vector<Matrix<T>*> tensor_list(ModelParams<T>& p) {
  std::vector<Matrix<T>*> out;
  p.for_each([&](TensorId, Matrix<T>& m) { out.push_back(&m); });
  return out;
}

template <typename T>
std::vector<const Matrix<T>*> tensor_list(const ModelParams<T>& p) {
  std::vector<const Matrix<T>*> out;
  p.for_each([&](TensorId, const Matrix<T>& m) { out.push_back(&m); });
  return out;
}

}  // namespace

template <typename T>
StepReport masked_step(BasicModel<T>& model, const ModelParams<T>& grads,
                       const ParamMask& mask, OptimizerState<T>& state,
                       const TrainConfig& cfg) {
  auto weights = tensor_list(model.params);
  const auto grad = tensor_list(grads);
  if (weights.size() != mask.tensors.size() || grad.size() != mask.tensors.size() ||
      state.m.size() != mask.tensors.size())
    throw ConsistencyError("masked_step: model, gradient, mask and state disagree");

  StepReport report;
  double sq = 0.0;
  for (std::size_t t = 0; t < mask.tensors.size(); ++t) {
    const auto& tm = mask.tensors[t];
    if (grad[t]->size() != tm.trainable.size() || weights[t]->size() != tm.trainable.size() ||
        state.m[t].size() != tm.indices.size())
      throw ConsistencyError("masked_step: shape mismatch in " + tensor_name(tm.id));
    for (std::uint32_t idx : tm.indices) {
      const double g = grad[t]->data[idx];
      if (!std::isfinite(g)) {
        report.reason = "non-finite gradient in " + tensor_name(tm.id);
        return report;
      }
      sq += g * g;
    }
  }
  report.grad_norm = std::sqrt(sq);
  report.clip_scale = clip_scale_for(report.grad_norm, cfg.grad_clip_norm);
  const T scale = static_cast<T>(report.clip_scale);

  ++state.step;
  const AdamCoefficients c = coefficients(cfg, state.step);
  for (std::size_t t = 0; t < mask.tensors.size(); ++t) {
    const auto& idx = mask.tensors[t].indices;
    T* w = weights[t]->data.data();
    const T* g = grad[t]->data.data();
    T* m = state.m[t].data();
    T* v = state.v[t].data();
    for (std::size_t k = 0; k < idx.size(); ++k)
      adamw_entry(w[idx[k]], m[k], v[k], g[idx[k]] * scale, c);
  }
  report.applied = true;
  return report;
}

template <typename T>
StepReport reference_adamw_step(BasicModel<T>& model, const ModelParams<T>& grads,
                                DenseAdamState<T>& state, const TrainConfig& cfg) {
  auto weights = tensor_list(model.params);
  const auto grad = tensor_list(grads);
  if (state.m.empty()) {
    for (const auto* w : weights) {
      state.m.emplace_back(w->size(), T(0));
      state.v.emplace_back(w->size(), T(0));
    }
  }
  StepReport report;
  double sq = 0.0;
  for (const auto* g : grad)
    for (T x : g->data) {
      if (!std::isfinite(double(x))) {
        report.reason = "non-finite gradient";
        return report;
      }
      sq += double(x) * double(x);
    }
  report.grad_norm = std::sqrt(sq);
  report.clip_scale = clip_scale_for(report.grad_norm, cfg.grad_clip_norm);
  const T scale = static_cast<T>(report.clip_scale);
  ++state.step;
  const AdamCoefficients c = coefficients(cfg, state.step);
  for (std::size_t t = 0; t < weights.size(); ++t)
    for (std::size_t i = 0; i < weights[t]->size(); ++i)
      adamw_entry(weights[t]->data[i], state.m[t][i], state.v[t][i], grad[t]->data[i] * scale, c);
  report.applied = true;
  return report;
}

template OptimizerState<float> make_optimizer_state<float>(const ParamMask&);
template OptimizerState<double> make_optimizer_state<double>(const ParamMask&);
template StepReport masked_step<float>(BasicModel<float>&, const ModelParams<float>&,
                                       const ParamMask&, OptimizerState<float>&,
                                       const TrainConfig&);
template StepReport masked_step<double>(BasicModel<double>&, const ModelParams<double>&,
                                        const ParamMask&, OptimizerState<double>&,
                                        const TrainConfig&);
template StepReport reference_adamw_step<float>(BasicModel<float>&, const ModelParams<float>&,
                                                DenseAdamState<float>&, const TrainConfig&);
template StepReport reference_adamw_step<double>(BasicModel<double>&, const ModelParams<double>&,
                                                 DenseAdamState<double>&, const TrainConfig&);

}  // namespace snf
