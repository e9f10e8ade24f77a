#include "tsdf/nn/optim.hpp"

#include <cmath>
#include <string>

namespace tsdf::nn {

void AdamConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("adam: lr must be positive, got " + std::to_string(lr));
  if (!(eps > 0.0)) throw ConfigError("adam: eps must be positive, got " + std::to_string(eps));
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("adam: betas must lie in [0, 1)");
  }
  if (weight_decay < 0.0) throw ConfigError("adam: weight_decay must be non-negative");
}

template <class T>
AdamW<T>::AdamW(ParameterStore<T>& params, AdamConfig config) : params_(&params), config_(config) {
  config_.validate();
  m_.reserve(params.size());
  v_.reserve(params.size());
  for (const auto& p : params) {
    m_.emplace_back(p.value.shape());
    v_.emplace_back(p.value.shape());
  }
}

template <class T>
void AdamW<T>::step() {
  if (m_.size() != params_->size()) {
    throw InternalError("adam: parameter store changed after optimizer construction");
  }
  ++step_;
  const double c1 = 1.0 - std::pow(config_.beta1, double(step_));
  const double c2 = 1.0 - std::pow(config_.beta2, double(step_));
  const T b1 = T(config_.beta1), b2 = T(config_.beta2);
  const T lr = T(config_.lr), eps = T(config_.eps);
  const T decay = T(1.0 - config_.lr * config_.weight_decay);
  const T inv_c1 = T(1.0 / c1), inv_c2 = T(1.0 / c2);
  for (std::size_t i = 0; i < params_->size(); ++i) {
    auto& p = (*params_)[i];
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < p.value.size(); ++j) {
      const T g = p.grad[j];
      m[j] = b1 * m[j] + (T{1} - b1) * g;
      v[j] = b2 * v[j] + (T{1} - b2) * g * g;
      const T m_hat = m[j] * inv_c1;
      const T v_hat = v[j] * inv_c2;
      p.value[j] = p.value[j] * decay - lr * m_hat / (std::sqrt(v_hat) + eps);
    }
    if (!p.value.all_finite()) {
      throw NumericError("adam: non-finite value in '" + p.name + "' at step " + std::to_string(step_));
    }
  }
}

template class AdamW<float>;
template class AdamW<double>;

}  // namespace tsdf::nn
