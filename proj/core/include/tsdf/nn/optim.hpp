#pragma once

#include <cstdint>
#include <vector>

#include "tsdf/nn/graph.hpp"

namespace tsdf::nn {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  // Decoupled decay: p <- p * (1 - lr * weight_decay) before the Adam update.
  double weight_decay = 0.0;

  void validate() const;
};

// Adam with bias correction and decoupled weight decay. Moments are kept per
// parameter in store order; the store must not gain parameters afterwards.
template <class T>
class AdamW {
 public:
  AdamW(ParameterStore<T>& params, AdamConfig config);

  void step();
  void zero_grad() { params_->zero_grad(); }

  std::int64_t steps() const noexcept { return step_; }
  const AdamConfig& config() const noexcept { return config_; }
  const Tensor<T>& first_moment(std::size_t i) const { return m_[i]; }
  const Tensor<T>& second_moment(std::size_t i) const { return v_[i]; }

 private:
  ParameterStore<T>* params_;
  AdamConfig config_;
  std::vector<Tensor<T>> m_;
  std::vector<Tensor<T>> v_;
  std::int64_t step_ = 0;
};

}  // namespace tsdf::nn
