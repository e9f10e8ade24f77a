#pragma once

#include <cstddef>
#include <iosfwd>
#include <vector>

#include "tsdf/nn/tensor.hpp"

namespace tsdf::diffusion {

// Reverse-step variance choice.
enum class VarianceKind {
  beta,       // sigma_t^2 = beta_t
  posterior,  // sigma_t^2 = (1 - abar_{t-1}) / (1 - abar_t) * beta_t
};

// Per-step diffusion constants for steps t = 1..T. Immutable once built.
class NoiseSchedule {
 public:
  // Builds alphas and their exact running product from `betas` (each in (0, 1)).
  explicit NoiseSchedule(std::vector<double> betas);

  std::size_t steps() const noexcept { return betas_.size(); }

  double beta(std::size_t t) const { return betas_[index(t)]; }
  double alpha(std::size_t t) const { return alphas_[index(t)]; }
  double alpha_bar(std::size_t t) const { return alpha_bars_[index(t)]; }
  // abar_0 = 1 by convention.
  double alpha_bar_prev(std::size_t t) const { return t == 1 ? 1.0 : alpha_bar(t - 1); }
  double sigma(std::size_t t, VarianceKind kind = VarianceKind::beta) const;

  const std::vector<double>& betas() const noexcept { return betas_; }
  const std::vector<double>& alphas() const noexcept { return alphas_; }
  const std::vector<double>& alpha_bars() const noexcept { return alpha_bars_; }

 private:
  std::size_t index(std::size_t t) const;

  std::vector<double> betas_;
  std::vector<double> alphas_;
  std::vector<double> alpha_bars_;
};

// abar(t) = f(t) / f(0), f(t) = cos^2(((t / T) + s) / (1 + s) * pi / 2), with
// beta_t = 1 - abar(t) / abar(t - 1) clipped to (0, beta_clip].
NoiseSchedule cosine_schedule(std::size_t T, double s = 0.008, double beta_clip = 0.999);

// sqrt(1 - beta_t) * x_prev + sqrt(beta_t) * eps.
template <class T>
nn::Tensor<T> single_step_diffuse(const nn::Tensor<T>& x_prev, std::size_t t, const nn::Tensor<T>& eps,
                                  const NoiseSchedule& schedule);

// Closed-form marginal sqrt(abar_t) * x0 + sqrt(1 - abar_t) * eps.
template <class T>
nn::Tensor<T> forward_diffuse(const nn::Tensor<T>& x0, std::size_t t, const nn::Tensor<T>& eps,
                              const NoiseSchedule& schedule);

// CSV with columns t, beta, alpha, alpha_bar, sigma.
void write_schedule_csv(std::ostream& out, const NoiseSchedule& schedule,
                        VarianceKind kind = VarianceKind::beta);

}  // namespace tsdf::diffusion
