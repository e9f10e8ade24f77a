#include "tsdf/schedule.hpp"

#include <cmath>
#include <iomanip>
#include <numbers>
#include <ostream>
#include <string>

namespace tsdf::diffusion {

NoiseSchedule::NoiseSchedule(std::vector<double> betas) : betas_(std::move(betas)) {
  if (betas_.size() < 2) throw ConfigError("schedule: need at least 2 steps");
  alphas_.reserve(betas_.size());
  alpha_bars_.reserve(betas_.size());
  double running = 1.0;
  for (std::size_t i = 0; i < betas_.size(); ++i) {
    const double b = betas_[i];
    if (!(b > 0.0 && b < 1.0)) {
      throw ConfigError("schedule: beta_" + std::to_string(i + 1) + " = " + std::to_string(b) +
                        " outside (0, 1)");
    }
    alphas_.push_back(1.0 - b);
    running *= alphas_.back();
    alpha_bars_.push_back(running);
  }
}

std::size_t NoiseSchedule::index(std::size_t t) const {
  if (t < 1 || t > betas_.size()) {
    throw IndexError("schedule: step " + std::to_string(t) + " outside [1, " +
                     std::to_string(betas_.size()) + "]");
  }
  return t - 1;
}

double NoiseSchedule::sigma(std::size_t t, VarianceKind kind) const {
  const double b = beta(t);
  if (kind == VarianceKind::beta) return std::sqrt(b);
  return std::sqrt((1.0 - alpha_bar_prev(t)) / (1.0 - alpha_bar(t)) * b);
}

NoiseSchedule cosine_schedule(std::size_t T, double s, double beta_clip) {
  if (T < 2) throw ConfigError("cosine_schedule: T must be at least 2, got " + std::to_string(T));
  if (!(s > 0.0 && s < 1.0)) throw ConfigError("cosine_schedule: offset s must lie in (0, 1)");
  if (!(beta_clip > 0.0 && beta_clip < 1.0)) throw ConfigError("cosine_schedule: beta_clip must lie in (0, 1)");
  auto f = [&](double t) {
    const double c = std::cos((t / double(T) + s) / (1.0 + s) * std::numbers::pi / 2.0);
    return c * c;
  };
  const double f0 = f(0.0);
  std::vector<double> betas(T);
  double prev = 1.0;
  for (std::size_t t = 1; t <= T; ++t) {
    const double abar = f(double(t)) / f0;
    betas[t - 1] = std::min(1.0 - abar / prev, beta_clip);
    prev = abar;
  }
  return NoiseSchedule(std::move(betas));
}

template <class T>
nn::Tensor<T> single_step_diffuse(const nn::Tensor<T>& x_prev, std::size_t t, const nn::Tensor<T>& eps,
                                  const NoiseSchedule& schedule) {
  if (x_prev.shape() != eps.shape()) {
    throw DimensionError("single_step_diffuse: x " + nn::shape_string(x_prev.shape()) + " vs eps " +
                         nn::shape_string(eps.shape()));
  }
  const T keep = T(std::sqrt(1.0 - schedule.beta(t)));
  const T noise = T(std::sqrt(schedule.beta(t)));
  nn::Tensor<T> out(x_prev.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = keep * x_prev[i] + noise * eps[i];
  return out;
}

template <class T>
nn::Tensor<T> forward_diffuse(const nn::Tensor<T>& x0, std::size_t t, const nn::Tensor<T>& eps,
                              const NoiseSchedule& schedule) {
  if (x0.shape() != eps.shape()) {
    throw DimensionError("forward_diffuse: x0 " + nn::shape_string(x0.shape()) + " vs eps " +
                         nn::shape_string(eps.shape()));
  }
  const T keep = T(std::sqrt(schedule.alpha_bar(t)));
  const T noise = T(std::sqrt(1.0 - schedule.alpha_bar(t)));
  nn::Tensor<T> out(x0.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = keep * x0[i] + noise * eps[i];
  return out;
}

void write_schedule_csv(std::ostream& out, const NoiseSchedule& schedule, VarianceKind kind) {
  out << "t,beta,alpha,alpha_bar,sigma\n";
  out << std::setprecision(17);
  for (std::size_t t = 1; t <= schedule.steps(); ++t) {
    out << t << ',' << schedule.beta(t) << ',' << schedule.alpha(t) << ',' << schedule.alpha_bar(t) << ','
        << schedule.sigma(t, kind) << '\n';
  }
}

template nn::Tensor<float> single_step_diffuse(const nn::Tensor<float>&, std::size_t, const nn::Tensor<float>&,
                                               const NoiseSchedule&);
template nn::Tensor<double> single_step_diffuse(const nn::Tensor<double>&, std::size_t,
                                                const nn::Tensor<double>&, const NoiseSchedule&);
template nn::Tensor<float> forward_diffuse(const nn::Tensor<float>&, std::size_t, const nn::Tensor<float>&,
                                           const NoiseSchedule&);
template nn::Tensor<double> forward_diffuse(const nn::Tensor<double>&, std::size_t, const nn::Tensor<double>&,
                                            const NoiseSchedule&);

}  // namespace tsdf::diffusion
