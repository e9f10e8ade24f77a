#include "tsdf/nn/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace tsdf::nn {

template <class T>
GradCheckOptions default_gradcheck_options() {
  if constexpr (std::is_same_v<T, double>) {
    return {1e-5, 1e-3, 0};
  } else {
    return {1e-2, 1.0, 0};
  }
}

template <class T>
GradCheckResult check_gradients(ParameterStore<T>& store, const LossFn<T>& loss,
                                const GradCheckOptions& options) {
  store.zero_grad();
  {
    Graph<T> g;
    g.backward(loss(g));
  }
  auto evaluate = [&] {
    Graph<T> g(false);
    return double(loss(g).value()[0]);
  };

  GradCheckResult result;
  for (auto& p : store) {
    const std::size_t n = p.value.size();
    const std::size_t stride =
        options.max_probes == 0 || n <= options.max_probes ? 1 : (n + options.max_probes - 1) / options.max_probes;
    for (std::size_t i = 0; i < n; i += stride) {
      const T original = p.value[i];
      p.value[i] = T(double(original) + options.step);
      const double up = evaluate();
      p.value[i] = T(double(original) - options.step);
      const double down = evaluate();
      p.value[i] = original;
      const double numeric = (up - down) / (2.0 * options.step);
      const double analytic = double(p.grad[i]);
      const double denom = std::max({std::abs(analytic), std::abs(numeric), options.floor});
      const double rel = std::abs(analytic - numeric) / denom;
      ++result.probes;
      if (rel > result.max_rel_error || !std::isfinite(rel)) {
        result.max_rel_error = std::isfinite(rel) ? rel : INFINITY;
        result.worst_parameter = p.name;
        result.worst_index = i;
      }
    }
  }
  return result;
}

template GradCheckOptions default_gradcheck_options<float>();
template GradCheckOptions default_gradcheck_options<double>();
template GradCheckResult check_gradients(ParameterStore<float>&, const LossFn<float>&, const GradCheckOptions&);
template GradCheckResult check_gradients(ParameterStore<double>&, const LossFn<double>&, const GradCheckOptions&);

}  // namespace tsdf::nn
