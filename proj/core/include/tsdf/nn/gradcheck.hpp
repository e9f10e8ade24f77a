#pragma once

#include <functional>
#include <string>
#include <vector>

#include "tsdf/nn/graph.hpp"

namespace tsdf::nn {

struct GradCheckOptions {
  double step = 1e-5;
  // Relative error is |analytic - numeric| / max(|analytic|, |numeric|, floor).
  double floor = 1e-3;
  // Cap on probed elements per parameter (evenly strided); 0 probes all.
  std::size_t max_probes = 0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  std::size_t probes = 0;
};

template <class T>
using LossFn = std::function<Var<T>(Graph<T>&)>;

// Compares reverse-mode gradients of `loss` with respect to every parameter in
// `store` against central finite differences. `loss` must build a fresh graph
// from the store's current values on every call.
template <class T>
GradCheckResult check_gradients(ParameterStore<T>& store, const LossFn<T>& loss,
                                const GradCheckOptions& options = {});

// Default precision-dependent settings: h = 1e-5 / floor 1e-3 in double,
// h = 1e-2 / floor 1 in single precision.
template <class T>
GradCheckOptions default_gradcheck_options();

}  // namespace tsdf::nn
