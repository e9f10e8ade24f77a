#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "tsdf/nn/tensor.hpp"
#include "tsdf/rng.hpp"

namespace tsdf::testing {

template <class T = double>
nn::Tensor<T> random_tensor(nn::Shape shape, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  nn::Tensor<T> t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = T(scale * rng.normal());
  return t;
}

// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("tsdf_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace tsdf::testing
