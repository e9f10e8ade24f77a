#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "tsdf/nn/graph.hpp"

namespace tsdf::nn {

// Binary checkpoint layout (little-endian):
//   "TSDF" | version u32 | count u32 |
//   count x { name_len u32 | name bytes | rank u32 | dims u32[rank] | f32 payload } |
//   crc32 u32 over every preceding byte
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor<float> value;
};

using TensorList = std::vector<NamedTensor>;

std::string encode_checkpoint(const TensorList& tensors);
TensorList decode_checkpoint(std::string_view bytes);

void save_checkpoint(const std::filesystem::path& path, const TensorList& tensors);
TensorList load_checkpoint(const std::filesystem::path& path);

std::uint32_t crc32_of(std::string_view bytes);

// Parameters whose name starts with `prefix`, in store order. Double-precision
// stores are narrowed to f32, the on-disk element type.
template <class T>
TensorList export_parameters(const ParameterStore<T>& store, std::string_view prefix = {});

// Copies every tensor into the parameter of the same name. Unknown names and
// shape mismatches raise ContractError; returns the number copied.
template <class T>
std::size_t import_parameters(ParameterStore<T>& store, const TensorList& tensors);

const NamedTensor* find_tensor(const TensorList& tensors, std::string_view name);

}  // namespace tsdf::nn
