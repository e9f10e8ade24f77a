#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "tsdf/nn/tensor.hpp"

namespace tsdf::fc {

struct FCMatrix {
  nn::Tensor<double> values;  // R x R
  std::vector<std::string> roi_names;
  // ROIs with zero variance; their off-diagonal entries are 0.
  std::vector<std::size_t> constant_rois;

  std::size_t rois() const noexcept { return values.dim(0); }
};

struct FcOptions {
  bool fisher_z = false;  // arctanh of off-diagonal entries, clamped to |r| <= 1 - 1e-7
};

// Pearson correlation between ROI columns of an L x R series. L < 3 raises
// ContractError.
FCMatrix pearson_fc(const nn::Tensor<double>& series, const FcOptions& options = {},
                    std::vector<std::string> roi_names = {});

// Strict upper triangle, row-major: (0,1), (0,2), ..., (1,2), ...
std::vector<double> upper_triangle_features(const FCMatrix& fc);
std::vector<double> upper_triangle_features(const nn::Tensor<double>& matrix);

// Inverse of upper_triangle_features for unit-diagonal symmetric matrices.
nn::Tensor<double> matrix_from_features(const std::vector<double>& features, std::size_t rois);

// R from R(R-1)/2; throws DimensionError when the count is not triangular.
std::size_t rois_for_feature_count(std::size_t count);

// Square CSV with a ROI-name header row and a leading name column.
void write_fc_csv(std::ostream& out, const FCMatrix& fc);

}  // namespace tsdf::fc
