#include "tsdf/fc.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include "tsdf/config.hpp"
#include "tsdf/error.hpp"

namespace tsdf::fc {

using nn::Tensor;

FCMatrix pearson_fc(const Tensor<double>& series, const FcOptions& options, std::vector<std::string> roi_names) {
  if (series.rank() != 2) throw DimensionError("pearson_fc: expected L x R, got " + nn::shape_string(series.shape()));
  const std::size_t L = series.dim(0), R = series.dim(1);
  if (L < 3) throw ContractError("pearson_fc: need at least 3 timepoints, got " + std::to_string(L));
  if (roi_names.empty()) {
    for (std::size_t r = 0; r < R; ++r) roi_names.push_back("roi_" + std::to_string(r));
  }
  if (roi_names.size() != R) throw DimensionError("pearson_fc: roi name count does not match R");

  std::vector<double> mean(R, 0.0), norm(R, 0.0);
  std::vector<double> centered(L * R);
  for (std::size_t r = 0; r < R; ++r) {
    for (std::size_t t = 0; t < L; ++t) mean[r] += series(t, r);
    mean[r] /= double(L);
    for (std::size_t t = 0; t < L; ++t) {
      const double d = series(t, r) - mean[r];
      centered[r * L + t] = d;
      norm[r] += d * d;
    }
    norm[r] = std::sqrt(norm[r]);
  }

  FCMatrix out{Tensor<double>({R, R}), std::move(roi_names), {}};
  for (std::size_t r = 0; r < R; ++r) {
    // Relative test so tiny-but-real signals are not flagged.
    double scale = 0.0;
    for (std::size_t t = 0; t < L; ++t) scale = std::max(scale, std::abs(series(t, r)));
    if (norm[r] <= 1e-12 * std::max(1.0, scale)) out.constant_rois.push_back(r);
  }
  auto is_constant = [&](std::size_t r) {
    return std::binary_search(out.constant_rois.begin(), out.constant_rois.end(), r);
  };
  for (std::size_t i = 0; i < R; ++i) {
    out.values(i, i) = 1.0;
    for (std::size_t j = i + 1; j < R; ++j) {
      double r = 0.0;
      if (!is_constant(i) && !is_constant(j)) {
        double dot = 0.0;
        for (std::size_t t = 0; t < L; ++t) dot += centered[i * L + t] * centered[j * L + t];
        r = std::clamp(dot / (norm[i] * norm[j]), -1.0, 1.0);
        if (options.fisher_z) r = std::atanh(std::clamp(r, -1.0 + 1e-7, 1.0 - 1e-7));
      }
      out.values(i, j) = r;
      out.values(j, i) = r;
    }
  }
  return out;
}

std::vector<double> upper_triangle_features(const Tensor<double>& m) {
  if (m.rank() != 2 || m.dim(0) != m.dim(1)) {
    throw DimensionError("upper_triangle_features: expected a square matrix, got " + nn::shape_string(m.shape()));
  }
  const std::size_t R = m.dim(0);
  std::vector<double> out;
  out.reserve(R * (R - 1) / 2);
  for (std::size_t i = 0; i < R; ++i) {
    for (std::size_t j = i + 1; j < R; ++j) out.push_back(m(i, j));
  }
  return out;
}

std::vector<double> upper_triangle_features(const FCMatrix& fc) { return upper_triangle_features(fc.values); }

std::size_t rois_for_feature_count(std::size_t count) {
  std::size_t R = 1;
  while (R * (R - 1) / 2 < count) ++R;
  if (R * (R - 1) / 2 != count || R < 2) {
    throw DimensionError("feature count " + std::to_string(count) + " is not R(R-1)/2 for any R >= 2");
  }
  return R;
}

Tensor<double> matrix_from_features(const std::vector<double>& features, std::size_t rois) {
  if (features.size() != rois * (rois - 1) / 2) {
    throw DimensionError("matrix_from_features: " + std::to_string(features.size()) + " features for R=" +
                         std::to_string(rois));
  }
  Tensor<double> out({rois, rois});
  std::size_t k = 0;
  for (std::size_t i = 0; i < rois; ++i) {
    out(i, i) = 1.0;
    for (std::size_t j = i + 1; j < rois; ++j) {
      out(i, j) = features[k];
      out(j, i) = features[k];
      ++k;
    }
  }
  return out;
}

void write_fc_csv(std::ostream& out, const FCMatrix& fc) {
  out << "roi";
  for (const auto& n : fc.roi_names) out << ',' << n;
  out << '\n';
  for (std::size_t i = 0; i < fc.rois(); ++i) {
    out << fc.roi_names[i];
    for (std::size_t j = 0; j < fc.rois(); ++j) out << ',' << format_number(fc.values(i, j));
    out << '\n';
  }
}

}  // namespace tsdf::fc
