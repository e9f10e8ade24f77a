#pragma once

#include <array>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "tsdf/data.hpp"
#include "tsdf/nn/tensor.hpp"

namespace tsdf::fidelity {

// Every value of every series (all timepoints, all ROIs), in series order.
std::vector<double> pooled_values(std::span<const nn::Tensor<double>> series);
// Same for a stacked [n x L x R] tensor.
std::vector<double> pooled_values(const nn::Tensor<double>& stacked);
// Subjects of one class, in cohort order.
std::vector<double> pooled_values(const data::Cohort& cohort, int label);

struct FidelityOptions {
  std::size_t bins = 100;
  double eps = 1e-10;
};

// KL(real || synth) over shared histogram bins spanning the union range, with
// additive eps smoothing. A zero-width range raises ContractError.
double pooled_kl(std::span<const double> real, std::span<const double> synth, const FidelityOptions& options = {});

// Empirical Wasserstein-1 distance (area between the two ECDFs).
double pooled_wasserstein(std::span<const double> real, std::span<const double> synth);

// Two-sample Kolmogorov-Smirnov statistic sup |F_real - F_synth|.
double pooled_ks(std::span<const double> real, std::span<const double> synth);

struct ClassFidelity {
  int label = 0;
  double kl = 0.0;
  double wd = 0.0;
  double ks = 0.0;
  std::size_t n_real = 0;
  std::size_t n_synth = 0;
};

struct FidelityReport {
  std::vector<ClassFidelity> classes;
  FidelityOptions options;
};

ClassFidelity compare(int label, std::span<const double> real, std::span<const double> synth,
                      const FidelityOptions& options = {});

// class,kl,wd,ks,n_real,n_synth
void write_fidelity_csv(std::ostream& out, const FidelityReport& report);

// One group of points for the projection; `points` is [m x R] (one row per
// timepoint) or [n x L x R], which is flattened to rows.
struct PointGroup {
  std::string source;  // "real" or "synthetic"
  int label = 0;
  nn::Tensor<double> points;
};

struct ProjectedPoint {
  double pc1 = 0.0;
  double pc2 = 0.0;
  std::string source;
  int label = 0;
};

struct Projection2D {
  std::vector<ProjectedPoint> points;
  std::array<double, 2> explained{};  // variance fractions of pc1, pc2
  std::array<std::vector<double>, 2> components;  // unit loadings, largest |loading| positive
};

// PCA fit on the union of all groups. Needs at least 3 points and R >= 2; a
// cloud with no variance raises ContractError.
Projection2D pca_project(const std::vector<PointGroup>& groups);

// "# explained_variance,<pc1>,<pc2>" then pc1,pc2,source,class rows.
void write_projection_csv(std::ostream& out, const Projection2D& projection);

}  // namespace tsdf::fidelity
