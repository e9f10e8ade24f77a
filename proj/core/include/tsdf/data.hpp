#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tsdf/nn/tensor.hpp"
#include "tsdf/rng.hpp"

namespace tsdf::data {

struct Subject {
  std::string id;
  int label = 0;                // 0 or 1
  nn::Tensor<double> series;    // L x R
};

// Labeled subjects sharing one (L, R) shape, with unique ids.
class Cohort {
 public:
  explicit Cohort(std::vector<Subject> subjects, std::vector<std::string> roi_names = {});

  std::size_t size() const noexcept { return subjects_.size(); }
  std::size_t length() const noexcept { return length_; }
  std::size_t rois() const noexcept { return rois_; }
  const std::vector<Subject>& subjects() const noexcept { return subjects_; }
  const Subject& operator[](std::size_t i) const { return subjects_[i]; }
  const std::vector<std::string>& roi_names() const noexcept { return roi_names_; }

  std::optional<std::size_t> find(std::string_view id) const;
  std::size_t count(int label) const;

 private:
  std::vector<Subject> subjects_;
  std::vector<std::string> roi_names_;
  std::size_t length_ = 0;
  std::size_t rois_ = 0;
};

std::vector<std::string> default_roi_names(std::size_t rois);

inline constexpr const char* kManifestName = "cohort.manifest";

// `path` is either a manifest file or a directory holding `cohort.manifest`.
// Manifest lines are "subject_id,label,relative_csv_path" ('#' starts a
// comment); subject CSVs have a header row of ROI names, then L rows of R values.
Cohort load_cohort(const std::filesystem::path& path);

// Writes `dir`/cohort.manifest and `dir`/subjects/<id>.csv. Values are printed
// with 17 significant digits, so a reload is exact.
void save_cohort(const Cohort& cohort, const std::filesystem::path& dir);

struct Preprocessed {
  nn::Tensor<double> series;
  // ROIs whose detrended signal had no variance; they are zeroed.
  std::vector<std::size_t> constant_rois;
};

// Per-ROI least-squares linear detrend, then z-score (mean 0, sample std 1).
Preprocessed preprocess(const nn::Tensor<double>& series);

struct ToyGenConfig {
  std::size_t n_per_class = 40;
  std::size_t rois = 8;
  std::size_t length = 64;
  // VAR(1) matrices per class; empty tensors select default_coupling().
  std::array<nn::Tensor<double>, 2> coupling;
  double coupling_strength = 0.15;
  double innovation_scale = 1.0;
  // Std of per-subject Gaussian perturbations of the off-diagonal couplings.
  double subject_jitter = 0.05;
  std::size_t burn_in = 100;
  std::uint64_t seed = 0;

  void validate() const;
};

// 0.5 on the diagonal plus symmetric coupling of strength `strength` between
// ROI pairs (0,1), (2,3), ... for class 0 and (1,2), (3,4), ..., (R-1,0) for
// class 1, so the classes differ in connectivity.
nn::Tensor<double> default_coupling(int label, std::size_t rois, double strength);

double spectral_radius(const nn::Tensor<double>& matrix);

// Rescales to spectral radius 0.94 when the radius is >= 0.95.
nn::Tensor<double> stabilize(nn::Tensor<double> matrix);

// x_t = A x_{t-1} + scale * eta_t from x = 0, discarding `burn_in` steps.
nn::Tensor<double> simulate_var(const nn::Tensor<double>& coupling, std::size_t length, std::size_t burn_in,
                                double scale, Rng& rng);

// Class-conditional VAR(1) cohort, preprocessed. Byte-identical for equal configs.
Cohort generate_toy_cohort(const ToyGenConfig& config);

class FoldSplit;
class TrainingSlice;

struct InnerFold;

// Read access to subjects of a cohort that a caller may train on. Instances
// only come from FoldSplit (the complement of a held-out fold, or the whole
// cohort when no fold is held out) and can only be narrowed, so a held-out
// subject can never reach a training routine.
class TrainingSlice {
 public:
  std::size_t size() const noexcept { return indices_.size(); }
  bool empty() const noexcept { return indices_.empty(); }
  const Subject& operator[](std::size_t i) const { return (*cohort_)[indices_[i]]; }
  std::span<const std::size_t> indices() const noexcept { return indices_; }
  const Cohort& cohort() const noexcept { return *cohort_; }
  std::vector<std::string> ids() const;
  bool contains(std::string_view id) const;
  std::vector<int> labels() const;
  std::size_t count(int label) const;

  // Fold index this slice excludes; empty when nothing is held out.
  std::optional<std::size_t> held_out_fold() const noexcept { return held_out_; }
  std::uint64_t split_hash() const noexcept { return split_hash_; }

  TrainingSlice for_class(int label) const;
  // Throws ContractError if any id is not part of this slice.
  TrainingSlice subset(std::span<const std::string> ids) const;
  // Stratified k-fold partition of this slice, for inner cross-validation.
  std::vector<InnerFold> inner_folds(std::size_t k, std::uint64_t seed) const;

 private:
  friend class FoldSplit;
  TrainingSlice(std::shared_ptr<const Cohort> cohort, std::vector<std::size_t> indices,
                std::optional<std::size_t> held_out, std::uint64_t split_hash);

  std::shared_ptr<const Cohort> cohort_;
  std::vector<std::size_t> indices_;
  std::optional<std::size_t> held_out_;
  std::uint64_t split_hash_ = 0;
};

struct InnerFold {
  TrainingSlice train;
  TrainingSlice validation;
};

// Subjects of a held-out fold, for evaluation only.
class HeldOutSlice {
 public:
  std::size_t size() const noexcept { return indices_.size(); }
  const Subject& operator[](std::size_t i) const { return (*cohort_)[indices_[i]]; }
  std::vector<std::string> ids() const;
  std::size_t fold() const noexcept { return fold_; }

 private:
  friend class FoldSplit;
  HeldOutSlice(std::shared_ptr<const Cohort> cohort, std::vector<std::size_t> indices, std::size_t fold)
      : cohort_(std::move(cohort)), indices_(std::move(indices)), fold_(fold) {}

  std::shared_ptr<const Cohort> cohort_;
  std::vector<std::size_t> indices_;
  std::size_t fold_;
};

// Subject-level k-fold partition with capability-style access: training data
// for fold f is only reachable through training(f).
class FoldSplit {
 public:
  std::size_t folds() const noexcept { return folds_.size(); }
  // Cohort indices in fold f, ascending.
  const std::vector<std::size_t>& fold_indices(std::size_t f) const;
  std::vector<std::string> fold_ids(std::size_t f) const;
  std::uint64_t hash() const noexcept { return hash_; }
  const Cohort& cohort() const noexcept { return *cohort_; }

  TrainingSlice training(std::size_t held_out) const;
  HeldOutSlice held_out(std::size_t fold) const;

  // Every subject, nothing held out (single-model CLI runs).
  static TrainingSlice whole_cohort(std::shared_ptr<const Cohort> cohort);

 private:
  friend FoldSplit subject_kfold_split(std::shared_ptr<const Cohort> cohort, std::size_t k,
                                       std::uint64_t seed);
  FoldSplit(std::shared_ptr<const Cohort> cohort, std::vector<std::vector<std::size_t>> folds);

  std::shared_ptr<const Cohort> cohort_;
  std::vector<std::vector<std::size_t>> folds_;
  std::uint64_t hash_ = 0;
};

// Label-stratified, exact-cover split; fold sizes differ by at most one.
FoldSplit subject_kfold_split(std::shared_ptr<const Cohort> cohort, std::size_t k, std::uint64_t seed);

}  // namespace tsdf::data
