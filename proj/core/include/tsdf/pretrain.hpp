#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "tsdf/data.hpp"
#include "tsdf/denoiser.hpp"
#include "tsdf/nn/checkpoint.hpp"

namespace tsdf::pretrain {

struct GridPoint {
  double lr = 1e-4;
  double weight_decay = 1e-3;
  std::size_t epochs = 50;
  double dropout = 0.0;

  friend bool operator==(const GridPoint&, const GridPoint&) = default;
};

// Cartesian product in lr-major order.
std::vector<GridPoint> make_grid(const std::vector<double>& lrs, const std::vector<double>& weight_decays,
                                 const std::vector<double>& epochs, const std::vector<double>& dropouts);

// lr {1e-4, 3e-4} x weight_decay {1e-3, 1e-4} x epochs {50, 100} x dropout {0, 0.1}.
std::vector<GridPoint> default_grid();

struct PretrainConfig {
  std::vector<GridPoint> grid = default_grid();
  std::size_t inner_folds = 5;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;

  void validate() const;
};

struct CvRecord {
  std::size_t grid_point = 0;
  std::size_t fold = 0;
  double val_acc = 0.0;
};

struct PretrainResult {
  nn::TensorList encoder;  // "encoder."-prefixed tensors of the refit classifier
  std::size_t selected = 0;
  GridPoint hyperparameters;
  std::vector<CvRecord> report;
};

// Trains one classifier (encoder + mean-pool + linear head, softmax
// cross-entropy) with AdamW.
model::Classifier<float> fit_classifier(const data::TrainingSlice& slice, const model::DenoiserConfig& config,
                                        const GridPoint& point, std::size_t batch_size, std::uint64_t seed);

// Fraction of subjects whose argmax class matches the label.
double classifier_accuracy(model::Classifier<float>& classifier, const data::TrainingSlice& slice);

// Grid search with inner stratified k-fold CV on `slice` only, then a refit of
// the winner on the whole slice.
PretrainResult pretrain_classifier(const data::TrainingSlice& slice, const model::DenoiserConfig& config,
                                   const PretrainConfig& pretrain);

// Highest mean validation accuracy; ties go to the lower lr, then the lower
// weight decay, then the earlier grid index.
std::size_t select_grid_point(const std::vector<GridPoint>& grid, const std::vector<CvRecord>& report);

struct TransferReport {
  std::size_t transferred = 0;
  std::size_t fresh = 0;
};

// Copies every encoder-stack tensor ("encoder.<name>" -> "denoiser.<name>");
// the timestep MLP and output projection keep their fresh initialization.
// Missing or mis-shaped tensors raise ContractError naming each of them.
template <class T>
TransferReport transfer_weights(const nn::TensorList& encoder, model::Denoiser<T>& denoiser);

// grid_point_id,lr,weight_decay,epochs,dropout,fold,val_acc rows, then a
// "# winner" comment line.
void write_cv_report(std::ostream& out, const std::vector<GridPoint>& grid, const PretrainResult& result);

}  // namespace tsdf::pretrain
