#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "tsdf/config.hpp"
#include "tsdf/data.hpp"
#include "tsdf/denoiser.hpp"
#include "tsdf/nn/checkpoint.hpp"
#include "tsdf/nn/optim.hpp"
#include "tsdf/schedule.hpp"

namespace tsdf::diffusion {

enum class InitMode { random, pretrained };

std::string to_string(InitMode mode);
InitMode parse_init_mode(std::string_view text);
std::string to_string(VarianceKind kind);
VarianceKind parse_variance(std::string_view text);

struct TrainConfig {
  std::size_t epochs = 500;
  std::size_t batch_size = 16;
  double lr = 1e-4;
  double weight_decay = 1e-3;
  std::size_t T = 1000;
  std::uint64_t seed = 0;
  InitMode init_mode = InitMode::random;
  VarianceKind variance = VarianceKind::beta;
  double cosine_s = 0.008;
  double beta_clip = 0.999;
  // Clamp the implied x0 estimate to the training data range while sampling.
  bool clip_denoised = true;

  void validate() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  double mean_loss = 0.0;
  double wall_seconds = 0.0;
};

// Where a model's training data came from.
struct Provenance {
  std::optional<std::size_t> held_out_fold;
  std::uint64_t split_hash = 0;
  std::vector<std::string> training_ids;
};

struct DiffusionModel {
  NoiseSchedule schedule;
  model::DenoiserConfig config;
  TrainConfig train_config;
  int class_label = 0;
  model::Denoiser<float> denoiser;
  Provenance provenance;
  std::vector<EpochLog> log;
  double data_bound = 0.0;  // max |x| over the training data

  // Hash of the encoded weight checkpoint.
  std::uint64_t checkpoint_hash() const;
};

// Test hook: sees the drawn noise and steps before the forward pass.
template <class T>
struct StepHooks {
  std::function<void(const nn::Tensor<T>& eps, std::span<const std::size_t> steps)> on_noise;
};

// One optimization step on batch [B x L x R]: per-element t ~ U{1..T},
// eps ~ N(0, I), x_t by the closed-form marginal, MSE(eps, eps_hat), backprop
// and one optimizer step. Returns the loss.
template <class T>
double train_step(const nn::Tensor<T>& batch, model::EpsilonModel<T>& model, const NoiseSchedule& schedule,
                  nn::AdamW<T>& optimizer, Rng& rng, std::size_t step_index, const StepHooks<T>* hooks = nullptr);

// Optional per-series transform applied before stacking (FC-level synthesis
// feeds [1 x F] feature rows instead of [L x R] series).
using SeriesTransform = std::function<nn::Tensor<double>(const nn::Tensor<double>&)>;

// Stacks the slice into [N x L x R] (after `transform`, if any).
nn::Tensor<float> stack_series(const data::TrainingSlice& slice, const SeriesTransform& transform = {});

// Denoiser with shape fields taken from the data and diffusion_steps = T,
// encoder tensors transferred when init_mode is pretrained.
model::Denoiser<float> initial_denoiser(model::DenoiserConfig config, const TrainConfig& train,
                                        const nn::TensorList* encoder);

using EpochCallback = std::function<void(const EpochLog&)>;

// Trains one per-class model on `slice`. Empty slice -> ConfigError; slice
// holding both classes -> ContractError; pretrained init without an encoder
// -> ConfigError.
DiffusionModel train(const data::TrainingSlice& slice, const model::DenoiserConfig& config, const TrainConfig& train,
                     const nn::TensorList* encoder = nullptr, const SeriesTransform& transform = {},
                     const EpochCallback& on_epoch = {});

// Ancestral sampling of n samples of shape [L x R]. Sample i draws from its own
// substream, so `chunk` changes results only through floating-point summation
// order inside the batched forward pass.
//
// With x0_clip > 0 the step mean is the posterior mean given
// clamp((x_t - sqrt(1 - abar_t) eps_hat) / sqrt(abar_t), -x0_clip, x0_clip),
// which equals the plain update whenever the clamp is inactive.
template <class T>
nn::Tensor<T> sample(model::EpsilonModel<T>& model, const NoiseSchedule& schedule, std::size_t n, std::size_t L,
                     std::size_t R, std::uint64_t seed, VarianceKind variance = VarianceKind::beta,
                     std::size_t chunk = 32, double x0_clip = 0.0);

nn::Tensor<float> sample(DiffusionModel& model, std::size_t n, std::uint64_t seed, std::size_t chunk = 32);

// Synthetic subjects plus the tags that tie them to their generating model.
struct SyntheticSet {
  nn::Tensor<double> series;  // [n x L x R]
  int class_label = 0;
  std::uint64_t model_hash = 0;
  std::uint64_t seed = 0;
  Provenance provenance;
};

SyntheticSet generate(DiffusionModel& model, std::size_t n, std::uint64_t seed, std::size_t chunk = 32);

// Config round-trip under a key prefix ("denoiser." / "diffusion.").
void write_config(ConfigMap& out, const model::DenoiserConfig& config, const std::string& prefix = "denoiser.");
model::DenoiserConfig read_denoiser_config(const ConfigMap& in, model::DenoiserConfig fallback = {},
                                           const std::string& prefix = "denoiser.");
void write_config(ConfigMap& out, const TrainConfig& config, const std::string& prefix = "diffusion.");
TrainConfig read_train_config(const ConfigMap& in, TrainConfig fallback = {}, const std::string& prefix = "diffusion.");

inline constexpr const char* kWeightsFile = "model.tsdf";
inline constexpr const char* kHeaderFile = "model.cfg";

// Writes dir/model.tsdf and dir/model.cfg.
void save_model(const DiffusionModel& model, const std::filesystem::path& dir);
DiffusionModel load_model(const std::filesystem::path& dir);

// epoch,mean_loss,wall_seconds
void write_training_log(std::ostream& out, const std::vector<EpochLog>& log);

}  // namespace tsdf::diffusion
