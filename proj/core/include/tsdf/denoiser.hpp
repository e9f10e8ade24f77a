#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tsdf/nn/graph.hpp"
#include "tsdf/nn/ops.hpp"
#include "tsdf/rng.hpp"

namespace tsdf::model {

struct DenoiserConfig {
  std::size_t n_layers = 6;
  std::size_t d_model = 256;
  std::size_t n_heads = 8;
  std::size_t d_ff = 0;  // 0 selects 4 * d_model
  std::size_t input_dim = 8;  // R, ROIs per token
  std::size_t seq_len = 64;   // L, tokens per sample
  std::size_t diffusion_steps = 1000;  // largest accepted step index
  double dropout = 0.0;
  double ln_eps = 1e-5;
  bool pre_norm = true;

  std::size_t ff_width() const noexcept { return d_ff ? d_ff : 4 * d_model; }
  std::size_t head_dim() const noexcept { return d_model / n_heads; }
  void validate() const;

  friend bool operator==(const DenoiserConfig&, const DenoiserConfig&) = default;
};

// TE(t, 2i) = sin(t / 10000^(2i / D)), TE(t, 2i + 1) = cos(t / 10000^(2i / D)),
// rows t = 0..length-1. `width` must be even.
nn::Tensor<double> temporal_encoding(std::size_t length, std::size_t width);

// One row of the same table evaluated at an arbitrary position.
std::vector<double> sinusoidal_row(double position, std::size_t width);

// Single-head softmax(Q K^T / sqrt(d_k)) V composed from primitive kernels.
template <class T>
nn::Var<T> attention(nn::Var<T> q, nn::Var<T> k, nn::Var<T> v);

// Optional capture of intermediate activations for invariant checks.
template <class T>
struct ForwardProbe {
  std::vector<nn::Tensor<T>> layer_inputs;
  std::vector<nn::Tensor<T>> layer_outputs;
  // One L x L matrix per (layer, sample, head), in that nesting order.
  std::vector<nn::Tensor<T>> attention_weights;
};

template <class T>
struct ForwardOptions {
  bool training = false;
  Rng* dropout_rng = nullptr;  // dropout is active only when training and non-null
  ForwardProbe<T>* probe = nullptr;
};

// Transformer encoder stack shared by the denoiser and the pretraining
// classifier: input projection, temporal encoding and n_layers encoder layers.
// No norm follows the last layer, so the residual stream keeps the input
// scale. Parameter names are `prefix` + a schema-relative name.
template <class T>
class TemporalEncoder {
 public:
  TemporalEncoder() = default;
  TemporalEncoder(nn::ParameterStore<T>& store, std::string prefix, const DenoiserConfig& config, Rng& init);

  // Schema-relative names and shapes, in construction order.
  static std::vector<std::pair<std::string, nn::Shape>> schema(const DenoiserConfig& config);

  // tokens: [B * L x R] -> projected tokens plus temporal encoding, [B * L x d_model].
  nn::Var<T> embed(nn::Graph<T>& g, nn::ParameterStore<T>& store, nn::Var<T> tokens) const;

  // Runs the encoder layers.
  nn::Var<T> encode(nn::Graph<T>& g, nn::ParameterStore<T>& store, nn::Var<T> h,
                    const ForwardOptions<T>& options) const;

  // One encoder layer; exposed for residual-wiring checks.
  nn::Var<T> layer(nn::Graph<T>& g, nn::ParameterStore<T>& store, std::size_t index, nn::Var<T> h,
                   const ForwardOptions<T>& options) const;

  const std::string& prefix() const noexcept { return prefix_; }

 private:
  nn::Var<T> param(nn::Graph<T>& g, nn::ParameterStore<T>& store, const std::string& name) const;

  std::string prefix_;
  DenoiserConfig config_;
  nn::Tensor<T> encoding_;
};

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) init for a [fan_in x fan_out] weight
// or a bias of a layer with the given fan_in.
template <class T>
nn::Tensor<T> uniform_init(const nn::Shape& shape, std::size_t fan_in, Rng& rng);

// Noise predictor interface used by training and sampling, so tests can inject
// analytic predictors.
template <class T>
class EpsilonModel {
 public:
  virtual ~EpsilonModel() = default;
  // x_t: [B x L x R] (or [L x R] for a single sample); one step per sample.
  // Returns the predicted noise with x_t's shape.
  virtual nn::Var<T> predict(nn::Graph<T>& g, const nn::Tensor<T>& x_t, std::span<const std::size_t> steps,
                             const ForwardOptions<T>& options) = 0;
  virtual nn::ParameterStore<T>& parameters() = 0;
};

// Temporal Transformer noise predictor. Every timepoint is one token; attention
// runs over the time axis.
template <class T>
class Denoiser : public EpsilonModel<T> {
 public:
  static constexpr const char* kPrefix = "denoiser.";

  Denoiser(const DenoiserConfig& config, std::uint64_t seed);

  nn::Var<T> predict(nn::Graph<T>& g, const nn::Tensor<T>& x_t, std::span<const std::size_t> steps,
                     const ForwardOptions<T>& options) override;
  nn::ParameterStore<T>& parameters() override { return store_; }
  const nn::ParameterStore<T>& parameters() const { return store_; }

  // Sinusoidal base of each step through the two-layer GELU MLP: [B x d_model].
  nn::Var<T> timestep_embedding(nn::Graph<T>& g, std::span<const std::size_t> steps);

  // Convenience: single-sample inference without gradients.
  nn::Tensor<T> denoise(const nn::Tensor<T>& x_t, std::size_t step);

  const DenoiserConfig& config() const noexcept { return config_; }
  const TemporalEncoder<T>& encoder() const noexcept { return encoder_; }

  // Relative names of tensors that exist only in the denoiser.
  static std::vector<std::pair<std::string, nn::Shape>> head_schema(const DenoiserConfig& config);

 private:
  DenoiserConfig config_;
  nn::ParameterStore<T> store_;
  TemporalEncoder<T> encoder_;
};

// Encoder plus mean-pool-over-tokens and a linear two-class head.
template <class T>
class Classifier {
 public:
  static constexpr const char* kPrefix = "encoder.";

  Classifier(const DenoiserConfig& config, std::uint64_t seed);

  // x: [B x L x R] -> logits [B x 2].
  nn::Var<T> logits(nn::Graph<T>& g, const nn::Tensor<T>& x, const ForwardOptions<T>& options);
  // Softmax class probabilities, [B x 2].
  nn::Tensor<T> predict_proba(const nn::Tensor<T>& x);

  nn::ParameterStore<T>& parameters() { return store_; }
  const nn::ParameterStore<T>& parameters() const { return store_; }
  const DenoiserConfig& config() const noexcept { return config_; }

 private:
  DenoiserConfig config_;
  nn::ParameterStore<T> store_;
  TemporalEncoder<T> encoder_;
};

}  // namespace tsdf::model
