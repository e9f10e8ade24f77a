#include "tsdf/denoiser.hpp"

#include <cmath>
#include <string>

namespace tsdf::model {

using nn::Graph;
using nn::ParameterStore;
using nn::Shape;
using nn::Tensor;
using nn::Var;

void DenoiserConfig::validate() const {
  if (n_layers == 0 || d_model == 0 || n_heads == 0 || input_dim == 0 || seq_len == 0 ||
      diffusion_steps == 0) {
    throw ConfigError("denoiser: all dimensions must be positive");
  }
  if (d_model % n_heads != 0) {
    throw ConfigError("denoiser: d_model " + std::to_string(d_model) + " not divisible by n_heads " +
                      std::to_string(n_heads));
  }
  if (d_model % 2 != 0) throw ConfigError("denoiser: d_model must be even for the sinusoidal encodings");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("denoiser: dropout must lie in [0, 1)");
  if (!(ln_eps > 0.0)) throw ConfigError("denoiser: layer-norm epsilon must be positive");
}

std::vector<double> sinusoidal_row(double position, std::size_t width) {
  if (width == 0 || width % 2 != 0) {
    throw ConfigError("sinusoidal encoding: width must be even and positive, got " + std::to_string(width));
  }
  std::vector<double> row(width);
  for (std::size_t i = 0; i < width / 2; ++i) {
    const double freq = std::pow(10000.0, double(2 * i) / double(width));
    row[2 * i] = std::sin(position / freq);
    row[2 * i + 1] = std::cos(position / freq);
  }
  return row;
}

Tensor<double> temporal_encoding(std::size_t length, std::size_t width) {
  if (length == 0) throw ConfigError("temporal_encoding: length must be positive");
  if (width == 0 || width % 2 != 0) {
    throw ConfigError("temporal_encoding: width must be even and positive, got " + std::to_string(width));
  }
  Tensor<double> out({length, width});
  for (std::size_t t = 0; t < length; ++t) {
    auto row = sinusoidal_row(double(t), width);
    std::copy(row.begin(), row.end(), out.data() + t * width);
  }
  return out;
}

template <class T>
Var<T> attention(Var<T> q, Var<T> k, Var<T> v) {
  const auto& qs = q.value().shape();
  const auto& ks = k.value().shape();
  const auto& vs = v.value().shape();
  if (qs.size() != 2 || ks.size() != 2 || vs.size() != 2 || qs[1] != ks[1] || ks[0] != vs[0]) {
    throw DimensionError("attention: Q " + nn::shape_string(qs) + ", K " + nn::shape_string(ks) + ", V " +
                         nn::shape_string(vs));
  }
  const T inv_scale = T{1} / std::sqrt(T(qs[1]));
  auto weights = nn::softmax(nn::scale(nn::matmul(q, nn::transpose(k)), inv_scale));
  return nn::matmul(weights, v);
}

template <class T>
Tensor<T> uniform_init(const Shape& shape, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(double(fan_in));
  Tensor<T> out(shape);
  for (auto& v : out.values()) v = T(rng.uniform(-bound, bound));
  return out;
}

namespace {

bool is_norm(const std::string& name) {
  return name.find("norm") != std::string::npos;
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

// Linear layers (weight [in x out], bias [out]) draw from U(+-1/sqrt(in));
// norms start at gamma = 1, beta = 0.
template <class T>
void add_schema(ParameterStore<T>& store, const std::string& prefix,
                const std::vector<std::pair<std::string, Shape>>& schema, Rng& rng) {
  std::size_t fan_in = 1;
  for (const auto& [name, shape] : schema) {
    Tensor<T> init(shape);
    if (is_norm(name)) {
      if (ends_with(name, ".gamma")) init.fill(T{1});
    } else {
      if (ends_with(name, ".weight")) fan_in = shape[0];
      init = uniform_init<T>(shape, fan_in, rng);
    }
    store.add(prefix + name, std::move(init));
  }
}

void push_linear(std::vector<std::pair<std::string, Shape>>& out, const std::string& name, std::size_t in,
                 std::size_t width) {
  out.push_back({name + ".weight", {in, width}});
  out.push_back({name + ".bias", {width}});
}

void push_norm(std::vector<std::pair<std::string, Shape>>& out, const std::string& name, std::size_t width) {
  out.push_back({name + ".gamma", {width}});
  out.push_back({name + ".beta", {width}});
}

}  // namespace

template <class T>
std::vector<std::pair<std::string, Shape>> TemporalEncoder<T>::schema(const DenoiserConfig& c) {
  std::vector<std::pair<std::string, Shape>> out;
  push_linear(out, "input_proj", c.input_dim, c.d_model);
  for (std::size_t i = 0; i < c.n_layers; ++i) {
    const std::string base = "layers." + std::to_string(i) + ".";
    push_norm(out, base + "norm1", c.d_model);
    for (const char* proj : {"wq", "wk", "wv", "wo"}) {
      push_linear(out, base + "attn." + proj, c.d_model, c.d_model);
    }
    push_norm(out, base + "norm2", c.d_model);
    push_linear(out, base + "ff1", c.d_model, c.ff_width());
    push_linear(out, base + "ff2", c.ff_width(), c.d_model);
  }
  return out;
}

template <class T>
TemporalEncoder<T>::TemporalEncoder(ParameterStore<T>& store, std::string prefix, const DenoiserConfig& config,
                                    Rng& init)
    : prefix_(std::move(prefix)), config_(config) {
  config_.validate();
  add_schema(store, prefix_, schema(config_), init);
  encoding_ = temporal_encoding(config_.seq_len, config_.d_model).template cast<T>();
}

template <class T>
Var<T> TemporalEncoder<T>::param(Graph<T>& g, ParameterStore<T>& store, const std::string& name) const {
  return g.parameter(store.at(prefix_ + name));
}

template <class T>
Var<T> TemporalEncoder<T>::embed(Graph<T>& g, ParameterStore<T>& store, Var<T> tokens) const {
  auto h = nn::linear(tokens, param(g, store, "input_proj.weight"), param(g, store, "input_proj.bias"));
  return nn::add_tile(h, g.constant(encoding_));
}

template <class T>
Var<T> TemporalEncoder<T>::layer(Graph<T>& g, ParameterStore<T>& store, std::size_t index, Var<T> h,
                                 const ForwardOptions<T>& options) const {
  const std::string base = "layers." + std::to_string(index) + ".";
  const T eps = T(config_.ln_eps);
  Rng* drop_rng = options.training ? options.dropout_rng : nullptr;
  auto norm = [&](Var<T> x, const char* which) {
    return nn::layer_norm(x, param(g, store, base + which + ".gamma"), param(g, store, base + which + ".beta"),
                          eps);
  };
  auto proj = [&](Var<T> x, const std::string& name) {
    return nn::linear(x, param(g, store, base + name + ".weight"), param(g, store, base + name + ".bias"));
  };

  auto attention_block = [&](Var<T> x) {
    auto q = proj(x, "attn.wq");
    auto k = proj(x, "attn.wk");
    auto v = proj(x, "attn.wv");
    auto* sink = options.probe ? &options.probe->attention_weights : nullptr;
    auto a = nn::multi_head_attention(q, k, v, config_.seq_len, config_.n_heads, sink);
    return nn::dropout(proj(a, "attn.wo"), config_.dropout, drop_rng);
  };
  auto feed_forward = [&](Var<T> x) {
    auto f = nn::gelu(proj(x, "ff1"));
    f = nn::dropout(f, config_.dropout, drop_rng);
    return nn::dropout(proj(f, "ff2"), config_.dropout, drop_rng);
  };

  if (options.probe) options.probe->layer_inputs.push_back(h.value());
  Var<T> out;
  if (config_.pre_norm) {
    h = nn::add(h, attention_block(norm(h, "norm1")));
    out = nn::add(h, feed_forward(norm(h, "norm2")));
  } else {
    h = norm(nn::add(h, attention_block(h)), "norm1");
    out = norm(nn::add(h, feed_forward(h)), "norm2");
  }
  if (options.probe) options.probe->layer_outputs.push_back(out.value());
  return out;
}

template <class T>
Var<T> TemporalEncoder<T>::encode(Graph<T>& g, ParameterStore<T>& store, Var<T> h,
                                  const ForwardOptions<T>& options) const {
  for (std::size_t i = 0; i < config_.n_layers; ++i) h = layer(g, store, i, h, options);
  return h;
}

template <class T>
std::vector<std::pair<std::string, Shape>> Denoiser<T>::head_schema(const DenoiserConfig& c) {
  std::vector<std::pair<std::string, Shape>> out;
  push_linear(out, "time_mlp.fc1", c.d_model, c.d_model);
  push_linear(out, "time_mlp.fc2", c.d_model, c.d_model);
  push_linear(out, "output_proj", c.d_model, c.input_dim);
  return out;
}

template <class T>
Denoiser<T>::Denoiser(const DenoiserConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng = Rng::substream(seed, "denoiser.init");
  encoder_ = TemporalEncoder<T>(store_, kPrefix, config_, rng);
  add_schema(store_, kPrefix, head_schema(config_), rng);
}

template <class T>
Var<T> Denoiser<T>::timestep_embedding(Graph<T>& g, std::span<const std::size_t> steps) {
  const std::size_t d = config_.d_model;
  Tensor<T> base({steps.size(), d});
  for (std::size_t b = 0; b < steps.size(); ++b) {
    if (steps[b] < 1 || steps[b] > config_.diffusion_steps) {
      throw IndexError("timestep_embedding: step " + std::to_string(steps[b]) + " outside [1, " +
                       std::to_string(config_.diffusion_steps) + "]");
    }
    auto row = sinusoidal_row(double(steps[b]), d);
    for (std::size_t c = 0; c < d; ++c) base(b, c) = T(row[c]);
  }
  auto p = [&](const char* name) { return g.parameter(store_.at(std::string(kPrefix) + name)); };
  auto h = nn::gelu(nn::linear(g.constant(std::move(base)), p("time_mlp.fc1.weight"), p("time_mlp.fc1.bias")));
  return nn::linear(h, p("time_mlp.fc2.weight"), p("time_mlp.fc2.bias"));
}

template <class T>
Var<T> Denoiser<T>::predict(Graph<T>& g, const Tensor<T>& x_t, std::span<const std::size_t> steps,
                            const ForwardOptions<T>& options) {
  const auto& s = x_t.shape();
  const bool batched = s.size() == 3;
  const std::size_t batch = batched ? s[0] : 1;
  if ((s.size() != 2 && s.size() != 3) || s[s.size() - 2] != config_.seq_len ||
      s.back() != config_.input_dim) {
    throw DimensionError("denoise_forward: expected [B x " + std::to_string(config_.seq_len) + " x " +
                         std::to_string(config_.input_dim) + "], got " + nn::shape_string(s));
  }
  if (steps.size() != batch) {
    throw DimensionError("denoise_forward: " + std::to_string(steps.size()) + " steps for batch of " +
                         std::to_string(batch));
  }
  auto tokens = g.constant(x_t.reshaped({batch * config_.seq_len, config_.input_dim}));
  auto h = encoder_.embed(g, store_, tokens);
  h = nn::add_repeat(h, timestep_embedding(g, steps));
  h = encoder_.encode(g, store_, h, options);
  auto p = [&](const char* name) { return g.parameter(store_.at(std::string(kPrefix) + name)); };
  auto out = nn::linear(h, p("output_proj.weight"), p("output_proj.bias"));
  return nn::reshape(out, s);
}

template <class T>
Tensor<T> Denoiser<T>::denoise(const Tensor<T>& x_t, std::size_t step) {
  Graph<T> g(false);
  const std::size_t steps[1] = {step};
  return predict(g, x_t, steps, {}).value();
}

template <class T>
Classifier<T>::Classifier(const DenoiserConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng = Rng::substream(seed, "classifier.init");
  encoder_ = TemporalEncoder<T>(store_, kPrefix, config_, rng);
  std::vector<std::pair<std::string, Shape>> head;
  push_linear(head, "head", config_.d_model, 2);
  add_schema(store_, "classifier.", head, rng);
}

template <class T>
Var<T> Classifier<T>::logits(Graph<T>& g, const Tensor<T>& x, const ForwardOptions<T>& options) {
  const auto& s = x.shape();
  if (s.size() != 3 || s[1] != config_.seq_len || s[2] != config_.input_dim) {
    throw DimensionError("classifier: expected [B x " + std::to_string(config_.seq_len) + " x " +
                         std::to_string(config_.input_dim) + "], got " + nn::shape_string(s));
  }
  auto tokens = g.constant(x.reshaped({s[0] * s[1], s[2]}));
  auto h = encoder_.encode(g, store_, encoder_.embed(g, store_, tokens), options);
  auto pooled = nn::mean_pool(h, config_.seq_len);
  return nn::linear(pooled, g.parameter(store_.at("classifier.head.weight")),
                    g.parameter(store_.at("classifier.head.bias")));
}

template <class T>
Tensor<T> Classifier<T>::predict_proba(const Tensor<T>& x) {
  Graph<T> g(false);
  return nn::softmax(logits(g, x, {})).value();
}

template Var<float> attention(Var<float>, Var<float>, Var<float>);
template Var<double> attention(Var<double>, Var<double>, Var<double>);
template Tensor<float> uniform_init(const Shape&, std::size_t, Rng&);
template Tensor<double> uniform_init(const Shape&, std::size_t, Rng&);
template class TemporalEncoder<float>;
template class TemporalEncoder<double>;
template class Denoiser<float>;
template class Denoiser<double>;
template class Classifier<float>;
template class Classifier<double>;

}  // namespace tsdf::model
