#include "tsdf/diffusion.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <ostream>
#include <sstream>

#include "tsdf/error.hpp"
#include "tsdf/pretrain.hpp"

namespace tsdf::diffusion {

using nn::Tensor;

std::string to_string(InitMode mode) { return mode == InitMode::pretrained ? "pretrained" : "random"; }

InitMode parse_init_mode(std::string_view text) {
  if (text == "random") return InitMode::random;
  if (text == "pretrained") return InitMode::pretrained;
  throw ConfigError("unknown init mode '" + std::string(text) + "' (expected random or pretrained)");
}

std::string to_string(VarianceKind kind) { return kind == VarianceKind::posterior ? "posterior" : "beta"; }

VarianceKind parse_variance(std::string_view text) {
  if (text == "beta") return VarianceKind::beta;
  if (text == "posterior") return VarianceKind::posterior;
  throw ConfigError("unknown variance kind '" + std::string(text) + "' (expected beta or posterior)");
}

void TrainConfig::validate() const {
  if (epochs == 0) throw ConfigError("diffusion: epochs must be positive");
  if (batch_size == 0) throw ConfigError("diffusion: batch_size must be positive");
  if (T < 2) throw ConfigError("diffusion: T must be at least 2");
  if (!(lr > 0.0)) throw ConfigError("diffusion: lr must be positive");
  if (weight_decay < 0.0) throw ConfigError("diffusion: weight_decay must be non-negative");
}

std::uint64_t DiffusionModel::checkpoint_hash() const {
  return hash_string(nn::encode_checkpoint(nn::export_parameters(denoiser.parameters())));
}

template <class T>
double train_step(const Tensor<T>& batch, model::EpsilonModel<T>& model, const NoiseSchedule& schedule,
                  nn::AdamW<T>& optimizer, Rng& rng, std::size_t step_index, const StepHooks<T>* hooks) {
  if (batch.rank() != 3) {
    throw DimensionError("train_step: expected [B x L x R] batch, got " + nn::shape_string(batch.shape()));
  }
  const std::size_t B = batch.dim(0), per = batch.size() / B;
  std::vector<std::size_t> steps(B);
  for (auto& t : steps) t = rng.uniform_index(1, schedule.steps());
  Tensor<T> eps(batch.shape());
  for (std::size_t i = 0; i < eps.size(); ++i) eps[i] = T(rng.normal());
  if (hooks != nullptr && hooks->on_noise) hooks->on_noise(eps, steps);

  Tensor<T> x_t(batch.shape());
  for (std::size_t b = 0; b < B; ++b) {
    const double ab = schedule.alpha_bar(steps[b]);
    const T a = T(std::sqrt(ab)), s = T(std::sqrt(1.0 - ab));
    for (std::size_t j = b * per; j < (b + 1) * per; ++j) x_t[j] = a * batch[j] + s * eps[j];
  }

  optimizer.zero_grad();
  double loss_value = 0.0;
  try {
    nn::Graph<T> g;
    auto pred = model.predict(g, x_t, steps, {true, &rng, nullptr});
    auto loss = nn::mse_loss(pred, g.constant(eps));
    loss_value = double(loss.value()[0]);
    if (!std::isfinite(loss_value)) throw NumericError("non-finite loss");
    g.backward(loss);
  } catch (const NumericError& e) {
    throw NumericError("training step " + std::to_string(step_index) + ": " + e.what());
  }
  optimizer.step();
  return loss_value;
}

Tensor<float> stack_series(const data::TrainingSlice& slice, const SeriesTransform& transform) {
  if (slice.empty()) throw ConfigError("diffusion: empty training slice");
  std::vector<Tensor<double>> items;
  items.reserve(slice.size());
  for (std::size_t i = 0; i < slice.size(); ++i) {
    items.push_back(transform ? transform(slice[i].series) : slice[i].series);
    if (items.back().rank() != 2 || items.back().shape() != items.front().shape()) {
      throw DimensionError("stack_series: inconsistent series shape " + nn::shape_string(items.back().shape()));
    }
  }
  const std::size_t L = items.front().dim(0), R = items.front().dim(1);
  Tensor<float> out({items.size(), L, R});
  for (std::size_t i = 0; i < items.size(); ++i) {
    for (std::size_t j = 0; j < L * R; ++j) out[i * L * R + j] = float(items[i][j]);
  }
  return out;
}

model::Denoiser<float> initial_denoiser(model::DenoiserConfig config, const TrainConfig& train,
                                        const nn::TensorList* encoder) {
  config.diffusion_steps = train.T;
  model::Denoiser<float> denoiser(config, hash_string("diffusion.init", train.seed));
  if (train.init_mode == InitMode::pretrained) {
    if (encoder == nullptr) throw ConfigError("diffusion: pretrained init requested without an encoder checkpoint");
    pretrain::transfer_weights(*encoder, denoiser);
  }
  return denoiser;
}

DiffusionModel train(const data::TrainingSlice& slice, const model::DenoiserConfig& config, const TrainConfig& train,
                     const nn::TensorList* encoder, const SeriesTransform& transform, const EpochCallback& on_epoch) {
  train.validate();
  if (slice.empty()) throw ConfigError("diffusion: empty training slice");
  if (slice.count(0) > 0 && slice.count(1) > 0) {
    throw ContractError("diffusion: training slice mixes classes; train one model per class");
  }
  const int label = slice[0].label;
  const Tensor<float> data = stack_series(slice, transform);
  const std::size_t N = data.dim(0), L = data.dim(1), R = data.dim(2), per = L * R;
  double bound = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) bound = std::max(bound, std::abs(double(data[i])));

  model::DenoiserConfig cfg = config;
  cfg.seq_len = L;
  cfg.input_dim = R;
  auto denoiser = initial_denoiser(cfg, train, encoder);
  auto schedule = cosine_schedule(train.T, train.cosine_s, train.beta_clip);
  nn::AdamW<float> opt(denoiser.parameters(), {train.lr, 0.9, 0.999, 1e-8, train.weight_decay});

  Rng rng = Rng::substream(train.seed, "diffusion.train");
  std::vector<std::size_t> order(N);
  std::iota(order.begin(), order.end(), 0);
  std::vector<EpochLog> log;
  std::size_t step = 0;
  const auto start = std::chrono::steady_clock::now();
  for (std::size_t epoch = 1; epoch <= train.epochs; ++epoch) {
    rng.shuffle(order.begin(), order.end());
    double total = 0.0;
    for (std::size_t b0 = 0; b0 < N; b0 += train.batch_size) {
      const std::size_t bs = std::min(train.batch_size, N - b0);
      Tensor<float> batch({bs, L, R});
      for (std::size_t b = 0; b < bs; ++b) {
        std::copy_n(data.data() + order[b0 + b] * per, per, batch.data() + b * per);
      }
      total += train_step(batch, denoiser, schedule, opt, rng, ++step) * double(bs);
    }
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    log.push_back({epoch, total / double(N), wall});
    if (on_epoch) on_epoch(log.back());
  }

  Provenance prov{slice.held_out_fold(), slice.split_hash(), slice.ids()};
  auto final_config = denoiser.config();
  return DiffusionModel{std::move(schedule), final_config, train, label,
                        std::move(denoiser), std::move(prov), std::move(log), bound};
}

template <class T>
Tensor<T> sample(model::EpsilonModel<T>& model, const NoiseSchedule& schedule, std::size_t n, std::size_t L,
                 std::size_t R, std::uint64_t seed, VarianceKind variance, std::size_t chunk, double x0_clip) {
  if (n == 0 || L == 0 || R == 0) throw ConfigError("sample: n, L and R must be positive");
  if (!(x0_clip >= 0.0)) throw ConfigError("sample: x0_clip must be non-negative");
  if (chunk == 0) chunk = n;
  const std::size_t per = L * R;
  Tensor<T> out({n, L, R});
  for (std::size_t c0 = 0; c0 < n; c0 += chunk) {
    const std::size_t bs = std::min(chunk, n - c0);
    std::vector<Rng> rngs;
    rngs.reserve(bs);
    for (std::size_t i = 0; i < bs; ++i) rngs.push_back(Rng::substream(seed, "sample." + std::to_string(c0 + i)));
    Tensor<T> x({bs, L, R});
    for (std::size_t i = 0; i < bs; ++i) {
      for (std::size_t j = 0; j < per; ++j) x[i * per + j] = T(rngs[i].normal());
    }
    std::vector<std::size_t> steps(bs);
    for (std::size_t t = schedule.steps(); t >= 1; --t) {
      std::fill(steps.begin(), steps.end(), t);
      Tensor<T> eps_hat;
      try {
        nn::Graph<T> g(false);
        eps_hat = model.predict(g, x, steps, {}).value();
      } catch (const NumericError& e) {
        throw NumericError("sampling step " + std::to_string(t) + ": " + e.what());
      }
      const double a = schedule.alpha(t), ab = schedule.alpha_bar(t), ab_prev = schedule.alpha_bar_prev(t);
      const double inv_sqrt_a = 1.0 / std::sqrt(a), coef = (1.0 - a) / std::sqrt(1.0 - ab);
      const double c0 = std::sqrt(ab_prev) * (1.0 - a) / (1.0 - ab), ct = std::sqrt(a) * (1.0 - ab_prev) / (1.0 - ab);
      const double sigma = schedule.sigma(t, variance);
      for (std::size_t i = 0; i < bs; ++i) {
        for (std::size_t j = i * per; j < (i + 1) * per; ++j) {
          const double z = t > 1 ? rngs[i].normal() : 0.0;
          const double xt = double(x[j]), e = double(eps_hat[j]);
          double mean;
          if (x0_clip > 0.0) {
            const double x0 = std::clamp((xt - std::sqrt(1.0 - ab) * e) / std::sqrt(ab), -x0_clip, x0_clip);
            mean = c0 * x0 + ct * xt;
          } else {
            mean = inv_sqrt_a * (xt - coef * e);
          }
          x[j] = T(mean + sigma * z);
        }
      }
      if (!x.all_finite()) throw NumericError("sampling step " + std::to_string(t) + ": non-finite sample");
    }
    std::copy_n(x.data(), bs * per, out.data() + c0 * per);
  }
  return out;
}

Tensor<float> sample(DiffusionModel& model, std::size_t n, std::uint64_t seed, std::size_t chunk) {
  const double clip = model.train_config.clip_denoised ? model.data_bound : 0.0;
  return sample<float>(model.denoiser, model.schedule, n, model.config.seq_len, model.config.input_dim, seed,
                       model.train_config.variance, chunk, clip);
}

SyntheticSet generate(DiffusionModel& model, std::size_t n, std::uint64_t seed, std::size_t chunk) {
  SyntheticSet out;
  out.series = sample(model, n, seed, chunk).cast<double>();
  out.class_label = model.class_label;
  out.model_hash = model.checkpoint_hash();
  out.seed = seed;
  out.provenance = model.provenance;
  return out;
}

void write_config(ConfigMap& out, const model::DenoiserConfig& c, const std::string& p) {
  out.set(p + "n_layers", std::to_string(c.n_layers));
  out.set(p + "d_model", std::to_string(c.d_model));
  out.set(p + "n_heads", std::to_string(c.n_heads));
  out.set(p + "d_ff", std::to_string(c.d_ff));
  out.set(p + "input_dim", std::to_string(c.input_dim));
  out.set(p + "seq_len", std::to_string(c.seq_len));
  out.set(p + "diffusion_steps", std::to_string(c.diffusion_steps));
  out.set(p + "dropout", format_number(c.dropout));
  out.set(p + "ln_eps", format_number(c.ln_eps));
  out.set(p + "pre_norm", c.pre_norm ? "true" : "false");
}

model::DenoiserConfig read_denoiser_config(const ConfigMap& in, model::DenoiserConfig c, const std::string& p) {
  c.n_layers = in.get_size(p + "n_layers", c.n_layers);
  c.d_model = in.get_size(p + "d_model", c.d_model);
  c.n_heads = in.get_size(p + "n_heads", c.n_heads);
  c.d_ff = in.get_size(p + "d_ff", c.d_ff);
  c.input_dim = in.get_size(p + "input_dim", c.input_dim);
  c.seq_len = in.get_size(p + "seq_len", c.seq_len);
  c.diffusion_steps = in.get_size(p + "diffusion_steps", c.diffusion_steps);
  c.dropout = in.get_double(p + "dropout", c.dropout);
  c.ln_eps = in.get_double(p + "ln_eps", c.ln_eps);
  c.pre_norm = in.get_bool(p + "pre_norm", c.pre_norm);
  return c;
}

void write_config(ConfigMap& out, const TrainConfig& c, const std::string& p) {
  out.set(p + "epochs", std::to_string(c.epochs));
  out.set(p + "batch_size", std::to_string(c.batch_size));
  out.set(p + "lr", format_number(c.lr));
  out.set(p + "weight_decay", format_number(c.weight_decay));
  out.set(p + "T", std::to_string(c.T));
  out.set(p + "seed", std::to_string(c.seed));
  out.set(p + "init_mode", to_string(c.init_mode));
  out.set(p + "variance", to_string(c.variance));
  out.set(p + "cosine_s", format_number(c.cosine_s));
  out.set(p + "beta_clip", format_number(c.beta_clip));
  out.set(p + "clip_denoised", c.clip_denoised ? "true" : "false");
}

TrainConfig read_train_config(const ConfigMap& in, TrainConfig c, const std::string& p) {
  c.epochs = in.get_size(p + "epochs", c.epochs);
  c.batch_size = in.get_size(p + "batch_size", c.batch_size);
  c.lr = in.get_double(p + "lr", c.lr);
  c.weight_decay = in.get_double(p + "weight_decay", c.weight_decay);
  c.T = in.get_size(p + "T", c.T);
  c.seed = in.get_u64(p + "seed", c.seed);
  c.init_mode = parse_init_mode(in.get_string(p + "init_mode", to_string(c.init_mode)));
  c.variance = parse_variance(in.get_string(p + "variance", to_string(c.variance)));
  c.cosine_s = in.get_double(p + "cosine_s", c.cosine_s);
  c.beta_clip = in.get_double(p + "beta_clip", c.beta_clip);
  c.clip_denoised = in.get_bool(p + "clip_denoised", c.clip_denoised);
  return c;
}

namespace {

std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) out += (i ? "," : "") + items[i];
  return out;
}

std::vector<std::string> split(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

}  // namespace

void save_model(const DiffusionModel& model, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nn::save_checkpoint(dir / kWeightsFile, nn::export_parameters(model.denoiser.parameters()));
  ConfigMap header;
  write_config(header, model.config);
  write_config(header, model.train_config);
  header.set("model.class_label", std::to_string(model.class_label));
  header.set("model.data_bound", format_number(model.data_bound));
  header.set("provenance.held_out_fold",
             model.provenance.held_out_fold ? std::to_string(*model.provenance.held_out_fold) : "none");
  header.set("provenance.split_hash", std::to_string(model.provenance.split_hash));
  header.set("provenance.training_ids", join(model.provenance.training_ids));
  std::ofstream out(dir / kHeaderFile, std::ios::binary);
  if (!out) throw IngestionError("cannot write '" + (dir / kHeaderFile).string() + "'");
  out << "# diffusion model header\n" << header.to_string();
}

DiffusionModel load_model(const std::filesystem::path& dir) {
  const auto header = ConfigMap::load(dir / kHeaderFile);
  const auto config = read_denoiser_config(header);
  const auto train = read_train_config(header);
  if (config.diffusion_steps != train.T) {
    throw IngestionError(dir.string() + ": denoiser step count does not match the schedule length");
  }
  model::Denoiser<float> denoiser(config, 0);
  const auto tensors = nn::load_checkpoint(dir / kWeightsFile);
  if (tensors.size() != denoiser.parameters().size()) {
    throw IngestionError(dir.string() + ": checkpoint holds " + std::to_string(tensors.size()) +
                         " tensors, model expects " + std::to_string(denoiser.parameters().size()));
  }
  nn::import_parameters(denoiser.parameters(), tensors);
  Provenance prov;
  const auto fold = header.get_string("provenance.held_out_fold", "none");
  if (fold != "none") prov.held_out_fold = std::size_t(header.get_u64("provenance.held_out_fold", 0));
  prov.split_hash = header.get_u64("provenance.split_hash", 0);
  prov.training_ids = split(header.get_string("provenance.training_ids", ""));
  return DiffusionModel{cosine_schedule(train.T, train.cosine_s, train.beta_clip),
                        config,
                        train,
                        int(header.get_int("model.class_label", 0)),
                        std::move(denoiser),
                        std::move(prov),
                        {},
                        header.get_double("model.data_bound", 0.0)};
}

void write_training_log(std::ostream& out, const std::vector<EpochLog>& log) {
  out << "epoch,mean_loss,wall_seconds\n";
  for (const auto& e : log) {
    out << e.epoch << ',' << format_number(e.mean_loss) << ',' << format_number(e.wall_seconds) << '\n';
  }
}

template double train_step(const Tensor<float>&, model::EpsilonModel<float>&, const NoiseSchedule&,
                           nn::AdamW<float>&, Rng&, std::size_t, const StepHooks<float>*);
template double train_step(const Tensor<double>&, model::EpsilonModel<double>&, const NoiseSchedule&,
                           nn::AdamW<double>&, Rng&, std::size_t, const StepHooks<double>*);
template Tensor<float> sample(model::EpsilonModel<float>&, const NoiseSchedule&, std::size_t, std::size_t,
                              std::size_t, std::uint64_t, VarianceKind, std::size_t, double);
template Tensor<double> sample(model::EpsilonModel<double>&, const NoiseSchedule&, std::size_t, std::size_t,
                               std::size_t, std::uint64_t, VarianceKind, std::size_t, double);

}  // namespace tsdf::diffusion
