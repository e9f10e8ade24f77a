#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

#include "test_util.hpp"
#include "tsdf/diffusion.hpp"
#include "tsdf/pretrain.hpp"

namespace tsdf::diffusion {
namespace {

using nn::Tensor;

// Predicts zeros; has one dummy parameter so an optimizer can be built.
class ZeroModel : public model::EpsilonModel<double> {
 public:
  ZeroModel() { store_.add("dummy", Tensor<double>({1})); }
  nn::Var<double> predict(nn::Graph<double>& g, const Tensor<double>& x_t, std::span<const std::size_t>,
                          const model::ForwardOptions<double>&) override {
    return g.constant(Tensor<double>(x_t.shape(), 0.0));
  }
  nn::ParameterStore<double>& parameters() override { return store_; }

 protected:
  nn::ParameterStore<double> store_;
};

// Returns whatever noise the training step reports through its hook.
class EchoModel : public ZeroModel {
 public:
  Tensor<double> noise;
  nn::Var<double> predict(nn::Graph<double>& g, const Tensor<double>&, std::span<const std::size_t>,
                          const model::ForwardOptions<double>&) override {
    return g.constant(noise);
  }
};

// Exact noise predictor for data x0 ~ N(mu, 1): x_t ~ N(sqrt(abar) mu, 1), so
// E[eps | x_t] = sqrt(1 - abar) (x_t - sqrt(abar) mu).
class GaussianOracle : public ZeroModel {
 public:
  GaussianOracle(const NoiseSchedule& s, double mu) : schedule_(s), mu_(mu) {}
  nn::Var<double> predict(nn::Graph<double>& g, const Tensor<double>& x_t, std::span<const std::size_t> steps,
                          const model::ForwardOptions<double>&) override {
    Tensor<double> out(x_t.shape());
    const std::size_t per = x_t.size() / steps.size();
    for (std::size_t b = 0; b < steps.size(); ++b) {
      const double ab = schedule_.alpha_bar(steps[b]);
      for (std::size_t j = b * per; j < (b + 1) * per; ++j) {
        out[j] = std::sqrt(1 - ab) * (x_t[j] - std::sqrt(ab) * mu_);
      }
    }
    return g.constant(std::move(out));
  }

 private:
  const NoiseSchedule& schedule_;
  double mu_;
};

class BlowUpModel : public ZeroModel {
 public:
  nn::Var<double> predict(nn::Graph<double>& g, const Tensor<double>& x_t, std::span<const std::size_t>,
                          const model::ForwardOptions<double>&) override {
    return g.constant(Tensor<double>(x_t.shape(), std::numeric_limits<double>::max()));
  }
};

model::DenoiserConfig small_config() {
  model::DenoiserConfig c;
  c.n_layers = 1;
  c.d_model = 16;
  c.n_heads = 2;
  return c;
}

std::shared_ptr<const data::Cohort> toy(std::size_t n = 16, std::uint64_t seed = 3) {
  data::ToyGenConfig t;
  t.n_per_class = n;
  t.rois = 4;
  t.length = 16;
  t.seed = seed;
  return std::make_shared<const data::Cohort>(data::generate_toy_cohort(t));
}

TrainConfig quick(std::size_t epochs = 3) {
  TrainConfig t;
  t.epochs = epochs;
  t.T = 50;
  t.seed = 11;
  t.lr = 1e-3;
  return t;
}

TEST(TrainStep, ZeroPredictorLossIsChiSquareMean) {
  ZeroModel model;
  const auto s = cosine_schedule(100);
  nn::AdamW<double> opt(model.parameters(), {1e-3});
  Rng rng(5);
  const Tensor<double> batch({1000, 2, 2}, 0.3);
  const double loss = train_step(batch, model, s, opt, rng, 1);
  EXPECT_NEAR(loss, 1.0, 0.05);
}

TEST(TrainStep, TrueNoiseOracleGivesZeroLoss) {
  EchoModel model;
  const auto s = cosine_schedule(100);
  nn::AdamW<double> opt(model.parameters(), {1e-3});
  Rng rng(6);
  StepHooks<double> hooks;
  std::vector<std::size_t> seen;
  hooks.on_noise = [&](const Tensor<double>& eps, std::span<const std::size_t> steps) {
    model.noise = eps;
    seen.assign(steps.begin(), steps.end());
  };
  const auto batch = testing::random_tensor({8, 3, 2}, 7);
  EXPECT_EQ(train_step(batch, model, s, opt, rng, 1, &hooks), 0.0);
  ASSERT_EQ(seen.size(), 8u);
  for (auto t : seen) {
    EXPECT_GE(t, 1u);
    EXPECT_LE(t, 100u);
  }
}

TEST(TrainStep, NonFiniteLossNamesStep) {
  BlowUpModel model;
  const auto s = cosine_schedule(10);
  nn::AdamW<double> opt(model.parameters(), {1e-3});
  Rng rng(1);
  try {
    train_step(Tensor<double>({2, 2, 2}, 0.0), model, s, opt, rng, 42);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("training step 42"), std::string::npos) << e.what();
  }
}

TEST(Train, LossDecreases) {
  auto cohort = toy(16);
  const auto slice = data::FoldSplit::whole_cohort(cohort).for_class(0);
  auto tc = quick(50);
  tc.T = 100;
  const auto m = train(slice, small_config(), tc);
  ASSERT_EQ(m.log.size(), 50u);
  auto median = [&](std::size_t from, std::size_t to) {
    std::vector<double> v;
    for (std::size_t e = from; e <= to; ++e) v.push_back(m.log[e - 1].mean_loss);
    std::nth_element(v.begin(), v.begin() + v.size() / 2, v.end());
    return v[v.size() / 2];
  };
  EXPECT_LT(median(41, 50), median(1, 10));
  for (std::size_t e = 0; e < 50; ++e) EXPECT_EQ(m.log[e].epoch, e + 1);
}

TEST(Train, BitwiseRepeatable) {
  auto cohort = toy(8);
  const auto slice = data::FoldSplit::whole_cohort(cohort).for_class(1);
  const auto a = train(slice, small_config(), quick());
  const auto b = train(slice, small_config(), quick());
  EXPECT_EQ(nn::encode_checkpoint(nn::export_parameters(a.denoiser.parameters())),
            nn::encode_checkpoint(nn::export_parameters(b.denoiser.parameters())));
  EXPECT_EQ(a.class_label, 1);
  EXPECT_EQ(a.config.seq_len, 16u);
  EXPECT_EQ(a.config.input_dim, 4u);
  EXPECT_EQ(a.config.diffusion_steps, 50u);
}

TEST(Train, SliceContracts) {
  auto cohort = toy(4);
  const auto whole = data::FoldSplit::whole_cohort(cohort);
  EXPECT_THROW(train(whole, small_config(), quick()), ContractError);
  const std::vector<std::string> none;
  EXPECT_THROW(train(whole.subset(none), small_config(), quick()), ConfigError);
  auto tc = quick();
  tc.init_mode = InitMode::pretrained;
  EXPECT_THROW(train(whole.for_class(0), small_config(), tc), ConfigError);
  tc = quick();
  tc.lr = 0;
  EXPECT_THROW(train(whole.for_class(0), small_config(), tc), ConfigError);
}

TEST(Train, PretrainedInitCopiesEncoderExactly) {
  auto cfg = small_config();
  cfg.input_dim = 4;
  cfg.seq_len = 16;
  model::Classifier<float> clf(cfg, 99);
  const auto encoder = nn::export_parameters(clf.parameters(), model::Classifier<float>::kPrefix);
  auto tc = quick();
  tc.init_mode = InitMode::pretrained;
  const auto net = initial_denoiser(cfg, tc, &encoder);
  for (const auto& t : encoder) {
    const auto name = "denoiser." + t.name.substr(std::string("encoder.").size());
    EXPECT_EQ(net.parameters().at(name).value, t.value) << name;
  }
  const auto fresh = initial_denoiser(cfg, quick(), nullptr);
  EXPECT_NE(fresh.parameters().at("denoiser.input_proj.weight").value,
            net.parameters().at("denoiser.input_proj.weight").value);
  EXPECT_EQ(fresh.parameters().at("denoiser.output_proj.weight").value,
            net.parameters().at("denoiser.output_proj.weight").value);
}

TEST(Sample, ShapeDeterminismAndChunking) {
  model::DenoiserConfig cfg = small_config();
  cfg.input_dim = 3;
  cfg.seq_len = 5;
  cfg.diffusion_steps = 20;
  model::Denoiser<float> net(cfg, 1);
  const auto s = cosine_schedule(20);
  const auto a = sample<float>(net, s, 5, 5, 3, 77);
  EXPECT_EQ(a.shape(), (nn::Shape{5, 5, 3}));
  EXPECT_EQ(a, sample<float>(net, s, 5, 5, 3, 77));
  const auto b = sample<float>(net, s, 5, 5, 3, 78);
  double d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d += (a[i] - b[i]) * (a[i] - b[i]);
  EXPECT_GT(d, 0.0);
  EXPECT_THROW(sample<float>(net, s, 0, 5, 3, 1), ConfigError);
}

TEST(Sample, ChunkingOnlyReassociates) {
  model::DenoiserConfig cfg = small_config();
  cfg.input_dim = 3;
  cfg.seq_len = 5;
  cfg.diffusion_steps = 20;
  model::Denoiser<double> net(cfg, 1);
  const auto s = cosine_schedule(20);
  const auto whole = sample<double>(net, s, 5, 5, 3, 77, VarianceKind::beta, 5);
  const auto pieces = sample<double>(net, s, 5, 5, 3, 77, VarianceKind::beta, 2);
  EXPECT_LT(nn::max_abs_diff(whole, pieces), 1e-9);
}

TEST(Sample, NonFiniteNamesStep) {
  BlowUpModel model;
  const auto s = cosine_schedule(10);
  try {
    sample<double>(model, s, 2, 1, 1, 3);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("sampling step 10"), std::string::npos) << e.what();
  }
}

struct OracleCase {
  VarianceKind variance;
  double clip;
};

class GaussianSampler : public ::testing::TestWithParam<OracleCase> {};

TEST_P(GaussianSampler, RecoversDataMean) {
  const auto s = cosine_schedule(1000);
  const double mu = 1.5;
  GaussianOracle oracle(s, mu);
  const auto x = sample<double>(oracle, s, 5000, 1, 1, 2025, GetParam().variance, 5000, GetParam().clip);
  double m = 0, v = 0;
  for (double e : x.values()) m += e;
  m /= 5000;
  for (double e : x.values()) v += (e - m) * (e - m);
  v /= 4999;
  EXPECT_NEAR(m, mu, 0.05);
  EXPECT_NEAR(v, 1.0, 0.1);
}

INSTANTIATE_TEST_SUITE_P(Variances, GaussianSampler,
                         ::testing::Values(OracleCase{VarianceKind::beta, 0.0},
                                           OracleCase{VarianceKind::posterior, 0.0},
                                           OracleCase{VarianceKind::beta, 100.0}));

TEST(Sample, InactiveClipMatchesPlainUpdate) {
  const auto s = cosine_schedule(200);
  GaussianOracle oracle(s, 0.5);
  const auto plain = sample<double>(oracle, s, 64, 1, 1, 4, VarianceKind::beta, 64, 0.0);
  const auto clipped = sample<double>(oracle, s, 64, 1, 1, 4, VarianceKind::beta, 64, 1e6);
  for (std::size_t i = 0; i < plain.size(); ++i) EXPECT_NEAR(plain[i], clipped[i], 1e-9);
}

TEST(Sample, ClipBoundsStepZeroEstimate) {
  // A useless predictor with clipping still lands inside the bound at t = 1,
  // where the posterior mean is the clamped x0 estimate itself.
  ZeroModel model;
  const auto s = cosine_schedule(50);
  const auto x = sample<double>(model, s, 32, 2, 2, 8, VarianceKind::beta, 32, 2.0);
  for (double v : x.values()) EXPECT_LE(std::abs(v), 2.0 + 1e-12);
}

TEST(Persistence, SaveLoadRoundTrip) {
  auto cohort = toy(4);
  const auto split = data::subject_kfold_split(cohort, 2, 5);
  auto m = train(split.training(1).for_class(0), small_config(), quick(2));
  const auto dir = testing::scratch_dir("model_roundtrip");
  save_model(m, dir);
  auto back = load_model(dir);
  EXPECT_EQ(back.checkpoint_hash(), m.checkpoint_hash());
  EXPECT_EQ(back.config, m.config);
  EXPECT_EQ(back.train_config, m.train_config);
  EXPECT_EQ(back.class_label, 0);
  EXPECT_EQ(back.data_bound, m.data_bound);
  EXPECT_EQ(back.provenance.held_out_fold, std::optional<std::size_t>(1));
  EXPECT_EQ(back.provenance.split_hash, split.hash());
  EXPECT_EQ(back.provenance.training_ids, m.provenance.training_ids);
  EXPECT_EQ(sample(back, 3, 9), sample(m, 3, 9));
}

TEST(Persistence, ConfigRoundTrip) {
  TrainConfig t;
  t.epochs = 7;
  t.lr = 3e-4;
  t.variance = VarianceKind::posterior;
  t.init_mode = InitMode::pretrained;
  t.clip_denoised = false;
  ConfigMap c;
  write_config(c, t);
  EXPECT_EQ(read_train_config(c), t);
  auto d = small_config();
  d.pre_norm = false;
  write_config(c, d);
  EXPECT_EQ(read_denoiser_config(c), d);
  EXPECT_THROW(parse_variance("learned"), ConfigError);
  EXPECT_THROW(parse_init_mode("warm"), ConfigError);
}

TEST(Generate, CarriesProvenanceAndLabel) {
  auto cohort = toy(6);
  const auto split = data::subject_kfold_split(cohort, 3, 2);
  const auto slice = split.training(2).for_class(1);
  auto m = train(slice, small_config(), quick(1));
  const auto set = generate(m, 4, 12);
  EXPECT_EQ(set.class_label, 1);
  EXPECT_EQ(set.model_hash, m.checkpoint_hash());
  EXPECT_EQ(set.provenance.training_ids, slice.ids());
  for (const auto& id : set.provenance.training_ids) {
    const auto held = split.fold_ids(2);
    EXPECT_EQ(std::find(held.begin(), held.end(), id), held.end());
  }
  EXPECT_EQ(set.series.shape(), (nn::Shape{4, 16, 4}));
}

}  // namespace
}  // namespace tsdf::diffusion
