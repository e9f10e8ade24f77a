#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <sstream>

#include "test_util.hpp"
#include "tsdf/schedule.hpp"

namespace tsdf::diffusion {
namespace {

using nn::Tensor;

struct Moments {
  double mean = 0.0;
  double var = 0.0;
};

Moments moments(const Tensor<double>& x) {
  double m = 0.0;
  for (double v : x.values()) m += v;
  m /= double(x.size());
  double s = 0.0;
  for (double v : x.values()) s += (v - m) * (v - m);
  return {m, s / double(x.size() - 1)};
}

TEST(CosineSchedule, EndpointsAtT1000) {
  const auto s = cosine_schedule(1000);
  EXPECT_EQ(s.steps(), 1000u);
  EXPECT_GT(s.alpha_bar(1), 0.999);
  EXPECT_LT(s.alpha_bar(1000), 1e-3);
}

TEST(CosineSchedule, AlphaBarStrictlyDecreasing) {
  for (std::size_t T : {2u, 10u, 200u, 1000u, 4000u}) {
    const auto s = cosine_schedule(T);
    for (std::size_t t = 2; t <= T; ++t) ASSERT_LT(s.alpha_bar(t), s.alpha_bar(t - 1)) << "T=" << T << " t=" << t;
  }
}

TEST(CosineSchedule, BetasInRangeAndClipped) {
  const auto s = cosine_schedule(1000);
  double worst = 0.0;
  for (double b : s.betas()) {
    EXPECT_GT(b, 0.0);
    EXPECT_LT(b, 1.0);
    worst = std::max(worst, b);
  }
  EXPECT_LE(worst, 0.999);
  EXPECT_EQ(s.beta(1000), 0.999);
  EXPECT_LE(cosine_schedule(1000, 0.008, 0.5).beta(999), 0.5);
}

TEST(CosineSchedule, MatchesClosedFormBeforeClipping) {
  const std::size_t T = 1000;
  const double s = 0.008;
  auto f = [&](double t) {
    const double c = std::cos((t / T + s) / (1 + s) * std::numbers::pi / 2);
    return c * c;
  };
  const auto sched = cosine_schedule(T, s);
  for (std::size_t t : {1u, 10u, 250u, 500u, 900u, 990u}) {
    EXPECT_NEAR(sched.alpha_bar(t), f(t) / f(0), 1e-12 * std::max(1.0, f(t) / f(0))) << t;
  }
}

TEST(NoiseSchedule, AlphasAndRunningProductAreExact) {
  const auto s = cosine_schedule(300);
  double running = 1.0;
  for (std::size_t t = 1; t <= 300; ++t) {
    EXPECT_EQ(s.alpha(t), 1.0 - s.beta(t));
    running *= s.alpha(t);
    EXPECT_EQ(s.alpha_bar(t), running);
  }
  EXPECT_EQ(s.alpha_bar_prev(1), 1.0);
  EXPECT_EQ(s.alpha_bar_prev(7), s.alpha_bar(6));
}

TEST(NoiseSchedule, SigmaChoices) {
  const auto s = cosine_schedule(100);
  for (std::size_t t : {1u, 2u, 50u, 100u}) {
    EXPECT_DOUBLE_EQ(s.sigma(t, VarianceKind::beta), std::sqrt(s.beta(t)));
    const double tilde = (1 - s.alpha_bar_prev(t)) / (1 - s.alpha_bar(t)) * s.beta(t);
    EXPECT_DOUBLE_EQ(s.sigma(t, VarianceKind::posterior), std::sqrt(tilde));
  }
  EXPECT_EQ(s.sigma(1, VarianceKind::posterior), 0.0);
}

TEST(NoiseSchedule, Errors) {
  EXPECT_THROW(cosine_schedule(1), ConfigError);
  EXPECT_THROW(cosine_schedule(10, 0.0), ConfigError);
  EXPECT_THROW(NoiseSchedule({0.1, 1.0}), ConfigError);
  const auto s = cosine_schedule(10);
  EXPECT_THROW(s.beta(0), IndexError);
  EXPECT_THROW(s.beta(11), IndexError);
  const Tensor<double> x({3}, 1.0);
  EXPECT_THROW(single_step_diffuse(x, 0, x, s), IndexError);
  EXPECT_THROW(forward_diffuse(x, 11, x, s), IndexError);
  EXPECT_THROW(forward_diffuse(x, 1, Tensor<double>({4}), s), DimensionError);
}

TEST(SingleStep, ZeroNoiseShrinks) {
  const auto s = cosine_schedule(50);
  const Tensor<double> x({3}, {1.0, -2.0, 4.0}), zero({3}, 0.0);
  const auto out = single_step_diffuse(x, 20, zero, s);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(out[i], std::sqrt(1 - s.beta(20)) * x[i]);
}

TEST(SingleStep, ClippedBetaIsAlmostPureNoise) {
  const auto s = cosine_schedule(1000);
  const auto x = testing::random_tensor({64}, 3);
  const auto eps = testing::random_tensor({64}, 4);
  const auto out = single_step_diffuse(x, 1000, eps, s);
  for (std::size_t i = 0; i < 64; ++i) EXPECT_NEAR(out[i], eps[i], 0.05 * (1 + std::abs(x[i])));
}

TEST(ForwardDiffuse, TrivialCases) {
  const auto s = cosine_schedule(1000);
  const auto x0 = testing::random_tensor({16}, 5);
  const auto eps = testing::random_tensor({16}, 6);
  const auto a = forward_diffuse(x0, 1, Tensor<double>({16}, 0.0), s);
  for (std::size_t i = 0; i < 16; ++i) {
    EXPECT_DOUBLE_EQ(a[i], std::sqrt(s.alpha_bar(1)) * x0[i]);
    EXPECT_NEAR(a[i], x0[i], 1e-3 * std::abs(x0[i]));
  }
  const auto b = forward_diffuse(Tensor<double>({16}, 0.0), 400, eps, s);
  for (std::size_t i = 0; i < 16; ++i) EXPECT_DOUBLE_EQ(b[i], std::sqrt(1 - s.alpha_bar(400)) * eps[i]);
}

TEST(ForwardDiffuse, TerminalVarianceIsOne) {
  const auto s = cosine_schedule(1000);
  const auto x0 = testing::random_tensor({10000}, 11);
  const auto eps = testing::random_tensor({10000}, 12);
  EXPECT_NEAR(moments(forward_diffuse(x0, 1000, eps, s)).var, 1.0, 0.02);
}

// Iterating the one-step kernel from a fixed x0 reproduces the closed-form
// marginal N(sqrt(abar_t) x0, 1 - abar_t).
TEST(ForwardDiffuse, MarginalMatchesIteratedSteps) {
  const auto s = cosine_schedule(1000);
  const std::size_t n = 10000;
  const double x0 = 10.0;
  Rng rng(2024);
  Tensor<double> x({n}, x0);
  std::size_t next = 0;
  for (std::size_t t = 1; t <= 800; ++t) {
    Tensor<double> eps({n});
    for (auto& e : eps.values()) e = rng.normal();
    x = single_step_diffuse(x, t, eps, s);
    if (t == 10 || t == 100 || t == 400 || t == 800) {
      const auto m = moments(x);
      const double mean = std::sqrt(s.alpha_bar(t)) * x0, var = 1 - s.alpha_bar(t);
      EXPECT_NEAR(m.mean, mean, 0.01 * std::abs(mean)) << "t=" << t;
      EXPECT_NEAR(m.var, var, 0.02 * var) << "t=" << t;
      ++next;
    }
  }
  EXPECT_EQ(next, 4u);
}

TEST(ScheduleCsv, HeaderAndRows) {
  std::ostringstream out;
  write_schedule_csv(out, cosine_schedule(5));
  const auto text = out.str();
  EXPECT_EQ(text.rfind("t,beta,alpha,alpha_bar,sigma\n", 0), 0u);
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 6);
}

}  // namespace
}  // namespace tsdf::diffusion
