#include <gtest/gtest.h>

#include <memory>
#include <numeric>
#include <sstream>

#include "test_util.hpp"
#include "tsdf/pretrain.hpp"

namespace tsdf::pretrain {
namespace {

using nn::Tensor;

model::DenoiserConfig small() {
  model::DenoiserConfig c;
  c.n_layers = 1;
  c.d_model = 16;
  c.n_heads = 2;
  return c;
}

// n subjects per class of unit-variance noise; class c has offset
// (2c - 1) * offset on every value. Labels can be shuffled afterwards.
std::shared_ptr<const data::Cohort> offset_cohort(std::size_t n, double offset, std::uint64_t seed,
                                                  bool shuffle_labels = false) {
  Rng rng(seed);
  std::vector<int> labels;
  for (std::size_t i = 0; i < 2 * n; ++i) labels.push_back(int(i % 2));
  std::vector<int> assigned = labels;
  if (shuffle_labels) rng.shuffle(assigned.begin(), assigned.end());
  std::vector<data::Subject> subjects;
  for (std::size_t i = 0; i < 2 * n; ++i) {
    Tensor<double> s({8, 3});
    for (auto& v : s.values()) v = (2.0 * labels[i] - 1.0) * offset + rng.normal();
    subjects.push_back({"s" + std::to_string(i), assigned[i], std::move(s)});
  }
  return std::make_shared<const data::Cohort>(std::move(subjects));
}

double mean_cv_accuracy(const PretrainResult& r) {
  double s = 0;
  std::size_t n = 0;
  for (const auto& rec : r.report) {
    if (rec.grid_point != r.selected) continue;
    s += rec.val_acc;
    ++n;
  }
  return s / double(n);
}

PretrainConfig one_point(double lr, std::size_t epochs, std::uint64_t seed) {
  PretrainConfig p;
  p.grid = {{lr, 1e-4, epochs, 0.0}};
  p.seed = seed;
  return p;
}

TEST(Pretrain, SeparableClassesAreLearned) {
  auto cohort = offset_cohort(20, 2.5, 1);  // mean gap / noise std = 5
  const auto slice = data::FoldSplit::whole_cohort(cohort);
  const auto r = pretrain_classifier(slice, small(), one_point(1e-3, 20, 3));
  EXPECT_GT(mean_cv_accuracy(r), 0.95);
  EXPECT_EQ(r.report.size(), 5u);
}

TEST(Pretrain, PermutedLabelsStayNearChance) {
  double total = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto cohort = offset_cohort(20, 2.5, 100 + seed, true);
    const auto slice = data::FoldSplit::whole_cohort(cohort);
    total += mean_cv_accuracy(pretrain_classifier(slice, small(), one_point(1e-3, 10, seed)));
  }
  const double acc = total / 5;
  EXPECT_GE(acc, 0.4);
  EXPECT_LE(acc, 0.6);
}

TEST(Pretrain, SingleGridPointIsSelected) {
  auto cohort = offset_cohort(5, 1.0, 2);
  const auto r = pretrain_classifier(data::FoldSplit::whole_cohort(cohort), small(), one_point(1e-3, 2, 1));
  EXPECT_EQ(r.selected, 0u);
  EXPECT_EQ(r.hyperparameters, (GridPoint{1e-3, 1e-4, 2, 0.0}));
  for (const auto& t : r.encoder) EXPECT_EQ(t.name.rfind("encoder.", 0), 0u) << t.name;
}

TEST(Pretrain, Contracts) {
  auto cohort = offset_cohort(5, 1.0, 2);
  const auto slice = data::FoldSplit::whole_cohort(cohort);
  EXPECT_THROW(pretrain_classifier(slice.for_class(0), small(), one_point(1e-3, 1, 1)), ContractError);
  PretrainConfig empty;
  empty.grid.clear();
  EXPECT_THROW(pretrain_classifier(slice, small(), empty), ConfigError);
  PretrainConfig folds = one_point(1e-3, 1, 1);
  folds.inner_folds = 1;
  EXPECT_THROW(pretrain_classifier(slice, small(), folds), ConfigError);
}

TEST(Pretrain, RepeatableGivenSeed) {
  auto cohort = offset_cohort(6, 1.0, 4);
  const auto slice = data::FoldSplit::whole_cohort(cohort);
  PretrainConfig p;
  p.grid = make_grid({1e-3, 3e-3}, {1e-4}, {2}, {0.0, 0.1});
  p.inner_folds = 3;
  p.seed = 8;
  const auto a = pretrain_classifier(slice, small(), p);
  const auto b = pretrain_classifier(slice, small(), p);
  EXPECT_EQ(nn::encode_checkpoint(a.encoder), nn::encode_checkpoint(b.encoder));
  EXPECT_EQ(a.selected, b.selected);
  EXPECT_EQ(a.report.size(), 4u * 3u);
  EXPECT_EQ(select_grid_point(p.grid, a.report), a.selected);
}

TEST(Grid, DefaultGridAndOrder) {
  const auto g = default_grid();
  ASSERT_EQ(g.size(), 16u);
  EXPECT_EQ(g.front(), (GridPoint{1e-4, 1e-3, 50, 0.0}));
  EXPECT_EQ(g[1], (GridPoint{1e-4, 1e-3, 50, 0.1}));
  EXPECT_EQ(g.back(), (GridPoint{3e-4, 1e-4, 100, 0.1}));
}

TEST(Grid, SelectionTieBreaks) {
  const std::vector<GridPoint> grid{{3e-4, 1e-4, 50, 0}, {1e-4, 1e-3, 50, 0}, {1e-4, 1e-4, 50, 0}, {1e-3, 0, 50, 0}};
  std::vector<CvRecord> report;
  for (std::size_t g = 0; g < 4; ++g) {
    report.push_back({g, 0, g == 3 ? 0.5 : 0.8});
    report.push_back({g, 1, g == 3 ? 0.5 : 0.6});
  }
  EXPECT_EQ(select_grid_point(grid, report), 2u);  // lowest lr, then lowest weight decay
  report.push_back({0, 2, 1.0});
  report.push_back({1, 2, 0.0});
  report.push_back({2, 2, 0.0});
  report.push_back({3, 2, 0.0});
  EXPECT_EQ(select_grid_point(grid, report), 0u);
}

TEST(Transfer, CountsMatchSchemaWalk) {
  for (std::size_t layers : {1u, 2u, 6u}) {
    auto cfg = small();
    cfg.n_layers = layers;
    model::Classifier<float> clf(cfg, 1);
    model::Denoiser<float> net(cfg, 2);
    const auto encoder = nn::export_parameters(clf.parameters(), model::Classifier<float>::kPrefix);
    const auto report = transfer_weights(encoder, net);
    EXPECT_EQ(report.transferred, model::TemporalEncoder<float>::schema(cfg).size());
    EXPECT_EQ(report.transferred, 2u + 16u * layers);
    EXPECT_EQ(report.fresh, model::Denoiser<float>::head_schema(cfg).size());
    EXPECT_EQ(report.transferred + report.fresh, net.parameters().size());
    for (const auto& t : encoder) {
      EXPECT_EQ(net.parameters().at("denoiser." + t.name.substr(8)).value, t.value);
    }
  }
}

TEST(Transfer, MismatchNamesTensor) {
  auto cfg = small();
  model::Classifier<float> clf(cfg, 1);
  cfg.d_model = 32;
  cfg.n_heads = 4;
  model::Denoiser<float> net(cfg, 2);
  try {
    transfer_weights(nn::export_parameters(clf.parameters(), model::Classifier<float>::kPrefix), net);
    FAIL() << "expected ContractError";
  } catch (const ContractError& e) {
    EXPECT_NE(std::string(e.what()).find("input_proj"), std::string::npos) << e.what();
  }
  model::Denoiser<float> other(small(), 3);
  EXPECT_THROW(transfer_weights(nn::TensorList{}, other), ContractError);
}

TEST(CvReport, Format) {
  PretrainResult r;
  r.report = {{0, 0, 0.5}, {0, 1, 0.75}};
  r.selected = 0;
  r.hyperparameters = {1e-4, 1e-3, 50, 0.0};
  std::ostringstream out;
  write_cv_report(out, {r.hyperparameters}, r);
  EXPECT_EQ(out.str(),
            "grid_point_id,lr,weight_decay,epochs,dropout,fold,val_acc\n"
            "0,1e-04,0.001,50,0,0,0.5\n"
            "0,1e-04,0.001,50,0,1,0.75\n"
            "# winner,0,1e-04,0.001,50,0\n");
}

}  // namespace
}  // namespace tsdf::pretrain
