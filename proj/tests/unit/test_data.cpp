#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <memory>
#include <numeric>
#include <set>

#include "test_util.hpp"
#include "tsdf/augbench.hpp"
#include "tsdf/data.hpp"

namespace tsdf::data {
namespace {

using nn::Tensor;
namespace fs = std::filesystem;

void write_file(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream(p) << text;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

template <class F>
std::string error_of(F&& f) {
  try {
    f();
  } catch (const IngestionError& e) {
    return e.what();
  }
  return "no IngestionError";
}

std::shared_ptr<const Cohort> labelled(std::size_t n0, std::size_t n1) {
  std::vector<Subject> subjects;
  for (std::size_t i = 0; i < n0 + n1; ++i) {
    subjects.push_back({"s" + std::to_string(i), i < n0 ? 0 : 1, testing::random_tensor({6, 3}, i)});
  }
  return std::make_shared<const Cohort>(std::move(subjects));
}

TEST(Cohort, RejectsMixedShapesAndDuplicates) {
  std::vector<Subject> a{{"x", 0, Tensor<double>({4, 2})}, {"y", 1, Tensor<double>({5, 2})}};
  EXPECT_THROW(Cohort{a}, DimensionError);
  std::vector<Subject> b{{"x", 0, Tensor<double>({4, 2})}, {"x", 1, Tensor<double>({4, 2})}};
  EXPECT_THROW(Cohort{b}, Error);
  const Cohort ok({{"x", 0, Tensor<double>({4, 2})}, {"y", 1, Tensor<double>({4, 2})}});
  EXPECT_EQ(ok.length(), 4u);
  EXPECT_EQ(ok.rois(), 2u);
  EXPECT_EQ(ok.find("y"), 1u);
  EXPECT_FALSE(ok.find("z"));
  EXPECT_EQ(ok.roi_names(), default_roi_names(2));
}

TEST(CohortIo, SaveLoadRoundTripIsExact) {
  ToyGenConfig cfg;
  cfg.n_per_class = 3;
  cfg.rois = 4;
  cfg.length = 10;
  const auto cohort = generate_toy_cohort(cfg);
  const auto dir = testing::scratch_dir("cohort_roundtrip");
  save_cohort(cohort, dir);
  const auto back = load_cohort(dir);
  ASSERT_EQ(back.size(), cohort.size());
  EXPECT_EQ(back.roi_names(), cohort.roi_names());
  for (std::size_t i = 0; i < cohort.size(); ++i) {
    EXPECT_EQ(back[i].id, cohort[i].id);
    EXPECT_EQ(back[i].label, cohort[i].label);
    EXPECT_EQ(back[i].series, cohort[i].series);
  }
  const auto again = testing::scratch_dir("cohort_roundtrip2");
  save_cohort(back, again);
  EXPECT_EQ(read_file(dir / kManifestName), read_file(again / kManifestName));
  EXPECT_EQ(read_file(dir / "subjects/sub-0000.csv"), read_file(again / "subjects/sub-0000.csv"));
}

TEST(CohortIo, ShortRowCitesFileAndRow) {
  const auto dir = testing::scratch_dir("cohort_short");
  write_file(dir / kManifestName, "a,0,a.csv\n");
  write_file(dir / "a.csv", "r0,r1,r2\n1,2,3\n4,5\n7,8,9\n");
  const auto msg = error_of([&] { load_cohort(dir); });
  EXPECT_NE(msg.find("a.csv:3"), std::string::npos) << msg;
  EXPECT_NE(msg.find("row 1"), std::string::npos) << msg;
}

TEST(CohortIo, ManifestErrors) {
  const auto dir = testing::scratch_dir("cohort_manifest");
  write_file(dir / "a.csv", "r0,r1\n1,2\n3,4\n5,6\n");
  write_file(dir / "b.csv", "r0,r1\n1,2\n3,4\n");
  write_file(dir / "c.csv", "r0,r1\n1,x\n3,4\n");

  write_file(dir / kManifestName, "# header\na,0,a.csv\na,1,a.csv\n");
  auto msg = error_of([&] { load_cohort(dir); });
  EXPECT_NE(msg.find(":3: duplicate subject id 'a'"), std::string::npos) << msg;

  write_file(dir / kManifestName, "a,2,a.csv\n");
  msg = error_of([&] { load_cohort(dir); });
  EXPECT_NE(msg.find("unknown label '2'"), std::string::npos) << msg;

  write_file(dir / kManifestName, "a,0,a.csv\nb,1,b.csv\n");
  msg = error_of([&] { load_cohort(dir); });
  EXPECT_NE(msg.find("subject 'b' has shape"), std::string::npos) << msg;

  write_file(dir / kManifestName, "c,0,c.csv\n");
  msg = error_of([&] { load_cohort(dir); });
  EXPECT_NE(msg.find("bad number 'x'"), std::string::npos) << msg;

  write_file(dir / kManifestName, "a,0\n");
  EXPECT_THROW(load_cohort(dir), IngestionError);
  write_file(dir / kManifestName, "# nothing\n");
  EXPECT_THROW(load_cohort(dir), IngestionError);
  EXPECT_THROW(load_cohort(dir / "missing"), IngestionError);
}

TEST(Preprocess, PureRampBecomesConstant) {
  Tensor<double> x({20, 2});
  for (std::size_t t = 0; t < 20; ++t) {
    x(t, 0) = 3.0 * double(t) - 7.0;
    x(t, 1) = std::sin(double(t));
  }
  const auto p = preprocess(x);
  EXPECT_EQ(p.constant_rois, std::vector<std::size_t>{0});
  for (std::size_t t = 0; t < 20; ++t) EXPECT_EQ(p.series(t, 0), 0.0);
}

TEST(Preprocess, MomentsAndDetrendOrthogonality) {
  const std::size_t L = 200;
  Tensor<double> x({L, 2});
  for (std::size_t t = 0; t < L; ++t) {
    x(t, 0) = 2.0 * double(t) + std::sin(double(t));
    x(t, 1) = 5.0 + 0.1 * double(t) * double(t) / L + std::cos(0.3 * double(t));
  }
  const auto p = preprocess(x);
  EXPECT_TRUE(p.constant_rois.empty());
  const double t_mean = double(L - 1) / 2;
  for (std::size_t c = 0; c < 2; ++c) {
    double m = 0, ss = 0, cross = 0, tss = 0;
    for (std::size_t t = 0; t < L; ++t) m += p.series(t, c);
    m /= L;
    for (std::size_t t = 0; t < L; ++t) {
      ss += (p.series(t, c) - m) * (p.series(t, c) - m);
      cross += (double(t) - t_mean) * p.series(t, c);
      tss += (double(t) - t_mean) * (double(t) - t_mean);
    }
    EXPECT_NEAR(m, 0.0, 1e-12);
    EXPECT_NEAR(std::sqrt(ss / (L - 1)), 1.0, 1e-12);
    const double r = cross / std::sqrt(tss * ss);
    EXPECT_LT(std::abs(r), 1e-6) << "roi " << c;
  }
}

TEST(Preprocess, IsIdempotent) {
  const auto x = testing::random_tensor({50, 4}, 9, 3.0);
  const auto once = preprocess(x).series;
  const auto twice = preprocess(once).series;
  for (std::size_t i = 0; i < once.size(); ++i) EXPECT_NEAR(once[i], twice[i], 1e-5);
}

TEST(Preprocess, Errors) {
  EXPECT_THROW(preprocess(Tensor<double>({2, 3}, 1.0)), ContractError);
  EXPECT_THROW(preprocess(Tensor<double>({10})), DimensionError);
}

TEST(ToyCohort, DefaultCouplingStructure) {
  const auto a0 = default_coupling(0, 4, 0.2), a1 = default_coupling(1, 4, 0.2);
  EXPECT_EQ(a0(0, 1), 0.2);
  EXPECT_EQ(a0(1, 2), 0.0);
  EXPECT_EQ(a1(1, 2), 0.2);
  EXPECT_EQ(a1(3, 0), 0.2);
  EXPECT_EQ(a1(0, 3), 0.2);
  EXPECT_EQ(a1(0, 1), 0.0);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(a0(i, i), 0.5);
}

TEST(ToyCohort, StabilizeCapsSpectralRadius) {
  Tensor<double> d({3, 3});
  for (std::size_t i = 0; i < 3; ++i) d(i, i) = 2.0;
  EXPECT_NEAR(spectral_radius(d), 2.0, 1e-12);
  EXPECT_NEAR(spectral_radius(stabilize(d)), 0.94, 1e-12);
  const auto small = default_coupling(0, 6, 0.15);
  EXPECT_EQ(stabilize(small), small);
}

TEST(ToyCohort, RawSeriesStayBounded) {
  Tensor<double> near_unit({8, 8});
  for (std::size_t i = 0; i < 8; ++i) {
    near_unit(i, i) = 0.9;
    near_unit(i, (i + 1) % 8) = 0.3;
  }
  const auto a = stabilize(near_unit);
  EXPECT_LT(spectral_radius(a), 0.95);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    const auto x = simulate_var(a, 500, 100, 1.0, rng);
    for (double v : x.values()) ASSERT_LT(std::abs(v), 50.0);
  }
}

TEST(ToyCohort, SameSeedSameBytes) {
  ToyGenConfig cfg;
  cfg.n_per_class = 4;
  cfg.seed = 17;
  const auto a = generate_toy_cohort(cfg), b = generate_toy_cohort(cfg);
  ASSERT_EQ(a.size(), 8u);
  EXPECT_EQ(a.count(0), 4u);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].series, b[i].series);
  cfg.seed = 18;
  EXPECT_FALSE(generate_toy_cohort(cfg)[0].series == a[0].series);
}

TEST(ToyCohort, SubjectsArePreprocessed) {
  ToyGenConfig cfg;
  cfg.n_per_class = 2;
  const auto c = generate_toy_cohort(cfg);
  EXPECT_EQ(c.length(), 64u);
  EXPECT_EQ(c.rois(), 8u);
  const auto again = preprocess(c[0].series).series;
  for (std::size_t i = 0; i < again.size(); ++i) EXPECT_NEAR(again[i], c[0].series[i], 1e-9);
}

TEST(ToyCohort, ConfigErrors) {
  ToyGenConfig cfg;
  cfg.rois = 1;
  EXPECT_THROW(generate_toy_cohort(cfg), ConfigError);
  cfg = {};
  cfg.innovation_scale = 0;
  EXPECT_THROW(generate_toy_cohort(cfg), ConfigError);
  cfg = {};
  cfg.coupling[0] = Tensor<double>({3, 3});
  EXPECT_THROW(generate_toy_cohort(cfg), DimensionError);
}

// With both classes sharing one coupling matrix, labels carry no signal and a
// cross-validated FC classifier sits at chance.
TEST(ToyCohort, IdenticalCouplingGivesChanceAccuracy) {
  double total = 0;
  std::size_t n = 0;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    ToyGenConfig cfg;
    cfg.seed = seed;
    cfg.coupling[0] = default_coupling(0, cfg.rois, cfg.coupling_strength);
    cfg.coupling[1] = cfg.coupling[0];
    auto cohort = std::make_shared<const Cohort>(generate_toy_cohort(cfg));
    const auto split = subject_kfold_split(cohort, 5, seed);
    for (std::size_t f = 0; f < 5; ++f) {
      const auto train = split.training(f);
      const auto test = split.held_out(f);
      std::vector<Tensor<double>> tr, te;
      std::vector<int> te_labels;
      for (std::size_t i = 0; i < train.size(); ++i) tr.push_back(train[i].series);
      for (std::size_t i = 0; i < test.size(); ++i) {
        te.push_back(test[i].series);
        te_labels.push_back(test[i].label);
      }
      augbench::DownstreamConfig dc;
      dc.epochs = 30;
      auto clf = augbench::DownstreamClassifier::train(augbench::fc_features(tr), train.labels(), dc, seed);
      const auto pred = clf.predict(augbench::fc_features(te));
      for (std::size_t i = 0; i < pred.size(); ++i) total += pred[i] == te_labels[i];
      n += pred.size();
    }
  }
  const double acc = total / double(n);
  EXPECT_GE(acc, 0.4);
  EXPECT_LE(acc, 0.6);
}

TEST(KFold, ExactCoverAndBalancedSizes) {
  for (auto [n0, n1, k] : {std::tuple{20u, 20u, 5u}, {13u, 8u, 4u}, {5u, 6u, 11u}}) {
    auto cohort = labelled(n0, n1);
    const auto split = subject_kfold_split(cohort, k, 3);
    ASSERT_EQ(split.folds(), k);
    std::vector<int> seen(cohort->size(), 0);
    std::size_t lo = cohort->size(), hi = 0;
    for (std::size_t f = 0; f < k; ++f) {
      for (std::size_t i : split.fold_indices(f)) ++seen[i];
      lo = std::min(lo, split.fold_indices(f).size());
      hi = std::max(hi, split.fold_indices(f).size());
    }
    for (int s : seen) EXPECT_EQ(s, 1);
    EXPECT_LE(hi - lo, 1u);
  }
}

TEST(KFold, StratifiedOverEverySeed) {
  auto cohort = labelled(6, 4);
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const auto split = subject_kfold_split(cohort, 2, seed);
    for (std::size_t f = 0; f < 2; ++f) {
      std::size_t ones = 0;
      for (std::size_t i : split.fold_indices(f)) ones += (*cohort)[i].label;
      ASSERT_EQ(ones, 2u) << "seed " << seed;
    }
  }
  std::set<std::uint64_t> hashes;
  for (std::uint64_t seed = 0; seed < 20; ++seed) hashes.insert(subject_kfold_split(cohort, 2, seed).hash());
  EXPECT_GT(hashes.size(), 10u);
  EXPECT_EQ(subject_kfold_split(cohort, 2, 5).hash(), subject_kfold_split(cohort, 2, 5).hash());
}

TEST(KFold, Errors) {
  auto cohort = labelled(3, 3);
  EXPECT_THROW(subject_kfold_split(cohort, 7, 0), ConfigError);
  EXPECT_THROW(subject_kfold_split(cohort, 1, 0), ConfigError);
  const auto split = subject_kfold_split(cohort, 3, 0);
  EXPECT_THROW(split.fold_indices(3), IndexError);
  EXPECT_THROW(split.training(3), IndexError);
}

TEST(TrainingSlice, ComplementOfHeldOutFold) {
  auto cohort = labelled(10, 10);
  const auto split = subject_kfold_split(cohort, 4, 1);
  for (std::size_t f = 0; f < 4; ++f) {
    const auto train = split.training(f);
    const auto test = split.held_out(f);
    EXPECT_EQ(train.held_out_fold(), f);
    EXPECT_EQ(train.split_hash(), split.hash());
    EXPECT_EQ(train.size() + test.size(), cohort->size());
    for (const auto& id : test.ids()) EXPECT_FALSE(train.contains(id)) << id;
    EXPECT_EQ(test.ids(), split.fold_ids(f));
  }
  const auto whole = FoldSplit::whole_cohort(cohort);
  EXPECT_EQ(whole.size(), 20u);
  EXPECT_FALSE(whole.held_out_fold());
}

TEST(TrainingSlice, HeldOutSubjectCannotBeReached) {
  auto cohort = labelled(10, 10);
  const auto split = subject_kfold_split(cohort, 5, 2);
  const auto train = split.training(0);
  const auto leaked = split.fold_ids(0);
  EXPECT_THROW(train.subset(std::vector<std::string>{leaked.front()}), ContractError);
  std::vector<std::string> mixed = train.ids();
  mixed.resize(3);
  mixed.push_back(leaked.back());
  EXPECT_THROW(train.subset(mixed), ContractError);
  mixed.pop_back();
  const auto narrowed = train.subset(mixed);
  EXPECT_EQ(narrowed.ids(), mixed);
  EXPECT_EQ(narrowed.held_out_fold(), 0u);
  for (int c : {0, 1}) {
    const auto cls = train.for_class(c);
    EXPECT_EQ(cls.count(c), cls.size());
    EXPECT_EQ(cls.size(), train.count(c));
  }
}

TEST(TrainingSlice, InnerFoldsStayInsideSlice) {
  auto cohort = labelled(10, 10);
  const auto split = subject_kfold_split(cohort, 5, 2);
  const auto train = split.training(1);
  const auto inner = train.inner_folds(3, 9);
  ASSERT_EQ(inner.size(), 3u);
  std::multiset<std::string> validation;
  for (const auto& f : inner) {
    EXPECT_EQ(f.train.size() + f.validation.size(), train.size());
    for (const auto& id : f.validation.ids()) {
      validation.insert(id);
      EXPECT_TRUE(train.contains(id));
      EXPECT_FALSE(f.train.contains(id));
    }
  }
  const auto ids = train.ids();
  EXPECT_EQ(validation, std::multiset<std::string>(ids.begin(), ids.end()));
  EXPECT_THROW(train.inner_folds(1, 0), ConfigError);
  EXPECT_THROW(train.inner_folds(train.size() + 1, 0), ConfigError);
}

}  // namespace
}  // namespace tsdf::data
