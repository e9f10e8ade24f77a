#include "tsdf/augbench.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <ostream>
#include <set>
#include <thread>

#include "tsdf/config.hpp"
#include "tsdf/error.hpp"
#include "tsdf/fc.hpp"
#include "tsdf/nn/optim.hpp"

namespace tsdf::augbench {

using nn::Tensor;

Metrics classification_metrics(const Confusion& c) {
  if (c.total() == 0) throw ContractError("classification_metrics: empty confusion matrix");
  Metrics m;
  m.acc = double(c.tp + c.tn) / double(c.total());
  if (c.tp + c.fn > 0) m.sen = double(c.tp) / double(c.tp + c.fn);
  if (c.tn + c.fp > 0) m.spec = double(c.tn) / double(c.tn + c.fp);
  if (2 * c.tp + c.fp + c.fn > 0) m.f1 = 2.0 * double(c.tp) / double(2 * c.tp + c.fp + c.fn);
  return m;
}

Confusion confusion(std::span<const int> truth, std::span<const int> predicted) {
  if (truth.size() != predicted.size()) throw DimensionError("confusion: label count mismatch");
  Confusion c;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] == 1) {
      ++(predicted[i] == 1 ? c.tp : c.fn);
    } else {
      ++(predicted[i] == 1 ? c.fp : c.tn);
    }
  }
  return c;
}

void DownstreamConfig::validate() const {
  if (hidden == 0 || epochs == 0 || batch_size == 0) throw ConfigError("downstream: sizes must be positive");
  if (!(lr > 0.0)) throw ConfigError("downstream: lr must be positive");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("downstream: dropout must be in [0, 1)");
}

DownstreamClassifier::DownstreamClassifier(DownstreamConfig config, std::size_t inputs, std::uint64_t seed)
    : config_(config), inputs_(inputs), mean_(inputs, 0.0), inv_std_(inputs, 1.0) {
  Rng rng = Rng::substream(seed, "downstream.init");
  const std::size_t H = config_.hidden;
  store_.add("mlp.fc1.weight", model::uniform_init<double>({inputs, H}, inputs, rng));
  store_.add("mlp.fc1.bias", model::uniform_init<double>({H}, inputs, rng));
  store_.add("mlp.fc2.weight", model::uniform_init<double>({H, 2}, H, rng));
  store_.add("mlp.fc2.bias", model::uniform_init<double>({2}, H, rng));
}

nn::Var<double> DownstreamClassifier::forward(nn::Graph<double>& g, const Tensor<double>& x, Rng* dropout) {
  if (x.rank() != 2 || x.cols() != inputs_) {
    throw DimensionError("downstream: expected [N x " + std::to_string(inputs_) + "] features, got " +
                         nn::shape_string(x.shape()));
  }
  Tensor<double> z(x.shape());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t c = 0; c < inputs_; ++c) z(r, c) = (x(r, c) - mean_[c]) * inv_std_[c];
  }
  auto p = [&](const char* name) { return g.parameter(store_.at(name)); };
  auto h = nn::gelu(nn::linear(g.constant(std::move(z)), p("mlp.fc1.weight"), p("mlp.fc1.bias")));
  h = nn::dropout(h, dropout ? config_.dropout : 0.0, dropout);
  return nn::linear(h, p("mlp.fc2.weight"), p("mlp.fc2.bias"));
}

DownstreamClassifier DownstreamClassifier::train(const Tensor<double>& features, std::span<const int> labels,
                                                 const DownstreamConfig& config, std::uint64_t seed) {
  config.validate();
  if (features.rank() != 2 || features.rows() != labels.size()) {
    throw DimensionError("downstream: features and labels disagree");
  }
  const auto n1 = std::size_t(std::count(labels.begin(), labels.end(), 1));
  const auto n0 = std::size_t(std::count(labels.begin(), labels.end(), 0));
  if (n0 + n1 != labels.size()) throw ContractError("downstream: labels must be 0 or 1");
  if (n0 < 2 || n1 < 2) throw ContractError("downstream: need at least 2 training samples of each class");

  const std::size_t N = features.rows(), F = features.cols();
  DownstreamClassifier clf(config, F, seed);
  // Feature standardization with training-set statistics.
  for (std::size_t c = 0; c < F; ++c) {
    double m = 0.0, v = 0.0;
    for (std::size_t r = 0; r < N; ++r) m += features(r, c);
    m /= double(N);
    for (std::size_t r = 0; r < N; ++r) v += (features(r, c) - m) * (features(r, c) - m);
    const double sd = std::sqrt(v / double(N - 1));
    clf.mean_[c] = m;
    clf.inv_std_[c] = sd > 1e-12 ? 1.0 / sd : 1.0;
  }

  nn::AdamW<double> opt(clf.store_, {config.lr, 0.9, 0.999, 1e-8, config.weight_decay});
  Rng rng = Rng::substream(seed, "downstream.fit");
  Rng drop = Rng::substream(seed, "downstream.dropout");
  std::vector<std::size_t> order(N);
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(order.begin(), order.end());
    for (std::size_t b0 = 0; b0 < N; b0 += config.batch_size) {
      const std::size_t bs = std::min(config.batch_size, N - b0);
      Tensor<double> x({bs, F});
      std::vector<int> y(bs);
      for (std::size_t b = 0; b < bs; ++b) {
        std::copy_n(features.data() + order[b0 + b] * F, F, x.data() + b * F);
        y[b] = labels[order[b0 + b]];
      }
      opt.zero_grad();
      nn::Graph<double> g;
      auto loss = nn::softmax_cross_entropy(clf.forward(g, x, &drop), std::span<const int>(y));
      g.backward(loss);
      opt.step();
    }
  }
  return clf;
}

Tensor<double> DownstreamClassifier::predict_proba(const Tensor<double>& features) {
  nn::Graph<double> g(false);
  return nn::softmax(forward(g, features, nullptr)).value();
}

std::vector<int> DownstreamClassifier::predict(const Tensor<double>& features) {
  const auto p = predict_proba(features);
  std::vector<int> out(p.rows());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = p(i, 1) > p(i, 0) ? 1 : 0;
  return out;
}

Tensor<double> fc_features(std::span<const Tensor<double>> series) {
  if (series.empty()) throw ContractError("fc_features: no series");
  std::vector<std::vector<double>> rows;
  for (const auto& s : series) rows.push_back(fc::upper_triangle_features(fc::pearson_fc(s)));
  const std::size_t F = rows.front().size();
  Tensor<double> out({rows.size(), F});
  for (std::size_t i = 0; i < rows.size(); ++i) std::copy(rows[i].begin(), rows[i].end(), out.data() + i * F);
  return out;
}

std::string to_string(Ablation a) {
  switch (a) {
    case Ablation::full: return "full";
    case Ablation::no_pretrain: return "no_pretrain";
    case Ablation::fc_level_synthesis: return "fc_level_synthesis";
  }
  return "full";
}

Ablation parse_ablation(std::string_view text) {
  if (text == "full") return Ablation::full;
  if (text == "no_pretrain") return Ablation::no_pretrain;
  if (text == "fc_level_synthesis") return Ablation::fc_level_synthesis;
  throw ConfigError("unknown ablation '" + std::string(text) + "' (expected full, no_pretrain or fc_level_synthesis)");
}

void BenchmarkConfig::validate() const {
  if (k < 2) throw ConfigError("bench: k must be at least 2");
  if (seeds < 1) throw ConfigError("bench: seeds must be at least 1");
  if (!(augment_ratio >= 0.0)) throw ConfigError("bench: augment_ratio must be non-negative");
  if (jobs == 0) throw ConfigError("bench: jobs must be positive");
  downstream.validate();
  diffusion.validate();
  if (ablation == Ablation::full) pretrain.validate();
}

std::uint64_t repetition_seed(std::uint64_t base, std::size_t s) {
  return hash_string("bench.repetition." + std::to_string(s), base);
}

namespace {

struct CellOutput {
  CellResult with, without;
  std::vector<SyntheticRecord> synthetic;
  std::vector<LossTrace> traces;
};

Tensor<double> fc_row(const Tensor<double>& series) {
  const auto f = fc::upper_triangle_features(fc::pearson_fc(series));
  return Tensor<double>({1, f.size()}, f);
}

// Every synthetic subject must come from a model trained inside this fold's
// training slice.
void check_provenance(const diffusion::SyntheticSet& set, const data::TrainingSlice& training,
                      const data::HeldOutSlice& held, std::size_t fold) {
  if (set.provenance.held_out_fold != fold) throw InternalError("provenance: model was not trained for this fold");
  const auto held_ids = held.ids();
  const std::set<std::string> held_set(held_ids.begin(), held_ids.end());
  for (const auto& id : set.provenance.training_ids) {
    if (!training.contains(id) || held_set.count(id)) {
      throw InternalError("provenance: synthetic data descends from subject '" + id + "' outside the training folds");
    }
  }
}

std::string suffix(std::size_t fold, int label) { return std::to_string(fold) + "." + std::to_string(label); }

void run_cell(const data::FoldSplit& split, std::size_t s, std::uint64_t seed, std::size_t f,
              const BenchmarkConfig& cfg, CellOutput& out) {
  const auto training = split.training(f);
  const auto held = split.held_out(f);
  const bool fc_level = cfg.ablation == Ablation::fc_level_synthesis;

  std::optional<nn::TensorList> encoder;
  auto tc = cfg.diffusion;
  tc.init_mode = diffusion::InitMode::random;
  if (cfg.ablation == Ablation::full) {
    auto pc = cfg.pretrain;
    pc.seed = hash_string("bench.pretrain." + std::to_string(f), seed);
    encoder = pretrain::pretrain_classifier(training, cfg.denoiser, pc).encoder;
    tc.init_mode = diffusion::InitMode::pretrained;
  }
  diffusion::SeriesTransform transform;
  if (fc_level) transform = fc_row;

  std::vector<Tensor<double>> real_series;
  std::vector<int> real_labels;
  for (std::size_t i = 0; i < training.size(); ++i) {
    real_series.push_back(training[i].series);
    real_labels.push_back(training[i].label);
  }
  Tensor<double> real_x = fc_features(real_series);
  const std::size_t F = real_x.cols();

  std::vector<double> synth_values;
  std::vector<int> synth_labels;
  for (int label : {0, 1}) {
    const auto slice = training.for_class(label);
    const std::size_t n = std::size_t(std::llround(cfg.augment_ratio * double(slice.size())));
    if (n == 0) continue;
    tc.seed = hash_string("bench.diffusion." + suffix(f, label), seed);
    auto model = diffusion::train(slice, cfg.denoiser, tc, encoder ? &*encoder : nullptr, transform);
    LossTrace trace{s, f, label, {}};
    for (const auto& e : model.log) trace.loss.push_back(e.mean_loss);
    out.traces.push_back(std::move(trace));

    auto set = diffusion::generate(model, n, hash_string("bench.sample." + suffix(f, label), seed), cfg.sample_chunk);
    check_provenance(set, training, held, f);
    if (set.class_label != label) throw InternalError("synthetic class label does not match its model");
    const std::size_t L = set.series.dim(1), R = set.series.dim(2);
    for (std::size_t i = 0; i < n; ++i) {
      Tensor<double> one({L, R});
      std::copy_n(set.series.data() + i * L * R, L * R, one.data());
      std::vector<double> row;
      if (fc_level) {
        if (L * R != F) throw DimensionError("fc-level synthesis produced the wrong feature count");
        row.assign(one.data(), one.data() + one.size());
      } else {
        row = fc::upper_triangle_features(fc::pearson_fc(data::preprocess(one).series));
      }
      synth_values.insert(synth_values.end(), row.begin(), row.end());
      synth_labels.push_back(label);
      char id[64];
      std::snprintf(id, sizeof id, "synth-s%zu-f%zu-c%d-%04zu", s, f, label, i);
      out.synthetic.push_back({id, s, f, label, set.model_hash, set.provenance.held_out_fold,
                               set.provenance.training_ids});
    }
  }

  std::vector<Tensor<double>> test_series;
  std::vector<int> test_labels;
  for (std::size_t i = 0; i < held.size(); ++i) {
    test_series.push_back(held[i].series);
    test_labels.push_back(held[i].label);
  }
  const Tensor<double> test_x = fc_features(test_series);
  const std::uint64_t ds_seed = hash_string("bench.downstream." + std::to_string(f), seed);

  auto evaluate = [&](const Tensor<double>& x, const std::vector<int>& y, CellResult& cell) {
    auto clf = DownstreamClassifier::train(x, y, cfg.downstream, ds_seed);
    cell.confusion = confusion(test_labels, clf.predict(test_x));
    cell.metrics = classification_metrics(cell.confusion);
  };
  evaluate(real_x, real_labels, out.without);

  Tensor<double> aug_x({real_x.rows() + synth_labels.size(), F});
  std::copy_n(real_x.data(), real_x.size(), aug_x.data());
  std::copy(synth_values.begin(), synth_values.end(), aug_x.data() + real_x.size());
  auto aug_labels = real_labels;
  aug_labels.insert(aug_labels.end(), synth_labels.begin(), synth_labels.end());
  evaluate(aug_x, aug_labels, out.with);
}

std::shared_ptr<const data::Cohort> preprocessed_copy(const data::Cohort& cohort) {
  std::vector<data::Subject> subjects(cohort.subjects().begin(), cohort.subjects().end());
  for (auto& s : subjects) s.series = data::preprocess(s.series).series;
  return std::make_shared<const data::Cohort>(std::move(subjects), cohort.roi_names());
}

}  // namespace

BenchmarkReport run_benchmark(const data::Cohort& cohort, const BenchmarkConfig& config) {
  config.validate();
  const auto prepared = preprocessed_copy(cohort);
  std::vector<data::FoldSplit> splits;
  std::vector<std::uint64_t> seeds;
  for (std::size_t s = 0; s < config.seeds; ++s) {
    seeds.push_back(repetition_seed(config.seed, s));
    splits.push_back(data::subject_kfold_split(prepared, config.k, hash_string("bench.split", seeds.back())));
  }

  const std::size_t n_cells = config.seeds * config.k;
  std::vector<CellOutput> outputs(n_cells);
  auto work = [&](std::size_t c) {
    const std::size_t s = c / config.k, f = c % config.k;
    auto& out = outputs[c];
    for (auto* cell : {&out.without, &out.with}) {
      *cell = CellResult{};
      cell->seed_index = s;
      cell->seed = seeds[s];
      cell->fold = f;
      cell->split_hash = splits[s].hash();
    }
    out.without.condition = "without_synth";
    out.with.condition = "with_synth";
    try {
      run_cell(splits[s], s, seeds[s], f, config, out);
    } catch (const std::exception& e) {
      out.with.error = out.without.error = e.what();
      out.with.metrics = out.without.metrics = Metrics{};
      out.with.confusion = out.without.confusion = Confusion{};
      out.synthetic.clear();
    }
  };

  const std::size_t workers = std::min(config.jobs, n_cells);
  if (workers <= 1) {
    for (std::size_t c = 0; c < n_cells; ++c) work(c);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t c; (c = next.fetch_add(1)) < n_cells;) work(c);
      });
    }
    for (auto& t : pool) t.join();
  }

  BenchmarkReport report;
  report.ablation = config.ablation;
  for (auto& o : outputs) {
    report.cells.push_back(std::move(o.with));
    report.cells.push_back(std::move(o.without));
    for (auto& r : o.synthetic) report.synthetic.push_back(std::move(r));
    for (auto& t : o.traces) report.traces.push_back(std::move(t));
  }
  return report;
}

namespace {

std::pair<double, double> mean_std(const std::vector<double>& v) {
  if (v.empty()) return {0.0, 0.0};
  const double m = std::accumulate(v.begin(), v.end(), 0.0) / double(v.size());
  if (v.size() < 2) return {m, 0.0};
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return {m, std::sqrt(ss / double(v.size() - 1))};
}

std::string opt(const std::optional<double>& v) { return v ? format_number(*v) : ""; }

}  // namespace

std::vector<Summary> summarize(const BenchmarkReport& report) {
  std::vector<Summary> out;
  for (const char* cond : {"with_synth", "without_synth"}) {
    std::vector<double> acc, sen, spec, f1;
    for (const auto& c : report.cells) {
      if (c.condition != cond || !c.ok()) continue;
      acc.push_back(c.metrics.acc);
      if (c.metrics.sen) sen.push_back(*c.metrics.sen);
      if (c.metrics.spec) spec.push_back(*c.metrics.spec);
      if (c.metrics.f1) f1.push_back(*c.metrics.f1);
    }
    Summary s;
    s.condition = cond;
    s.n = acc.size();
    std::tie(s.acc_mean, s.acc_std) = mean_std(acc);
    std::tie(s.sen_mean, s.sen_std) = mean_std(sen);
    std::tie(s.spec_mean, s.spec_std) = mean_std(spec);
    std::tie(s.f1_mean, s.f1_std) = mean_std(f1);
    out.push_back(s);
  }
  return out;
}

std::vector<PairedDelta> paired_deltas(const BenchmarkReport& report) {
  std::vector<PairedDelta> out;
  for (const auto& w : report.cells) {
    if (w.condition != "with_synth" || !w.ok()) continue;
    for (const auto& wo : report.cells) {
      if (wo.condition == "without_synth" && wo.ok() && wo.seed_index == w.seed_index && wo.fold == w.fold) {
        out.push_back({w.seed_index, w.fold, w.metrics.acc, wo.metrics.acc});
      }
    }
  }
  return out;
}

double mean_delta(const BenchmarkReport& report) {
  const auto d = paired_deltas(report);
  if (d.empty()) throw ContractError("mean_delta: no successful paired cells");
  double total = 0.0;
  for (const auto& x : d) total += x.delta();
  return total / double(d.size());
}

std::vector<double> epoch_loss_by_seed(const BenchmarkReport& report, std::size_t seeds, std::size_t epoch) {
  if (epoch == 0) throw IndexError("epoch_loss_by_seed: epochs are 1-based");
  std::vector<double> total(seeds, 0.0);
  std::vector<std::size_t> count(seeds, 0);
  for (const auto& t : report.traces) {
    if (t.seed_index >= seeds || t.loss.size() < epoch) continue;
    total[t.seed_index] += t.loss[epoch - 1];
    ++count[t.seed_index];
  }
  for (std::size_t s = 0; s < seeds; ++s) {
    if (count[s] == 0) throw ContractError("epoch_loss_by_seed: no loss trace for repetition " + std::to_string(s));
    total[s] /= double(count[s]);
  }
  return total;
}

void write_report_csv(std::ostream& out, const BenchmarkReport& report) {
  out << "seed_index,seed,fold,condition,acc,sen,spec,f1,tp,tn,fp,fn,split_hash,error\n";
  for (const auto& c : report.cells) {
    out << c.seed_index << ',' << c.seed << ',' << c.fold << ',' << c.condition << ',';
    if (c.ok()) {
      out << format_number(c.metrics.acc) << ',' << opt(c.metrics.sen) << ',' << opt(c.metrics.spec) << ','
          << opt(c.metrics.f1) << ',' << c.confusion.tp << ',' << c.confusion.tn << ',' << c.confusion.fp << ','
          << c.confusion.fn;
    } else {
      out << ",,,,,,,";
    }
    std::string err = c.error;
    std::replace(err.begin(), err.end(), ',', ';');
    std::replace(err.begin(), err.end(), '\n', ' ');
    out << ',' << c.split_hash << ',' << err << '\n';
  }
}

void write_summary_csv(std::ostream& out, const BenchmarkReport& report) {
  out << "condition,n,acc_mean,acc_std,sen_mean,sen_std,spec_mean,spec_std,f1_mean,f1_std\n";
  for (const auto& s : summarize(report)) {
    out << s.condition << ',' << s.n << ',' << format_number(s.acc_mean) << ',' << format_number(s.acc_std) << ','
        << format_number(s.sen_mean) << ',' << format_number(s.sen_std) << ',' << format_number(s.spec_mean) << ','
        << format_number(s.spec_std) << ',' << format_number(s.f1_mean) << ',' << format_number(s.f1_std) << '\n';
  }
}

void write_deltas_csv(std::ostream& out, const BenchmarkReport& report) {
  out << "seed_index,fold,acc_with_synth,acc_without_synth,delta\n";
  for (const auto& d : paired_deltas(report)) {
    out << d.seed_index << ',' << d.fold << ',' << format_number(d.acc_with) << ',' << format_number(d.acc_without)
        << ',' << format_number(d.delta()) << '\n';
  }
}

void write_provenance_csv(std::ostream& out, const BenchmarkReport& report) {
  out << "synthetic_id,seed_index,fold,class,model_hash,held_out_fold,training_ids\n";
  for (const auto& r : report.synthetic) {
    out << r.id << ',' << r.seed_index << ',' << r.fold << ',' << r.label << ',' << r.model_hash << ','
        << (r.held_out_fold ? std::to_string(*r.held_out_fold) : "none") << ',';
    for (std::size_t i = 0; i < r.training_ids.size(); ++i) out << (i ? ";" : "") << r.training_ids[i];
    out << '\n';
  }
}

std::vector<data::Cohort> make_site_cohorts(const SiteConfig& config) {
  config.toy.validate();
  std::vector<data::Cohort> out;
  const std::size_t R = config.toy.rois;
  for (std::size_t site = 0; site < config.sites; ++site) {
    auto toy = config.toy;
    toy.seed = hash_string("site." + std::to_string(site), config.toy.seed);
    Rng rng = Rng::substream(config.toy.seed, "site.coupling." + std::to_string(site));
    for (int c : {0, 1}) {
      auto a = config.toy.coupling[c].empty() ? data::default_coupling(c, R, config.toy.coupling_strength)
                                              : config.toy.coupling[c];
      for (std::size_t i = 0; i < R; ++i) {
        for (std::size_t j = i + 1; j < R; ++j) {
          const double d = config.perturbation * rng.normal();
          a(i, j) += d;
          a(j, i) += d;
        }
      }
      toy.coupling[c] = data::stabilize(std::move(a));
    }
    out.push_back(data::generate_toy_cohort(toy));
  }
  return out;
}

std::vector<BenchmarkReport> run_multisite(const SiteConfig& sites, const BenchmarkConfig& config) {
  std::vector<BenchmarkReport> out;
  for (const auto& cohort : make_site_cohorts(sites)) out.push_back(run_benchmark(cohort, config));
  return out;
}

}  // namespace tsdf::augbench
