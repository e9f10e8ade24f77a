#include "tsdf/pretrain.hpp"

#include <algorithm>
#include <numeric>
#include <ostream>

#include "tsdf/config.hpp"
#include "tsdf/nn/optim.hpp"

namespace tsdf::pretrain {

using nn::Tensor;

std::vector<GridPoint> make_grid(const std::vector<double>& lrs, const std::vector<double>& weight_decays,
                                 const std::vector<double>& epochs, const std::vector<double>& dropouts) {
  std::vector<GridPoint> grid;
  for (double lr : lrs) {
    for (double wd : weight_decays) {
      for (double ep : epochs) {
        for (double dr : dropouts) grid.push_back({lr, wd, std::size_t(ep), dr});
      }
    }
  }
  return grid;
}

std::vector<GridPoint> default_grid() { return make_grid({1e-4, 3e-4}, {1e-3, 1e-4}, {50, 100}, {0.0, 0.1}); }

void PretrainConfig::validate() const {
  if (grid.empty()) throw ConfigError("pretrain: hyperparameter grid is empty");
  if (inner_folds < 2) throw ConfigError("pretrain: inner_folds must be at least 2");
  if (batch_size == 0) throw ConfigError("pretrain: batch_size must be positive");
  for (const auto& p : grid) {
    if (!(p.lr > 0.0) || p.epochs == 0 || p.weight_decay < 0.0 || p.dropout < 0.0 || p.dropout >= 1.0) {
      throw ConfigError("pretrain: invalid grid point");
    }
  }
}

namespace {

Tensor<float> gather(const data::TrainingSlice& slice, std::span<const std::size_t> rows) {
  const std::size_t L = slice.cohort().length(), R = slice.cohort().rois();
  Tensor<float> out({rows.size(), L, R});
  for (std::size_t b = 0; b < rows.size(); ++b) {
    const auto& s = slice[rows[b]].series;
    std::transform(s.data(), s.data() + s.size(), out.data() + b * L * R, [](double v) { return float(v); });
  }
  return out;
}

void require_both_classes(const data::TrainingSlice& slice) {
  if (slice.count(0) == 0 || slice.count(1) == 0) {
    throw ContractError("pretrain: classification needs both classes in the training slice");
  }
}

model::DenoiserConfig fitted_config(const data::TrainingSlice& slice, model::DenoiserConfig config) {
  config.input_dim = slice.cohort().rois();
  config.seq_len = slice.cohort().length();
  return config;
}

}  // namespace

model::Classifier<float> fit_classifier(const data::TrainingSlice& slice, const model::DenoiserConfig& config,
                                        const GridPoint& point, std::size_t batch_size, std::uint64_t seed) {
  require_both_classes(slice);
  auto cfg = fitted_config(slice, config);
  cfg.dropout = point.dropout;
  model::Classifier<float> clf(cfg, seed);
  nn::AdamW<float> opt(clf.parameters(), {point.lr, 0.9, 0.999, 1e-8, point.weight_decay});
  Rng rng = Rng::substream(seed, "pretrain.fit");
  Rng drop = Rng::substream(seed, "pretrain.dropout");
  std::vector<std::size_t> order(slice.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 0; epoch < point.epochs; ++epoch) {
    rng.shuffle(order.begin(), order.end());
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
      const std::size_t end = std::min(order.size(), start + batch_size);
      std::span<const std::size_t> rows(order.data() + start, end - start);
      std::vector<int> labels;
      for (std::size_t r : rows) labels.push_back(slice[r].label);
      opt.zero_grad();
      nn::Graph<float> g;
      auto loss = nn::softmax_cross_entropy(clf.logits(g, gather(slice, rows), {true, &drop, nullptr}),
                                            std::span<const int>(labels));
      g.backward(loss);
      opt.step();
    }
  }
  return clf;
}

double classifier_accuracy(model::Classifier<float>& classifier, const data::TrainingSlice& slice) {
  if (slice.empty()) throw ContractError("classifier accuracy: empty slice");
  std::vector<std::size_t> rows(slice.size());
  std::iota(rows.begin(), rows.end(), 0);
  auto probs = classifier.predict_proba(gather(slice, rows));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const int predicted = probs(i, 1) > probs(i, 0) ? 1 : 0;
    if (predicted == slice[i].label) ++correct;
  }
  return double(correct) / double(rows.size());
}

std::size_t select_grid_point(const std::vector<GridPoint>& grid, const std::vector<CvRecord>& report) {
  if (grid.empty()) throw ConfigError("pretrain: hyperparameter grid is empty");
  std::vector<double> total(grid.size(), 0.0);
  std::vector<std::size_t> count(grid.size(), 0);
  for (const auto& r : report) {
    if (r.grid_point >= grid.size()) throw IndexError("pretrain: CV record for unknown grid point");
    total[r.grid_point] += r.val_acc;
    ++count[r.grid_point];
  }
  std::size_t best = grid.size();
  double best_acc = -1.0;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (count[i] == 0) continue;
    const double acc = total[i] / double(count[i]);
    if (best == grid.size() || acc > best_acc ||
        (acc == best_acc && (grid[i].lr < grid[best].lr ||
                             (grid[i].lr == grid[best].lr && grid[i].weight_decay < grid[best].weight_decay)))) {
      best = i;
      best_acc = acc;
    }
  }
  if (best == grid.size()) throw ContractError("pretrain: CV report is empty");
  return best;
}

PretrainResult pretrain_classifier(const data::TrainingSlice& slice, const model::DenoiserConfig& config,
                                   const PretrainConfig& pretrain) {
  pretrain.validate();
  require_both_classes(slice);
  PretrainResult result;
  auto folds = slice.inner_folds(pretrain.inner_folds, hash_string("pretrain.inner", pretrain.seed));
  for (std::size_t gp = 0; gp < pretrain.grid.size(); ++gp) {
    for (std::size_t f = 0; f < folds.size(); ++f) {
      const std::uint64_t seed = hash_string("pretrain.cv." + std::to_string(gp) + "." + std::to_string(f), pretrain.seed);
      auto clf = fit_classifier(folds[f].train, config, pretrain.grid[gp], pretrain.batch_size, seed);
      result.report.push_back({gp, f, classifier_accuracy(clf, folds[f].validation)});
    }
  }
  result.selected = select_grid_point(pretrain.grid, result.report);
  result.hyperparameters = pretrain.grid[result.selected];
  auto final_clf = fit_classifier(slice, config, result.hyperparameters, pretrain.batch_size,
                                  hash_string("pretrain.final", pretrain.seed));
  result.encoder = nn::export_parameters(final_clf.parameters(), model::Classifier<float>::kPrefix);
  return result;
}

template <class T>
TransferReport transfer_weights(const nn::TensorList& encoder, model::Denoiser<T>& denoiser) {
  const auto schema = model::TemporalEncoder<T>::schema(denoiser.config());
  std::string problems;
  for (const auto& [name, shape] : schema) {
    const auto* src = nn::find_tensor(encoder, model::Classifier<T>::kPrefix + name);
    if (src == nullptr) {
      problems += " " + name + " (missing)";
    } else if (src->value.shape() != shape) {
      problems += " " + name + " (" + nn::shape_string(src->value.shape()) + " vs " + nn::shape_string(shape) + ")";
    }
  }
  if (!problems.empty()) throw ContractError("transfer_weights: incompatible encoder tensors:" + problems);
  TransferReport report;
  for (const auto& [name, shape] : schema) {
    const auto* src = nn::find_tensor(encoder, model::Classifier<T>::kPrefix + name);
    denoiser.parameters().at(model::Denoiser<T>::kPrefix + name).value = src->value.template cast<T>();
    ++report.transferred;
  }
  report.fresh = denoiser.parameters().size() - report.transferred;
  return report;
}

void write_cv_report(std::ostream& out, const std::vector<GridPoint>& grid, const PretrainResult& result) {
  out << "grid_point_id,lr,weight_decay,epochs,dropout,fold,val_acc\n";
  for (const auto& r : result.report) {
    const auto& p = grid.at(r.grid_point);
    out << r.grid_point << ',' << format_number(p.lr) << ',' << format_number(p.weight_decay) << ',' << p.epochs
        << ',' << format_number(p.dropout) << ',' << r.fold << ',' << format_number(r.val_acc) << '\n';
  }
  const auto& w = result.hyperparameters;
  out << "# winner," << result.selected << ',' << format_number(w.lr) << ',' << format_number(w.weight_decay) << ','
      << w.epochs << ',' << format_number(w.dropout) << '\n';
}

template TransferReport transfer_weights(const nn::TensorList&, model::Denoiser<float>&);
template TransferReport transfer_weights(const nn::TensorList&, model::Denoiser<double>&);

}  // namespace tsdf::pretrain
