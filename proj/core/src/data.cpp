#include "tsdf/data.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_set>

namespace tsdf::data {
namespace fs = std::filesystem;
using nn::Tensor;

namespace {

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string trim(std::string s) {
  auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

[[noreturn]] void ingest_error(const fs::path& file, std::size_t line, const std::string& what) {
  throw IngestionError(file.string() + ":" + std::to_string(line) + ": " + what);
}

Tensor<double> read_subject_csv(const fs::path& file, std::vector<std::string>* header_out) {
  std::ifstream in(file);
  if (!in) throw IngestionError(file.string() + ": cannot open subject file");
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> header;
  std::vector<double> values;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    auto fields = split_csv(line);
    if (header.empty()) {
      for (auto& f : fields) header.push_back(trim(f));
      continue;
    }
    if (fields.size() != header.size()) {
      ingest_error(file, line_no, "row " + std::to_string(rows) + " has " + std::to_string(fields.size()) +
                                      " values, expected " + std::to_string(header.size()));
    }
    for (auto& f : fields) {
      const std::string t = trim(f);
      double v = 0.0;
      auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
      if (ec != std::errc() || ptr != t.data() + t.size() || !std::isfinite(v)) {
        ingest_error(file, line_no, "row " + std::to_string(rows) + ": bad number '" + t + "'");
      }
      values.push_back(v);
    }
    ++rows;
  }
  if (header.empty() || rows == 0) throw IngestionError(file.string() + ": no data rows");
  if (header_out) *header_out = header;
  return Tensor<double>({rows, header.size()}, std::move(values));
}

// Round-robin dealing of each label's shuffled members: fold sizes and per-label
// fold counts both differ by at most one.
std::vector<std::vector<std::size_t>> stratified_folds(const std::vector<std::size_t>& members,
                                                       const std::vector<int>& labels, std::size_t k,
                                                       Rng& rng) {
  std::vector<std::vector<std::size_t>> folds(k);
  std::size_t counter = 0;
  for (int label : {0, 1}) {
    std::vector<std::size_t> group;
    for (std::size_t i = 0; i < members.size(); ++i) {
      if (labels[i] == label) group.push_back(members[i]);
    }
    rng.shuffle(group.begin(), group.end());
    for (std::size_t idx : group) folds[counter++ % k].push_back(idx);
  }
  for (auto& f : folds) std::sort(f.begin(), f.end());
  return folds;
}

}  // namespace

Cohort::Cohort(std::vector<Subject> subjects, std::vector<std::string> roi_names)
    : subjects_(std::move(subjects)), roi_names_(std::move(roi_names)) {
  if (subjects_.empty()) throw ConfigError("cohort: no subjects");
  const auto& first = subjects_.front().series;
  if (first.rank() != 2) throw DimensionError("cohort: series must be L x R");
  length_ = first.dim(0);
  rois_ = first.dim(1);
  std::unordered_set<std::string> seen;
  for (const auto& s : subjects_) {
    if (s.series.shape() != first.shape()) {
      throw DimensionError("cohort: subject '" + s.id + "' has shape " + nn::shape_string(s.series.shape()) +
                           ", expected " + nn::shape_string(first.shape()));
    }
    if (s.label != 0 && s.label != 1) {
      throw ContractError("cohort: subject '" + s.id + "' has label " + std::to_string(s.label));
    }
    if (!seen.insert(s.id).second) throw ContractError("cohort: duplicate subject id '" + s.id + "'");
  }
  if (roi_names_.empty()) roi_names_ = default_roi_names(rois_);
  if (roi_names_.size() != rois_) throw DimensionError("cohort: ROI name count does not match R");
}

std::optional<std::size_t> Cohort::find(std::string_view id) const {
  for (std::size_t i = 0; i < subjects_.size(); ++i) {
    if (subjects_[i].id == id) return i;
  }
  return std::nullopt;
}

std::size_t Cohort::count(int label) const {
  return std::size_t(std::count_if(subjects_.begin(), subjects_.end(), [&](const Subject& s) { return s.label == label; }));
}

std::vector<std::string> default_roi_names(std::size_t rois) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < rois; ++i) out.push_back("roi_" + std::to_string(i));
  return out;
}

Cohort load_cohort(const fs::path& path) {
  const fs::path manifest = fs::is_directory(path) ? path / kManifestName : path;
  std::ifstream in(manifest);
  if (!in) throw IngestionError(manifest.string() + ": cannot open manifest");
  const fs::path base = manifest.parent_path();
  std::vector<Subject> subjects;
  std::unordered_set<std::string> seen;
  std::vector<std::string> roi_names;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::string t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    auto fields = split_csv(t);
    if (fields.size() != 3) ingest_error(manifest, line_no, "expected subject_id,label,relative_csv_path");
    Subject s;
    s.id = trim(fields[0]);
    const std::string label = trim(fields[1]);
    if (label == "0") {
      s.label = 0;
    } else if (label == "1") {
      s.label = 1;
    } else {
      ingest_error(manifest, line_no, "unknown label '" + label + "'");
    }
    if (s.id.empty()) ingest_error(manifest, line_no, "empty subject id");
    if (!seen.insert(s.id).second) ingest_error(manifest, line_no, "duplicate subject id '" + s.id + "'");
    std::vector<std::string> header;
    s.series = read_subject_csv(base / trim(fields[2]), &header);
    if (roi_names.empty()) {
      roi_names = header;
    } else if (s.series.shape() != subjects.front().series.shape()) {
      ingest_error(manifest, line_no, "subject '" + s.id + "' has shape " + nn::shape_string(s.series.shape()) +
                                          ", expected " + nn::shape_string(subjects.front().series.shape()));
    }
    subjects.push_back(std::move(s));
  }
  if (subjects.empty()) throw IngestionError(manifest.string() + ": no subjects listed");
  return Cohort(std::move(subjects), std::move(roi_names));
}

void save_cohort(const Cohort& cohort, const fs::path& dir) {
  fs::create_directories(dir / "subjects");
  std::ofstream manifest(dir / kManifestName, std::ios::binary);
  if (!manifest) throw IngestionError((dir / kManifestName).string() + ": cannot write manifest");
  manifest << "# subject_id,label,relative_csv_path\n";
  for (const auto& s : cohort.subjects()) {
    const std::string rel = "subjects/" + s.id + ".csv";
    manifest << s.id << ',' << s.label << ',' << rel << '\n';
    std::ofstream out(dir / rel, std::ios::binary);
    if (!out) throw IngestionError((dir / rel).string() + ": cannot write subject file");
    const auto& names = cohort.roi_names();
    for (std::size_t c = 0; c < names.size(); ++c) out << (c ? "," : "") << names[c];
    out << '\n';
    for (std::size_t r = 0; r < s.series.dim(0); ++r) {
      for (std::size_t c = 0; c < s.series.dim(1); ++c) out << (c ? "," : "") << format_double(s.series(r, c));
      out << '\n';
    }
  }
}

Preprocessed preprocess(const Tensor<double>& series) {
  if (series.rank() != 2) throw DimensionError("preprocess: series must be L x R");
  const std::size_t L = series.dim(0), R = series.dim(1);
  if (L < 3) throw ContractError("preprocess: need at least 3 timepoints, got " + std::to_string(L));
  Preprocessed out{Tensor<double>({L, R}), {}};
  const double t_mean = double(L - 1) / 2.0;
  double t_ss = 0.0;
  for (std::size_t t = 0; t < L; ++t) t_ss += (double(t) - t_mean) * (double(t) - t_mean);
  std::vector<double> resid(L);
  for (std::size_t c = 0; c < R; ++c) {
    double y_mean = 0.0, scale = 0.0;
    for (std::size_t t = 0; t < L; ++t) {
      y_mean += series(t, c);
      scale = std::max(scale, std::abs(series(t, c)));
    }
    y_mean /= double(L);
    double cross = 0.0;
    for (std::size_t t = 0; t < L; ++t) cross += (double(t) - t_mean) * (series(t, c) - y_mean);
    const double slope = cross / t_ss;
    double r_mean = 0.0;
    for (std::size_t t = 0; t < L; ++t) {
      resid[t] = series(t, c) - y_mean - slope * (double(t) - t_mean);
      r_mean += resid[t];
    }
    r_mean /= double(L);
    double ss = 0.0;
    for (double r : resid) ss += (r - r_mean) * (r - r_mean);
    const double sd = std::sqrt(ss / double(L - 1));
    if (!(sd > 1e-10 * std::max(1.0, scale))) {
      out.constant_rois.push_back(c);
      continue;
    }
    for (std::size_t t = 0; t < L; ++t) out.series(t, c) = (resid[t] - r_mean) / sd;
  }
  return out;
}

void ToyGenConfig::validate() const {
  if (n_per_class == 0 || rois < 2 || length < 3) {
    throw ConfigError("toy cohort: need n_per_class >= 1, R >= 2, L >= 3");
  }
  if (!(innovation_scale > 0.0)) throw ConfigError("toy cohort: innovation_scale must be positive");
  if (subject_jitter < 0.0) throw ConfigError("toy cohort: subject_jitter must be non-negative");
  for (const auto& a : coupling) {
    if (!a.empty() && a.shape() != nn::Shape{rois, rois}) {
      throw DimensionError("toy cohort: coupling must be R x R, got " + nn::shape_string(a.shape()));
    }
  }
}

Tensor<double> default_coupling(int label, std::size_t rois, double strength) {
  Tensor<double> a({rois, rois});
  for (std::size_t i = 0; i < rois; ++i) a(i, i) = 0.5;
  for (std::size_t i = std::size_t(label); i < rois; i += 2) {
    const std::size_t j = (i + 1) % rois;
    if (i == j) continue;
    a(i, j) += strength;
    a(j, i) += strength;
  }
  return a;
}

double spectral_radius(const Tensor<double>& matrix) {
  const auto n = Eigen::Index(matrix.dim(0));
  Eigen::MatrixXd m(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) m(i, j) = matrix(std::size_t(i), std::size_t(j));
  }
  return Eigen::EigenSolver<Eigen::MatrixXd>(m, false).eigenvalues().cwiseAbs().maxCoeff();
}

Tensor<double> stabilize(Tensor<double> matrix) {
  const double rho = spectral_radius(matrix);
  if (rho >= 0.95) {
    for (auto& v : matrix.values()) v *= 0.94 / rho;
  }
  return matrix;
}

Tensor<double> simulate_var(const Tensor<double>& coupling, std::size_t length, std::size_t burn_in, double scale,
                            Rng& rng) {
  const std::size_t R = coupling.dim(0);
  Tensor<double> out({length, R});
  std::vector<double> x(R, 0.0), next(R);
  for (std::size_t step = 0; step < burn_in + length; ++step) {
    for (std::size_t i = 0; i < R; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < R; ++j) acc += coupling(i, j) * x[j];
      next[i] = acc + scale * rng.normal();
    }
    x.swap(next);
    if (step >= burn_in) std::copy(x.begin(), x.end(), out.data() + (step - burn_in) * R);
  }
  return out;
}

Cohort generate_toy_cohort(const ToyGenConfig& config) {
  config.validate();
  std::array<Tensor<double>, 2> base;
  for (int c = 0; c < 2; ++c) {
    base[c] = stabilize(config.coupling[c].empty() ? default_coupling(c, config.rois, config.coupling_strength)
                                                   : config.coupling[c]);
  }
  std::vector<Subject> subjects;
  const std::size_t total = 2 * config.n_per_class;
  for (std::size_t i = 0; i < total; ++i) {
    const int label = i < config.n_per_class ? 0 : 1;
    char id[32];
    std::snprintf(id, sizeof id, "sub-%04zu", i);
    Rng rng = Rng::substream(config.seed, std::string("toy.subject.") + id);
    Tensor<double> a = base[label];
    if (config.subject_jitter > 0.0) {
      for (std::size_t r = 0; r < config.rois; ++r) {
        for (std::size_t c = 0; c < config.rois; ++c) {
          if (r != c) a(r, c) += config.subject_jitter * rng.normal();
        }
      }
      a = stabilize(std::move(a));
    }
    auto raw = simulate_var(a, config.length, config.burn_in, config.innovation_scale, rng);
    subjects.push_back({id, label, preprocess(raw).series});
  }
  return Cohort(std::move(subjects));
}

TrainingSlice::TrainingSlice(std::shared_ptr<const Cohort> cohort, std::vector<std::size_t> indices,
                             std::optional<std::size_t> held_out, std::uint64_t split_hash)
    : cohort_(std::move(cohort)), indices_(std::move(indices)), held_out_(held_out), split_hash_(split_hash) {}

std::vector<std::string> TrainingSlice::ids() const {
  std::vector<std::string> out;
  for (std::size_t i : indices_) out.push_back((*cohort_)[i].id);
  return out;
}

bool TrainingSlice::contains(std::string_view id) const {
  return std::any_of(indices_.begin(), indices_.end(), [&](std::size_t i) { return (*cohort_)[i].id == id; });
}

std::vector<int> TrainingSlice::labels() const {
  std::vector<int> out;
  for (std::size_t i : indices_) out.push_back((*cohort_)[i].label);
  return out;
}

std::size_t TrainingSlice::count(int label) const {
  return std::size_t(std::count_if(indices_.begin(), indices_.end(),
                                   [&](std::size_t i) { return (*cohort_)[i].label == label; }));
}

TrainingSlice TrainingSlice::for_class(int label) const {
  std::vector<std::size_t> kept;
  for (std::size_t i : indices_) {
    if ((*cohort_)[i].label == label) kept.push_back(i);
  }
  return TrainingSlice(cohort_, std::move(kept), held_out_, split_hash_);
}

TrainingSlice TrainingSlice::subset(std::span<const std::string> ids) const {
  std::vector<std::size_t> kept;
  for (const auto& id : ids) {
    auto it = std::find_if(indices_.begin(), indices_.end(), [&](std::size_t i) { return (*cohort_)[i].id == id; });
    if (it == indices_.end()) {
      throw ContractError("training slice: subject '" + id + "' is not available for training");
    }
    kept.push_back(*it);
  }
  return TrainingSlice(cohort_, std::move(kept), held_out_, split_hash_);
}

std::vector<InnerFold> TrainingSlice::inner_folds(std::size_t k, std::uint64_t seed) const {
  if (k < 2 || k > indices_.size()) {
    throw ConfigError("inner folds: need 2 <= k <= " + std::to_string(indices_.size()) + ", got " +
                      std::to_string(k));
  }
  Rng rng = Rng::substream(seed, "inner_folds");
  auto folds = stratified_folds(indices_, labels(), k, rng);
  std::vector<InnerFold> out;
  for (std::size_t f = 0; f < k; ++f) {
    std::vector<std::size_t> train;
    for (std::size_t i : indices_) {
      if (!std::binary_search(folds[f].begin(), folds[f].end(), i)) train.push_back(i);
    }
    out.push_back({TrainingSlice(cohort_, std::move(train), held_out_, split_hash_),
                   TrainingSlice(cohort_, folds[f], held_out_, split_hash_)});
  }
  return out;
}

std::vector<std::string> HeldOutSlice::ids() const {
  std::vector<std::string> out;
  for (std::size_t i : indices_) out.push_back((*cohort_)[i].id);
  return out;
}

FoldSplit::FoldSplit(std::shared_ptr<const Cohort> cohort, std::vector<std::vector<std::size_t>> folds)
    : cohort_(std::move(cohort)), folds_(std::move(folds)) {
  std::string key;
  for (const auto& f : folds_) {
    for (std::size_t i : f) key += (*cohort_)[i].id + ",";
    key += "|";
  }
  hash_ = hash_string(key);
}

const std::vector<std::size_t>& FoldSplit::fold_indices(std::size_t f) const {
  if (f >= folds_.size()) throw IndexError("fold " + std::to_string(f) + " outside [0, " + std::to_string(folds_.size()) + ")");
  return folds_[f];
}

std::vector<std::string> FoldSplit::fold_ids(std::size_t f) const {
  std::vector<std::string> out;
  for (std::size_t i : fold_indices(f)) out.push_back((*cohort_)[i].id);
  return out;
}

TrainingSlice FoldSplit::training(std::size_t held_out) const {
  const auto& excluded = fold_indices(held_out);
  std::vector<std::size_t> kept;
  for (std::size_t i = 0; i < cohort_->size(); ++i) {
    if (!std::binary_search(excluded.begin(), excluded.end(), i)) kept.push_back(i);
  }
  return TrainingSlice(cohort_, std::move(kept), held_out, hash_);
}

HeldOutSlice FoldSplit::held_out(std::size_t fold) const {
  return HeldOutSlice(cohort_, fold_indices(fold), fold);
}

TrainingSlice FoldSplit::whole_cohort(std::shared_ptr<const Cohort> cohort) {
  std::vector<std::size_t> all(cohort->size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return TrainingSlice(std::move(cohort), std::move(all), std::nullopt, 0);
}

FoldSplit subject_kfold_split(std::shared_ptr<const Cohort> cohort, std::size_t k, std::uint64_t seed) {
  if (!cohort) throw ContractError("kfold: null cohort");
  if (k < 2 || k > cohort->size()) {
    throw ConfigError("kfold: need 2 <= k <= " + std::to_string(cohort->size()) + ", got " + std::to_string(k));
  }
  std::vector<std::size_t> members(cohort->size());
  std::vector<int> labels(cohort->size());
  for (std::size_t i = 0; i < members.size(); ++i) {
    members[i] = i;
    labels[i] = (*cohort)[i].label;
  }
  Rng rng = Rng::substream(seed, "kfold");
  return FoldSplit(cohort, stratified_folds(members, labels, k, rng));
}

}  // namespace tsdf::data
