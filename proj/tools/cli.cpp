#include "cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>

#include "tsdf/error.hpp"
#include "tsdf/fc.hpp"
#include "tsdf/nn/checkpoint.hpp"
#include "tsdf/nn/gradcheck.hpp"
#include "tsdf/schedule.hpp"

namespace tsdf::cli {

namespace fs = std::filesystem;

namespace {

std::string join_numbers(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + format_number(v[i]);
  return out;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IngestionError("cannot write '" + path.string() + "'");
  return out;
}

}  // namespace

ConfigMap default_config() {
  ConfigMap c;
  c.set("seed", "0");
  c.set("log.verbosity", "0");

  const data::ToyGenConfig toy;
  c.set("toy.n_per_class", std::to_string(toy.n_per_class));
  c.set("toy.rois", std::to_string(toy.rois));
  c.set("toy.length", std::to_string(toy.length));
  c.set("toy.coupling_strength", format_number(toy.coupling_strength));
  c.set("toy.innovation_scale", format_number(toy.innovation_scale));
  c.set("toy.subject_jitter", format_number(toy.subject_jitter));
  c.set("toy.burn_in", std::to_string(toy.burn_in));

  diffusion::write_config(c, model::DenoiserConfig{});
  diffusion::write_config(c, diffusion::TrainConfig{});
  c.erase("diffusion.seed");

  c.set("pretrain.lrs", "0.0001,0.0003");
  c.set("pretrain.weight_decays", "0.001,0.0001");
  c.set("pretrain.epochs", "50,100");
  c.set("pretrain.dropouts", "0,0.1");
  const pretrain::PretrainConfig pc;
  c.set("pretrain.inner_folds", std::to_string(pc.inner_folds));
  c.set("pretrain.batch_size", std::to_string(pc.batch_size));

  const augbench::DownstreamConfig ds;
  c.set("downstream.hidden", std::to_string(ds.hidden));
  c.set("downstream.dropout", format_number(ds.dropout));
  c.set("downstream.epochs", std::to_string(ds.epochs));
  c.set("downstream.batch_size", std::to_string(ds.batch_size));
  c.set("downstream.lr", format_number(ds.lr));
  c.set("downstream.weight_decay", format_number(ds.weight_decay));

  const augbench::BenchmarkConfig bc;
  c.set("bench.k", std::to_string(bc.k));
  c.set("bench.seeds", std::to_string(bc.seeds));
  c.set("bench.augment_ratio", format_number(bc.augment_ratio));
  c.set("bench.ablation", augbench::to_string(bc.ablation));
  c.set("bench.jobs", std::to_string(bc.jobs));
  c.set("bench.sample_chunk", std::to_string(bc.sample_chunk));
  c.set("bench.sites", "1");
  c.set("bench.site_perturbation", format_number(augbench::SiteConfig{}.perturbation));

  const fidelity::FidelityOptions fo;
  c.set("fidelity.bins", std::to_string(fo.bins));
  c.set("fidelity.eps", format_number(fo.eps));
  c.set("fc.fisher_z", "false");
  return c;
}

std::uint64_t RunConfig::stage_seed(std::string_view stage) const { return hash_string(stage, seed()); }

data::ToyGenConfig RunConfig::toy() const {
  data::ToyGenConfig t;
  t.n_per_class = values.get_size("toy.n_per_class", t.n_per_class);
  t.rois = values.get_size("toy.rois", t.rois);
  t.length = values.get_size("toy.length", t.length);
  t.coupling_strength = values.get_double("toy.coupling_strength", t.coupling_strength);
  t.innovation_scale = values.get_double("toy.innovation_scale", t.innovation_scale);
  t.subject_jitter = values.get_double("toy.subject_jitter", t.subject_jitter);
  t.burn_in = values.get_size("toy.burn_in", t.burn_in);
  t.seed = stage_seed("toy");
  return t;
}

model::DenoiserConfig RunConfig::denoiser() const { return diffusion::read_denoiser_config(values); }

diffusion::TrainConfig RunConfig::diffusion() const {
  auto t = diffusion::read_train_config(values);
  t.seed = stage_seed("diffusion");
  return t;
}

pretrain::PretrainConfig RunConfig::pretrain() const {
  pretrain::PretrainConfig p;
  p.grid = pretrain::make_grid(values.get_doubles("pretrain.lrs", {}), values.get_doubles("pretrain.weight_decays", {}),
                               values.get_doubles("pretrain.epochs", {}), values.get_doubles("pretrain.dropouts", {}));
  p.inner_folds = values.get_size("pretrain.inner_folds", p.inner_folds);
  p.batch_size = values.get_size("pretrain.batch_size", p.batch_size);
  p.seed = stage_seed("pretrain");
  return p;
}

augbench::DownstreamConfig RunConfig::downstream() const {
  augbench::DownstreamConfig d;
  d.hidden = values.get_size("downstream.hidden", d.hidden);
  d.dropout = values.get_double("downstream.dropout", d.dropout);
  d.epochs = values.get_size("downstream.epochs", d.epochs);
  d.batch_size = values.get_size("downstream.batch_size", d.batch_size);
  d.lr = values.get_double("downstream.lr", d.lr);
  d.weight_decay = values.get_double("downstream.weight_decay", d.weight_decay);
  return d;
}

augbench::BenchmarkConfig RunConfig::bench() const {
  augbench::BenchmarkConfig b;
  b.k = values.get_size("bench.k", b.k);
  b.seeds = values.get_size("bench.seeds", b.seeds);
  b.seed = stage_seed("bench");
  b.augment_ratio = values.get_double("bench.augment_ratio", b.augment_ratio);
  b.ablation = augbench::parse_ablation(values.get_string("bench.ablation", "full"));
  b.jobs = values.get_size("bench.jobs", b.jobs);
  b.sample_chunk = values.get_size("bench.sample_chunk", b.sample_chunk);
  b.downstream = downstream();
  b.denoiser = denoiser();
  b.diffusion = diffusion();
  b.pretrain = pretrain();
  return b;
}

augbench::SiteConfig RunConfig::sites() const {
  augbench::SiteConfig s;
  s.toy = toy();
  s.sites = values.get_size("bench.sites", 1);
  s.perturbation = values.get_double("bench.site_perturbation", s.perturbation);
  return s;
}

fidelity::FidelityOptions RunConfig::fidelity() const {
  fidelity::FidelityOptions f;
  f.bins = values.get_size("fidelity.bins", f.bins);
  f.eps = values.get_double("fidelity.eps", f.eps);
  return f;
}

std::string file_hash(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError("cannot read '" + path.string() + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return hex64(hash_string(buf.str()));
}

void write_run_manifest(const fs::path& out, const std::string& command, const RunConfig& config,
                        const std::vector<fs::path>& artifacts) {
  std::vector<std::string> rel;
  for (const auto& a : artifacts) rel.push_back(fs::relative(a, out).generic_string());
  std::sort(rel.begin(), rel.end());
  auto stream = open_out(out / kRunManifest);
  stream << "# tsdf run manifest\n" << config.values.to_string() << "run.command = " << command << '\n';
  for (const auto& r : rel) stream << "artifact." << r << " = " << file_hash(out / r) << '\n';
}

namespace {

struct Common {
  std::string config_path;
  std::vector<std::string> sets;
  std::uint64_t seed = 0;
  CLI::Option* seed_opt = nullptr;
  std::string out;
  std::size_t jobs = 0;
  int verbosity = 0;
};

void add_common(CLI::App* sub, Common& c, bool out_required) {
  sub->add_option("--config", c.config_path, "Config file (key = value lines)")->check(CLI::ExistingFile);
  sub->add_option("--set", c.sets, "Override a config key: key=value (repeatable)");
  c.seed_opt = sub->add_option("--seed", c.seed, "Global seed (falls back to the config file, then TSDF_SEED)");
  auto* out = sub->add_option("--out", c.out, "Output directory");
  if (out_required) out->required();
  sub->add_option("--jobs", c.jobs, "Worker cap for parallel stages")->check(CLI::PositiveNumber);
  sub->add_flag("-v,--verbose", c.verbosity, "More log lines on stderr");
}

bool is_known_key(const ConfigMap& defaults, const std::string& key) {
  return defaults.contains(key) || key.rfind("run.", 0) == 0 || key.rfind("artifact.", 0) == 0;
}

RunConfig resolve(const Common& c) {
  const ConfigMap defaults = default_config();
  ConfigMap values = defaults;
  bool seed_from_file = false;
  if (!c.config_path.empty()) {
    auto file = ConfigMap::load(c.config_path);
    for (const auto& [k, v] : file.entries()) {
      if (!is_known_key(defaults, k)) throw ConfigError(c.config_path + ": unknown config key '" + k + "'");
    }
    seed_from_file = file.contains("seed");
    for (const auto& [k, v] : file.entries()) {
      if (k.rfind("run.", 0) != 0 && k.rfind("artifact.", 0) != 0) values.set(k, v);
    }
  }
  for (const auto& s : c.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key=value, got '" + s + "'");
    const std::string key = s.substr(0, eq);
    if (!defaults.contains(key)) throw ConfigError("--set: unknown config key '" + key + "'");
    values.set(key, s.substr(eq + 1));
  }
  if (c.seed_opt != nullptr && c.seed_opt->count() > 0) {
    values.set("seed", std::to_string(c.seed));
  } else if (!seed_from_file) {
    if (const char* env = std::getenv("TSDF_SEED"); env != nullptr && *env != '\0') values.set("seed", env);
  }
  if (c.jobs > 0) values.set("bench.jobs", std::to_string(c.jobs));
  if (c.verbosity > 0) values.set("log.verbosity", std::to_string(c.verbosity));
  RunConfig rc{values};
  (void)rc.seed();  // rejects a malformed seed early
  return rc;
}

// Every regular file under `dir` except the run manifest and timing logs.
std::vector<fs::path> collect_artifacts(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const auto name = e.path().filename().string();
    if (name == kRunManifest || name == "training_log.csv") continue;
    out.push_back(e.path());
  }
  return out;
}

std::shared_ptr<const data::Cohort> load_shared(const std::string& path) {
  return std::make_shared<const data::Cohort>(data::load_cohort(path));
}

// Whole cohort, or the training side of one fold when `fold` is set.
data::TrainingSlice training_slice(const std::shared_ptr<const data::Cohort>& cohort, const RunConfig& rc,
                                   std::optional<std::size_t> fold, std::size_t k) {
  if (!fold) return data::FoldSplit::whole_cohort(cohort);
  const auto split = data::subject_kfold_split(cohort, k, rc.stage_seed("split"));
  if (*fold >= split.folds()) throw ConfigError("--fold must be below --k");
  return split.training(*fold);
}

struct FoldArgs {
  std::size_t fold = 0;
  std::size_t k = 5;
  CLI::Option* fold_opt = nullptr;

  void add(CLI::App* sub) {
    fold_opt = sub->add_option("--fold", fold, "Hold out this fold (0-based); default trains on every subject");
    sub->add_option("--k", k, "Fold count used with --fold")->check(CLI::Range(2, 1000));
  }
  std::optional<std::size_t> get() const {
    return fold_opt->count() > 0 ? std::optional<std::size_t>(fold) : std::nullopt;
  }
};

void log_line(const RunConfig& rc, std::ostream& err, const std::string& text) {
  if (rc.values.get_int("log.verbosity", 0) > 0) err << text << '\n';
}

int cmd_gen_toy(const RunConfig& rc, const fs::path& out, std::ostream& os) {
  const auto cohort = data::generate_toy_cohort(rc.toy());
  data::save_cohort(cohort, out);
  write_run_manifest(out, "gen-toy", rc, collect_artifacts(out));
  os << "wrote " << cohort.size() << " subjects to " << out.string() << '\n';
  return kOk;
}

int cmd_pretrain(const RunConfig& rc, const fs::path& out, const std::string& cohort_path, const FoldArgs& fa,
                 std::ostream& os) {
  const auto cohort = load_shared(cohort_path);
  const auto slice = training_slice(cohort, rc, fa.get(), fa.k);
  const auto pc = rc.pretrain();
  const auto result = pretrain::pretrain_classifier(slice, rc.denoiser(), pc);
  fs::create_directories(out);
  nn::save_checkpoint(out / "encoder.tsdf", result.encoder);
  auto csv = open_out(out / "cv_report.csv");
  pretrain::write_cv_report(csv, pc.grid, result);
  csv.close();
  write_run_manifest(out, "pretrain", rc, collect_artifacts(out));
  const auto& w = result.hyperparameters;
  os << "selected grid point " << result.selected << " (lr " << format_number(w.lr) << ", weight_decay "
     << format_number(w.weight_decay) << ", epochs " << w.epochs << ", dropout " << format_number(w.dropout) << ")\n";
  return kOk;
}

int cmd_train(RunConfig rc, const fs::path& out, const std::string& cohort_path, int label,
              const std::string& encoder_path, const FoldArgs& fa, std::ostream& os, std::ostream& err) {
  if (label != 0 && label != 1) throw ConfigError("--class must be 0 or 1");
  if (!encoder_path.empty()) rc.values.set("diffusion.init_mode", "pretrained");
  const auto cohort = load_shared(cohort_path);
  const auto slice = training_slice(cohort, rc, fa.get(), fa.k).for_class(label);
  std::optional<nn::TensorList> encoder;
  if (!encoder_path.empty()) encoder = nn::load_checkpoint(encoder_path);
  auto model = diffusion::train(slice, rc.denoiser(), rc.diffusion(), encoder ? &*encoder : nullptr, {},
                                [&](const diffusion::EpochLog& e) {
                                  log_line(rc, err, "epoch " + std::to_string(e.epoch) + " loss " +
                                                        format_number(e.mean_loss));
                                });
  diffusion::save_model(model, out);
  auto log = open_out(out / "training_log.csv");
  diffusion::write_training_log(log, model.log);
  log.close();
  write_run_manifest(out, "train-diffusion", rc, collect_artifacts(out));
  os << "trained class " << label << " on " << slice.size() << " subjects; final loss "
     << format_number(model.log.back().mean_loss) << '\n';
  return kOk;
}

int cmd_sample(const RunConfig& rc, const fs::path& out, const std::string& model_dir, std::size_t n,
               std::ostream& os) {
  if (n == 0) throw ConfigError("--n must be positive");
  auto model = diffusion::load_model(model_dir);
  const auto set = diffusion::generate(model, n, rc.stage_seed("sample"));
  const std::size_t L = set.series.dim(1), R = set.series.dim(2);
  std::vector<data::Subject> subjects;
  for (std::size_t i = 0; i < n; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "synth-%04zu", i);
    nn::Tensor<double> s({L, R});
    std::copy_n(set.series.data() + i * L * R, L * R, s.data());
    subjects.push_back({id, set.class_label, std::move(s)});
  }
  data::save_cohort(data::Cohort(std::move(subjects)), out);
  auto prov = open_out(out / "provenance.csv");
  prov << "synthetic_id,class,model_hash,held_out_fold,training_ids\n";
  for (std::size_t i = 0; i < n; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "synth-%04zu", i);
    prov << id << ',' << set.class_label << ',' << set.model_hash << ','
         << (set.provenance.held_out_fold ? std::to_string(*set.provenance.held_out_fold) : "none") << ',';
    for (std::size_t j = 0; j < set.provenance.training_ids.size(); ++j) {
      prov << (j ? ";" : "") << set.provenance.training_ids[j];
    }
    prov << '\n';
  }
  prov.close();
  write_run_manifest(out, "sample", rc, collect_artifacts(out));
  os << "sampled " << n << " subjects of class " << set.class_label << '\n';
  return kOk;
}

int cmd_fc(const RunConfig& rc, const fs::path& out, const std::string& cohort_path, std::ostream& os) {
  const auto cohort = data::load_cohort(cohort_path);
  fc::FcOptions opts{rc.values.get_bool("fc.fisher_z", false)};
  auto features = open_out(out / "features.csv");
  features << "subject_id,label";
  const std::size_t R = cohort.rois();
  for (std::size_t i = 0; i < R; ++i) {
    for (std::size_t j = i + 1; j < R; ++j) features << ",fc_" << i << '_' << j;
  }
  features << '\n';
  std::size_t flagged = 0;
  for (const auto& s : cohort.subjects()) {
    const auto m = fc::pearson_fc(s.series, opts, cohort.roi_names());
    if (!m.constant_rois.empty()) ++flagged;
    auto csv = open_out(out / "fc" / (s.id + ".csv"));
    fc::write_fc_csv(csv, m);
    features << s.id << ',' << s.label;
    for (double v : fc::upper_triangle_features(m)) features << ',' << format_number(v);
    features << '\n';
  }
  features.close();
  write_run_manifest(out, "fc", rc, collect_artifacts(out));
  os << "wrote FC for " << cohort.size() << " subjects";
  if (flagged) os << " (" << flagged << " with constant ROIs)";
  os << '\n';
  return kOk;
}

int cmd_fidelity(const RunConfig& rc, const fs::path& out, const std::string& real_path,
                 const std::string& synth_path, std::ostream& os) {
  const auto real = data::load_cohort(real_path);
  const auto synth = data::load_cohort(synth_path);
  fidelity::FidelityReport report;
  report.options = rc.fidelity();
  for (int label : {0, 1}) {
    if (real.count(label) == 0 || synth.count(label) == 0) continue;
    const auto r = fidelity::pooled_values(real, label);
    const auto s = fidelity::pooled_values(synth, label);
    report.classes.push_back(fidelity::compare(label, r, s, report.options));
  }
  if (report.classes.empty()) throw ContractError("fidelity: the cohorts share no class");
  auto csv = open_out(out / "fidelity.csv");
  fidelity::write_fidelity_csv(csv, report);
  csv.close();
  write_run_manifest(out, "fidelity", rc, collect_artifacts(out));
  fidelity::write_fidelity_csv(os, report);
  return kOk;
}

int cmd_project(const RunConfig& rc, const fs::path& out, const std::string& real_path,
                const std::string& synth_path, std::ostream& os) {
  std::vector<fidelity::PointGroup> groups;
  for (const auto& [source, path] : {std::pair{"real", real_path}, std::pair{"synthetic", synth_path}}) {
    const auto cohort = data::load_cohort(path);
    for (int label : {0, 1}) {
      const std::size_t n = cohort.count(label);
      if (n == 0) continue;
      nn::Tensor<double> pts({n * cohort.length(), cohort.rois()});
      std::size_t row = 0;
      for (const auto& s : cohort.subjects()) {
        if (s.label != label) continue;
        std::copy_n(s.series.data(), s.series.size(), pts.data() + row * cohort.rois());
        row += cohort.length();
      }
      groups.push_back({source, label, std::move(pts)});
    }
  }
  const auto proj = fidelity::pca_project(groups);
  auto csv = open_out(out / "projection.csv");
  fidelity::write_projection_csv(csv, proj);
  csv.close();
  write_run_manifest(out, "project", rc, collect_artifacts(out));
  os << "explained variance " << format_number(proj.explained[0]) << ", " << format_number(proj.explained[1])
     << '\n';
  return kOk;
}

void write_bench_outputs(const fs::path& dir, const augbench::BenchmarkReport& report) {
  auto report_csv = open_out(dir / "report.csv");
  augbench::write_report_csv(report_csv, report);
  auto summary = open_out(dir / "summary.csv");
  augbench::write_summary_csv(summary, report);
  auto deltas = open_out(dir / "deltas.csv");
  augbench::write_deltas_csv(deltas, report);
  auto prov = open_out(dir / "provenance.csv");
  augbench::write_provenance_csv(prov, report);
}

int cmd_bench(const RunConfig& rc, const fs::path& out, const std::string& cohort_path, std::ostream& os) {
  const auto bc = rc.bench();
  const auto sites = rc.sites();
  std::vector<augbench::BenchmarkReport> reports;
  if (sites.sites > 1) {
    if (!cohort_path.empty()) throw ConfigError("bench: --cohort cannot be combined with bench.sites > 1");
    reports = augbench::run_multisite(sites, bc);
    for (std::size_t i = 0; i < reports.size(); ++i) {
      write_bench_outputs(out / ("site_" + std::to_string(i)), reports[i]);
    }
  } else {
    const auto cohort = cohort_path.empty() ? data::generate_toy_cohort(rc.toy()) : data::load_cohort(cohort_path);
    reports.push_back(augbench::run_benchmark(cohort, bc));
    write_bench_outputs(out, reports.back());
  }
  write_run_manifest(out, "bench", rc, collect_artifacts(out));
  for (std::size_t i = 0; i < reports.size(); ++i) {
    if (reports.size() > 1) os << "site " << i << '\n';
    augbench::write_summary_csv(os, reports[i]);
    std::size_t failed = 0;
    for (const auto& c : reports[i].cells) failed += c.ok() ? 0 : 1;
    if (failed) os << failed << " cells failed; see report.csv\n";
  }
  return kOk;
}

int cmd_schedule_dump(const RunConfig& rc, const std::string& out, std::ostream& os) {
  const auto t = rc.diffusion();
  const auto sched = diffusion::cosine_schedule(t.T, t.cosine_s, t.beta_clip);
  if (out.empty()) {
    diffusion::write_schedule_csv(os, sched, t.variance);
    return kOk;
  }
  auto csv = open_out(fs::path(out) / "schedule.csv");
  diffusion::write_schedule_csv(csv, sched, t.variance);
  csv.close();
  write_run_manifest(out, "schedule-dump", rc, collect_artifacts(out));
  return kOk;
}

int cmd_gradcheck(const RunConfig& rc, const std::string& out, std::ostream& os) {
  model::DenoiserConfig cfg;
  cfg.n_layers = 1;
  cfg.d_model = 8;
  cfg.n_heads = 2;
  cfg.input_dim = 3;
  cfg.seq_len = 4;
  cfg.diffusion_steps = 10;
  model::Denoiser<double> net(cfg, rc.stage_seed("gradcheck"));
  Rng rng = Rng::substream(rc.seed(), "gradcheck.data");
  nn::Tensor<double> x({2, cfg.seq_len, cfg.input_dim}), target(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    x[i] = rng.normal();
    target[i] = rng.normal();
  }
  const std::vector<std::size_t> steps{3, 7};
  auto loss = [&](nn::Graph<double>& g) {
    return nn::mse_loss(net.predict(g, x, steps, {}), g.constant(target));
  };
  const auto result = nn::check_gradients<double>(net.parameters(), loss, nn::default_gradcheck_options<double>());
  const double threshold = 1e-5;
  std::ostringstream text;
  text << "parameters," << net.parameters().size() << "\nprobes," << result.probes << "\nmax_rel_error,"
       << format_number(result.max_rel_error) << "\nworst," << result.worst_parameter << '[' << result.worst_index
       << "]\nthreshold," << format_number(threshold) << '\n';
  os << text.str();
  if (!out.empty()) {
    auto csv = open_out(fs::path(out) / "gradcheck.csv");
    csv << text.str();
    csv.close();
    write_run_manifest(out, "gradcheck", rc, collect_artifacts(out));
  }
  return result.max_rel_error < threshold ? kOk : kRuntime;
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Diffusion-based synthesis of ROI time series and augmentation benchmarking", "tsdf"};
  app.require_subcommand(1, 1);
  app.fallthrough(false);

  std::map<std::string, Common> common;
  auto sub = [&](const std::string& name, const std::string& help, bool out_required) {
    auto* s = app.add_subcommand(name, help);
    add_common(s, common[name], out_required);
    return s;
  };

  auto* gen = sub("gen-toy", "Generate the toy VAR cohort", true);

  std::string cohort_path;
  FoldArgs pre_fold, train_fold;
  auto* pre = sub("pretrain", "Grid-searched classification pretraining of the encoder", true);
  pre->add_option("--cohort", cohort_path, "Cohort directory or manifest")->required();
  pre_fold.add(pre);

  int label = 0;
  std::string encoder_path;
  auto* trn = sub("train-diffusion", "Train a per-class diffusion model", true);
  trn->add_option("--cohort", cohort_path, "Cohort directory or manifest")->required();
  trn->add_option("--class", label, "Class label to model (0 or 1)")->required();
  trn->add_option("--encoder", encoder_path, "Pretrained encoder checkpoint")->check(CLI::ExistingFile);
  train_fold.add(trn);

  std::string model_dir;
  std::size_t n = 0;
  auto* smp = sub("sample", "Draw synthetic subjects from a trained model", true);
  smp->add_option("--model", model_dir, "Model directory")->required()->check(CLI::ExistingDirectory);
  smp->add_option("--n", n, "Number of subjects")->required();

  auto* fcs = sub("fc", "Pearson FC matrices and feature vectors", true);
  fcs->add_option("--cohort", cohort_path, "Cohort directory or manifest")->required();

  std::string real_path, synth_path;
  auto* fid = sub("fidelity", "Pooled KL / Wasserstein / KS per class", true);
  fid->add_option("--real", real_path, "Real cohort")->required();
  fid->add_option("--synth", synth_path, "Synthetic cohort")->required();

  auto* prj = sub("project", "2-D PCA projection of real and synthetic timepoints", true);
  prj->add_option("--real", real_path, "Real cohort")->required();
  prj->add_option("--synth", synth_path, "Synthetic cohort")->required();

  auto* bch = sub("bench", "Cross-validated augmentation benchmark", true);
  bch->add_option("--cohort", cohort_path, "Cohort directory (default: generate the toy cohort)");

  auto* sch = sub("schedule-dump", "Write the noise schedule as CSV", false);
  auto* grd = sub("gradcheck", "Finite-difference check of a tiny denoiser", false);

  std::vector<std::string> storage;
  storage.push_back("tsdf");
  storage.insert(storage.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& s : storage) argv.push_back(s.c_str());

  try {
    app.parse(int(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    auto* active = app.get_subcommands().front();
    const auto rc = resolve(common[active->get_name()]);
    const std::string& o = common[active->get_name()].out;
    if (active == gen) return cmd_gen_toy(rc, o, out);
    if (active == pre) return cmd_pretrain(rc, o, cohort_path, pre_fold, out);
    if (active == trn) return cmd_train(rc, o, cohort_path, label, encoder_path, train_fold, out, err);
    if (active == smp) return cmd_sample(rc, o, model_dir, n, out);
    if (active == fcs) return cmd_fc(rc, o, cohort_path, out);
    if (active == fid) return cmd_fidelity(rc, o, real_path, synth_path, out);
    if (active == prj) return cmd_project(rc, o, real_path, synth_path, out);
    if (active == bch) return cmd_bench(rc, o, cohort_path, out);
    if (active == sch) return cmd_schedule_dump(rc, o, out);
    if (active == grd) return cmd_gradcheck(rc, o, out);
    throw InternalError("unhandled subcommand");
  } catch (const ConfigError& e) {
    err << "tsdf: " << e.what() << '\n' << app.get_subcommands().front()->help();
    return kUsage;
  } catch (const std::exception& e) {
    err << "tsdf: " << e.what() << '\n';
    return kRuntime;
  }
}

}  // namespace tsdf::cli
