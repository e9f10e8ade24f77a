#include "tsdf/fidelity.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <ostream>

#include "tsdf/config.hpp"
#include "tsdf/error.hpp"

namespace tsdf::fidelity {

using nn::Tensor;

std::vector<double> pooled_values(std::span<const Tensor<double>> series) {
  if (series.empty()) throw ContractError("pooled_values: empty slice");
  std::vector<double> out;
  for (const auto& s : series) out.insert(out.end(), s.data(), s.data() + s.size());
  return out;
}

std::vector<double> pooled_values(const Tensor<double>& stacked) {
  if (stacked.empty()) throw ContractError("pooled_values: empty slice");
  return {stacked.data(), stacked.data() + stacked.size()};
}

std::vector<double> pooled_values(const data::Cohort& cohort, int label) {
  std::vector<double> out;
  for (const auto& s : cohort.subjects()) {
    if (s.label == label) out.insert(out.end(), s.series.data(), s.series.data() + s.series.size());
  }
  if (out.empty()) throw ContractError("pooled_values: no subjects of class " + std::to_string(label));
  return out;
}

namespace {

void require_samples(std::span<const double> a, std::span<const double> b, const char* what) {
  if (a.empty() || b.empty()) throw ContractError(std::string(what) + ": empty sample");
}

std::vector<double> sorted(std::span<const double> v) {
  std::vector<double> out(v.begin(), v.end());
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

double pooled_kl(std::span<const double> real, std::span<const double> synth, const FidelityOptions& options) {
  require_samples(real, synth, "pooled_kl");
  if (options.bins == 0) throw ConfigError("pooled_kl: bins must be positive");
  if (!(options.eps > 0.0)) throw ConfigError("pooled_kl: eps must be positive");
  double lo = real[0], hi = real[0];
  for (auto s : {real, synth}) {
    for (double v : s) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  if (!(hi > lo)) throw ContractError("pooled_kl: zero-width value range");
  const double width = (hi - lo) / double(options.bins);
  auto histogram = [&](std::span<const double> s) {
    std::vector<double> h(options.bins, 0.0);
    for (double v : s) {
      const auto b = std::min(options.bins - 1, std::size_t((v - lo) / width));
      h[b] += 1.0;
    }
    double total = 0.0;
    for (auto& x : h) {
      x = x / double(s.size()) + options.eps;
      total += x;
    }
    for (auto& x : h) x /= total;
    return h;
  };
  const auto p = histogram(real), q = histogram(synth);
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) kl += p[i] * std::log(p[i] / q[i]);
  return std::max(0.0, kl);
}

double pooled_wasserstein(std::span<const double> real, std::span<const double> synth) {
  require_samples(real, synth, "pooled_wasserstein");
  const auto a = sorted(real), b = sorted(synth);
  if (a.size() == b.size()) {
    double total = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) total += std::abs(a[i] - b[i]);
    return total / double(a.size());
  }
  // Integrate |F_a - F_b| between consecutive pooled points.
  const double n = double(a.size()), m = double(b.size());
  std::size_t i = 0, j = 0;
  double x = std::min(a[0], b[0]), total = 0.0;
  while (i < a.size() || j < b.size()) {
    const double next = j == b.size() || (i < a.size() && a[i] <= b[j]) ? a[i] : b[j];
    total += std::abs(double(i) / n - double(j) / m) * (next - x);
    x = next;
    while (i < a.size() && a[i] == x) ++i;
    while (j < b.size() && b[j] == x) ++j;
  }
  return total;
}

double pooled_ks(std::span<const double> real, std::span<const double> synth) {
  require_samples(real, synth, "pooled_ks");
  const auto a = sorted(real), b = sorted(synth);
  const double n = double(a.size()), m = double(b.size());
  std::size_t i = 0, j = 0;
  double best = 0.0;
  while (i < a.size() || j < b.size()) {
    const double x = j == b.size() || (i < a.size() && a[i] <= b[j]) ? a[i] : b[j];
    while (i < a.size() && a[i] == x) ++i;
    while (j < b.size() && b[j] == x) ++j;
    best = std::max(best, std::abs(double(i) / n - double(j) / m));
  }
  return best;
}

ClassFidelity compare(int label, std::span<const double> real, std::span<const double> synth,
                      const FidelityOptions& options) {
  return {label,
          pooled_kl(real, synth, options),
          pooled_wasserstein(real, synth),
          pooled_ks(real, synth),
          real.size(),
          synth.size()};
}

void write_fidelity_csv(std::ostream& out, const FidelityReport& report) {
  out << "class,kl,wd,ks,n_real,n_synth\n";
  for (const auto& c : report.classes) {
    out << c.label << ',' << format_number(c.kl) << ',' << format_number(c.wd) << ',' << format_number(c.ks) << ','
        << c.n_real << ',' << c.n_synth << '\n';
  }
}

Projection2D pca_project(const std::vector<PointGroup>& groups) {
  std::size_t R = 0, total = 0;
  for (const auto& g : groups) {
    if (g.points.empty()) continue;
    const std::size_t r = g.points.cols();
    if (R != 0 && r != R) throw DimensionError("pca_project: groups disagree on the ROI count");
    R = r;
    total += g.points.rows();
  }
  if (total < 3) throw ContractError("pca_project: need at least 3 points");
  if (R < 2) throw ContractError("pca_project: need at least 2 dimensions");

  Eigen::MatrixXd X(total, R);
  std::size_t row = 0;
  for (const auto& g : groups) {
    for (std::size_t i = 0; i < g.points.rows(); ++i, ++row) {
      for (std::size_t c = 0; c < R; ++c) X(row, c) = g.points.data()[i * R + c];
    }
  }
  const Eigen::RowVectorXd mean = X.colwise().mean();
  X.rowwise() -= mean;
  const Eigen::MatrixXd cov = (X.transpose() * X) / double(total - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) throw NumericError("pca_project: eigendecomposition failed");
  const Eigen::VectorXd values = solver.eigenvalues().cwiseMax(0.0);
  const double trace = values.sum();
  if (!(trace > 1e-12 * std::max(1.0, cov.cwiseAbs().maxCoeff())) || values(R - 1) <= 0.0) {
    throw ContractError("pca_project: point cloud has no variance");
  }

  Projection2D out;
  Eigen::MatrixXd basis(R, 2);
  for (int k = 0; k < 2; ++k) {
    Eigen::VectorXd v = solver.eigenvectors().col(Eigen::Index(R) - 1 - k);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0.0) v = -v;
    basis.col(k) = v;
    out.components[k].assign(v.data(), v.data() + R);
    out.explained[k] = values(Eigen::Index(R) - 1 - k) / trace;
  }
  const Eigen::MatrixXd proj = X * basis;
  row = 0;
  for (const auto& g : groups) {
    for (std::size_t i = 0; i < g.points.rows(); ++i, ++row) {
      out.points.push_back({proj(row, 0), proj(row, 1), g.source, g.label});
    }
  }
  return out;
}

void write_projection_csv(std::ostream& out, const Projection2D& p) {
  out << "# explained_variance," << format_number(p.explained[0]) << ',' << format_number(p.explained[1]) << '\n';
  out << "pc1,pc2,source,class\n";
  for (const auto& pt : p.points) {
    out << format_number(pt.pc1) << ',' << format_number(pt.pc2) << ',' << pt.source << ',' << pt.label << '\n';
  }
}

}  // namespace tsdf::fidelity
