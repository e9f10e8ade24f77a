#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "tsdf/augbench.hpp"
#include "tsdf/config.hpp"
#include "tsdf/data.hpp"
#include "tsdf/diffusion.hpp"
#include "tsdf/fidelity.hpp"
#include "tsdf/pretrain.hpp"

namespace tsdf::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kRuntime = 2 };

// Every recognized key with its default value.
ConfigMap default_config();

// Resolved view: defaults, then the config file, then --set overrides and
// dedicated flags.
struct RunConfig {
  ConfigMap values;

  std::uint64_t seed() const { return values.get_u64("seed", 0); }
  // Seed of a named stage, derived from the global seed.
  std::uint64_t stage_seed(std::string_view stage) const;

  data::ToyGenConfig toy() const;
  model::DenoiserConfig denoiser() const;
  diffusion::TrainConfig diffusion() const;
  pretrain::PretrainConfig pretrain() const;
  augbench::DownstreamConfig downstream() const;
  augbench::BenchmarkConfig bench() const;
  augbench::SiteConfig sites() const;
  fidelity::FidelityOptions fidelity() const;
};

inline constexpr const char* kRunManifest = "run.manifest";

// Resolved config, the command and a hash of every deterministic artifact
// under `out` (paths relative to `out`, sorted).
void write_run_manifest(const std::filesystem::path& out, const std::string& command, const RunConfig& config,
                        const std::vector<std::filesystem::path>& artifacts);

std::string file_hash(const std::filesystem::path& path);

// Parses and runs one subcommand; returns the process exit code.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace tsdf::cli
