#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pointdrag/engine.hpp"
#include "pointdrag/generator.hpp"

namespace pointdrag {

enum class Protocol { keypoint_md, paired_reconstruction, block_ablation, r1_ablation, tracking_ablation };

std::string to_string(Protocol p);
Protocol protocol_from_string(const std::string& text);

struct BenchmarkConfig {
  Protocol protocol = Protocol::keypoint_md;
  int n_trials = 100;
  int n_points = 1;
  std::uint64_t seed = 0;
  EngineConfig engine{};
  /// Std-dev of the Gaussian perturbation of the spatial layers that turns
  /// the first latent of a trial into the second.
  double sigma = 0.1;
  int paired_pixels = 32;
  int paired_max_steps = 100;
  std::vector<int> sweep_blocks{2, 3, 4, 5, 6};
  std::vector<int> sweep_r1{1, 2, 3, 4, 5};
  /// Writes wall_ms = 0 so reports compare bitwise across runs.
  bool deterministic = false;

  void validate(const GeneratorSpec& spec) const;
};

struct TrialRecord {
  int trial = 0;
  std::uint64_t seed = 0;
  int n_points = 0;
  std::string metric;
  double value = 0.0;
  int steps = 0;
  double wall_ms = 0.0;
};

struct Aggregate {
  std::size_t count = 0;
  double mean = 0.0;
  double median = 0.0;
};

struct BenchmarkReport {
  BenchmarkConfig config;
  std::vector<TrialRecord> records;

  /// Metric names in first-appearance order.
  std::vector<std::string> metrics() const;
  Aggregate aggregate(const std::string& metric) const;
  std::vector<double> values(const std::string& metric) const;
};

Aggregate aggregate_values(std::vector<double> values);

/// Seed of trial `index` in the suite seeded by `suite_seed`.
std::uint64_t trial_seed(std::uint64_t suite_seed, int index);

/// The pair of latents used by trial `seed`: a fresh latent and its spatially
/// perturbed copy.
std::pair<LatentStack, LatentStack> trial_latents(const Generator& generator, std::uint64_t seed, double sigma);

BenchmarkReport run_keypoint_md(std::shared_ptr<const Generator> generator, const BenchmarkConfig& config);
BenchmarkReport run_paired_reconstruction(std::shared_ptr<const Generator> generator, const BenchmarkConfig& config);
BenchmarkReport run_block_ablation(std::shared_ptr<const Generator> generator, const BenchmarkConfig& config);
BenchmarkReport run_r1_ablation(std::shared_ptr<const Generator> generator, const BenchmarkConfig& config);
BenchmarkReport run_tracking_ablation(std::shared_ptr<const Generator> generator, const BenchmarkConfig& config);
BenchmarkReport run_benchmark(std::shared_ptr<const Generator> generator, const BenchmarkConfig& config);

void write_report_csv(std::ostream& out, const BenchmarkReport& report);
nlohmann::json report_summary(const BenchmarkReport& report);

/// Points and displaced targets for the paired-reconstruction protocol:
/// `count` pixels drawn with probability proportional to total blob coverage
/// in the first scene, each moved with the similarity transform of its
/// dominant blob.
DragSpec paired_drag_spec(const Generator& generator, const LatentStack& w1, const LatentStack& w2, int count,
                          std::uint64_t seed);

}  // namespace pointdrag
