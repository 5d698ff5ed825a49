#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "pointdrag/features.hpp"
#include "pointdrag/generator.hpp"
#include "pointdrag/numerics.hpp"

namespace pointdrag {

/// User input for one drag run.
struct DragSpec {
  std::vector<Point2> handles;
  std::vector<Point2> targets;
  std::optional<Grid> mask;  // 1 x H x W, 1 = movable

  /// Throws validation_error naming the offending field, e.g. "targets[2]".
  void validate(int width, int height) const;
};

class validation_error : public std::invalid_argument {
 public:
  validation_error(std::string field, const std::string& message)
      : std::invalid_argument(field + ": " + message), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

struct EngineConfig {
  int r1 = 3;
  int r2 = 12;
  double lambda = 20.0;
  std::optional<double> stop_d;  // default: 1 px for up to 5 handles, 2 px beyond
  double lr = 2e-3;
  int max_steps = 300;
  std::vector<int> feature_blocks{4};
  std::optional<std::vector<int>> tracking_blocks;  // default: feature_blocks
  bool tracking_enabled = true;
  LatentMode latent_mode = LatentMode::per_layer;
  LayerRange editable{1, 4};

  double stop_distance(std::size_t handle_count) const;
  const std::vector<int>& tracking_feature_blocks() const { return tracking_blocks ? *tracking_blocks : feature_blocks; }
  void validate(const GeneratorSpec& spec) const;
};

struct StepReport {
  int step_index = 0;  // 1-based
  double loss = 0.0;
  std::vector<Point2> handles;  // after tracking
  double max_distance = 0.0;
  std::uint64_t latent_snapshot_id = 0;
};

enum class Termination { converged, max_steps, stopped, aborted };
std::string to_string(Termination t);

struct DragResult {
  LatentStack latent;
  Grid image;
  std::vector<StepReport> steps;
  Termination reason = Termination::converged;
};

class drag_aborted : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One drag run: initial features and per-handle reference features are
/// anchored at construction and never refreshed. Single writer; distinct
/// sessions are independent.
class DragSession {
 public:
  DragSession(std::shared_ptr<const Generator> generator, LatentStack initial, DragSpec spec, EngineConfig config);

  /// Motion supervision, one Adam update, re-synthesis, then tracking.
  StepReport step();

  /// Steps until every handle is within the stop distance, max_steps is
  /// reached, or `stop` becomes true (checked between steps).
  DragResult run(const std::atomic<bool>* stop = nullptr,
                 const std::function<void(const StepReport&)>& on_step = {});

  bool satisfied() const;
  double max_distance() const;

  const Generator& generator() const { return *generator_; }
  std::shared_ptr<const Generator> generator_ptr() const { return generator_; }
  const LatentStack& latent() const { return latent_; }
  const LatentStack& initial_latent() const { return initial_latent_; }
  const DragSpec& spec() const { return spec_; }
  const EngineConfig& config() const { return config_; }
  const std::vector<Point2>& handles() const { return handles_; }
  const std::vector<std::vector<double>>& reference_features() const { return reference_; }
  const SceneFeatures& initial_features() const { return *initial_features_; }
  const SceneFeatures& initial_tracking_features() const;
  const std::vector<StepReport>& step_log() const { return log_; }
  const AdamState& optimizer() const { return adam_; }
  const LatentStack& snapshot(std::uint64_t id) const;

  /// Parameter vector the optimizer acts on (editable layers, or the shared vector in W mode).
  std::vector<double> parameters() const;
  /// Gradient of the motion supervision loss with respect to parameters() at the current latent.
  std::pair<double, std::vector<double>> loss_and_gradient(bool detach_query = true) const;

 private:
  std::unique_ptr<SceneFeatures> features_for(const LatentStack& w, const std::vector<int>& blocks) const;
  void set_parameters(std::span<const double> params);
  std::vector<double> reduce_gradient(const std::vector<double>& full) const;

  std::shared_ptr<const Generator> generator_;
  LatentStack initial_latent_;
  LatentStack latent_;
  DragSpec spec_;
  EngineConfig config_;
  double stop_d_;

  std::unique_ptr<SceneFeatures> initial_features_;
  std::unique_ptr<SceneFeatures> initial_tracking_;  // null when tracking blocks equal supervision blocks
  std::vector<std::vector<double>> reference_;
  std::vector<Point2> handles_;
  AdamState adam_;
  std::unique_ptr<SceneFeatures> current_;  // supervision features at latent_
  std::vector<StepReport> log_;
  std::vector<LatentStack> snapshots_;
};

/// Conforms a latent to the configured mode and editable range.
LatentStack prepare_latent(const LatentStack& w, const EngineConfig& config);

}  // namespace pointdrag
