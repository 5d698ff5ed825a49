#include "pointdrag/engine.hpp"

#include <algorithm>
#include <cmath>

#include "pointdrag/supervision.hpp"

namespace pointdrag {

namespace {

bool finite_point(const Point2& p) { return std::isfinite(p.x) && std::isfinite(p.y); }

void check_points(const std::vector<Point2>& points, const char* name, int width, int height) {
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto& p = points[i];
    const std::string field = std::string(name) + "[" + std::to_string(i) + "]";
    if (!finite_point(p)) throw validation_error(field, "coordinates must be finite");
    if (p.x < 0.0 || p.y < 0.0 || p.x > width - 1 || p.y > height - 1) {
      throw validation_error(field, "point (" + std::to_string(p.x) + ", " + std::to_string(p.y) +
                                        ") outside the image [0, " + std::to_string(width - 1) + "] x [0, " +
                                        std::to_string(height - 1) + "]");
    }
  }
}

void check_blocks(const std::vector<int>& blocks, const GeneratorSpec& spec, const char* field) {
  if (blocks.empty()) throw validation_error(field, "at least one feature block is required");
  for (int b : blocks) {
    if (b < 1 || b > spec.num_blocks()) {
      throw validation_error(field, "block " + std::to_string(b) + " outside [1, " + std::to_string(spec.num_blocks()) + "]");
    }
  }
}

}  // namespace

void DragSpec::validate(int width, int height) const {
  if (handles.empty()) throw validation_error("handles", "at least one handle point is required");
  if (targets.size() != handles.size()) {
    throw validation_error("targets", "expected " + std::to_string(handles.size()) + " targets, got " +
                                          std::to_string(targets.size()));
  }
  check_points(handles, "handles", width, height);
  check_points(targets, "targets", width, height);
  if (mask) {
    try {
      validate_mask(*mask, width, height);
    } catch (const std::invalid_argument& e) {
      throw validation_error("mask", e.what());
    }
  }
}

double EngineConfig::stop_distance(std::size_t handle_count) const {
  if (stop_d) return *stop_d;
  return handle_count <= 5 ? 1.0 : 2.0;
}

void EngineConfig::validate(const GeneratorSpec& spec) const {
  if (r1 < 1) throw validation_error("r1", "must be at least 1");
  if (r2 <= r1) throw validation_error("r2", "must exceed r1");
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw validation_error("lambda", "must be finite and non-negative");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw validation_error("lr", "must be positive");
  if (max_steps < 1) throw validation_error("max_steps", "must be at least 1");
  if (stop_d && !(*stop_d >= 0.0)) throw validation_error("stop_d", "must be non-negative");
  check_blocks(feature_blocks, spec, "feature_blocks");
  if (tracking_blocks) check_blocks(*tracking_blocks, spec, "tracking_blocks");
  if (editable.first < 1 || editable.last > spec.num_layers || editable.first > editable.last) {
    throw validation_error("editable_layers", "range " + to_string(editable) + " outside [1, " +
                                                  std::to_string(spec.num_layers) + "]");
  }
}

std::string to_string(Termination t) {
  switch (t) {
    case Termination::converged: return "converged";
    case Termination::max_steps: return "max_steps";
    case Termination::stopped: return "stopped";
    case Termination::aborted: return "aborted";
  }
  return "unknown";
}

LatentStack prepare_latent(const LatentStack& w, const EngineConfig& config) {
  LatentStack out = w;
  out.editable = config.editable;
  if (config.latent_mode == LatentMode::shared) {
    out.mode = LatentMode::shared;
    try {
      out.validate();
    } catch (const std::invalid_argument& e) {
      throw validation_error("latent", std::string("cannot optimize in W mode: ") + e.what());
    }
  } else {
    out.mode = LatentMode::per_layer;
    try {
      out.validate();
    } catch (const std::invalid_argument& e) {
      throw validation_error("latent", e.what());
    }
  }
  return out;
}

DragSession::DragSession(std::shared_ptr<const Generator> generator, LatentStack initial, DragSpec spec,
                         EngineConfig config)
    : generator_(std::move(generator)), spec_(std::move(spec)), config_(std::move(config)) {
  const auto& gs = generator_->spec();
  config_.validate(gs);
  spec_.validate(gs.image_size, gs.image_size);
  if (initial.num_layers != gs.num_layers || initial.dim != gs.latent_dim_w) {
    throw validation_error("latent", "shape does not match the generator");
  }
  initial_latent_ = prepare_latent(initial, config_);
  latent_ = initial_latent_;
  stop_d_ = config_.stop_distance(spec_.handles.size());

  initial_features_ = features_for(latent_, config_.feature_blocks);
  const FeatureMap* tracking_map = initial_features_.get();
  if (config_.tracking_feature_blocks() != config_.feature_blocks) {
    initial_tracking_ = features_for(latent_, config_.tracking_feature_blocks());
    tracking_map = initial_tracking_.get();
  }
  for (const auto& p : spec_.handles) {
    std::vector<double> f(tracking_map->channels());
    sample(*tracking_map, p, f);
    reference_.push_back(std::move(f));
  }
  handles_ = spec_.handles;
  snapshots_.push_back(latent_);
}

const SceneFeatures& DragSession::initial_tracking_features() const {
  return initial_tracking_ ? *initial_tracking_ : *initial_features_;
}

std::unique_ptr<SceneFeatures> DragSession::features_for(const LatentStack& w, const std::vector<int>& blocks) const {
  return std::make_unique<SceneFeatures>(*generator_, generator_->scene(w), blocks);
}

std::vector<double> DragSession::parameters() const {
  if (latent_.mode == LatentMode::shared) {
    const auto l = latent_.layer(1);
    return {l.begin(), l.end()};
  }
  const auto begin = latent_.values.begin() + static_cast<std::ptrdiff_t>(config_.editable.first - 1) * latent_.dim;
  const auto end = latent_.values.begin() + static_cast<std::ptrdiff_t>(config_.editable.last) * latent_.dim;
  return {begin, end};
}

void DragSession::set_parameters(std::span<const double> params) {
  if (latent_.mode == LatentMode::shared) {
    for (int j = 1; j <= latent_.num_layers; ++j) std::copy(params.begin(), params.end(), latent_.layer(j).begin());
    return;
  }
  std::copy(params.begin(), params.end(),
            latent_.values.begin() + static_cast<std::ptrdiff_t>(config_.editable.first - 1) * latent_.dim);
}

std::vector<double> DragSession::reduce_gradient(const std::vector<double>& full) const {
  const auto dim = static_cast<std::size_t>(latent_.dim);
  if (latent_.mode == LatentMode::shared) {
    std::vector<double> g(dim, 0.0);
    for (int j = 0; j < latent_.num_layers; ++j) {
      for (std::size_t i = 0; i < dim; ++i) g[i] += full[j * dim + i];
    }
    return g;
  }
  const auto begin = full.begin() + static_cast<std::ptrdiff_t>((config_.editable.first - 1) * dim);
  const auto end = full.begin() + static_cast<std::ptrdiff_t>(config_.editable.last * dim);
  return {begin, end};
}

std::pair<double, std::vector<double>> DragSession::loss_and_gradient(bool detach_query) const {
  auto current = current_ ? nullptr : features_for(latent_, config_.feature_blocks);
  const SceneFeatures& features = current_ ? *current_ : *current;
  SceneFeatureGrad sink(features);
  MotionSupervisionInput input{handles_, spec_.targets, spec_.mask ? &*spec_.mask : nullptr, config_.lambda, config_.r1};
  MotionLossOptions options;
  options.detach_query = detach_query;
  const double loss = motion_supervision_loss(features, initial_features_.get(), input, &sink, options);
  const auto full = generator_->blob_params_backward(latent_, sink.blob_grads());
  return {loss, reduce_gradient(full)};
}

StepReport DragSession::step() {
  if (!current_) current_ = features_for(latent_, config_.feature_blocks);
  auto [loss, grad] = loss_and_gradient();
  if (!std::isfinite(loss)) throw drag_aborted("non-finite motion supervision loss at step " + std::to_string(log_.size() + 1));

  auto params = parameters();
  try {
    adam_step(params, grad, adam_, config_.lr);
  } catch (const gradient_error& e) {
    throw drag_aborted(std::string("step ") + std::to_string(log_.size() + 1) + ": " + e.what());
  }
  set_parameters(params);

  current_ = features_for(latent_, config_.feature_blocks);
  if (config_.tracking_enabled) {
    std::unique_ptr<SceneFeatures> separate;
    const FeatureMap* tracking_map = current_.get();
    if (initial_tracking_) {
      separate = features_for(latent_, config_.tracking_feature_blocks());
      tracking_map = separate.get();
    }
    for (std::size_t i = 0; i < handles_.size(); ++i) {
      handles_[i] = track_point(*tracking_map, reference_[i], handles_[i], config_.r2);
    }
  }

  snapshots_.push_back(latent_);
  StepReport report;
  report.step_index = static_cast<int>(log_.size()) + 1;
  report.loss = loss;
  report.handles = handles_;
  report.max_distance = max_distance();
  report.latent_snapshot_id = snapshots_.size() - 1;
  log_.push_back(report);
  return report;
}

double DragSession::max_distance() const {
  double d = 0.0;
  for (std::size_t i = 0; i < handles_.size(); ++i) d = std::max(d, distance(handles_[i], spec_.targets[i]));
  return d;
}

bool DragSession::satisfied() const { return max_distance() <= stop_d_; }

const LatentStack& DragSession::snapshot(std::uint64_t id) const {
  if (id >= snapshots_.size()) throw std::out_of_range("unknown latent snapshot " + std::to_string(id));
  return snapshots_[id];
}

DragResult DragSession::run(const std::atomic<bool>* stop, const std::function<void(const StepReport&)>& on_step) {
  DragResult result;
  while (true) {
    if (satisfied()) {
      result.reason = Termination::converged;
      break;
    }
    if (static_cast<int>(log_.size()) >= config_.max_steps) {
      result.reason = Termination::max_steps;
      break;
    }
    if (stop != nullptr && stop->load()) {
      result.reason = Termination::stopped;
      break;
    }
    const auto report = step();
    if (on_step) on_step(report);
  }
  result.latent = latent_;
  result.image = generator_->render_image(generator_->scene(latent_));
  result.steps = log_;
  return result;
}

}  // namespace pointdrag
