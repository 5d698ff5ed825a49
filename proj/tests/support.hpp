#pragma once

// Helpers shared by the unit and acceptance suites.

#include <memory>
#include <random>
#include <vector>

#include "pointdrag/engine.hpp"
#include "pointdrag/features.hpp"
#include "pointdrag/generator.hpp"
#include "pointdrag/supervision.hpp"

namespace pointdrag::testing {

inline std::shared_ptr<const Generator> default_generator() {
  static const auto gen = std::make_shared<const Generator>();
  return gen;
}

inline Grid random_grid(int c, int h, int w, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Grid g(c, h, w);
  for (auto& v : g.values()) v = u(rng);
  return g;
}

/// The session's latent with its optimized parameters replaced by `params`.
inline LatentStack with_parameters(const DragSession& session, std::span<const double> params) {
  LatentStack w = session.latent();
  if (w.mode == LatentMode::shared) {
    for (int j = 1; j <= w.num_layers; ++j) std::copy(params.begin(), params.end(), w.layer(j).begin());
  } else {
    std::copy(params.begin(), params.end(),
              w.values.begin() + static_cast<std::ptrdiff_t>(session.config().editable.first - 1) * w.dim);
  }
  return w;
}

/// Motion supervision loss of `session` at perturbed parameters. With
/// `detach_query`, F(q) stays at the session's current latent, which makes
/// this the function whose gradient the engine computes.
inline double loss_at(const DragSession& session, std::span<const double> params, bool detach_query) {
  const auto& gen = session.generator();
  const auto& blocks = session.config().feature_blocks;
  SceneFeatures moved(gen, gen.scene(with_parameters(session, params)), blocks);
  SceneFeatures base(gen, gen.scene(session.latent()), blocks);
  MotionSupervisionInput input{session.handles(), session.spec().targets,
                               session.spec().mask ? &*session.spec().mask : nullptr, session.config().lambda,
                               session.config().r1};
  MotionLossOptions options;
  options.detach_query = detach_query;
  if (detach_query) options.query_override = &base;
  return motion_supervision_loss(moved, &session.initial_features(), input, nullptr, options);
}

/// Handle at blob k's center (rounded to a pixel), target displaced by `offset`.
inline DragSpec blob_drag(const Generator& gen, const LatentStack& w, int k, Point2 offset) {
  const auto b = gen.blob_params(w)[k];
  const double hi = gen.spec().image_size - 1;
  const Point2 h{std::clamp(std::round(b.center.x), 0.0, hi), std::clamp(std::round(b.center.y), 0.0, hi)};
  const Point2 t{std::clamp(h.x + offset.x, 0.0, hi), std::clamp(h.y + offset.y, 0.0, hi)};
  return DragSpec{{h}, {t}, std::nullopt};
}

/// Disk mask of `radius` around `center` (1 inside).
inline Grid disk_mask(int size, Point2 center, double radius) {
  Grid m(1, size, size, 0.0);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      if (std::hypot(x - center.x, y - center.y) <= radius) m.at(0, y, x) = 1.0;
    }
  }
  return m;
}

}  // namespace pointdrag::testing
