#pragma once

#include <span>
#include <utility>
#include <vector>

#include "pointdrag/features.hpp"
#include "pointdrag/grid.hpp"

namespace pointdrag {

/// Integer pixels q with ||q - center|| < radius, clipped to the image.
std::vector<std::pair<int, int>> disk_pixels(const Point2& center, int radius, int width, int height);

/// Unit vector from `from` toward `to`; zero when the points coincide.
Point2 unit_direction(const Point2& from, const Point2& to);

struct MotionSupervisionInput {
  std::span<const Point2> handles;
  std::span<const Point2> targets;
  const Grid* mask = nullptr;  // 1 x H x W, 1 = movable; null = no mask term
  double lambda = 20.0;
  int r1 = 3;
};

struct MotionLossOptions {
  /// When false the loss also differentiates through the shifted-from
  /// features F(q), which the method deliberately detaches.
  bool detach_query = true;
  /// Supplies F(q) instead of `features` (values only). Used to evaluate the
  /// detached loss as a function of the live features.
  const FeatureMap* query_override = nullptr;
};

/// Shifted-patch motion supervision: for every handle, the mean L1 distance
/// between F(q) (detached) and F(q + d) over the disk of radius r1, summed
/// over handles; plus lambda * l1_mean(F, F0, 1 - mask) when a mask is given.
/// Gradients with respect to `features` pixels go to `grad` when non-null.
double motion_supervision_loss(const FeatureMap& features, const FeatureMap* initial,
                               const MotionSupervisionInput& input, PixelGradSink* grad = nullptr,
                               const MotionLossOptions& options = {});

/// Integer pixel in the square patch |x - p.x| < r2, |y - p.y| < r2 whose
/// feature is nearest to `reference` under L1. Ties resolve to the first
/// pixel in row-major order.
Point2 track_point(const FeatureMap& features, std::span<const double> reference, const Point2& p, int r2);

/// Validates a movable-region mask against an image size.
void validate_mask(const Grid& mask, int width, int height);

}  // namespace pointdrag
