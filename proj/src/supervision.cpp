#include "pointdrag/supervision.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace pointdrag {

std::vector<std::pair<int, int>> disk_pixels(const Point2& center, int radius, int width, int height) {
  std::vector<std::pair<int, int>> out;
  const int y_lo = std::max(0, static_cast<int>(std::floor(center.y - radius)));
  const int y_hi = std::min(height - 1, static_cast<int>(std::ceil(center.y + radius)));
  const int x_lo = std::max(0, static_cast<int>(std::floor(center.x - radius)));
  const int x_hi = std::min(width - 1, static_cast<int>(std::ceil(center.x + radius)));
  const double r2 = static_cast<double>(radius) * radius;
  for (int y = y_lo; y <= y_hi; ++y) {
    for (int x = x_lo; x <= x_hi; ++x) {
      const double dx = x - center.x, dy = y - center.y;
      if (dx * dx + dy * dy < r2) out.emplace_back(x, y);
    }
  }
  return out;
}

Point2 unit_direction(const Point2& from, const Point2& to) {
  const double n = distance(from, to);
  if (n == 0.0) return {0.0, 0.0};
  return {(to.x - from.x) / n, (to.y - from.y) / n};
}

void validate_mask(const Grid& mask, int width, int height) {
  if (mask.channels() != 1 || mask.width() != width || mask.height() != height) {
    throw shape_error("mask must be 1 x " + std::to_string(height) + " x " + std::to_string(width));
  }
  for (double v : mask.values()) {
    if (v != 0.0 && v != 1.0) throw std::invalid_argument("mask must be binary (0 or 1)");
  }
}

double motion_supervision_loss(const FeatureMap& features, const FeatureMap* initial,
                               const MotionSupervisionInput& input, PixelGradSink* grad,
                               const MotionLossOptions& options) {
  if (input.handles.size() != input.targets.size()) throw std::invalid_argument("handles and targets differ in count");
  if (input.r1 < 1) throw std::invalid_argument("r1 must be at least 1");
  const int C = features.channels(), W = features.width(), H = features.height();
  const FeatureMap& query = options.query_override ? *options.query_override : features;

  std::vector<double> shifted(C), upstream(C), query_grad(C);
  double loss = 0.0;
  for (std::size_t i = 0; i < input.handles.size(); ++i) {
    const Point2 p = input.handles[i];
    const Point2 d = unit_direction(p, input.targets[i]);
    const auto patch = disk_pixels(p, input.r1, W, H);
    if (patch.empty()) throw std::invalid_argument("motion supervision patch is empty for handle " + std::to_string(i));
    const double scale = 1.0 / (static_cast<double>(patch.size()) * C);
    double term = 0.0;
    for (const auto& [qx, qy] : patch) {
      const Point2 moved{qx + d.x, qy + d.y};
      sample(features, moved, shifted);
      const auto fq = query.pixel(qx, qy);
      for (int c = 0; c < C; ++c) {
        const double diff = fq[c] - shifted[c];
        term += std::abs(diff);
        upstream[c] = -sign(diff) * scale;
        query_grad[c] = sign(diff) * scale;
      }
      if (grad != nullptr) {
        sample_backward(*grad, W, H, moved, upstream);
        if (!options.detach_query) grad->add(qx, qy, query_grad);
      }
    }
    loss += term * scale;
  }

  if (input.mask != nullptr) {
    if (initial == nullptr) throw std::invalid_argument("mask term requires the initial feature map");
    validate_mask(*input.mask, W, H);
    const double scale = input.lambda / (static_cast<double>(C) * W * H);
    double term = 0.0;
    std::vector<double> g(C), f(C);
    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < W; ++x) {
        const double keep = 1.0 - input.mask->at(0, y, x);
        if (keep == 0.0) continue;
        features.read(x, y, f);
        const auto f0 = initial->pixel(x, y);
        for (int c = 0; c < C; ++c) {
          const double diff = f[c] - f0[c];
          term += keep * std::abs(diff);
          g[c] = keep * sign(diff) * scale;
        }
        if (grad != nullptr) grad->add(x, y, g);
      }
    }
    loss += term * scale;
  }
  return loss;
}

Point2 track_point(const FeatureMap& features, std::span<const double> reference, const Point2& p, int r2) {
  if (r2 < 1) throw std::invalid_argument("r2 must be at least 1");
  if (reference.size() != static_cast<std::size_t>(features.channels())) {
    throw shape_error("tracking reference length does not match feature channels");
  }
  const int W = features.width(), H = features.height();
  // Strict inequalities: x in (p.x - r2, p.x + r2).
  const int x_lo = std::max(0, static_cast<int>(std::floor(p.x - r2)) + 1);
  const int x_hi = std::min(W - 1, static_cast<int>(std::ceil(p.x + r2)) - 1);
  const int y_lo = std::max(0, static_cast<int>(std::floor(p.y - r2)) + 1);
  const int y_hi = std::min(H - 1, static_cast<int>(std::ceil(p.y + r2)) - 1);

  double best = std::numeric_limits<double>::infinity();
  Point2 best_point{std::clamp(std::round(p.x), 0.0, W - 1.0), std::clamp(std::round(p.y), 0.0, H - 1.0)};
  for (int y = y_lo; y <= y_hi; ++y) {
    for (int x = x_lo; x <= x_hi; ++x) {
      const auto f = features.pixel(x, y);
      double d = 0.0;
      for (std::size_t c = 0; c < reference.size(); ++c) d += std::abs(f[c] - reference[c]);
      if (d < best) {
        best = d;
        best_point = {static_cast<double>(x), static_cast<double>(y)};
      }
    }
  }
  return best_point;
}

}  // namespace pointdrag
