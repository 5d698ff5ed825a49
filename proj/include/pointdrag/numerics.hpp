#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include "pointdrag/grid.hpp"

namespace pointdrag {

// ---------------------------------------------------------------------------
// Bilinear interpolation
// ---------------------------------------------------------------------------

/// The four integer neighbours of a (clamped) continuous coordinate and the
/// fractional offsets toward the far neighbours.
struct BilinearTaps {
  int x0 = 0, x1 = 0, y0 = 0, y1 = 0;
  double fx = 0.0, fy = 0.0;
  bool clamped_x = false, clamped_y = false;

  double w00() const { return (1.0 - fx) * (1.0 - fy); }
  double w01() const { return fx * (1.0 - fy); }
  double w10() const { return (1.0 - fx) * fy; }
  double w11() const { return fx * fy; }
};

/// Coordinates outside [0, width-1] x [0, height-1] are clamped to the box.
BilinearTaps bilinear_taps(double x, double y, int width, int height);

/// Every bilinear read in the library goes through this expression so that
/// lazily evaluated maps agree bitwise with materialized ones.
inline double bilerp(const BilinearTaps& t, double g00, double g01, double g10, double g11) {
  return (1.0 - t.fy) * ((1.0 - t.fx) * g00 + t.fx * g01) + t.fy * ((1.0 - t.fx) * g10 + t.fx * g11);
}

std::vector<double> bilinear_sample(const Grid& grid, const Point2& point);

/// Accumulates d(upstream . sample)/d(grid) into grid_grad.
void bilinear_sample_backward(const Point2& point, std::span<const double> upstream, Grid& grid_grad);

/// d(upstream . sample)/d(point). Zero along an axis where the point was clamped.
Point2 bilinear_sample_point_grad(const Grid& grid, const Point2& point, std::span<const double> upstream);

/// Source coordinate of destination index `dst` under align-corners mapping.
inline double align_corners_source(int dst, int dst_size, int src_size) {
  if (dst_size <= 1) return 0.0;
  return static_cast<double>(dst) * (src_size - 1) / static_cast<double>(dst_size - 1);
}

Grid resize_bilinear(const Grid& grid, int new_height, int new_width);

/// Adjoint of resize_bilinear: maps a gradient on the resized grid back onto
/// the source grid of shape (channels, src_height, src_width).
Grid resize_bilinear_backward(const Grid& upstream, int src_height, int src_width);

// ---------------------------------------------------------------------------
// L1
// ---------------------------------------------------------------------------

/// Mean of weight * |a - b| over every entry of a. `weight` is either shaped
/// like a or single-channel, in which case it is broadcast over channels.
double l1_mean(const Grid& a, const Grid& b, const Grid* weight = nullptr);

/// Gradient of l1_mean with respect to a (negate for b). sign(0) = 0.
Grid l1_mean_grad(const Grid& a, const Grid& b, const Grid* weight = nullptr);

inline double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamState {
  std::size_t step_count = 0;
  std::vector<double> first_moment;
  std::vector<double> second_moment;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

class gradient_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One bias-corrected Adam update applied in place. Moments are sized lazily
/// on the first call. An all-zero gradient advances the moments and the step
/// counter but leaves the parameters untouched.
void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state, double lr);

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

using ScalarFunction = std::function<double(std::span<const double>)>;

/// Central differences (f(x + h e_j) - f(x - h e_j)) / 2h for every j.
std::vector<double> finite_diff_gradient(const ScalarFunction& f, std::span<const double> x, double h);

/// ||a - b|| / max(||a||, ||b||), 0 when both vanish.
double relative_error(std::span<const double> a, std::span<const double> b);

}  // namespace pointdrag
