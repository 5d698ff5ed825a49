#include "pointdrag/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace pointdrag {

double distance(const Point2& a, const Point2& b) { return std::hypot(a.x - b.x, a.y - b.y); }

Grid::Grid(int channels, int height, int width, double fill)
    : channels_(channels), height_(height), width_(width) {
  if (channels < 1 || height < 1 || width < 1) throw shape_error("grid dimensions must be positive");
  values_.assign(static_cast<std::size_t>(channels) * height * width, fill);
}

Grid::Grid(int channels, int height, int width, std::vector<double> values)
    : channels_(channels), height_(height), width_(width), values_(std::move(values)) {
  if (channels < 1 || height < 1 || width < 1) throw shape_error("grid dimensions must be positive");
  if (values_.size() != static_cast<std::size_t>(channels) * height * width) {
    throw shape_error("grid value count does not match its shape");
  }
}

bool Grid::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

namespace {

void axis_taps(double v, int n, int& lo, int& hi, double& frac, bool& clamped) {
  const double upper = static_cast<double>(n - 1);
  clamped = v < 0.0 || v > upper;
  const double c = std::clamp(v, 0.0, upper);
  lo = static_cast<int>(std::floor(c));
  if (lo >= n - 1) {
    lo = n - 1;
    hi = n - 1;
    frac = 0.0;
    return;
  }
  hi = lo + 1;
  frac = c - lo;
}

}  // namespace

BilinearTaps bilinear_taps(double x, double y, int width, int height) {
  BilinearTaps t;
  axis_taps(x, width, t.x0, t.x1, t.fx, t.clamped_x);
  axis_taps(y, height, t.y0, t.y1, t.fy, t.clamped_y);
  return t;
}

std::vector<double> bilinear_sample(const Grid& grid, const Point2& point) {
  const auto t = bilinear_taps(point.x, point.y, grid.width(), grid.height());
  std::vector<double> out(grid.channels());
  for (int c = 0; c < grid.channels(); ++c) {
    out[c] = bilerp(t, grid.at(c, t.y0, t.x0), grid.at(c, t.y0, t.x1), grid.at(c, t.y1, t.x0),
                    grid.at(c, t.y1, t.x1));
  }
  return out;
}

void bilinear_sample_backward(const Point2& point, std::span<const double> upstream, Grid& grid_grad) {
  if (upstream.size() != static_cast<std::size_t>(grid_grad.channels())) {
    throw shape_error("upstream length does not match channel count");
  }
  const auto t = bilinear_taps(point.x, point.y, grid_grad.width(), grid_grad.height());
  for (int c = 0; c < grid_grad.channels(); ++c) {
    const double g = upstream[c];
    grid_grad.at(c, t.y0, t.x0) += g * t.w00();
    grid_grad.at(c, t.y0, t.x1) += g * t.w01();
    grid_grad.at(c, t.y1, t.x0) += g * t.w10();
    grid_grad.at(c, t.y1, t.x1) += g * t.w11();
  }
}

Point2 bilinear_sample_point_grad(const Grid& grid, const Point2& point, std::span<const double> upstream) {
  const auto t = bilinear_taps(point.x, point.y, grid.width(), grid.height());
  Point2 g;
  for (int c = 0; c < grid.channels(); ++c) {
    const double g00 = grid.at(c, t.y0, t.x0), g01 = grid.at(c, t.y0, t.x1);
    const double g10 = grid.at(c, t.y1, t.x0), g11 = grid.at(c, t.y1, t.x1);
    g.x += upstream[c] * ((1.0 - t.fy) * (g01 - g00) + t.fy * (g11 - g10));
    g.y += upstream[c] * ((1.0 - t.fx) * (g10 - g00) + t.fx * (g11 - g01));
  }
  if (t.clamped_x) g.x = 0.0;
  if (t.clamped_y) g.y = 0.0;
  return g;
}

Grid resize_bilinear(const Grid& grid, int new_height, int new_width) {
  if (new_height < 1 || new_width < 1) throw shape_error("resize target must be positive");
  Grid out(grid.channels(), new_height, new_width);
  for (int y = 0; y < new_height; ++y) {
    const double sy = align_corners_source(y, new_height, grid.height());
    for (int x = 0; x < new_width; ++x) {
      const double sx = align_corners_source(x, new_width, grid.width());
      const auto t = bilinear_taps(sx, sy, grid.width(), grid.height());
      for (int c = 0; c < grid.channels(); ++c) {
        out.at(c, y, x) = bilerp(t, grid.at(c, t.y0, t.x0), grid.at(c, t.y0, t.x1), grid.at(c, t.y1, t.x0),
                                 grid.at(c, t.y1, t.x1));
      }
    }
  }
  return out;
}

Grid resize_bilinear_backward(const Grid& upstream, int src_height, int src_width) {
  Grid grad(upstream.channels(), src_height, src_width);
  std::vector<double> g(upstream.channels());
  for (int y = 0; y < upstream.height(); ++y) {
    const double sy = align_corners_source(y, upstream.height(), src_height);
    for (int x = 0; x < upstream.width(); ++x) {
      const double sx = align_corners_source(x, upstream.width(), src_width);
      for (int c = 0; c < upstream.channels(); ++c) g[c] = upstream.at(c, y, x);
      bilinear_sample_backward({sx, sy}, g, grad);
    }
  }
  return grad;
}

namespace {

void check_l1_shapes(const Grid& a, const Grid& b, const Grid* weight) {
  if (!a.same_shape(b)) throw shape_error("l1_mean: operand shapes differ");
  if (weight != nullptr) {
    const bool broadcast = weight->channels() == 1 && weight->height() == a.height() && weight->width() == a.width();
    if (!broadcast && !weight->same_shape(a)) throw shape_error("l1_mean: weight shape does not broadcast");
  }
}

double weight_at(const Grid* weight, int c, int y, int x) {
  if (weight == nullptr) return 1.0;
  return weight->at(weight->channels() == 1 ? 0 : c, y, x);
}

}  // namespace

double l1_mean(const Grid& a, const Grid& b, const Grid* weight) {
  check_l1_shapes(a, b, weight);
  double total = 0.0;
  for (int c = 0; c < a.channels(); ++c) {
    for (int y = 0; y < a.height(); ++y) {
      for (int x = 0; x < a.width(); ++x) {
        total += weight_at(weight, c, y, x) * std::abs(a.at(c, y, x) - b.at(c, y, x));
      }
    }
  }
  return total / static_cast<double>(a.size());
}

Grid l1_mean_grad(const Grid& a, const Grid& b, const Grid* weight) {
  check_l1_shapes(a, b, weight);
  Grid grad(a.channels(), a.height(), a.width());
  const double inv_n = 1.0 / static_cast<double>(a.size());
  for (int c = 0; c < a.channels(); ++c) {
    for (int y = 0; y < a.height(); ++y) {
      for (int x = 0; x < a.width(); ++x) {
        grad.at(c, y, x) = weight_at(weight, c, y, x) * sign(a.at(c, y, x) - b.at(c, y, x)) * inv_n;
      }
    }
  }
  return grad;
}

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state, double lr) {
  if (params.size() != grads.size()) throw shape_error("adam_step: parameter and gradient sizes differ");
  if (!(lr > 0.0)) throw std::invalid_argument("adam_step: learning rate must be positive");
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!std::isfinite(grads[i])) {
      throw gradient_error("adam_step: non-finite gradient at index " + std::to_string(i));
    }
  }
  if (state.first_moment.empty() && state.second_moment.empty()) {
    state.first_moment.assign(params.size(), 0.0);
    state.second_moment.assign(params.size(), 0.0);
  }
  if (state.first_moment.size() != params.size() || state.second_moment.size() != params.size()) {
    throw shape_error("adam_step: optimizer state does not match parameter count");
  }

  state.step_count += 1;
  const double t = static_cast<double>(state.step_count);
  const double bias1 = 1.0 - std::pow(state.beta1, t);
  const double bias2 = 1.0 - std::pow(state.beta2, t);
  const bool any_gradient = std::any_of(grads.begin(), grads.end(), [](double g) { return g != 0.0; });

  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    state.first_moment[i] = state.beta1 * state.first_moment[i] + (1.0 - state.beta1) * g;
    state.second_moment[i] = state.beta2 * state.second_moment[i] + (1.0 - state.beta2) * g * g;
    if (!any_gradient) continue;
    const double m_hat = state.first_moment[i] / bias1;
    const double v_hat = state.second_moment[i] / bias2;
    params[i] -= lr * m_hat / (std::sqrt(v_hat) + state.epsilon);
  }
}

std::vector<double> finite_diff_gradient(const ScalarFunction& f, std::span<const double> x, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("finite_diff_gradient: step must be positive");
  std::vector<double> probe(x.begin(), x.end());
  std::vector<double> grad(x.size());
  for (std::size_t j = 0; j < x.size(); ++j) {
    probe[j] = x[j] + h;
    const double up = f(probe);
    probe[j] = x[j] - h;
    const double down = f(probe);
    probe[j] = x[j];
    grad[j] = (up - down) / (2.0 * h);
  }
  return grad;
}

double relative_error(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw shape_error("relative_error: length mismatch");
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double denom = std::sqrt(std::max(na, nb));
  return denom == 0.0 ? 0.0 : std::sqrt(diff) / denom;
}

}  // namespace pointdrag
