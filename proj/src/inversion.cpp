#include "pointdrag/inversion.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "pointdrag/numerics.hpp"

namespace pointdrag {

namespace {

// The step size follows a cosine decay from lr to this fraction of lr.
constexpr double kFinalLrFraction = 0.01;

struct Evaluation {
  double mse = 0.0;  // image MSE on the lattice (blurred while sigma > 0)
  double loss = 0.0;
  std::vector<double> grad;  // full latent gradient, layer-major
};

// Truncated Gaussian, applied in place along both axes of each channel of a
// c x h x w buffer. The operator is symmetric, so it is its own adjoint.
void blur(std::vector<double>& data, int c, int h, int w, double sigma) {
  if (sigma <= 0.0) return;
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(2 * radius + 1);
  double total = 0.0;
  for (int i = -radius; i <= radius; ++i) total += kernel[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (auto& k : kernel) k /= total;
  std::vector<double> line(std::max(h, w));
  for (int ch = 0; ch < c; ++ch) {
    double* plane = data.data() + static_cast<std::size_t>(ch) * h * w;
    for (int y = 0; y < h; ++y) {
      double* row = plane + static_cast<std::size_t>(y) * w;
      for (int x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int i = std::max(-radius, -x); i <= std::min(radius, w - 1 - x); ++i) acc += kernel[i + radius] * row[x + i];
        line[x] = acc;
      }
      std::copy(line.begin(), line.begin() + w, row);
    }
    for (int x = 0; x < w; ++x) {
      for (int y = 0; y < h; ++y) {
        double acc = 0.0;
        for (int i = std::max(-radius, -y); i <= std::min(radius, h - 1 - y); ++i) {
          acc += kernel[i + radius] * plane[static_cast<std::size_t>(y + i) * w + x];
        }
        line[y] = acc;
      }
      for (int y = 0; y < h; ++y) plane[static_cast<std::size_t>(y) * w + x] = line[y];
    }
  }
}

// Image MSE plus weighted feature L1, both taken after blurring the residual
// with a Gaussian of `sigma` image pixels.
Evaluation evaluate(const Generator& generator, const LatentStack& w, const InversionTarget& target,
                    const InversionConfig& config, double sigma) {
  const auto& spec = generator.spec();
  const BlobScene scene = generator.scene(w);
  std::vector<BlobGrad> grads(spec.blob_count);
  const int n = spec.image_size;
  const int stride = config.stride;
  const int m = (n + stride - 1) / stride;
  const auto plane = static_cast<std::size_t>(m) * m;

  Evaluation ev;
  std::vector<double> diff(3 * plane);
  for (int j = 0; j < m; ++j) {
    for (int i = 0; i < m; ++i) {
      const auto p = scene.pixel_at(i * stride, j * stride);
      for (int c = 0; c < 3; ++c) diff[c * plane + j * m + i] = p[c] - target.image.at(c, j * stride, i * stride);
    }
  }
  blur(diff, 3, m, m, sigma / stride);
  const double inv = 1.0 / (3.0 * plane);
  double sq = 0.0;
  for (auto& d : diff) {
    sq += d * d;
    d *= 2.0 * inv;
  }
  blur(diff, 3, m, m, sigma / stride);
  for (int j = 0; j < m; ++j) {
    for (int i = 0; i < m; ++i) {
      scene.pixel_backward(i * stride, j * stride,
                           {diff[j * m + i], diff[plane + j * m + i], diff[2 * plane + j * m + i]}, grads);
    }
  }
  ev.mse = sq * inv;
  ev.loss = ev.mse;

  if (target.features && (sigma > 0.0 ? config.blur_feature_weight : config.feature_weight) > 0.0) {
    const Grid& tf = *target.features;
    const int res = tf.height();
    const int C = tf.channels();
    // Blurred phases run on every other feature pixel.
    const int fs = sigma > 0.0 && res >= 16 ? 2 : 1;
    const int fm = (res + fs - 1) / fs;
    const auto fplane = static_cast<std::size_t>(fm) * fm;
    std::vector<double> fdiff(C * fplane), f(C), up(C);
    for (int v = 0; v < fm; ++v) {
      const double y = scene.block_to_image(v * fs, res);
      for (int u = 0; u < fm; ++u) {
        scene.feature_at(scene.block_to_image(u * fs, res), y, f);
        for (int c = 0; c < C; ++c) fdiff[c * fplane + v * fm + u] = f[c] - tf.at(c, v * fs, u * fs);
      }
    }
    const double fsigma = sigma * (res - 1) / (n - 1) / fs;
    blur(fdiff, C, fm, fm, fsigma);
    const double weight = sigma > 0.0 ? config.blur_feature_weight : config.feature_weight;
    const double scale = weight / (static_cast<double>(C) * fplane);
    double l1 = 0.0;
    for (auto& d : fdiff) {
      l1 += std::abs(d);
      d = scale * sign(d);
    }
    blur(fdiff, C, fm, fm, fsigma);
    for (int v = 0; v < fm; ++v) {
      const double y = scene.block_to_image(v * fs, res);
      for (int u = 0; u < fm; ++u) {
        for (int c = 0; c < C; ++c) up[c] = fdiff[c * fplane + v * fm + u];
        scene.feature_backward(scene.block_to_image(u * fs, res), y, up, grads);
      }
    }
    ev.loss += l1 * scale;
  }

  ev.grad = generator.blob_params_backward(w, grads);
  return ev;
}

std::vector<double> parameters_of(const LatentStack& w) {
  if (w.mode == LatentMode::shared) {
    const auto l = w.layer(1);
    return {l.begin(), l.end()};
  }
  return w.values;
}

void assign(LatentStack& w, std::span<const double> params) {
  if (w.mode == LatentMode::shared) {
    for (int j = 1; j <= w.num_layers; ++j) std::copy(params.begin(), params.end(), w.layer(j).begin());
  } else {
    std::copy(params.begin(), params.end(), w.values.begin());
  }
}

std::vector<double> reduce(const LatentStack& w, const std::vector<double>& full) {
  if (w.mode != LatentMode::shared) return full;
  std::vector<double> g(w.dim, 0.0);
  for (int j = 0; j < w.num_layers; ++j) {
    for (int i = 0; i < w.dim; ++i) g[i] += full[static_cast<std::size_t>(j) * w.dim + i];
  }
  return g;
}

}  // namespace

double image_mse(const Grid& a, const Grid& b) {
  if (!a.same_shape(b)) throw shape_error("image_mse: shape mismatch");
  double s = 0.0;
  const auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < av.size(); ++i) s += (av[i] - bv[i]) * (av[i] - bv[i]);
  return s / static_cast<double>(av.size());
}

void InversionConfig::validate(const GeneratorSpec& spec) const {
  if (steps < 1) throw std::invalid_argument("inversion: steps must be at least 1");
  if (restarts < 1) throw std::invalid_argument("inversion: restarts must be at least 1");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw std::invalid_argument("inversion: lr must be positive");
  if (stride < 1) throw std::invalid_argument("inversion: stride must be at least 1");
  if (!(blur_sigma >= 0.0)) throw std::invalid_argument("inversion: blur_sigma must be non-negative");
  if (!(blur_fraction >= 0.0 && blur_fraction < 1.0)) {
    throw std::invalid_argument("inversion: blur_fraction must lie in [0, 1)");
  }
  if (!(blur_feature_weight >= 0.0)) throw std::invalid_argument("inversion: blur_feature_weight must be non-negative");
  if (!(feature_weight >= 0.0)) throw std::invalid_argument("inversion: feature_weight must be non-negative");
  if (feature_block < 1 || feature_block > spec.num_blocks()) {
    throw std::invalid_argument("inversion: feature_block outside [1, " + std::to_string(spec.num_blocks()) + "]");
  }
}

InversionResult invert(const Generator& generator, const InversionTarget& target, const InversionConfig& config,
                       const std::optional<LatentStack>& init) {
  const auto& spec = generator.spec();
  config.validate(spec);
  if (target.image.channels() != 3 || target.image.height() != spec.image_size ||
      target.image.width() != spec.image_size) {
    throw shape_error("invert: target image must be 3 x " + std::to_string(spec.image_size) + " x " +
                      std::to_string(spec.image_size));
  }
  if (target.features) {
    const int res = spec.block_resolution(config.feature_block);
    if (target.features->channels() != spec.feature_channels() || target.features->height() != res ||
        target.features->width() != res) {
      throw shape_error("invert: target features do not match block " + std::to_string(config.feature_block));
    }
  }

  InversionResult result;
  result.mse = std::numeric_limits<double>::infinity();
  result.best_restart = -1;

  for (int r = 0; r < config.restarts; ++r) {
    LatentStack w;
    if (r == 0 && init) {
      w = *init;
      w.mode = config.mode;
      if (config.mode == LatentMode::shared) w = to_shared(w);
      w.validate();
    } else {
      const std::uint64_t z_seed = config.seed * 1000003ULL + static_cast<std::uint64_t>(r);
      w = generator.latent_from_seed(z_seed, config.mode);
    }

    RestartRecord record;
    AdamState adam;
    auto params = parameters_of(w);
    const LatentStack start = w;
    LatentStack best = w;
    double best_mse = std::numeric_limits<double>::infinity();
    for (int step = 0; step <= config.steps; ++step) {
      const double progress = static_cast<double>(step) / config.steps;
      const double sigma =
          progress < config.blur_fraction ? config.blur_sigma * (1.0 - progress / config.blur_fraction) : 0.0;
      const Evaluation ev = evaluate(generator, w, target, config, sigma);
      if (!std::isfinite(ev.loss)) {
        record.discarded = true;
        break;
      }
      if ((sigma == 0.0 && ev.mse < best_mse) || ev.loss < config.tolerance) {
        best_mse = ev.mse;
        best = w;
      }
      if (step == config.steps || ev.loss < config.tolerance) break;
      try {
        const double lr = config.lr * (kFinalLrFraction + (1.0 - kFinalLrFraction) * 0.5 * (1.0 + std::cos(M_PI * progress)));
        adam_step(params, reduce(w, ev.grad), adam, lr);
      } catch (const gradient_error&) {
        record.discarded = true;
        break;
      }
      assign(w, params);
      record.steps = step + 1;
    }
    if (!record.discarded) {
      record.initial_mse = image_mse(generator.render_image(generator.scene(start)), target.image);
      record.final_mse = image_mse(generator.render_image(generator.scene(best)), target.image);
      if (record.final_mse > record.initial_mse) {
        best = start;
        record.final_mse = record.initial_mse;
      }
    }
    if (!record.discarded && record.final_mse < result.mse) {
      result.mse = record.final_mse;
      result.initial_mse = record.initial_mse;
      result.latent = best;
      result.best_restart = r;
    }
    result.restarts.push_back(record);
  }

  if (result.best_restart < 0) throw inversion_error("invert: every restart produced a non-finite loss");
  return result;
}

}  // namespace pointdrag
