#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <vector>

#include "pointdrag/generator.hpp"
#include "pointdrag/grid.hpp"

namespace pointdrag {

struct InversionConfig {
  int steps = 500;
  double lr = 1e-2;
  LatentMode mode = LatentMode::per_layer;
  int restarts = 3;
  std::uint64_t seed = 0;  // seeds the random restarts
  double feature_weight = 0.1;
  int feature_block = 4;
  /// A restart stops early once its loss falls below this value.
  double tolerance = 1e-9;
  /// Pixel stride of the lattice the image term is optimized on; the
  /// reported MSE is always over every pixel.
  int stride = 4;
  /// Coarse-to-fine schedule: residuals are blurred with a Gaussian whose
  /// width (image pixels) falls linearly from blur_sigma to zero over the
  /// first blur_fraction of the steps.
  double blur_sigma = 96.0;
  double blur_fraction = 0.6;
  double blur_feature_weight = 3.0;  // replaces feature_weight while blurred

  void validate(const GeneratorSpec& spec) const;
};

struct RestartRecord {
  double initial_mse = 0.0;
  double final_mse = 0.0;
  int steps = 0;
  bool discarded = false;
};

struct InversionResult {
  LatentStack latent;
  double mse = 0.0;          // image MSE of the returned latent
  double initial_mse = 0.0;  // image MSE at the start of the winning restart
  int best_restart = 0;
  std::vector<RestartRecord> restarts;
};

class inversion_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Features of the target at the configured block, at native block
/// resolution. Supplying them enables the feature term of the loss.
struct InversionTarget {
  Grid image;
  std::optional<Grid> features;
};

/// Latent optimization with Adam from `restarts` starting points. Restart 0
/// starts at `init` when given, later restarts at latents drawn from the
/// configured seed. Returns the restart with the lowest final image MSE.
InversionResult invert(const Generator& generator, const InversionTarget& target, const InversionConfig& config,
                       const std::optional<LatentStack>& init = std::nullopt);

double image_mse(const Grid& a, const Grid& b);

}  // namespace pointdrag
