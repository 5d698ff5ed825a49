#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "pointdrag/grid.hpp"

namespace pointdrag {

/// W: one vector shared by every layer. W+: one vector per layer.
enum class LatentMode { shared, per_layer };

std::string to_string(LatentMode mode);
LatentMode latent_mode_from_string(const std::string& text);

/// Inclusive, 1-based layer interval.
struct LayerRange {
  int first = 1;
  int last = 4;

  bool contains(int layer) const { return layer >= first && layer <= last; }
  friend bool operator==(const LayerRange&, const LayerRange&) = default;
};

LayerRange parse_layer_range(const std::string& text);  // "1-4" or "3"
std::string to_string(const LayerRange& range);

/// Layered latent code. Stored flat, layer-major.
struct LatentStack {
  int num_layers = 0;
  int dim = 0;
  LatentMode mode = LatentMode::per_layer;
  LayerRange editable{};
  std::vector<double> values;

  std::span<double> layer(int index_1based) {
    return std::span<double>(values).subspan(static_cast<std::size_t>(index_1based - 1) * dim, dim);
  }
  std::span<const double> layer(int index_1based) const {
    return std::span<const double>(values).subspan(static_cast<std::size_t>(index_1based - 1) * dim, dim);
  }

  /// Throws std::invalid_argument when shape, range or shared-mode invariants fail.
  void validate() const;

  friend bool operator==(const LatentStack&, const LatentStack&) = default;
};

/// Copy with every layer set to layer 1 and the mode switched to shared.
LatentStack to_shared(const LatentStack& w);
/// Same values, mode switched to per_layer.
LatentStack to_per_layer(const LatentStack& w);

struct BlobParam {
  Point2 center;
  double radius = 0.0;
  std::array<double, 3> color{};

  friend bool operator==(const BlobParam&, const BlobParam&) = default;
};

/// Adjoint of a BlobParam.
struct BlobGrad {
  double cx = 0.0, cy = 0.0, radius = 0.0;
  std::array<double, 3> color{};
};

struct GeneratorSpec {
  std::uint64_t seed = 0;
  int latent_dim_z = 64;
  int latent_dim_w = 32;
  int num_layers = 8;
  LayerRange spatial_layers{1, 4};
  int blob_count = 5;
  int image_size = 256;
  std::vector<int> block_resolutions{8, 16, 32, 64, 128, 256};
  int embed_dim = 8;
  int offset_dim = 8;

  double radius_min = 10.0;
  double radius_max = 40.0;
  double background_weight = 0.05;
  std::array<double, 3> background{0.2, 0.2, 0.2};

  int num_blocks() const { return static_cast<int>(block_resolutions.size()); }
  int channels_per_blob() const { return embed_dim + offset_dim; }
  int feature_channels() const { return blob_count * channels_per_blob(); }
  int block_resolution(int block_1based) const;

  void validate() const;
};

/// Deterministic N(0, I) draw of dimension `dim` from `seed`.
std::vector<double> sample_z(std::uint64_t seed, int dim = 64);

class Generator;

/// A set of blob parameters bound to a generator's frozen embeddings; the
/// evaluation point for features and pixels. Features of blob k occupy
/// channels [16k, 16k + 16): the identity embedding followed by the
/// sinusoidal encoding of the radius-normalized offset from the center.
class BlobScene {
 public:
  BlobScene(const Generator& generator, std::vector<BlobParam> blobs);

  const std::vector<BlobParam>& blobs() const { return blobs_; }
  const GeneratorSpec& spec() const;

  /// Feature vector at image-space location (x, y); out has feature_channels() entries.
  void feature_at(double x, double y, std::span<double> out) const;
  /// Accumulates d(upstream . feature_at(x, y))/d(blob params) into grads.
  void feature_backward(double x, double y, std::span<const double> upstream, std::span<BlobGrad> grads) const;

  std::array<double, 3> pixel_at(double x, double y) const;
  void pixel_backward(double x, double y, const std::array<double, 3>& upstream, std::span<BlobGrad> grads) const;

  /// Normalized soft coverage of blob k at (x, y).
  double coverage(int k, double x, double y) const;

  /// Image-space location of pixel (u, v) of a block grid of the given resolution.
  double block_to_image(int u, int resolution) const;

 private:
  const Generator* generator_;
  std::vector<BlobParam> blobs_;
};

struct RenderOutput {
  Grid image;                  // 3 x S x S, values in [0, 1]
  std::vector<Grid> features;  // one per block at native block resolution (empty grids for skipped blocks)
  std::vector<BlobParam> blobs;
};

struct SynthesisOptions {
  bool image = true;
  std::vector<int> blocks;  // 1-based; empty = every block
};

class Generator {
 public:
  explicit Generator(GeneratorSpec spec = {});

  const GeneratorSpec& spec() const { return spec_; }

  LatentStack map_latent(std::span<const double> z, LatentMode mode) const;
  LatentStack latent_from_seed(std::uint64_t z_seed, LatentMode mode) const;

  std::vector<BlobParam> blob_params(const LatentStack& w) const;
  BlobScene scene(const LatentStack& w) const { return BlobScene(*this, blob_params(w)); }

  RenderOutput synthesize(const LatentStack& w, const SynthesisOptions& options = {}) const;
  Grid render_image(const BlobScene& scene) const;
  Grid render_block(const BlobScene& scene, int block_1based) const;

  /// Gradient with respect to every latent entry (layer-major, like LatentStack::values)
  /// given adjoints of the blob parameters.
  std::vector<double> blob_params_backward(const LatentStack& w, std::span<const BlobGrad> grads) const;

  std::span<const double> embedding(int k) const {
    return std::span<const double>(embeddings_).subspan(static_cast<std::size_t>(k) * spec_.embed_dim, spec_.embed_dim);
  }

 private:
  std::vector<double> spatial_code(const LatentStack& w) const;
  std::vector<double> appearance_code(const LatentStack& w) const;
  void anchor_home_positions(std::mt19937_64& rng);
  int spatial_width() const;
  int appearance_width() const;

  GeneratorSpec spec_;
  // mapping: per layer A (w_dim x z_dim) and b (w_dim)
  std::vector<double> map_weight_;
  std::vector<double> map_bias_;
  // per blob: P (2 x spatial), R (1 x spatial), C (3 x appearance)
  std::vector<double> position_weight_;
  std::vector<double> radius_weight_;
  std::vector<double> color_weight_;
  std::vector<double> embeddings_;
};

}  // namespace pointdrag
