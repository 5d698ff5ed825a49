#pragma once

#include <algorithm>
#include <memory>
#include <span>
#include <vector>

#include "pointdrag/generator.hpp"
#include "pointdrag/grid.hpp"
#include "pointdrag/numerics.hpp"

namespace pointdrag {

/// Read access to a feature map at image resolution, one channel vector per
/// integer pixel.
class FeatureMap {
 public:
  virtual ~FeatureMap() = default;
  virtual int channels() const = 0;
  virtual int height() const = 0;
  virtual int width() const = 0;
  /// The span stays valid for the lifetime of the map.
  virtual std::span<const double> pixel(int x, int y) const = 0;
  /// Copies the pixel's features into `out`. Lazy maps may skip caching here;
  /// the values are identical to pixel().
  virtual void read(int x, int y, std::span<double> out) const {
    const auto p = pixel(x, y);
    std::copy(p.begin(), p.end(), out.begin());
  }
};

/// Receives gradients with respect to the pixels of a FeatureMap.
class PixelGradSink {
 public:
  virtual ~PixelGradSink() = default;
  virtual void add(int x, int y, std::span<const double> grad) = 0;
};

/// Bilinear read of a FeatureMap at a continuous, clamped location.
void sample(const FeatureMap& map, const Point2& point, std::span<double> out);
void sample_backward(PixelGradSink& sink, int width, int height, const Point2& point,
                     std::span<const double> upstream);

/// Adapts a channel-major Grid.
class GridFeatureMap final : public FeatureMap {
 public:
  explicit GridFeatureMap(const Grid& grid);

  int channels() const override { return channels_; }
  int height() const override { return height_; }
  int width() const override { return width_; }
  std::span<const double> pixel(int x, int y) const override;

 private:
  int channels_, height_, width_;
  std::vector<double> pixel_major_;
};

/// Accumulates pixel gradients into a dense channel-major Grid.
class GridGradSink final : public PixelGradSink {
 public:
  GridGradSink(int channels, int height, int width) : grad_(channels, height, width) {}
  void add(int x, int y, std::span<const double> grad) override;
  const Grid& grad() const { return grad_; }

 private:
  Grid grad_;
};

/// Sparse per-pixel vectors with stable addresses: an index over the pixel
/// grid plus chunked storage filled on first touch.
class PixelStore {
 public:
  PixelStore(int width, int height, int channels);

  double* find(int x, int y) const;
  /// Returns the slot and whether it was freshly created (zero-filled).
  std::pair<double*, bool> get_or_create(int x, int y);
  template <class F>
  void for_each(F&& f) const {
    for (std::size_t i = 0; i < order_.size(); ++i) {
      const int idx = order_[i];
      f(idx % width_, idx / width_, slot(i));
    }
  }
  std::size_t count() const { return order_.size(); }

 private:
  double* slot(std::size_t n) const;

  static constexpr std::size_t kChunk = 512;
  int width_, height_, channels_;
  std::vector<int> index_;
  std::vector<int> order_;
  std::vector<std::unique_ptr<double[]>> chunks_;
};

/// Features of one or more generator blocks for a fixed scene, bilinearly
/// resized (align corners) to image resolution and concatenated over blocks.
/// Values are computed on demand and memoized; equal bitwise to
/// resize_bilinear(render_block(...)). Not thread-safe.
class SceneFeatures final : public FeatureMap {
 public:
  SceneFeatures(const Generator& generator, BlobScene scene, std::vector<int> blocks);

  int channels() const override { return static_cast<int>(blocks_.size()) * block_channels_; }
  int height() const override { return size_; }
  int width() const override { return size_; }
  std::span<const double> pixel(int x, int y) const override;
  void read(int x, int y, std::span<double> out) const override;

  const BlobScene& scene() const { return scene_; }
  const std::vector<int>& blocks() const { return blocks_; }
  Grid materialize() const;

  std::span<const double> block_pixel(int block_index, int u, int v) const;

 private:
  friend class SceneFeatureGrad;
  void resample(int x, int y, double* out) const;

  const Generator* generator_;
  BlobScene scene_;
  std::vector<int> blocks_;
  std::vector<int> resolutions_;
  int size_;
  int block_channels_;
  mutable std::vector<PixelStore> block_cache_;
  mutable PixelStore image_cache_;
};

/// Pixel-gradient sink for SceneFeatures: pushes image-resolution gradients
/// through the resize onto block pixels, then through the analytic feature
/// function onto the blob parameters.
class SceneFeatureGrad final : public PixelGradSink {
 public:
  explicit SceneFeatureGrad(const SceneFeatures& features);

  void add(int x, int y, std::span<const double> grad) override;
  std::vector<BlobGrad> blob_grads() const;

 private:
  const SceneFeatures* features_;
  std::vector<PixelStore> block_adjoint_;
};

/// Parses "4" or "5+6" into a sorted list of 1-based block indices.
std::vector<int> parse_blocks(const std::string& text);
std::string blocks_to_string(const std::vector<int>& blocks);

}  // namespace pointdrag
