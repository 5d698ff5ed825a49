#include "pointdrag/features.hpp"

#include <algorithm>
#include <sstream>

namespace pointdrag {

void sample(const FeatureMap& map, const Point2& point, std::span<double> out) {
  const auto t = bilinear_taps(point.x, point.y, map.width(), map.height());
  const auto p00 = map.pixel(t.x0, t.y0);
  const auto p01 = map.pixel(t.x1, t.y0);
  const auto p10 = map.pixel(t.x0, t.y1);
  const auto p11 = map.pixel(t.x1, t.y1);
  for (int c = 0; c < map.channels(); ++c) out[c] = bilerp(t, p00[c], p01[c], p10[c], p11[c]);
}

void sample_backward(PixelGradSink& sink, int width, int height, const Point2& point,
                     std::span<const double> upstream) {
  const auto t = bilinear_taps(point.x, point.y, width, height);
  std::vector<double> scaled(upstream.size());
  auto push = [&](int x, int y, double w) {
    if (w == 0.0) return;
    for (std::size_t c = 0; c < upstream.size(); ++c) scaled[c] = w * upstream[c];
    sink.add(x, y, scaled);
  };
  push(t.x0, t.y0, t.w00());
  push(t.x1, t.y0, t.w01());
  push(t.x0, t.y1, t.w10());
  push(t.x1, t.y1, t.w11());
}

GridFeatureMap::GridFeatureMap(const Grid& grid)
    : channels_(grid.channels()), height_(grid.height()), width_(grid.width()), pixel_major_(grid.size()) {
  for (int y = 0; y < height_; ++y) {
    for (int x = 0; x < width_; ++x) {
      double* dst = pixel_major_.data() + (static_cast<std::size_t>(y) * width_ + x) * channels_;
      for (int c = 0; c < channels_; ++c) dst[c] = grid.at(c, y, x);
    }
  }
}

std::span<const double> GridFeatureMap::pixel(int x, int y) const {
  return {pixel_major_.data() + (static_cast<std::size_t>(y) * width_ + x) * channels_,
          static_cast<std::size_t>(channels_)};
}

void GridGradSink::add(int x, int y, std::span<const double> grad) {
  for (int c = 0; c < grad_.channels(); ++c) grad_.at(c, y, x) += grad[c];
}

// ---------------------------------------------------------------------------
// PixelStore
// ---------------------------------------------------------------------------

PixelStore::PixelStore(int width, int height, int channels)
    : width_(width), height_(height), channels_(channels), index_(static_cast<std::size_t>(width) * height, -1) {}

double* PixelStore::slot(std::size_t n) const {
  return chunks_[n / kChunk].get() + (n % kChunk) * static_cast<std::size_t>(channels_);
}

double* PixelStore::find(int x, int y) const {
  const int n = index_[static_cast<std::size_t>(y) * width_ + x];
  return n < 0 ? nullptr : slot(static_cast<std::size_t>(n));
}

std::pair<double*, bool> PixelStore::get_or_create(int x, int y) {
  int& n = index_[static_cast<std::size_t>(y) * width_ + x];
  if (n >= 0) return {slot(static_cast<std::size_t>(n)), false};
  n = static_cast<int>(order_.size());
  order_.push_back(y * width_ + x);
  if (order_.size() > chunks_.size() * kChunk) {
    chunks_.push_back(std::make_unique<double[]>(kChunk * static_cast<std::size_t>(channels_)));
  }
  double* s = slot(static_cast<std::size_t>(n));
  std::fill(s, s + channels_, 0.0);
  return {s, true};
}

// ---------------------------------------------------------------------------
// SceneFeatures
// ---------------------------------------------------------------------------

SceneFeatures::SceneFeatures(const Generator& generator, BlobScene scene, std::vector<int> blocks)
    : generator_(&generator),
      scene_(std::move(scene)),
      blocks_(std::move(blocks)),
      size_(generator.spec().image_size),
      block_channels_(generator.spec().feature_channels()),
      image_cache_(size_, size_, static_cast<int>(blocks_.size()) * block_channels_) {
  if (blocks_.empty()) throw std::invalid_argument("at least one feature block is required");
  for (int b : blocks_) {
    const int res = generator.spec().block_resolution(b);
    resolutions_.push_back(res);
    block_cache_.emplace_back(res, res, block_channels_);
  }
}

std::span<const double> SceneFeatures::block_pixel(int block_index, int u, int v) const {
  auto& store = block_cache_[block_index];
  auto [slot, fresh] = store.get_or_create(u, v);
  if (fresh) {
    const int res = resolutions_[block_index];
    scene_.feature_at(scene_.block_to_image(u, res), scene_.block_to_image(v, res),
                      {slot, static_cast<std::size_t>(block_channels_)});
  }
  return {slot, static_cast<std::size_t>(block_channels_)};
}

void SceneFeatures::resample(int x, int y, double* out) const {
  for (std::size_t bi = 0; bi < blocks_.size(); ++bi) {
    const int res = resolutions_[bi];
    const double sx = align_corners_source(x, size_, res);
    const double sy = align_corners_source(y, size_, res);
    const auto t = bilinear_taps(sx, sy, res, res);
    const int b = static_cast<int>(bi);
    const auto p00 = block_pixel(b, t.x0, t.y0);
    const auto p01 = block_pixel(b, t.x1, t.y0);
    const auto p10 = block_pixel(b, t.x0, t.y1);
    const auto p11 = block_pixel(b, t.x1, t.y1);
    double* o = out + bi * block_channels_;
    for (int c = 0; c < block_channels_; ++c) o[c] = bilerp(t, p00[c], p01[c], p10[c], p11[c]);
  }
}

std::span<const double> SceneFeatures::pixel(int x, int y) const {
  const auto C = static_cast<std::size_t>(channels());
  auto [slot, fresh] = image_cache_.get_or_create(x, y);
  if (fresh) resample(x, y, slot);
  return {slot, C};
}

void SceneFeatures::read(int x, int y, std::span<double> out) const {
  if (const double* cached = image_cache_.find(x, y)) {
    std::copy(cached, cached + channels(), out.begin());
    return;
  }
  resample(x, y, out.data());
}

Grid SceneFeatures::materialize() const {
  Grid grid(channels(), size_, size_);
  for (int y = 0; y < size_; ++y) {
    for (int x = 0; x < size_; ++x) {
      const auto p = pixel(x, y);
      for (int c = 0; c < channels(); ++c) grid.at(c, y, x) = p[c];
    }
  }
  return grid;
}

// ---------------------------------------------------------------------------
// SceneFeatureGrad
// ---------------------------------------------------------------------------

SceneFeatureGrad::SceneFeatureGrad(const SceneFeatures& features) : features_(&features) {
  for (int res : features.resolutions_) block_adjoint_.emplace_back(res, res, features.block_channels_);
}

void SceneFeatureGrad::add(int x, int y, std::span<const double> grad) {
  const auto& f = *features_;
  const int C = f.block_channels_;
  for (std::size_t bi = 0; bi < f.blocks_.size(); ++bi) {
    const int res = f.resolutions_[bi];
    const auto t = bilinear_taps(align_corners_source(x, f.size_, res), align_corners_source(y, f.size_, res), res, res);
    const double* g = grad.data() + bi * C;
    auto push = [&](int u, int v, double w) {
      if (w == 0.0) return;
      double* slot = block_adjoint_[bi].get_or_create(u, v).first;
      for (int c = 0; c < C; ++c) slot[c] += w * g[c];
    };
    push(t.x0, t.y0, t.w00());
    push(t.x1, t.y0, t.w01());
    push(t.x0, t.y1, t.w10());
    push(t.x1, t.y1, t.w11());
  }
}

std::vector<BlobGrad> SceneFeatureGrad::blob_grads() const {
  const auto& f = *features_;
  std::vector<BlobGrad> grads(f.scene_.blobs().size());
  const auto C = static_cast<std::size_t>(f.block_channels_);
  for (std::size_t bi = 0; bi < block_adjoint_.size(); ++bi) {
    const int res = f.resolutions_[bi];
    block_adjoint_[bi].for_each([&](int u, int v, const double* adj) {
      f.scene_.feature_backward(f.scene_.block_to_image(u, res), f.scene_.block_to_image(v, res), {adj, C}, grads);
    });
  }
  return grads;
}

std::vector<int> parse_blocks(const std::string& text) {
  std::vector<int> blocks;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, '+')) {
    try {
      std::size_t used = 0;
      blocks.push_back(std::stoi(part, &used));
      if (used != part.size()) throw std::invalid_argument(part);
    } catch (const std::exception&) {
      throw std::invalid_argument("malformed feature block list '" + text + "' (expected e.g. 4 or 5+6)");
    }
  }
  if (blocks.empty()) throw std::invalid_argument("empty feature block list");
  std::sort(blocks.begin(), blocks.end());
  blocks.erase(std::unique(blocks.begin(), blocks.end()), blocks.end());
  return blocks;
}

std::string blocks_to_string(const std::vector<int>& blocks) {
  std::string s;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    if (i) s += '+';
    s += std::to_string(blocks[i]);
  }
  return s;
}

}  // namespace pointdrag
