#include "pointdrag/generator.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "pointdrag/numerics.hpp"

namespace pointdrag {

namespace {

// Gains of the frozen random projections. Each is divided by sqrt(fan_in) so
// the pre-activations are O(1) for latents drawn through map_latent.
constexpr double kMapBiasScale = 0.5;
constexpr double kPositionGain = 1.6;
constexpr double kRadiusGain = 1.6;
constexpr double kColorGain = 2.5;
// Radius of the ring of canonical blob positions, as a fraction of the image size.
constexpr double kHomeRing = 0.3;
// Canonical blob radius in pixels.
constexpr double kHomeRadius = 13.0;
// Blob k's position and radius rows read mostly from the spatial entries i
// with i % K == k; the remaining entries are attenuated by kCrossTalk.
constexpr double kOwnGain = 0.9;
constexpr double kCrossTalk = 0.2;

bool owned(int i, int k, int K) { return i % K == k; }

double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

std::string to_string(LatentMode mode) { return mode == LatentMode::shared ? "W" : "W+"; }

LatentMode latent_mode_from_string(const std::string& text) {
  if (text == "W" || text == "w" || text == "shared") return LatentMode::shared;
  if (text == "W+" || text == "w+" || text == "per_layer") return LatentMode::per_layer;
  throw std::invalid_argument("unknown latent mode '" + text + "' (expected W or W+)");
}

LayerRange parse_layer_range(const std::string& text) {
  LayerRange range;
  const auto dash = text.find('-');
  try {
    if (dash == std::string::npos) {
      range.first = range.last = std::stoi(text);
    } else {
      range.first = std::stoi(text.substr(0, dash));
      range.last = std::stoi(text.substr(dash + 1));
    }
  } catch (const std::exception&) {
    throw std::invalid_argument("malformed layer range '" + text + "' (expected e.g. 1-4)");
  }
  if (range.first < 1 || range.last < range.first) throw std::invalid_argument("invalid layer range '" + text + "'");
  return range;
}

std::string to_string(const LayerRange& range) {
  return std::to_string(range.first) + "-" + std::to_string(range.last);
}

void LatentStack::validate() const {
  if (num_layers < 1 || dim < 1) throw std::invalid_argument("latent: layer count and dimension must be positive");
  if (values.size() != static_cast<std::size_t>(num_layers) * dim) {
    throw std::invalid_argument("latent: expected " + std::to_string(num_layers * dim) + " values, got " +
                                std::to_string(values.size()));
  }
  if (editable.first < 1 || editable.last > num_layers || editable.first > editable.last) {
    throw std::invalid_argument("latent: editable range " + to_string(editable) + " outside [1, " +
                                std::to_string(num_layers) + "]");
  }
  for (double v : values) {
    if (!std::isfinite(v)) throw std::invalid_argument("latent: non-finite entry");
  }
  if (mode == LatentMode::shared) {
    const auto first = layer(1);
    for (int j = 2; j <= num_layers; ++j) {
      if (!std::equal(first.begin(), first.end(), layer(j).begin())) {
        throw std::invalid_argument("latent: shared (W) mode requires identical layers");
      }
    }
  }
}

LatentStack to_shared(const LatentStack& w) {
  LatentStack out = w;
  out.mode = LatentMode::shared;
  const auto first = w.layer(1);
  for (int j = 2; j <= w.num_layers; ++j) std::copy(first.begin(), first.end(), out.layer(j).begin());
  return out;
}

LatentStack to_per_layer(const LatentStack& w) {
  LatentStack out = w;
  out.mode = LatentMode::per_layer;
  return out;
}

int GeneratorSpec::block_resolution(int block_1based) const {
  if (block_1based < 1 || block_1based > num_blocks()) {
    throw std::invalid_argument("feature block " + std::to_string(block_1based) + " outside [1, " +
                                std::to_string(num_blocks()) + "]");
  }
  return block_resolutions[block_1based - 1];
}

void GeneratorSpec::validate() const {
  if (latent_dim_z < 1 || latent_dim_w < 1 || num_layers < 2 || blob_count < 1 || image_size < 2) {
    throw std::invalid_argument("generator: dimensions must be positive");
  }
  if (spatial_layers.first != 1 || spatial_layers.last >= num_layers) {
    throw std::invalid_argument("generator: spatial layers must be a proper prefix of the layer stack");
  }
  if (block_resolutions.empty() || block_resolutions.back() != image_size) {
    throw std::invalid_argument("generator: last block resolution must equal the image size");
  }
  for (std::size_t i = 0; i < block_resolutions.size(); ++i) {
    if (block_resolutions[i] < 2 || (i > 0 && block_resolutions[i] <= block_resolutions[i - 1])) {
      throw std::invalid_argument("generator: block resolutions must be strictly increasing and >= 2");
    }
  }
  if (offset_dim < 4 || offset_dim % 4 != 0) throw std::invalid_argument("generator: offset_dim must be a multiple of 4");
  if (!(radius_min > 0.0) || radius_max <= radius_min) throw std::invalid_argument("generator: bad radius range");
}

std::vector<double> sample_z(std::uint64_t seed, int dim) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> z(dim);
  for (auto& v : z) v = normal(rng);
  return z;
}

// ---------------------------------------------------------------------------
// BlobScene
// ---------------------------------------------------------------------------

BlobScene::BlobScene(const Generator& generator, std::vector<BlobParam> blobs)
    : generator_(&generator), blobs_(std::move(blobs)) {
  if (static_cast<int>(blobs_.size()) != generator.spec().blob_count) {
    throw std::invalid_argument("scene: blob count does not match generator");
  }
}

const GeneratorSpec& BlobScene::spec() const { return generator_->spec(); }

double BlobScene::block_to_image(int u, int resolution) const {
  return align_corners_source(u, resolution, spec().image_size);
}

double BlobScene::coverage(int k, double x, double y) const {
  double total = spec().background_weight;
  double mine = 0.0;
  for (int j = 0; j < static_cast<int>(blobs_.size()); ++j) {
    const auto& b = blobs_[j];
    const double dx = x - b.center.x, dy = y - b.center.y;
    const double a = std::exp(-(dx * dx + dy * dy) / (2.0 * b.radius * b.radius));
    total += a;
    if (j == k) mine = a;
  }
  return mine / total;
}

void BlobScene::feature_at(double x, double y, std::span<double> out) const {
  const auto& sp = spec();
  const int K = sp.blob_count, E = sp.embed_dim, freqs = sp.offset_dim / 4, per = sp.channels_per_blob();
  double total = sp.background_weight;
  double a[64];
  for (int k = 0; k < K; ++k) {
    const auto& b = blobs_[k];
    const double dx = x - b.center.x, dy = y - b.center.y;
    a[k] = std::exp(-(dx * dx + dy * dy) / (2.0 * b.radius * b.radius));
    total += a[k];
  }
  for (int k = 0; k < K; ++k) {
    const auto& b = blobs_[k];
    const double w = a[k] / total;
    double* o = out.data() + static_cast<std::size_t>(k) * per;
    const auto e = generator_->embedding(k);
    for (int i = 0; i < E; ++i) o[i] = w * e[i];
    const double ox = (x - b.center.x) / b.radius, oy = (y - b.center.y) / b.radius;
    double* p = o + E;
    for (int f = 1; f <= freqs; ++f) {
      *p++ = w * std::sin(f * ox);
      *p++ = w * std::cos(f * ox);
    }
    for (int f = 1; f <= freqs; ++f) {
      *p++ = w * std::sin(f * oy);
      *p++ = w * std::cos(f * oy);
    }
  }
}

void BlobScene::feature_backward(double x, double y, std::span<const double> upstream,
                                 std::span<BlobGrad> grads) const {
  const auto& sp = spec();
  const int K = sp.blob_count, E = sp.embed_dim, freqs = sp.offset_dim / 4, per = sp.channels_per_blob();
  double a[64], s[64], gox[64], goy[64];
  double total = sp.background_weight;
  for (int k = 0; k < K; ++k) {
    const auto& b = blobs_[k];
    const double dx = x - b.center.x, dy = y - b.center.y;
    a[k] = std::exp(-(dx * dx + dy * dy) / (2.0 * b.radius * b.radius));
    total += a[k];
  }
  double weighted = 0.0;
  for (int k = 0; k < K; ++k) {
    const auto& b = blobs_[k];
    const double w = a[k] / total;
    const double* g = upstream.data() + static_cast<std::size_t>(k) * per;
    const auto e = generator_->embedding(k);
    double sk = 0.0;
    for (int i = 0; i < E; ++i) sk += g[i] * e[i];
    const double ox = (x - b.center.x) / b.radius, oy = (y - b.center.y) / b.radius;
    const double* gp = g + E;
    double dox = 0.0, doy = 0.0;
    for (int f = 1; f <= freqs; ++f) {
      const double sn = std::sin(f * ox), cs = std::cos(f * ox);
      sk += gp[0] * sn + gp[1] * cs;
      dox += f * (gp[0] * cs - gp[1] * sn);
      gp += 2;
    }
    for (int f = 1; f <= freqs; ++f) {
      const double sn = std::sin(f * oy), cs = std::cos(f * oy);
      sk += gp[0] * sn + gp[1] * cs;
      doy += f * (gp[0] * cs - gp[1] * sn);
      gp += 2;
    }
    s[k] = sk;
    gox[k] = w * dox;
    goy[k] = w * doy;
    weighted += sk * w;
  }
  for (int k = 0; k < K; ++k) {
    const auto& b = blobs_[k];
    const double r = b.radius;
    const double dx = x - b.center.x, dy = y - b.center.y;
    const double ox = dx / r, oy = dy / r;
    const double d_a = (s[k] - weighted) / total;
    const double a_r2 = a[k] / (r * r);
    grads[k].cx += d_a * a_r2 * dx - gox[k] / r;
    grads[k].cy += d_a * a_r2 * dy - goy[k] / r;
    grads[k].radius += d_a * a_r2 * (dx * dx + dy * dy) / r - (gox[k] * ox + goy[k] * oy) / r;
  }
}

std::array<double, 3> BlobScene::pixel_at(double x, double y) const {
  const auto& sp = spec();
  double total = sp.background_weight;
  std::array<double, 3> acc{};
  for (int c = 0; c < 3; ++c) acc[c] = sp.background_weight * sp.background[c];
  for (const auto& b : blobs_) {
    const double dx = x - b.center.x, dy = y - b.center.y;
    const double a = std::exp(-(dx * dx + dy * dy) / (2.0 * b.radius * b.radius));
    total += a;
    for (int c = 0; c < 3; ++c) acc[c] += a * b.color[c];
  }
  for (auto& v : acc) v /= total;
  return acc;
}

void BlobScene::pixel_backward(double x, double y, const std::array<double, 3>& upstream,
                               std::span<BlobGrad> grads) const {
  const auto& sp = spec();
  const int K = sp.blob_count;
  double a[64];
  double total = sp.background_weight;
  std::array<double, 3> acc{};
  for (int c = 0; c < 3; ++c) acc[c] = sp.background_weight * sp.background[c];
  for (int k = 0; k < K; ++k) {
    const auto& b = blobs_[k];
    const double dx = x - b.center.x, dy = y - b.center.y;
    a[k] = std::exp(-(dx * dx + dy * dy) / (2.0 * b.radius * b.radius));
    total += a[k];
    for (int c = 0; c < 3; ++c) acc[c] += a[k] * b.color[c];
  }
  std::array<double, 3> pixel{};
  for (int c = 0; c < 3; ++c) pixel[c] = acc[c] / total;
  for (int k = 0; k < K; ++k) {
    const auto& b = blobs_[k];
    double d_a = 0.0;
    for (int c = 0; c < 3; ++c) {
      d_a += upstream[c] * (b.color[c] - pixel[c]) / total;
      grads[k].color[c] += upstream[c] * a[k] / total;
    }
    const double r = b.radius;
    const double dx = x - b.center.x, dy = y - b.center.y;
    const double a_r2 = a[k] / (r * r);
    grads[k].cx += d_a * a_r2 * dx;
    grads[k].cy += d_a * a_r2 * dy;
    grads[k].radius += d_a * a_r2 * (dx * dx + dy * dy) / r;
  }
}

// ---------------------------------------------------------------------------
// Generator
// ---------------------------------------------------------------------------

Generator::Generator(GeneratorSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  if (spec_.blob_count > 64) throw std::invalid_argument("generator: at most 64 blobs are supported");

  std::seed_seq seq{static_cast<std::uint32_t>(spec_.seed), static_cast<std::uint32_t>(spec_.seed >> 32),
                    0x5eedu, 0xb10bu};
  std::mt19937_64 rng(seq);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto fill = [&](std::vector<double>& v, std::size_t n, double scale) {
    v.resize(n);
    for (auto& x : v) x = scale * normal(rng);
  };

  const int L = spec_.num_layers, Dz = spec_.latent_dim_z, Dw = spec_.latent_dim_w, K = spec_.blob_count;
  fill(map_weight_, static_cast<std::size_t>(L) * Dw * Dz, 1.0 / std::sqrt(static_cast<double>(Dz)));
  fill(map_bias_, static_cast<std::size_t>(L) * Dw, kMapBiasScale);
  const int S = spatial_width(), A = appearance_width();
  fill(position_weight_, static_cast<std::size_t>(K) * 2 * S, kPositionGain / std::sqrt(static_cast<double>(S)));
  fill(radius_weight_, static_cast<std::size_t>(K) * S, kRadiusGain / std::sqrt(static_cast<double>(S)));
  fill(color_weight_, static_cast<std::size_t>(K) * 3 * A, kColorGain / std::sqrt(static_cast<double>(A)));
  for (int k = 0; k < K; ++k) {
    const int own = (S - k + K - 1) / K;
    const double boost = kOwnGain * std::sqrt(static_cast<double>(S) / std::max(own, 1));
    for (int i = 0; i < S; ++i) {
      const double f = owned(i, k, K) ? boost : kCrossTalk;
      position_weight_[(static_cast<std::size_t>(k) * 2) * S + i] *= f;
      position_weight_[(static_cast<std::size_t>(k) * 2 + 1) * S + i] *= f;
      radius_weight_[static_cast<std::size_t>(k) * S + i] *= f;
    }
  }
  anchor_home_positions(rng);
  fill(embeddings_, static_cast<std::size_t>(K) * spec_.embed_dim, 1.0);
  for (int k = 0; k < K; ++k) {
    auto e = std::span<double>(embeddings_).subspan(static_cast<std::size_t>(k) * spec_.embed_dim, spec_.embed_dim);
    const double norm = std::sqrt(dot(e, e));
    for (auto& v : e) v /= norm;
  }
}

// Shifts each position row along its owned part of the canonical spatial code
// m = w_s(z = 0) so that the canonical latent puts blob k at a home position
// on a ring around the image center. Latent variation still moves blobs around their homes.
void Generator::anchor_home_positions(std::mt19937_64& rng) {
  const int S = spatial_width(), K = spec_.blob_count;
  std::vector<double> m(S);
  for (int i = 0; i < S; ++i) m[i] = std::tanh(map_bias_[i]);  // layers 1..spatial_last, z = 0
  const double size = spec_.image_size;
  const double phase = std::uniform_real_distribution<double>(0.0, 2.0 * M_PI)(rng);
  for (int k = 0; k < K; ++k) {
    const double angle = phase + 2.0 * M_PI * k / K;
    const double ring = K == 1 ? 0.0 : kHomeRing * size;
    const double home[2] = {0.5 * size + ring * std::cos(angle), 0.5 * size + ring * std::sin(angle)};
    std::vector<double> mk(S, 0.0);
    for (int i = 0; i < S; ++i) mk[i] = owned(i, k, K) ? m[i] : 0.0;
    const double mm = dot(mk, mk);
    {
      double* row = radius_weight_.data() + static_cast<std::size_t>(k) * S;
      const double u = (kHomeRadius - spec_.radius_min) / (spec_.radius_max - spec_.radius_min);
      const double shift = (std::log(u / (1.0 - u)) - dot({row, static_cast<std::size_t>(S)}, mk)) / mm;
      for (int i = 0; i < S; ++i) row[i] += shift * mk[i];
    }
    for (int axis = 0; axis < 2; ++axis) {
      double* row = position_weight_.data() + (static_cast<std::size_t>(k) * 2 + axis) * S;
      const double u = home[axis] / size;
      const double want = std::log(u / (1.0 - u));
      const double shift = (want - dot({row, static_cast<std::size_t>(S)}, m)) / mm;
      for (int i = 0; i < S; ++i) row[i] += shift * mk[i];
    }
  }
}

int Generator::spatial_width() const { return spec_.spatial_layers.last * spec_.latent_dim_w; }
int Generator::appearance_width() const {
  return (spec_.num_layers - spec_.spatial_layers.last) * spec_.latent_dim_w;
}

LatentStack Generator::map_latent(std::span<const double> z, LatentMode mode) const {
  if (static_cast<int>(z.size()) != spec_.latent_dim_z) {
    throw std::invalid_argument("map_latent: z must have dimension " + std::to_string(spec_.latent_dim_z));
  }
  const int Dz = spec_.latent_dim_z, Dw = spec_.latent_dim_w;
  LatentStack w;
  w.num_layers = spec_.num_layers;
  w.dim = Dw;
  w.mode = mode;
  w.editable = spec_.spatial_layers;
  w.values.resize(static_cast<std::size_t>(spec_.num_layers) * Dw);
  for (int j = 1; j <= spec_.num_layers; ++j) {
    const int src = mode == LatentMode::shared ? 0 : j - 1;
    const double* A = map_weight_.data() + static_cast<std::size_t>(src) * Dw * Dz;
    const double* b = map_bias_.data() + static_cast<std::size_t>(src) * Dw;
    auto out = w.layer(j);
    for (int i = 0; i < Dw; ++i) {
      out[i] = std::tanh(dot(std::span<const double>(A + static_cast<std::size_t>(i) * Dz, Dz), z) + b[i]);
    }
  }
  return w;
}

LatentStack Generator::latent_from_seed(std::uint64_t z_seed, LatentMode mode) const {
  return map_latent(sample_z(z_seed, spec_.latent_dim_z), mode);
}

std::vector<double> Generator::spatial_code(const LatentStack& w) const {
  const auto n = static_cast<std::size_t>(spatial_width());
  return {w.values.begin(), w.values.begin() + static_cast<std::ptrdiff_t>(n)};
}

std::vector<double> Generator::appearance_code(const LatentStack& w) const {
  const auto n = static_cast<std::size_t>(spatial_width());
  return {w.values.begin() + static_cast<std::ptrdiff_t>(n), w.values.end()};
}

std::vector<BlobParam> Generator::blob_params(const LatentStack& w) const {
  if (w.num_layers != spec_.num_layers || w.dim != spec_.latent_dim_w) {
    throw std::invalid_argument("latent shape does not match the generator");
  }
  const auto ws = spatial_code(w);
  const auto wa = appearance_code(w);
  const int S = spatial_width(), A = appearance_width();
  const double size = spec_.image_size;
  std::vector<BlobParam> blobs(spec_.blob_count);
  for (int k = 0; k < spec_.blob_count; ++k) {
    const double* P = position_weight_.data() + static_cast<std::size_t>(k) * 2 * S;
    const double* R = radius_weight_.data() + static_cast<std::size_t>(k) * S;
    const double* C = color_weight_.data() + static_cast<std::size_t>(k) * 3 * A;
    auto& b = blobs[k];
    b.center.x = size * sigmoid(dot({P, static_cast<std::size_t>(S)}, ws));
    b.center.y = size * sigmoid(dot({P + S, static_cast<std::size_t>(S)}, ws));
    b.radius = spec_.radius_min + (spec_.radius_max - spec_.radius_min) * sigmoid(dot({R, static_cast<std::size_t>(S)}, ws));
    for (int c = 0; c < 3; ++c) b.color[c] = sigmoid(dot({C + static_cast<std::size_t>(c) * A, static_cast<std::size_t>(A)}, wa));
  }
  return blobs;
}

std::vector<double> Generator::blob_params_backward(const LatentStack& w, std::span<const BlobGrad> grads) const {
  const auto ws = spatial_code(w);
  const auto wa = appearance_code(w);
  const int S = spatial_width(), A = appearance_width();
  const double size = spec_.image_size;
  std::vector<double> out(w.values.size(), 0.0);
  double* gs = out.data();
  double* ga = out.data() + S;
  for (int k = 0; k < spec_.blob_count; ++k) {
    const double* P = position_weight_.data() + static_cast<std::size_t>(k) * 2 * S;
    const double* R = radius_weight_.data() + static_cast<std::size_t>(k) * S;
    const double* C = color_weight_.data() + static_cast<std::size_t>(k) * 3 * A;
    const auto& g = grads[k];
    const double sx = sigmoid(dot({P, static_cast<std::size_t>(S)}, ws));
    const double sy = sigmoid(dot({P + S, static_cast<std::size_t>(S)}, ws));
    const double sr = sigmoid(dot({R, static_cast<std::size_t>(S)}, ws));
    const double zx = g.cx * size * sx * (1.0 - sx);
    const double zy = g.cy * size * sy * (1.0 - sy);
    const double zr = g.radius * (spec_.radius_max - spec_.radius_min) * sr * (1.0 - sr);
    for (int i = 0; i < S; ++i) gs[i] += zx * P[i] + zy * P[S + i] + zr * R[i];
    for (int c = 0; c < 3; ++c) {
      const double* Cc = C + static_cast<std::size_t>(c) * A;
      const double sc = sigmoid(dot({Cc, static_cast<std::size_t>(A)}, wa));
      const double zc = g.color[c] * sc * (1.0 - sc);
      if (zc == 0.0) continue;
      for (int i = 0; i < A; ++i) ga[i] += zc * Cc[i];
    }
  }
  return out;
}

Grid Generator::render_image(const BlobScene& scene) const {
  const int n = spec_.image_size;
  Grid image(3, n, n);
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      const auto p = scene.pixel_at(x, y);
      for (int c = 0; c < 3; ++c) image.at(c, y, x) = p[c];
    }
  }
  return image;
}

Grid Generator::render_block(const BlobScene& scene, int block_1based) const {
  const int res = spec_.block_resolution(block_1based);
  const int C = spec_.feature_channels();
  Grid grid(C, res, res);
  std::vector<double> f(C);
  for (int v = 0; v < res; ++v) {
    const double y = scene.block_to_image(v, res);
    for (int u = 0; u < res; ++u) {
      scene.feature_at(scene.block_to_image(u, res), y, f);
      for (int c = 0; c < C; ++c) grid.at(c, v, u) = f[c];
    }
  }
  return grid;
}

RenderOutput Generator::synthesize(const LatentStack& w, const SynthesisOptions& options) const {
  w.validate();
  RenderOutput out;
  auto scene = this->scene(w);
  if (options.image) out.image = render_image(scene);
  out.features.resize(spec_.num_blocks());
  for (int b = 1; b <= spec_.num_blocks(); ++b) {
    const bool wanted = options.blocks.empty() ||
                        std::find(options.blocks.begin(), options.blocks.end(), b) != options.blocks.end();
    if (wanted) out.features[b - 1] = render_block(scene, b);
  }
  out.blobs = scene.blobs();
  return out;
}

}  // namespace pointdrag
