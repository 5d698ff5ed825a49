#include "pointdrag/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <random>
#include <set>

#include "pointdrag/inversion.hpp"
#include "pointdrag/io.hpp"

namespace pointdrag {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

Point2 clamp_to_image(const Point2& p, int size) {
  const double hi = size - 1;
  return {std::clamp(p.x, 0.0, hi), std::clamp(p.y, 0.0, hi)};
}

class Stopwatch {
 public:
  double ms() const {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

struct KeypointTrial {
  double md = 0.0;
  double md_no_edit = 0.0;
  int steps = 0;
  double wall_ms = 0.0;
};

KeypointTrial keypoint_trial(const std::shared_ptr<const Generator>& generator, std::uint64_t seed, int n_points,
                             double sigma, const EngineConfig& engine) {
  const auto& gs = generator->spec();
  auto [wa, wb] = trial_latents(*generator, seed, sigma);
  const auto ba = generator->blob_params(wa);
  const auto bb = generator->blob_params(wb);
  DragSpec spec;
  for (int k = 0; k < n_points; ++k) {
    spec.handles.push_back(clamp_to_image(ba[k].center, gs.image_size));
    spec.targets.push_back(clamp_to_image(bb[k].center, gs.image_size));
  }
  KeypointTrial t;
  for (int k = 0; k < n_points; ++k) t.md_no_edit += distance(spec.handles[k], spec.targets[k]);
  t.md_no_edit /= n_points;

  Stopwatch clock;
  DragSession session(generator, wa, spec, engine);
  const auto result = session.run();
  t.wall_ms = clock.ms();
  t.steps = static_cast<int>(result.steps.size());
  const auto bf = generator->blob_params(result.latent);
  for (int k = 0; k < n_points; ++k) t.md += distance(bf[k].center, spec.targets[k]);
  t.md /= n_points;
  return t;
}

/// Runs the keypoint suite under `engine` and appends one record per trial.
void keypoint_suite(const std::shared_ptr<const Generator>& generator, const BenchmarkConfig& config,
                    const EngineConfig& engine, const std::string& metric, BenchmarkReport& report,
                    bool with_baseline) {
  for (int i = 0; i < config.n_trials; ++i) {
    const auto seed = trial_seed(config.seed, i);
    const auto t = keypoint_trial(generator, seed, config.n_points, config.sigma, engine);
    const double wall = config.deterministic ? 0.0 : t.wall_ms;
    if (with_baseline) report.records.push_back({i, seed, config.n_points, "md_no_edit", t.md_no_edit, 0, 0.0});
    report.records.push_back({i, seed, config.n_points, metric, t.md, t.steps, wall});
  }
}

}  // namespace

std::string to_string(Protocol p) {
  switch (p) {
    case Protocol::keypoint_md: return "keypoint_md";
    case Protocol::paired_reconstruction: return "paired_reconstruction";
    case Protocol::block_ablation: return "block_ablation";
    case Protocol::r1_ablation: return "r1_ablation";
    case Protocol::tracking_ablation: return "tracking_ablation";
  }
  return "unknown";
}

Protocol protocol_from_string(const std::string& text) {
  for (auto p : {Protocol::keypoint_md, Protocol::paired_reconstruction, Protocol::block_ablation,
                 Protocol::r1_ablation, Protocol::tracking_ablation}) {
    if (to_string(p) == text) return p;
  }
  throw std::invalid_argument("unknown protocol '" + text + "'");
}

void BenchmarkConfig::validate(const GeneratorSpec& spec) const {
  if (n_trials < 1) throw validation_error("n_trials", "must be at least 1");
  if (n_points < 1 || n_points > spec.blob_count) {
    throw validation_error("n_points", "must be in [1, " + std::to_string(spec.blob_count) + "]");
  }
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw validation_error("sigma", "must be finite and non-negative");
  if (paired_pixels < 1) throw validation_error("paired_pixels", "must be at least 1");
  if (paired_max_steps < 1) throw validation_error("paired_max_steps", "must be at least 1");
  engine.validate(spec);
  for (int b : sweep_blocks) {
    if (b < 1 || b > spec.num_blocks()) throw validation_error("sweep_blocks", "block " + std::to_string(b) + " out of range");
  }
  for (int r : sweep_r1) {
    EngineConfig e = engine;
    e.r1 = r;
    e.validate(spec);
  }
}

std::vector<std::string> BenchmarkReport::metrics() const {
  std::vector<std::string> out;
  for (const auto& r : records) {
    if (std::find(out.begin(), out.end(), r.metric) == out.end()) out.push_back(r.metric);
  }
  return out;
}

std::vector<double> BenchmarkReport::values(const std::string& metric) const {
  std::vector<double> v;
  for (const auto& r : records) {
    if (r.metric == metric) v.push_back(r.value);
  }
  return v;
}

Aggregate BenchmarkReport::aggregate(const std::string& metric) const { return aggregate_values(values(metric)); }

Aggregate aggregate_values(std::vector<double> v) {
  Aggregate a;
  a.count = v.size();
  if (v.empty()) return a;
  double s = 0.0;
  for (double x : v) s += x;
  a.mean = s / static_cast<double>(v.size());
  std::sort(v.begin(), v.end());
  const std::size_t mid = v.size() / 2;
  a.median = v.size() % 2 ? v[mid] : 0.5 * (v[mid - 1] + v[mid]);
  return a;
}

std::uint64_t trial_seed(std::uint64_t suite_seed, int index) {
  return splitmix64(splitmix64(suite_seed) + static_cast<std::uint64_t>(index));
}

std::pair<LatentStack, LatentStack> trial_latents(const Generator& generator, std::uint64_t seed, double sigma) {
  const auto& gs = generator.spec();
  auto wa = generator.latent_from_seed(seed, LatentMode::per_layer);
  auto wb = wa;
  std::mt19937_64 rng(splitmix64(seed ^ 0x7e57ULL));
  std::normal_distribution<double> noise(0.0, 1.0);
  for (int j = gs.spatial_layers.first; j <= gs.spatial_layers.last; ++j) {
    for (auto& v : wb.layer(j)) v += sigma * noise(rng);
  }
  return {std::move(wa), std::move(wb)};
}

DragSpec paired_drag_spec(const Generator& generator, const LatentStack& w1, const LatentStack& w2, int count,
                          std::uint64_t seed) {
  const auto& gs = generator.spec();
  const int n = gs.image_size;
  const BlobScene s1 = generator.scene(w1);
  const auto& b2 = generator.blob_params(w2);
  std::vector<double> weight(static_cast<std::size_t>(n) * n, 0.0);
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      double total = 0.0;
      for (int k = 0; k < gs.blob_count; ++k) total += s1.coverage(k, x, y);
      weight[static_cast<std::size_t>(y) * n + x] = total;
    }
  }
  std::mt19937_64 rng(splitmix64(seed ^ 0xf10eULL));
  std::discrete_distribution<std::size_t> pick(weight.begin(), weight.end());
  std::set<std::size_t> taken;
  DragSpec spec;
  for (int attempt = 0; static_cast<int>(spec.handles.size()) < count && attempt < 100 * count; ++attempt) {
    const std::size_t idx = pick(rng);
    if (!taken.insert(idx).second) continue;
    const Point2 q{static_cast<double>(idx % n), static_cast<double>(idx / n)};
    int best = 0;
    for (int k = 1; k < gs.blob_count; ++k) {
      if (s1.coverage(k, q.x, q.y) > s1.coverage(best, q.x, q.y)) best = k;
    }
    const auto& a = s1.blobs()[best];
    const auto& b = b2[best];
    const double scale = b.radius / a.radius - 1.0;
    const Point2 d{b.center.x - a.center.x + (q.x - a.center.x) * scale,
                   b.center.y - a.center.y + (q.y - a.center.y) * scale};
    spec.handles.push_back(q);
    spec.targets.push_back(clamp_to_image({q.x + d.x, q.y + d.y}, n));
  }
  return spec;
}

BenchmarkReport run_keypoint_md(std::shared_ptr<const Generator> generator, const BenchmarkConfig& config) {
  config.validate(generator->spec());
  BenchmarkReport report{config, {}};
  keypoint_suite(generator, config, config.engine, "md", report, true);
  return report;
}

BenchmarkReport run_paired_reconstruction(std::shared_ptr<const Generator> generator, const BenchmarkConfig& config) {
  config.validate(generator->spec());
  BenchmarkReport report{config, {}};
  EngineConfig engine = config.engine;
  engine.max_steps = config.paired_max_steps;
  for (int i = 0; i < config.n_trials; ++i) {
    const auto seed = trial_seed(config.seed, i);
    auto [w1, w2] = trial_latents(*generator, seed, config.sigma);
    const Grid image1 = generator->render_image(generator->scene(w1));
    const Grid image2 = generator->render_image(generator->scene(w2));
    const auto spec = paired_drag_spec(*generator, w1, w2, config.paired_pixels, seed);
    const int n = static_cast<int>(spec.handles.size());
    report.records.push_back({i, seed, n, "mse_no_edit", image_mse(image1, image2), 0, 0.0});

    Stopwatch clock;
    DragSession session(generator, w1, spec, engine);
    const auto result = session.run();
    const double wall = config.deterministic ? 0.0 : clock.ms();
    report.records.push_back(
        {i, seed, n, "mse", image_mse(result.image, image2), static_cast<int>(result.steps.size()), wall});
  }
  return report;
}

BenchmarkReport run_block_ablation(std::shared_ptr<const Generator> generator, const BenchmarkConfig& config) {
  config.validate(generator->spec());
  BenchmarkReport report{config, {}};
  for (int b : config.sweep_blocks) {
    EngineConfig e = config.engine;
    e.tracking_blocks = config.engine.tracking_feature_blocks();
    e.feature_blocks = {b};
    if (*e.tracking_blocks == e.feature_blocks) e.tracking_blocks.reset();
    keypoint_suite(generator, config, e, "md_sup_block" + std::to_string(b), report, false);
  }
  for (int b : config.sweep_blocks) {
    EngineConfig e = config.engine;
    e.tracking_blocks = std::vector<int>{b};
    if (*e.tracking_blocks == e.feature_blocks) e.tracking_blocks.reset();
    keypoint_suite(generator, config, e, "md_track_block" + std::to_string(b), report, false);
  }
  return report;
}

BenchmarkReport run_r1_ablation(std::shared_ptr<const Generator> generator, const BenchmarkConfig& config) {
  config.validate(generator->spec());
  BenchmarkReport report{config, {}};
  for (int r : config.sweep_r1) {
    EngineConfig e = config.engine;
    e.r1 = r;
    keypoint_suite(generator, config, e, "md_r1_" + std::to_string(r), report, false);
  }
  return report;
}

BenchmarkReport run_tracking_ablation(std::shared_ptr<const Generator> generator, const BenchmarkConfig& config) {
  config.validate(generator->spec());
  BenchmarkReport report{config, {}};
  EngineConfig on = config.engine, off = config.engine;
  on.tracking_enabled = true;
  off.tracking_enabled = false;
  keypoint_suite(generator, config, on, "md_tracking_on", report, false);
  keypoint_suite(generator, config, off, "md_tracking_off", report, false);
  return report;
}

BenchmarkReport run_benchmark(std::shared_ptr<const Generator> generator, const BenchmarkConfig& config) {
  switch (config.protocol) {
    case Protocol::keypoint_md: return run_keypoint_md(std::move(generator), config);
    case Protocol::paired_reconstruction: return run_paired_reconstruction(std::move(generator), config);
    case Protocol::block_ablation: return run_block_ablation(std::move(generator), config);
    case Protocol::r1_ablation: return run_r1_ablation(std::move(generator), config);
    case Protocol::tracking_ablation: return run_tracking_ablation(std::move(generator), config);
  }
  throw std::invalid_argument("unknown protocol");
}

void write_report_csv(std::ostream& out, const BenchmarkReport& report) {
  out << "trial,seed,n_points,metric,value,steps,wall_ms\n" << std::setprecision(17);
  for (const auto& r : report.records) {
    out << r.trial << ',' << r.seed << ',' << r.n_points << ',' << r.metric << ',' << r.value << ',' << r.steps << ','
        << r.wall_ms << '\n';
  }
}

nlohmann::json report_summary(const BenchmarkReport& report) {
  const auto& c = report.config;
  nlohmann::json aggregates = nlohmann::json::object();
  for (const auto& m : report.metrics()) {
    const auto a = report.aggregate(m);
    aggregates[m] = {{"count", a.count}, {"mean", a.mean}, {"median", a.median}};
  }
  return {{"protocol", to_string(c.protocol)},
          {"config",
           {{"n_trials", c.n_trials},
            {"n_points", c.n_points},
            {"seed", c.seed},
            {"sigma", c.sigma},
            {"paired_pixels", c.paired_pixels},
            {"paired_max_steps", c.paired_max_steps},
            {"sweep_blocks", c.sweep_blocks},
            {"sweep_r1", c.sweep_r1},
            {"deterministic", c.deterministic},
            {"engine", config_to_json(c.engine)}}},
          {"aggregates", aggregates}};
}

}  // namespace pointdrag
