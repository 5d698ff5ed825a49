// Acceptance gate. Each criterion prints one PASS/FAIL line; with no
// arguments every criterion runs in turn.
//
//   pointdrag_acceptance [criterion...]
//   pointdrag_acceptance --list

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "pointdrag/bench.hpp"
#include "pointdrag/engine.hpp"
#include "pointdrag/inversion.hpp"
#include "pointdrag/io.hpp"
#include "pointdrag/numerics.hpp"
#include "pointdrag/supervision.hpp"
#include "support.hpp"

using namespace pointdrag;
using namespace pointdrag::testing;
namespace fs = std::filesystem;

namespace {

// Tolerances and thresholds.
constexpr double kGradientRelErr = 1e-4;
constexpr double kFiniteDiffStep = 1e-6;
constexpr double kDetachDiffers = 1e-3;  // relative difference that counts as "differs"
constexpr int kDetachMinDiffering = 9;
constexpr int kTrackingR2 = 12;
constexpr int kConvergenceTrials = 100;
constexpr int kConvergenceMinConverged = 95;
constexpr int kConvergenceMaxSteps = 200;
constexpr double kMdRatio = 0.5;
constexpr double kR1MaxOverMin = 1.5;
constexpr int kMaskCases = 20;
constexpr double kMaskRatio = 0.5;
constexpr int kInversionTrials = 50;
constexpr int kInversionMinRecovered = 45;
constexpr double kInversionMse = 1e-3;
constexpr double kParityMse = 1e-6;
constexpr double kParityMd = 1e-6;
constexpr double kStepBudgetMs = 50.0;
constexpr int kBenchTrials = 100;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* format, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, format, args...);
  return buf;
}

std::shared_ptr<const Generator> gen_ptr() { return default_generator(); }
const Generator& gen() { return *default_generator(); }

// Handle on blob k's center, target at a seeded random direction and length
// in [lo, hi] px that stays inside the image.
DragSpec random_blob_drag(const LatentStack& w, int k, std::uint64_t seed, double lo, double hi) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double size = gen().spec().image_size;
  DragSpec spec = blob_drag(gen(), w, k, {0, 0});
  const Point2 h = spec.handles[0];
  Point2 t = h;
  for (int attempt = 0; attempt < 1000; ++attempt) {
    const double angle = 2 * std::numbers::pi * u(rng), len = lo + (hi - lo) * u(rng);
    t = {h.x + len * std::cos(angle), h.y + len * std::sin(angle)};
    if (t.x >= 4 && t.y >= 4 && t.x <= size - 5 && t.y <= size - 5) break;
  }
  spec.targets = {t};
  return spec;
}

// --- gradient oracle -------------------------------------------------------

Outcome gradient_oracle() {
  double worst = 0.0;
  int masked = 0;
  for (int s = 0; s < 10; ++s) {
    const auto w = gen().latent_from_seed(trial_seed(101, s), LatentMode::per_layer);
    DragSpec spec = random_blob_drag(w, s % 5, s, 8, 25);
    EngineConfig c;
    c.r1 = 2 + s % 3;
    if (s % 2 == 1) {
      spec.mask = disk_mask(gen().spec().image_size, spec.handles[0], 45);
      ++masked;
    }
    DragSession session(gen_ptr(), w, spec, c);
    // Step away from the anchor so the mask term is nonzero.
    session.step();
    session.step();
    const auto [loss, grad] = session.loss_and_gradient(true);
    const auto params = session.parameters();
    const auto fd = finite_diff_gradient([&](std::span<const double> x) { return loss_at(session, x, true); }, params,
                                         kFiniteDiffStep);
    worst = std::max(worst, relative_error(grad, fd));
  }
  return {worst < kGradientRelErr,
          fmt("max relative error %.2e over 10 configs (%d with mask), limit %.0e", worst, masked, kGradientRelErr)};
}

// --- detachment -------------------------------------------------------------

class ConstantMap final : public FeatureMap {
 public:
  ConstantMap(int c, int h, int w, double v) : c_(c), h_(h), w_(w), v_(static_cast<std::size_t>(c), v) {}
  int channels() const override { return c_; }
  int height() const override { return h_; }
  int width() const override { return w_; }
  std::span<const double> pixel(int, int) const override { return v_; }

 private:
  int c_, h_, w_;
  std::vector<double> v_;
};

Outcome detachment() {
  int differing = 0;
  for (int s = 0; s < 10; ++s) {
    const auto w = gen().latent_from_seed(trial_seed(202, s), LatentMode::per_layer);
    DragSession session(gen_ptr(), w, random_blob_drag(w, s % 5, 50 + s, 10, 30), {});
    const auto detached = session.loss_and_gradient(true).second;
    const auto full = session.loss_and_gradient(false).second;
    differing += relative_error(detached, full) > kDetachDiffers;
  }
  bool vanish = true;
  const ConstantMap flat(8, 40, 40, 0.7);
  const std::vector<Point2> h{{12, 15}, {30, 20}}, t{{20, 9}, {25, 33}};
  for (bool detach : {true, false}) {
    GridGradSink sink(8, 40, 40);
    MotionLossOptions o;
    o.detach_query = detach;
    const double loss = motion_supervision_loss(flat, nullptr, MotionSupervisionInput{h, t}, &sink, o);
    vanish = vanish && loss == 0.0;
    for (double v : sink.grad().values()) vanish = vanish && v == 0.0;
  }
  return {differing >= kDetachMinDiffering && vanish,
          fmt("%d/10 sessions differ from the fully propagated gradient (need %d); constant features %s", differing,
              kDetachMinDiffering, vanish ? "give zero gradients" : "give NONZERO gradients")};
}

// --- tracking exactness -------------------------------------------------------

// Independent oracle: full scan of the strict square patch, first minimum in
// row-major order.
Point2 brute_force_track(const Grid& g, const std::vector<double>& ref, Point2 p, int r2) {
  double best = INFINITY;
  Point2 arg = p;
  for (int y = 0; y < g.height(); ++y) {
    for (int x = 0; x < g.width(); ++x) {
      if (std::abs(x - p.x) >= r2 || std::abs(y - p.y) >= r2) continue;
      double d = 0;
      for (int c = 0; c < g.channels(); ++c) d += std::abs(g.at(c, y, x) - ref[c]);
      if (d < best) {
        best = d;
        arg = {double(x), double(y)};
      }
    }
  }
  return arg;
}

Outcome tracking_exactness() {
  const int n = 64, channels = 16;
  const Grid base = random_grid(channels, n, n, 7);
  const Point2 p{31, 33};
  std::vector<double> ref(channels);
  for (int c = 0; c < channels; ++c) ref[c] = base.at(c, int(p.y), int(p.x));
  int checked = 0, exact = 0, oracle_agrees = 0;
  for (int dy = -(kTrackingR2 - 1); dy <= kTrackingR2 - 1; ++dy) {
    for (int dx = -(kTrackingR2 - 1); dx <= kTrackingR2 - 1; ++dx) {
      Grid shifted = random_grid(channels, n, n, 5000 + 97 * (dy + 20) + dx);
      for (int c = 0; c < channels; ++c)
        for (int y = 0; y < n; ++y)
          for (int x = 0; x < n; ++x) {
            const int sx = x - dx, sy = y - dy;
            if (sx >= 0 && sy >= 0 && sx < n && sy < n) shifted.at(c, y, x) = base.at(c, sy, sx);
          }
      const Point2 got = track_point(GridFeatureMap(shifted), ref, p, kTrackingR2);
      const Point2 want{p.x + dx, p.y + dy};
      ++checked;
      exact += got == want;
      oracle_agrees += got == brute_force_track(shifted, ref, p, kTrackingR2);
    }
  }
  return {exact == checked && oracle_agrees == checked,
          fmt("%d/%d shifts with |d|inf <= %d recovered exactly; brute-force scan agrees on %d", exact, checked,
              kTrackingR2 - 1, oracle_agrees)};
}

// --- convergence -------------------------------------------------------------

Outcome convergence() {
  int converged = 0;
  std::vector<double> steps;
  for (int t = 0; t < kConvergenceTrials; ++t) {
    const auto w = gen().latent_from_seed(trial_seed(303, t), LatentMode::per_layer);
    EngineConfig c;
    c.stop_d = 1.0;
    c.max_steps = kConvergenceMaxSteps;
    DragSession session(gen_ptr(), w, random_blob_drag(w, t % 5, 900 + t, 20, 40), c);
    const auto r = session.run();
    if (r.reason == Termination::converged) {
      ++converged;
      steps.push_back(static_cast<double>(r.steps.size()));
    }
  }
  const auto agg = aggregate_values(steps);
  return {converged >= kConvergenceMinConverged,
          fmt("%d/%d drags of 20-40 px converged within %d steps (need %d); median %.0f steps", converged,
              kConvergenceTrials, kConvergenceMaxSteps, kConvergenceMinConverged, agg.median)};
}

// --- benchmark protocols ----------------------------------------------------

BenchmarkConfig bench_config(Protocol p, int n_points = 1) {
  BenchmarkConfig c;
  c.protocol = p;
  c.n_trials = kBenchTrials;
  c.n_points = n_points;
  c.seed = 0;
  c.deterministic = true;
  return c;
}

Outcome table1_direction() {
  bool pass = true;
  std::string detail;
  for (int n : {1, 3, 5}) {
    const auto r = run_benchmark(gen_ptr(), bench_config(Protocol::keypoint_md, n));
    const double md = r.aggregate("md").mean, base = r.aggregate("md_no_edit").mean;
    pass = pass && md <= kMdRatio * base;
    detail += fmt("%sn=%d md %.2f vs no-edit %.2f", detail.empty() ? "" : "; ", n, md, base);
  }
  return {pass, detail + fmt(" (need ratio <= %.1f)", kMdRatio)};
}

Outcome tracking_ablation() {
  const auto r = run_benchmark(gen_ptr(), bench_config(Protocol::tracking_ablation));
  const double on = r.aggregate("md_tracking_on").median, off = r.aggregate("md_tracking_off").median;
  return {on <= kMdRatio * off,
          fmt("median md %.2f with tracking vs %.2f without (need ratio <= %.1f)", on, off, kMdRatio)};
}

Outcome table2_direction() {
  const auto r = run_benchmark(gen_ptr(), bench_config(Protocol::paired_reconstruction));
  const double ours = r.aggregate("mse").mean, base = r.aggregate("mse_no_edit").mean;
  return {ours < base, fmt("mean mse %.5f after drag vs %.5f without edit over %zu trials", ours, base,
                           r.aggregate("mse").count)};
}

Outcome r1_ablation() {
  const auto r = run_benchmark(gen_ptr(), bench_config(Protocol::r1_ablation));
  double lo = INFINITY, hi = 0;
  std::string detail;
  for (int k = 1; k <= 5; ++k) {
    const double md = r.aggregate("md_r1_" + std::to_string(k)).mean;
    lo = std::min(lo, md);
    hi = std::max(hi, md);
    detail += fmt("%sr1=%d %.2f", detail.empty() ? "" : " ", k, md);
  }
  return {hi < kR1MaxOverMin * lo, fmt("mean md %s; max/min %.2f (need < %.1f)", detail.c_str(), hi / lo, kR1MaxOverMin)};
}

// --- mask ------------------------------------------------------------------

Outcome mask_property() {
  const int size = gen().spec().image_size;
  double none = 0, l20 = 0, l200 = 0;
  for (int t = 0; t < kMaskCases; ++t) {
    const auto w = gen().latent_from_seed(trial_seed(404, t), LatentMode::per_layer);
    const int k = t % 5;
    DragSpec spec = random_blob_drag(w, k, 1700 + t, 20, 30);
    // Movable region: the dragged blob and its path.
    const double radius = 1.5 * gen().blob_params(w)[k].radius + distance(spec.handles[0], spec.targets[0]);
    const Grid mask = disk_mask(size, spec.handles[0], radius);
    const Grid before = gen().render_image(gen().scene(w));
    auto outside_change = [&](std::optional<Grid> m, double lambda) {
      DragSpec s = spec;
      s.mask = std::move(m);
      EngineConfig c;
      c.lambda = lambda;
      DragSession session(gen_ptr(), w, s, c);
      const Grid after = session.run().image;
      double sum = 0;
      std::size_t count = 0;
      for (int ch = 0; ch < after.channels(); ++ch)
        for (int y = 0; y < size; ++y)
          for (int x = 0; x < size; ++x)
            if (mask.at(0, y, x) == 0.0) {
              sum += std::abs(after.at(ch, y, x) - before.at(ch, y, x));
              ++count;
            }
      return sum / static_cast<double>(count);
    };
    none += outside_change(std::nullopt, 20.0) / kMaskCases;
    l20 += outside_change(mask, 20.0) / kMaskCases;
    l200 += outside_change(mask, 200.0) / kMaskCases;
  }
  return {l20 <= kMaskRatio * none && l200 <= l20,
          fmt("mean outside change %.2e without mask, %.2e with (lambda 20), %.2e (lambda 200); need <= %.1fx and "
              "non-increasing",
              none, l20, l200, kMaskRatio)};
}

// --- inversion -------------------------------------------------------------

Outcome inversion() {
  InversionConfig cfg;
  int recovered = 0, parity_checked = 0, parity_identical = 0;
  double worst_parity = 0;
  for (int t = 0; t < kInversionTrials; ++t) {
    const auto w = gen().latent_from_seed(9000 + t, LatentMode::per_layer);
    SynthesisOptions so;
    so.blocks = {cfg.feature_block};
    const auto out = gen().synthesize(w, so);
    cfg.seed = t;
    const auto r = invert(gen(), InversionTarget{out.image, out.features[cfg.feature_block - 1]}, cfg);
    recovered += r.mse < kInversionMse;
    if (r.mse < kParityMse) {
      const DragSpec spec = random_blob_drag(w, t % 5, 3100 + t, 15, 30);
      DragSession direct(gen_ptr(), w, spec, {});
      DragSession inverted(gen_ptr(), r.latent, spec, {});
      direct.run();
      inverted.run();
      double md = 0;
      for (std::size_t i = 0; i < spec.handles.size(); ++i) md += distance(direct.handles()[i], inverted.handles()[i]);
      md /= static_cast<double>(spec.handles.size());
      worst_parity = std::max(worst_parity, md);
      parity_identical += md <= kParityMd;
      ++parity_checked;
    }
  }
  return {recovered >= kInversionMinRecovered && worst_parity <= kParityMd,
          fmt("%d/%d targets recovered to mse < %.0e (need %d); invert-then-drag within md %.0e on %d/%d near-exact "
              "inversions, worst md %.2f",
              recovered, kInversionTrials, kInversionMse, kInversionMinRecovered, kParityMd, parity_identical,
              parity_checked, worst_parity)};
}

// --- determinism -----------------------------------------------------------

// Artifacts compared across processes.
void emit_artifacts(const fs::path& dir) {
  fs::create_directories(dir);
  const auto w = gen().latent_from_seed(77, LatentMode::per_layer);
  DragSpec spec = random_blob_drag(w, 2, 77, 20, 35);
  spec.handles.push_back(blob_drag(gen(), w, 4, {0, 0}).handles[0]);
  spec.targets.push_back({spec.handles[1].x + 12, spec.handles[1].y - 9});
  spec.targets[1].x = std::clamp(spec.targets[1].x, 0.0, 255.0);
  spec.targets[1].y = std::clamp(spec.targets[1].y, 0.0, 255.0);
  DragSession session(gen_ptr(), w, spec, {});
  const auto r = session.run();
  std::ofstream steps(dir / "steps.csv");
  write_steps_csv(steps, r.steps);
  write_file(dir / "session.json", export_session(session, 0).dump());
  for (Protocol p : {Protocol::keypoint_md, Protocol::paired_reconstruction}) {
    BenchmarkConfig c;
    c.protocol = p;
    c.n_trials = 8;
    c.n_points = 3;
    c.seed = 12;
    c.deterministic = true;
    std::ofstream report(dir / ("report_" + to_string(p) + ".csv"));
    write_report_csv(report, run_benchmark(gen_ptr(), c));
  }
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Outcome determinism() {
  const fs::path root = fs::temp_directory_path() / ("pointdrag_determinism_" + std::to_string(::getpid()));
  const std::string self = fs::read_symlink("/proc/self/exe").string();
  for (const char* run : {"a", "b"}) {
    const std::string cmd = "\"" + self + "\" --emit \"" + (root / run).string() + "\"";
    if (std::system(cmd.c_str()) != 0) return {false, "child process failed: " + cmd};
  }
  int files = 0, identical = 0;
  for (const auto& entry : fs::directory_iterator(root / "a")) {
    ++files;
    const auto other = root / "b" / entry.path().filename();
    identical += fs::exists(other) && slurp(entry.path()) == slurp(other);
  }
  fs::remove_all(root);
  return {files == 4 && identical == files,
          fmt("%d/%d artifacts (step log, session export, benchmark CSVs) identical across two processes", identical,
              files)};
}

// --- performance -----------------------------------------------------------

Outcome performance() {
  const auto w = gen().latent_from_seed(31337, LatentMode::per_layer);
  EngineConfig c;
  c.lr = 1e-4;  // keep the handle far from the target so every step does full work
  DragSession session(gen_ptr(), w, random_blob_drag(w, 1, 5, 40, 40), c);
  session.step();  // warm-up
  // A step evaluates features lazily where the loss and tracker read them;
  // the timed unit also renders the full frame an interactive client shows.
  std::vector<double> step_ms, total_ms;
  for (int i = 0; i < 60; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    session.step();
    const auto t1 = std::chrono::steady_clock::now();
    [[maybe_unused]] const Grid frame = gen().render_image(gen().scene(session.latent()));
    const auto t2 = std::chrono::steady_clock::now();
    step_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    total_ms.push_back(std::chrono::duration<double, std::milli>(t2 - t0).count());
  }
  const double step = aggregate_values(step_ms).median, total = aggregate_values(total_ms).median;
  return {total < kStepBudgetMs,
          fmt("median drag step %.2f ms, %.2f ms including a full-frame render, over 60 steps (limit %.0f ms)", step,
              total, kStepBudgetMs)};
}

struct Criterion {
  const char* name;
  std::function<Outcome()> run;
};

const std::vector<Criterion>& criteria() {
  static const std::vector<Criterion> all{
      {"gradient_oracle", gradient_oracle},     {"detachment", detachment},
      {"tracking_exactness", tracking_exactness}, {"convergence", convergence},
      {"table1_direction", table1_direction},   {"tracking_ablation", tracking_ablation},
      {"table2_direction", table2_direction},   {"r1_ablation", r1_ablation},
      {"mask_property", mask_property},         {"inversion", inversion},
      {"determinism", determinism},             {"performance", performance},
  };
  return all;
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  if (args.size() == 2 && args[0] == "--emit") {
    emit_artifacts(args[1]);
    return 0;
  }
  if (args.size() == 1 && args[0] == "--list") {
    for (const auto& c : criteria()) std::printf("%s\n", c.name);
    return 0;
  }
  std::vector<const Criterion*> selected;
  for (const auto& c : criteria()) {
    if (args.empty() || std::find(args.begin(), args.end(), c.name) != args.end()) selected.push_back(&c);
  }
  if (selected.size() != (args.empty() ? criteria().size() : args.size())) {
    std::fprintf(stderr, "unknown criterion; see --list\n");
    return 2;
  }
  int failed = 0;
  for (const auto* c : selected) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c->run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%s %-20s %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", c->name, o.detail.c_str(), s);
    std::fflush(stdout);
    failed += !o.pass;
  }
  return failed == 0 ? 0 : 1;
}
