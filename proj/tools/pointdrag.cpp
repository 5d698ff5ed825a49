// pointdrag command-line front end.

#include <csignal>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "pointdrag/bench.hpp"
#include "pointdrag/engine.hpp"
#include "pointdrag/inversion.hpp"
#include "pointdrag/io.hpp"
#include "pointdrag/service.hpp"

namespace fs = std::filesystem;
using namespace pointdrag;

namespace {

constexpr int kUsageError = 2;
constexpr int kRuntimeError = 1;

struct EngineFlags {
  std::string config_path;
  std::optional<int> r1, r2, max_steps;
  std::optional<double> lambda, lr, stop_d;
  std::string block, tracking_block, latent_mode, editable_layers;
  bool no_tracking = false;

  void add(CLI::App* app) {
    app->add_option("--config", config_path, "Engine config JSON (flags override it)");
    app->add_option("--r1", r1, "Motion supervision radius");
    app->add_option("--r2", r2, "Tracking patch radius");
    app->add_option("--lambda", lambda, "Mask term weight");
    app->add_option("--lr", lr, "Adam step size");
    app->add_option("--max-steps", max_steps, "Step budget");
    app->add_option("--stop-d", stop_d, "Stop distance in pixels");
    app->add_option("--block", block, "Supervision feature block, e.g. 4 or 5+6");
    app->add_option("--tracking-block", tracking_block, "Tracking feature block (default: --block)");
    app->add_flag("--no-tracking", no_tracking, "Keep handles at their initial positions");
    app->add_option("--latent-mode", latent_mode, "W or W+");
    app->add_option("--editable-layers", editable_layers, "Layer range, e.g. 1-4");
  }

  static nlohmann::json block_value(const std::string& text) {
    if (!text.empty() && text.find_first_not_of("0123456789") == std::string::npos) return std::stoi(text);
    return text;
  }

  EngineConfig build() const {
    nlohmann::json doc = nlohmann::json::object();
    if (!config_path.empty()) {
      const auto bytes = read_file(config_path);
      try {
        doc = nlohmann::json::parse(bytes.begin(), bytes.end());
      } catch (const nlohmann::json::parse_error& e) {
        throw validation_error("config", std::string("malformed JSON: ") + e.what());
      }
      if (!doc.is_object()) throw validation_error("config", "expected a JSON object");
    }
    if (r1) doc["r1"] = *r1;
    if (r2) doc["r2"] = *r2;
    if (lambda) doc["lambda"] = *lambda;
    if (lr) doc["lr"] = *lr;
    if (max_steps) doc["max_steps"] = *max_steps;
    if (stop_d) doc["stop_d"] = *stop_d;
    if (!block.empty()) doc["feature_block"] = block_value(block);
    if (!tracking_block.empty()) doc["tracking_block"] = block_value(tracking_block);
    if (no_tracking) doc["tracking"] = false;
    if (!latent_mode.empty()) doc["latent_mode"] = latent_mode;
    if (!editable_layers.empty()) doc["editable_layers"] = editable_layers;
    return config_from_json(doc);
  }
};

nlohmann::json read_json(const fs::path& path, const std::string& field) {
  const auto bytes = read_file(path);
  try {
    return nlohmann::json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::parse_error& e) {
    throw validation_error(field, std::string("malformed JSON: ") + e.what());
  }
}

void write_json(const fs::path& path, const nlohmann::json& doc) { write_file(path, doc.dump(2) + "\n"); }

template <class F>
void write_stream(const fs::path& path, F&& body) {
  std::ostringstream out;
  body(out);
  write_file(path, out.str());
}

LatentMode mode_flag(const std::string& text) {
  try {
    return latent_mode_from_string(text);
  } catch (const std::invalid_argument& e) {
    throw validation_error("latent-mode", e.what());
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Point-based latent drag editing on a procedural blob generator"};
  app.require_subcommand(1);
  std::uint64_t generator_seed = 0;
  app.add_option("--generator-seed", generator_seed, "Seed of the frozen generator weights");

  // generate
  auto* gen_cmd = app.add_subcommand("generate", "Render a latent drawn from a seed");
  std::uint64_t gen_seed = 0;
  bool canonical = false;
  std::string gen_mode = "W+";
  fs::path gen_out = "out";
  std::vector<int> dump_blocks;
  gen_cmd->add_option("--seed", gen_seed, "Latent seed");
  gen_cmd->add_flag("--canonical", canonical, "Use z = 0 instead of a seeded draw");
  gen_cmd->add_option("--latent-mode", gen_mode, "W or W+");
  gen_cmd->add_option("--out", gen_out, "Output directory");
  gen_cmd->add_option("--dump-features", dump_blocks, "Also write features_b<k>.csv for these blocks");

  // invert
  auto* inv_cmd = app.add_subcommand("invert", "Embed an image into the latent space");
  fs::path inv_image, inv_out = "out", inv_init;
  InversionConfig inv_cfg;
  std::string inv_mode = "W+";
  inv_cmd->add_option("--image", inv_image, "Target PNG")->required();
  inv_cmd->add_option("--out", inv_out, "Output directory");
  inv_cmd->add_option("--init", inv_init, "Latent JSON used as the first starting point");
  inv_cmd->add_option("--steps", inv_cfg.steps, "Adam steps per restart");
  inv_cmd->add_option("--lr", inv_cfg.lr, "Adam step size");
  inv_cmd->add_option("--restarts", inv_cfg.restarts, "Number of starting points");
  inv_cmd->add_option("--seed", inv_cfg.seed, "Seed of the random starting points");
  inv_cmd->add_option("--stride", inv_cfg.stride, "Pixel stride of the optimized lattice");
  inv_cmd->add_option("--latent-mode", inv_mode, "W or W+");

  // drag
  auto* drag_cmd = app.add_subcommand("drag", "Run one drag edit in batch");
  fs::path drag_latent, drag_spec_path, drag_out = "out";
  std::optional<std::uint64_t> drag_seed;
  EngineFlags drag_flags;
  drag_cmd->add_option("--latent", drag_latent, "Latent JSON to edit");
  drag_cmd->add_option("--seed", drag_seed, "Edit the latent drawn from this seed instead");
  drag_cmd->add_option("--spec", drag_spec_path, "Drag spec JSON (handles, targets, mask)")->required();
  drag_cmd->add_option("--out", drag_out, "Output directory");
  drag_flags.add(drag_cmd);

  // bench
  auto* bench_cmd = app.add_subcommand("bench", "Run a benchmark protocol");
  std::string protocol = "keypoint_md";
  BenchmarkConfig bench_cfg;
  fs::path bench_out = "bench";
  EngineFlags bench_flags;
  bench_cmd->add_option("--protocol", protocol,
                        "keypoint_md | paired_reconstruction | block_ablation | r1_ablation | tracking_ablation");
  bench_cmd->add_option("--trials", bench_cfg.n_trials, "Number of trials");
  bench_cmd->add_option("--points", bench_cfg.n_points, "Point pairs per trial");
  bench_cmd->add_option("--seed", bench_cfg.seed, "Suite seed");
  bench_cmd->add_option("--sigma", bench_cfg.sigma, "Perturbation of the second latent");
  bench_cmd->add_flag("--deterministic", bench_cfg.deterministic, "Write wall_ms = 0");
  bench_cmd->add_option("--out", bench_out, "Output directory (report.csv, summary.json)");
  bench_flags.add(bench_cmd);

  // serve
  auto* serve_cmd = app.add_subcommand("serve", "Serve the HTTP and WebSocket API");
  ServiceOptions serve_opts;
  EngineFlags serve_flags;
  serve_cmd->add_option("--host", serve_opts.host, "Bind address");
  serve_cmd->add_option("--port", serve_opts.port, "Port (0 picks a free one)");
  serve_flags.add(serve_cmd);

  CLI11_PARSE(app, argc, argv);

  try {
    GeneratorSpec gspec;
    gspec.seed = generator_seed;
    auto generator = std::make_shared<const Generator>(gspec);

    if (*gen_cmd) {
      const LatentMode mode = mode_flag(gen_mode);
      const LatentStack w = canonical ? generator->map_latent(std::vector<double>(gspec.latent_dim_z, 0.0), mode)
                                      : generator->latent_from_seed(gen_seed, mode);
      for (int b : dump_blocks) {
        if (b < 1 || b > gspec.num_blocks()) throw validation_error("dump-features", "no block " + std::to_string(b));
      }
      SynthesisOptions so;
      so.blocks = dump_blocks.empty() ? std::vector<int>{gspec.num_blocks()} : dump_blocks;
      const auto out = generator->synthesize(w, so);
      fs::create_directories(gen_out);
      write_png(gen_out / "image.png", out.image);
      write_json(gen_out / "latent.json", latent_to_json(w, gspec.seed));
      write_stream(gen_out / "blobs.csv", [&](std::ostream& o) { write_blobs_csv(o, out.blobs); });
      for (int b : dump_blocks) {
        write_stream(gen_out / ("features_b" + std::to_string(b) + ".csv"),
                     [&](std::ostream& o) { write_features_csv(o, out.features[b - 1]); });
      }
      std::cout << (gen_out / "image.png").string() << '\n';
    } else if (*inv_cmd) {
      inv_cfg.mode = mode_flag(inv_mode);
      std::optional<LatentStack> init;
      if (!inv_init.empty()) init = latent_from_json(read_json(inv_init, "init"), gspec);
      const InversionTarget target{read_png(inv_image), std::nullopt};
      const auto result = invert(*generator, target, inv_cfg, init);
      fs::create_directories(inv_out);
      write_json(inv_out / "latent.json", latent_to_json(result.latent, gspec.seed));
      write_png(inv_out / "image.png", generator->render_image(generator->scene(result.latent)));
      nlohmann::json summary{{"mse", result.mse}, {"initial_mse", result.initial_mse},
                             {"best_restart", result.best_restart}};
      for (const auto& r : result.restarts) {
        summary["restarts"].push_back(
            {{"initial_mse", r.initial_mse}, {"final_mse", r.final_mse}, {"steps", r.steps}, {"discarded", r.discarded}});
      }
      write_json(inv_out / "inversion.json", summary);
      std::cout << "mse " << result.mse << '\n';
    } else if (*drag_cmd) {
      if (drag_latent.empty() == !drag_seed) throw validation_error("latent", "give exactly one of --latent and --seed");
      const EngineConfig config = drag_flags.build();
      const LatentStack w = drag_seed ? generator->latent_from_seed(*drag_seed, config.latent_mode)
                                      : latent_from_json(read_json(drag_latent, "latent"), gspec);
      DragSpec spec = drag_spec_from_json(read_json(drag_spec_path, "spec"), drag_spec_path.parent_path());
      DragSession session(generator, w, std::move(spec), config);
      const auto result = session.run();
      fs::create_directories(drag_out);
      write_png(drag_out / "result.png", result.image);
      write_stream(drag_out / "steps.csv", [&](std::ostream& o) { write_steps_csv(o, result.steps); });
      write_json(drag_out / "latent.json", latent_to_json(result.latent, gspec.seed));
      write_json(drag_out / "session.json", export_session(session, gspec.seed));
      std::cout << to_string(result.reason) << " after " << result.steps.size() << " steps, max distance "
                << session.max_distance() << '\n';
    } else if (*bench_cmd) {
      try {
        bench_cfg.protocol = protocol_from_string(protocol);
      } catch (const std::invalid_argument& e) {
        throw validation_error("protocol", e.what());
      }
      bench_cfg.engine = bench_flags.build();
      const auto report = run_benchmark(generator, bench_cfg);
      fs::create_directories(bench_out);
      write_stream(bench_out / "report.csv", [&](std::ostream& o) { write_report_csv(o, report); });
      const auto summary = report_summary(report);
      write_json(bench_out / "summary.json", summary);
      std::cout << summary["aggregates"].dump(2) << '\n';
    } else if (*serve_cmd) {
      const EngineConfig defaults = serve_flags.build();
      defaults.validate(gspec);
      sigset_t signals;
      sigemptyset(&signals);
      sigaddset(&signals, SIGINT);
      sigaddset(&signals, SIGTERM);
      pthread_sigmask(SIG_BLOCK, &signals, nullptr);
      auto sessions = std::make_shared<SessionManager>(generator, defaults);
      Server server(sessions, serve_opts);
      const auto port = server.start();
      std::cout << "listening on http://" << serve_opts.host << ':' << port << std::endl;
      int sig = 0;
      sigwait(&signals, &sig);
      server.stop();
      sessions->shutdown();
    }
  } catch (const validation_error& e) {
    std::cerr << "error: invalid " << e.what() << '\n';
    return kUsageError;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsageError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntimeError;
  }
  return 0;
}
