#include <gtest/gtest.h>

#include <sstream>

#include "pointdrag/bench.hpp"
#include "support.hpp"

using namespace pointdrag;
using namespace pointdrag::testing;

namespace {

BenchmarkConfig small(Protocol p, int trials = 3) {
  BenchmarkConfig c;
  c.protocol = p;
  c.n_trials = trials;
  c.seed = 5;
  c.engine.max_steps = 40;
  c.paired_max_steps = 20;
  c.deterministic = true;
  return c;
}

std::string csv(const BenchmarkReport& r) {
  std::ostringstream out;
  write_report_csv(out, r);
  return out.str();
}

}  // namespace

TEST(Bench, ProtocolNames) {
  for (auto p : {Protocol::keypoint_md, Protocol::paired_reconstruction, Protocol::block_ablation, Protocol::r1_ablation,
                 Protocol::tracking_ablation}) {
    EXPECT_EQ(protocol_from_string(to_string(p)), p);
  }
  EXPECT_THROW(protocol_from_string("nope"), std::invalid_argument);
}

TEST(Bench, TrialSeedsAreDistinctAndStable) {
  EXPECT_EQ(trial_seed(1, 4), trial_seed(1, 4));
  EXPECT_NE(trial_seed(1, 4), trial_seed(1, 5));
  EXPECT_NE(trial_seed(1, 4), trial_seed(2, 4));
}

TEST(Bench, IdenticalLatentsGiveZeroDistance) {
  auto c = small(Protocol::keypoint_md);
  c.sigma = 0.0;
  c.n_points = 3;
  const auto r = run_keypoint_md(default_generator(), c);
  for (const auto& rec : r.records) {
    EXPECT_EQ(rec.value, 0.0);
    EXPECT_EQ(rec.steps, 0);
  }
}

TEST(Bench, ZeroPerturbationReconstructsExactly) {
  auto c = small(Protocol::paired_reconstruction);
  c.sigma = 0.0;
  const auto r = run_paired_reconstruction(default_generator(), c);
  for (const auto& rec : r.records) {
    EXPECT_EQ(rec.value, 0.0);
    EXPECT_EQ(rec.steps, 0);
  }
}

TEST(Bench, KeypointReportShape) {
  const auto r = run_keypoint_md(default_generator(), small(Protocol::keypoint_md, 4));
  EXPECT_EQ(r.metrics(), (std::vector<std::string>{"md_no_edit", "md"}));
  EXPECT_EQ(r.values("md").size(), 4u);
  const auto text = csv(r);
  EXPECT_EQ(text.substr(0, text.find('\n')), "trial,seed,n_points,metric,value,steps,wall_ms");
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 9);
}

TEST(Bench, AggregatesRecomputeFromCsv) {
  const auto r = run_paired_reconstruction(default_generator(), small(Protocol::paired_reconstruction, 4));
  std::istringstream in(csv(r));
  std::string line;
  std::getline(in, line);
  std::map<std::string, std::vector<double>> values;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    ASSERT_EQ(cells.size(), 7u);
    values[cells[3]].push_back(std::stod(cells[4]));
  }
  EXPECT_EQ(values["mse"].size(), 4u);
  for (const auto& m : r.metrics()) {
    const auto a = aggregate_values(values[m]);
    EXPECT_EQ(a.count, r.aggregate(m).count);
    EXPECT_DOUBLE_EQ(a.mean, r.aggregate(m).mean);
    EXPECT_DOUBLE_EQ(a.median, r.aggregate(m).median);
  }
}

TEST(Bench, AggregateValues) {
  const auto a = aggregate_values({3, 1, 2, 10});
  EXPECT_EQ(a.count, 4u);
  EXPECT_DOUBLE_EQ(a.mean, 4.0);
  EXPECT_DOUBLE_EQ(a.median, 2.5);
  EXPECT_DOUBLE_EQ(aggregate_values({5, 1, 3}).median, 3.0);
}

TEST(Bench, DeterministicCsv) {
  const auto c = small(Protocol::keypoint_md);
  EXPECT_EQ(csv(run_benchmark(default_generator(), c)), csv(run_benchmark(default_generator(), c)));
}

TEST(Bench, BlockAblationEmitsTenSeries) {
  auto c = small(Protocol::block_ablation, 1);
  c.engine.max_steps = 5;
  const auto r = run_block_ablation(default_generator(), c);
  const auto m = r.metrics();
  EXPECT_EQ(m.size(), 10u);
  for (const auto& name : m) {
    for (double v : r.values(name)) {
      EXPECT_TRUE(std::isfinite(v));
      EXPECT_GE(v, 0.0);
    }
  }
}

TEST(Bench, R1AblationEmitsFiveSeries) {
  auto c = small(Protocol::r1_ablation, 1);
  c.engine.max_steps = 5;
  const auto r = run_r1_ablation(default_generator(), c);
  EXPECT_EQ(r.metrics(), (std::vector<std::string>{"md_r1_1", "md_r1_2", "md_r1_3", "md_r1_4", "md_r1_5"}));
}

TEST(Bench, ConfigValidation) {
  auto c = small(Protocol::r1_ablation);
  c.sweep_r1 = {0, 1};
  EXPECT_THROW(c.validate(default_generator()->spec()), validation_error);
  c = small(Protocol::keypoint_md);
  c.n_points = 6;
  EXPECT_THROW(c.validate(default_generator()->spec()), validation_error);
  c.n_points = 1;
  c.n_trials = 0;
  EXPECT_THROW(c.validate(default_generator()->spec()), validation_error);
}

TEST(Bench, PairedSpecStaysInsideTheImage) {
  const auto& g = *default_generator();
  const auto [w1, w2] = trial_latents(g, 77, 0.1);
  const auto spec = paired_drag_spec(g, w1, w2, 32, 77);
  EXPECT_EQ(spec.handles.size(), 32u);
  EXPECT_NO_THROW(spec.validate(256, 256));
}

TEST(Bench, SummaryEchoesConfig) {
  const auto c = small(Protocol::keypoint_md, 2);
  const auto s = report_summary(run_keypoint_md(default_generator(), c));
  EXPECT_EQ(s["protocol"], "keypoint_md");
  EXPECT_EQ(s["config"]["n_trials"], 2);
  EXPECT_EQ(s["config"]["engine"]["max_steps"], 40);
  EXPECT_EQ(s["aggregates"]["md"]["count"], 2);
}
