#include <gtest/gtest.h>

#include "pointdrag/inversion.hpp"
#include "support.hpp"

using namespace pointdrag;
using namespace pointdrag::testing;

namespace {

const Generator& gen() { return *default_generator(); }

InversionTarget target_for(const LatentStack& w, int block = 4) {
  SynthesisOptions so;
  so.blocks = {block};
  auto out = gen().synthesize(w, so);
  return {out.image, out.features[block - 1]};
}

InversionConfig quick() {
  InversionConfig c;
  c.steps = 40;
  c.stride = 8;
  c.restarts = 1;
  return c;
}

}  // namespace

TEST(Inversion, StartingAtTheAnswerKeepsIt) {
  const auto w = gen().latent_from_seed(3, LatentMode::per_layer);
  const auto r = invert(gen(), target_for(w), quick(), w);
  EXPECT_EQ(r.mse, 0.0);
  EXPECT_EQ(r.latent.values, w.values);
}

TEST(Inversion, FinalNeverWorseThanStart) {
  const auto w = gen().latent_from_seed(4, LatentMode::per_layer);
  auto c = quick();
  c.restarts = 2;
  const auto r = invert(gen(), target_for(w), c);
  for (const auto& rec : r.restarts) EXPECT_LE(rec.final_mse, rec.initial_mse);
  EXPECT_LE(r.mse, r.initial_mse);
  EXPECT_EQ(r.mse, image_mse(gen().render_image(gen().scene(r.latent)), target_for(w).image));
}

TEST(Inversion, MoreRestartsNeverHurt) {
  const auto w = gen().latent_from_seed(5, LatentMode::per_layer);
  auto c = quick();
  const double one = invert(gen(), target_for(w), c).mse;
  c.restarts = 3;
  const double three = invert(gen(), target_for(w), c).mse;
  EXPECT_LE(three, one);
}

TEST(Inversion, Deterministic) {
  const auto w = gen().latent_from_seed(6, LatentMode::per_layer);
  const auto a = invert(gen(), target_for(w), quick());
  const auto b = invert(gen(), target_for(w), quick());
  EXPECT_EQ(a.latent, b.latent);
  EXPECT_EQ(a.mse, b.mse);
}

TEST(Inversion, ImageOnlyTargetsWork) {
  const auto w = gen().latent_from_seed(7, LatentMode::shared);
  auto c = quick();
  c.mode = LatentMode::shared;
  const auto r = invert(gen(), {gen().synthesize(w).image, std::nullopt}, c);
  EXPECT_EQ(r.latent.mode, LatentMode::shared);
  EXPECT_NO_THROW(r.latent.validate());
  EXPECT_LE(r.mse, r.initial_mse);
}

TEST(Inversion, Validation) {
  const auto w = gen().latent_from_seed(8, LatentMode::per_layer);
  auto c = quick();
  c.steps = 0;
  EXPECT_THROW(invert(gen(), target_for(w), c), std::invalid_argument);
  c = quick();
  c.restarts = 0;
  EXPECT_THROW(invert(gen(), target_for(w), c), std::invalid_argument);
  EXPECT_THROW(invert(gen(), {Grid(3, 10, 10), std::nullopt}, quick()), shape_error);
  EXPECT_THROW(invert(gen(), {gen().synthesize(w).image, Grid(80, 8, 8)}, quick()), shape_error);
}

TEST(Inversion, NonFiniteTargetDiscardsEveryRestart) {
  const auto w = gen().latent_from_seed(9, LatentMode::per_layer);
  auto t = target_for(w);
  t.image.at(0, 0, 0) = std::numeric_limits<double>::quiet_NaN();
  auto c = quick();
  c.stride = 1;
  c.restarts = 2;
  EXPECT_THROW(invert(gen(), t, c), inversion_error);
}
