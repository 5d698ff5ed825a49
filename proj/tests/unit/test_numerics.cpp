#include <gtest/gtest.h>

#include <cmath>

#include "pointdrag/numerics.hpp"
#include "support.hpp"

using namespace pointdrag;
using pointdrag::testing::random_grid;

TEST(Bilinear, ConstantGridGivesConstant) {
  Grid g(2, 5, 7, 3.25);
  for (const Point2 p : {Point2{0, 0}, Point2{3.3, 1.7}, Point2{6, 4}, Point2{5.99, 0.01}}) {
    for (double v : bilinear_sample(g, p)) EXPECT_DOUBLE_EQ(v, 3.25);
  }
}

TEST(Bilinear, IntegerPointReturnsStoredValue) {
  const Grid g = random_grid(3, 9, 8, 1);
  const auto v = bilinear_sample(g, {3, 5});
  for (int c = 0; c < 3; ++c) EXPECT_EQ(v[c], g.at(c, 5, 3));
}

TEST(Bilinear, CenterOfTwoByTwoIsMean) {
  Grid g(1, 2, 2, std::vector<double>{0, 1, 2, 3});
  EXPECT_DOUBLE_EQ(bilinear_sample(g, {0.5, 0.5})[0], 1.5);
}

TEST(Bilinear, ExactAtEveryIntegerCoordinate) {
  const Grid g = random_grid(2, 13, 11, 2);
  for (int y = 0; y < 13; ++y) {
    for (int x = 0; x < 11; ++x) {
      const auto v = bilinear_sample(g, {static_cast<double>(x), static_cast<double>(y)});
      ASSERT_EQ(v[0], g.at(0, y, x));
      ASSERT_EQ(v[1], g.at(1, y, x));
    }
  }
}

TEST(Bilinear, MidpointIsAverageOfNeighbours) {
  const Grid g = random_grid(1, 10, 10, 3);
  for (int y = 0; y < 9; ++y) {
    for (int x = 0; x < 9; ++x) {
      EXPECT_NEAR(bilinear_sample(g, {x + 0.5, static_cast<double>(y)})[0], 0.5 * (g.at(0, y, x) + g.at(0, y, x + 1)),
                  1e-15);
      EXPECT_NEAR(bilinear_sample(g, {static_cast<double>(x), y + 0.5})[0], 0.5 * (g.at(0, y, x) + g.at(0, y + 1, x)),
                  1e-15);
    }
  }
}

TEST(Bilinear, OutOfRangeIsClamped) {
  const Grid g = random_grid(1, 4, 4, 4);
  EXPECT_EQ(bilinear_sample(g, {-3, -1})[0], g.at(0, 0, 0));
  EXPECT_EQ(bilinear_sample(g, {10, 2})[0], g.at(0, 2, 3));
}

TEST(Bilinear, GradientsMatchFiniteDifferences) {
  for (int trial = 0; trial < 10; ++trial) {
    const Grid g = random_grid(3, 6, 7, 100 + trial);
    std::mt19937_64 rng(trial);
    std::uniform_real_distribution<double> ux(0.1, 5.9), uy(0.1, 4.9), uu(-1, 1);
    const Point2 p{ux(rng), uy(rng)};
    const std::vector<double> up{uu(rng), uu(rng), uu(rng)};
    auto dot = [&](const Grid& grid, Point2 q) {
      const auto v = bilinear_sample(grid, q);
      return v[0] * up[0] + v[1] * up[1] + v[2] * up[2];
    };

    Grid grad(3, 6, 7);
    bilinear_sample_backward(p, up, grad);
    const auto fd = finite_diff_gradient(
        [&](std::span<const double> x) {
          Grid h(3, 6, 7, std::vector<double>(x.begin(), x.end()));
          return dot(h, p);
        },
        g.values(), 1e-6);
    EXPECT_LT(relative_error(grad.values(), fd), 1e-4);

    const Point2 pg = bilinear_sample_point_grad(g, p, up);
    const std::vector<double> xy{p.x, p.y};
    const auto fdp = finite_diff_gradient([&](std::span<const double> x) { return dot(g, {x[0], x[1]}); }, xy, 1e-6);
    const std::vector<double> an{pg.x, pg.y};
    EXPECT_LT(relative_error(an, fdp), 1e-4);
  }
}

TEST(Resize, IdentityShapeKeepsValues) {
  const Grid g = random_grid(2, 5, 6, 5);
  EXPECT_EQ(resize_bilinear(g, 5, 6), g);
}

TEST(Resize, ConstantStaysConstant) {
  const Grid r = resize_bilinear(Grid(1, 3, 4, 0.7), 9, 5);
  EXPECT_EQ(r.height(), 9);
  EXPECT_EQ(r.width(), 5);
  for (double v : r.values()) EXPECT_DOUBLE_EQ(v, 0.7);
}

TEST(Resize, AlignCornersOneByTwoToThree) {
  const Grid r = resize_bilinear(Grid(1, 1, 2, std::vector<double>{0, 1}), 1, 3);
  EXPECT_DOUBLE_EQ(r.at(0, 0, 0), 0.0);
  EXPECT_DOUBLE_EQ(r.at(0, 0, 1), 0.5);
  EXPECT_DOUBLE_EQ(r.at(0, 0, 2), 1.0);
}

TEST(Resize, BackwardIsAdjoint) {
  for (int trial = 0; trial < 10; ++trial) {
    const Grid g = random_grid(2, 4, 5, 200 + trial);
    const Grid up = random_grid(2, 9, 7, 300 + trial);
    const Grid back = resize_bilinear_backward(up, 4, 5);
    const auto fd = finite_diff_gradient(
        [&](std::span<const double> x) {
          const Grid r = resize_bilinear(Grid(2, 4, 5, std::vector<double>(x.begin(), x.end())), 9, 7);
          double s = 0.0;
          for (std::size_t i = 0; i < r.size(); ++i) s += r.values()[i] * up.values()[i];
          return s;
        },
        g.values(), 1e-6);
    EXPECT_LT(relative_error(back.values(), fd), 1e-4);
  }
}

TEST(L1Mean, Examples) {
  const Grid a(1, 1, 2, std::vector<double>{1, 2});
  const Grid b(1, 1, 2, 0.0);
  EXPECT_DOUBLE_EQ(l1_mean(a, b), 1.5);
  EXPECT_DOUBLE_EQ(l1_mean(a, a), 0.0);
  const Grid zero(1, 1, 2, 0.0);
  EXPECT_DOUBLE_EQ(l1_mean(a, b, &zero), 0.0);
}

TEST(L1Mean, ShapeMismatchThrows) {
  EXPECT_THROW(l1_mean(Grid(1, 2, 2), Grid(1, 2, 3)), shape_error);
}

TEST(L1Mean, SymmetricAndZeroOnlyWhenWeightedDifferenceVanishes) {
  for (int trial = 0; trial < 10; ++trial) {
    const Grid a = random_grid(3, 5, 5, 400 + trial);
    const Grid b = random_grid(3, 5, 5, 500 + trial);
    const Grid w = random_grid(1, 5, 5, 600 + trial, 0.0, 1.0);
    EXPECT_EQ(l1_mean(a, b, &w), l1_mean(b, a, &w));
    EXPECT_GT(l1_mean(a, b, &w), 0.0);
  }
  Grid a = random_grid(2, 3, 3, 7);
  Grid b = a;
  Grid w(1, 3, 3, 1.0);
  b.at(1, 2, 2) += 1.0;
  w.at(0, 2, 2) = 0.0;
  EXPECT_EQ(l1_mean(a, b, &w), 0.0);
  w.at(0, 2, 2) = 0.5;
  EXPECT_GT(l1_mean(a, b, &w), 0.0);
}

TEST(L1Mean, GradientMatchesFiniteDifferences) {
  for (int trial = 0; trial < 10; ++trial) {
    const Grid a = random_grid(2, 4, 4, 700 + trial);
    const Grid b = random_grid(2, 4, 4, 800 + trial);
    const Grid w = random_grid(1, 4, 4, 900 + trial, 0.0, 1.0);
    const Grid g = l1_mean_grad(a, b, &w);
    const auto fd = finite_diff_gradient(
        [&](std::span<const double> x) { return l1_mean(Grid(2, 4, 4, std::vector<double>(x.begin(), x.end())), b, &w); },
        a.values(), 1e-7);
    EXPECT_LT(relative_error(g.values(), fd), 1e-4);
  }
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  std::vector<double> p{0.3, -1.2, 4.0};
  const auto before = p;
  AdamState s;
  adam_step(p, std::vector<double>{0, 0, 0}, s, 0.1);
  EXPECT_EQ(p, before);
  EXPECT_EQ(s.step_count, 1u);
  // Also from a state with non-zero moments.
  adam_step(p, std::vector<double>{1, -1, 2}, s, 0.1);
  const auto moved = p;
  adam_step(p, std::vector<double>{0, 0, 0}, s, 0.1);
  EXPECT_EQ(p, moved);
  EXPECT_EQ(s.step_count, 3u);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  std::vector<double> p{1.0};
  AdamState s;
  adam_step(p, std::vector<double>{0.5}, s, 0.01);
  EXPECT_NEAR(p[0] - 1.0, -0.01 * (0.5 / (0.5 + 1e-8)), 1e-15);
}

TEST(Adam, TwoStepsFollowTheRecurrence) {
  std::vector<double> p{2.0, -1.0};
  const std::vector<double> g1{0.3, -0.7}, g2{0.1, 0.4};
  AdamState s;
  adam_step(p, g1, s, 0.05);
  adam_step(p, g2, s, 0.05);
  EXPECT_EQ(s.step_count, 2u);
  for (int i = 0; i < 2; ++i) {
    const double m1 = 0.1 * g1[i], v1 = 0.001 * g1[i] * g1[i];
    const double m2 = 0.9 * m1 + 0.1 * g2[i], v2 = 0.999 * v1 + 0.001 * g2[i] * g2[i];
    EXPECT_NEAR(s.first_moment[i], m2, 1e-15);
    EXPECT_NEAR(s.second_moment[i], v2, 1e-15);
    EXPECT_GE(s.second_moment[i], 0.0);
  }
  const double x1 = 2.0 - 0.05 * (0.03 / 0.1) / (std::sqrt(0.001 * 0.09 / 0.001) + 1e-8);
  const double m2 = 0.9 * 0.03 + 0.01, v2 = 0.999 * 0.00009 + 0.00001;
  const double x2 = x1 - 0.05 * (m2 / (1 - 0.81)) / (std::sqrt(v2 / (1 - 0.999 * 0.999)) + 1e-8);
  EXPECT_NEAR(p[0], x2, 1e-12);
}

TEST(Adam, NonFiniteGradientThrows) {
  std::vector<double> p{1.0, 2.0};
  AdamState s;
  EXPECT_THROW(adam_step(p, std::vector<double>{1.0, NAN}, s, 0.1), gradient_error);
  EXPECT_THROW(adam_step(p, std::vector<double>{INFINITY, 0.0}, s, 0.1), gradient_error);
}

TEST(FiniteDiff, ConstantAndQuadratic) {
  const std::vector<double> x{1.0, 2.0};
  for (double v : finite_diff_gradient([](std::span<const double>) { return 4.0; }, x, 1e-5)) EXPECT_EQ(v, 0.0);
  const auto g = finite_diff_gradient([](std::span<const double> v) { return v[0] * v[0] + v[1] * v[1]; }, x, 1e-5);
  EXPECT_NEAR(g[0], 2.0, 1e-8);
  EXPECT_NEAR(g[1], 4.0, 1e-8);
}
