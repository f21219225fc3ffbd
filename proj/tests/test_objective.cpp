#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "stmn/numerics/gradcheck.hpp"
#include "stmn/objective/losses.hpp"
#include "test_util.hpp"

using namespace stmn;
using namespace stmn::objective;
using stmn::testing::random_tensor;

namespace {

std::vector<double> random_labels(std::mt19937_64& rng, std::size_t n) {
  std::vector<double> y(n);
  for (auto& v : y) v = static_cast<double>(rng() % 2);
  return y;
}

}  // namespace

TEST(BceLoss, AnalyticCases) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 5; ++trial) {
    auto y = random_labels(rng, 7);
    EXPECT_NEAR(bce_loss(Tensor::full({1, 7}, 0.5), y).item(), std::log(2.0), 1e-15);
  }
  std::vector<double> y{1, 0, 1};
  EXPECT_LT(bce_loss(Tensor::matrix(1, 3, {1.0, 0.0, 1.0}), y).item(), 2e-7);
  EXPECT_THROW(bce_loss(Tensor::full({1, 3}, 0.5), {1, 0}), ShapeError);
  EXPECT_NEAR(bce_loss(Tensor::full({3, 1}, 0.5), y).item(), std::log(2.0), 1e-15);
}

TEST(DiceLoss, AnalyticCases) {
  EXPECT_NEAR(dice_loss(Tensor::matrix(1, 4, {1, 0, 1, 0}), {1, 0, 1, 0}).item(), 0.0, 1e-12);
  EXPECT_NEAR(dice_loss(Tensor::matrix(1, 4, {1, 1, 0, 0}), {0, 0, 1, 1}).item(), 1.0, 1e-6);
  EXPECT_NEAR(dice_loss(Tensor::zeros({1, 4}), {0, 0, 0, 0}).item(), 0.0, 1e-12);
}

TEST(RelLoss, UniformAndSaturated) {
  const std::size_t ns = 8, nw = 3;
  auto s_r = Tensor::full({ns, 1}, static_cast<double>(nw) / ns);
  const double p = 1.0 / ns;
  EXPECT_NEAR(rel_loss(s_r, nw, std::vector<double>(ns, 0.0)).item(), -std::log(1 - p), 1e-12);
  EXPECT_LT(rel_loss(Tensor::full({ns, 1}, 3.0), nw, std::vector<double>(ns, 1.0)).item(), 2e-7);
  EXPECT_THROW(rel_loss(s_r, 0, std::vector<double>(ns, 0.0)), ValidationError);
}

TEST(ScoreLoss, GateAndDistance) {
  EXPECT_NEAR(score_loss(Tensor::scalar(0.8), 0.8).item(), 0.0, 1e-15);
  EXPECT_EQ(score_loss(Tensor::scalar(0.1), 0.4).item(), 0.0);
  EXPECT_EQ(score_loss(Tensor::scalar(0.1), 0.5).item(), 0.0);
  EXPECT_NEAR(score_loss(Tensor::scalar(0.2), 0.9).item(), 0.7, 1e-15);
}

TEST(TotalLoss, WeightsAndMonotonicity) {
  auto z = Tensor::scalar(0.0), o = Tensor::scalar(1.0);
  EXPECT_EQ(total_loss({z, z, z, z}, {}).item(), 0.0);
  EXPECT_EQ(total_loss({o, o, o, o}, {}).item(), 7.5);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0, 2);
  for (int trial = 0; trial < 50; ++trial) {
    double c[4] = {u(rng), u(rng), u(rng), u(rng)};
    const double base = total_loss({Tensor::scalar(c[0]), Tensor::scalar(c[1]), Tensor::scalar(c[2]),
                                    Tensor::scalar(c[3])}, {}).item();
    const std::size_t bump = rng() % 4;
    c[bump] += u(rng);
    const double more = total_loss({Tensor::scalar(c[0]), Tensor::scalar(c[1]), Tensor::scalar(c[2]),
                                    Tensor::scalar(c[3])}, {}).item();
    EXPECT_GE(more, base);
  }
}

TEST(Losses, MatchLoopOracles) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0, 1);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng() % 40, nw = 1 + rng() % 6;
    auto p = random_tensor(rng, 1, n, false, 0.0, 1.0);
    auto y = random_labels(rng, n);
    auto s_r = random_tensor(rng, n, 1, false, 0.0, static_cast<double>(nw));
    auto pv = p.to_vector();
    EXPECT_NEAR(bce_loss(p, y).item(), oracle::bce(pv, y), 1e-10);
    EXPECT_NEAR(dice_loss(p, y).item(), oracle::dice(pv, y), 1e-10);
    EXPECT_NEAR(rel_loss(s_r, nw, y).item(), oracle::rel(s_r.to_vector(), nw, y), 1e-10);
    const double s = u(rng), iou = u(rng);
    EXPECT_NEAR(score_loss(Tensor::scalar(s), iou).item(), oracle::score(s, iou), 1e-15);
    const double d = dice_loss(p, y).item();
    EXPECT_GE(d, 0.0);
    EXPECT_LE(d, 1.0);
    EXPECT_GE(bce_loss(p, y).item(), 0.0);
  }
}

TEST(Losses, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 2 + rng() % 10;
    auto p = random_tensor(rng, 1, n, true, 0.05, 0.95);
    auto s_r = random_tensor(rng, n, 1, true, 0.1, 2.5);
    auto s = random_tensor(rng, 1, 1, true, 0.0, 0.5);
    auto y = random_labels(rng, n);
    auto check = [&](std::function<Tensor()> f, std::vector<Tensor> wrt) {
      EXPECT_LE(finite_difference_check(f, wrt).max_rel_error, 1e-6);
    };
    check([&] { return bce_loss(p, y); }, {p});
    check([&] { return dice_loss(p, y); }, {p});
    check([&] { return rel_loss(s_r, 3, y); }, {s_r});
    check([&] { return score_loss(s, 0.9); }, {s});
    LossWeights w{0.7, 1.3, 2.0, 0.4};
    auto total = [&] {
      return total_loss({bce_loss(p, y), dice_loss(p, y), rel_loss(s_r, 3, y), score_loss(s, 0.9)}, w);
    };
    check(total, {p, s_r, s});
    // The total's gradient is the weighted sum of the component gradients.
    for (auto* t : {&p, &s_r, &s}) t->zero_grad();
    total().backward();
    auto gp = std::vector<double>(p.grad().begin(), p.grad().end());
    p.zero_grad();
    add(scale(bce_loss(p, y), w.bce), scale(dice_loss(p, y), w.dice)).backward();
    for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(gp[i], p.grad()[i], 1e-12);
  }
}

TEST(MaskIou, Examples) {
  EXPECT_EQ(mask_iou({1, 1, 0}, {1, 1, 0}), 1.0);
  EXPECT_EQ(mask_iou({1, 0, 0}, {0, 1, 0}), 0.0);
  EXPECT_NEAR(mask_iou({1, 1, 0, 0}, {0, 1, 1, 0}), 1.0 / 3.0, 1e-15);
  EXPECT_EQ(mask_iou({0, 0}, {0, 0}), 1.0);
  EXPECT_THROW(mask_iou({1}, {1, 0}), ShapeError);
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    auto a = random_labels(rng, 12), b = random_labels(rng, 12);
    EXPECT_EQ(mask_iou(a, b), mask_iou(b, a));
    EXPECT_NEAR(mask_iou(a, b), oracle::iou(a, b), 1e-15);
    const bool nonempty = std::count(a.begin(), a.end(), 1.0) > 0;
    if (nonempty) EXPECT_EQ(mask_iou(a, b) == 1.0, a == b);
  }
}

TEST(RelevanceLabels, MajorityCategory) {
  auto part = scene::SuperpointPartition::from_assignment({0, 0, 0, 1, 1, 2});
  std::vector<int> cat{3, 3, 1, 1, 2, 0};
  auto labels = relevance_labels(part, cat, {3});
  EXPECT_EQ(labels, (std::vector<double>{1, 0, 0}));
  EXPECT_EQ(relevance_labels(part, cat, {1}), (std::vector<double>{0, 1, 0}));  // tie goes to the lower id
}
