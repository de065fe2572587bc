#include "mambareg/losses.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

using namespace mambareg;
using namespace mambareg::loss;

namespace {
double smooth_oracle(const torch::Tensor& phi) {
  auto a = phi.to(torch::kDouble).contiguous();
  const auto N = a.size(0), C = a.size(1), H = a.size(2), W = a.size(3);
  auto p = a.accessor<double, 4>();
  double s = 0;
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c)
      for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 0; x < W; ++x) {
          const double gy = y + 1 < H ? p[n][c][y + 1][x] - p[n][c][y][x] : 0.0;
          const double gx = x + 1 < W ? p[n][c][y][x + 1] - p[n][c][y][x] : 0.0;
          s += gy * gy + gx * gx;
        }
  return s / double(N * C * H * W);
}
}  // namespace

TEST(SimLoss, ZeroAtFixedPoint) {
  auto x = torch::rand({2, 1, 8, 8});
  EXPECT_EQ(sim_loss(x, x, torch::ones({2, 1, 8, 8})).item<double>(), 0.0);
}

TEST(SimLoss, AllOnesMaskEqualsPlainMse) {
  torch::manual_seed(1);
  auto a = torch::rand({1, 3, 8, 8});
  auto b = torch::rand({1, 3, 8, 8});
  EXPECT_NEAR(sim_loss(a, b, torch::ones({1, 1, 8, 8})).item<double>(), mse(a, b).item<double>(), 1e-7);
}

TEST(SimLoss, HandComputedTwoByTwo) {
  auto x = torch::tensor({1.0, 0.0, 0.0, 0.0}).view({1, 1, 2, 2});
  auto mask = torch::tensor({1.0, 0.0, 0.0, 0.0}).view({1, 1, 2, 2});
  EXPECT_DOUBLE_EQ(sim_loss(x, torch::zeros_like(x), mask).item<double>(), 0.25);
}

TEST(SimLoss, ShapeMismatchRaises) {
  EXPECT_THROW(sim_loss(torch::zeros({1, 1, 4, 4}), torch::zeros({1, 1, 4, 3}), torch::ones({1, 1, 4, 4})), ShapeError);
}

TEST(SmoothLoss, ConstantFieldIsZero) {
  EXPECT_EQ(smooth_loss(torch::full({1, 2, 8, 8}, 3.5)).item<double>(), 0.0);
}

TEST(SmoothLoss, UnitShearMatchesStencilOracle) {
  auto phi = torch::zeros({1, 2, 8, 8}, torch::kDouble);
  phi.select(1, 1).copy_(torch::arange(8, torch::kDouble).view({1, 8}).expand({8, 8}));
  const double v = smooth_loss(phi).item<double>();
  EXPECT_DOUBLE_EQ(v, smooth_oracle(phi));
  EXPECT_DOUBLE_EQ(v, 8.0 * 7.0 / (2.0 * 64.0));
}

TEST(SmoothLoss, RandomFieldMatchesOracleAndIsHomogeneous) {
  torch::manual_seed(2);
  auto phi = torch::randn({2, 2, 7, 9}, torch::kDouble);
  EXPECT_NEAR(smooth_loss(phi).item<double>(), smooth_oracle(phi), 1e-12);
  EXPECT_NEAR(smooth_loss(2 * phi).item<double>(), 4 * smooth_loss(phi).item<double>(), 1e-10);
}

TEST(GuidanceLoss, IdenticalIsZeroAndSinglePixelCase) {
  auto a = torch::rand({1, 1, 4, 4});
  EXPECT_EQ(guidance_loss(a, a, a, a).item<double>(), 0.0);
  auto x = torch::zeros({1, 1, 2, 2});
  auto xg = x.clone();
  xg[0][0][0][0] = 1.0;
  EXPECT_DOUBLE_EQ(guidance_loss(x, x, xg, x).item<double>(), 0.25);
}

TEST(GuidanceLoss, TargetsCarryNoGradient) {
  auto target = torch::rand({1, 1, 4, 4}).requires_grad_(true);
  auto main = torch::rand({1, 1, 4, 4}).requires_grad_(true);
  guidance_loss(main, main, target, target).backward();
  EXPECT_TRUE(main.grad().defined());
  EXPECT_FALSE(target.grad().defined());
}

TEST(ReconLoss, ConstantOffsetAndSymmetry) {
  auto x = torch::rand({1, 1, 8, 8}, torch::kDouble);
  auto y = torch::rand({1, 1, 8, 8}, torch::kDouble);
  EXPECT_EQ(recon_loss(x, x, y, y).item<double>(), 0.0);
  EXPECT_NEAR(recon_loss(x + 0.1, x, y, y).item<double>(), 0.01, 1e-12);
  auto a = torch::rand({1, 1, 8, 8}, torch::kDouble);
  EXPECT_DOUBLE_EQ(recon_loss(a, x, y, x).item<double>(), recon_loss(y, x, a, x).item<double>());
}

TEST(AgnetLoss, ConstantOffsetOnOneImage) {
  auto x = torch::rand({1, 1, 8, 8}, torch::kDouble);
  EXPECT_EQ(agnet_loss(x, x, x, x).item<double>(), 0.0);
  EXPECT_NEAR(agnet_loss(x, x, x + 0.1, x).item<double>(), 0.01, 1e-12);
}

TEST(TotalLoss, DefaultWeightsOnUnitComponents) {
  auto one = torch::ones({});
  EXPECT_DOUBLE_EQ(total_loss({one, one, one, one}, LossWeights{}).item<double>(), 145.0);
  auto zero = torch::zeros({});
  EXPECT_EQ(total_loss({zero, zero, zero, zero}, LossWeights{}).item<double>(), 0.0);
}

TEST(TotalLoss, LinearInEachComponent) {
  auto s = torch::tensor(0.3, torch::kDouble), m = torch::tensor(0.7, torch::kDouble);
  auto g = torch::tensor(1.3, torch::kDouble), r = torch::tensor(0.2, torch::kDouble);
  LossWeights w;
  w.gamma = 0;
  EXPECT_NEAR(total_loss({s, m, g, r}, w).item<double>(), 100 * 0.3 + 10 * 0.7 + 10 * 0.2, 1e-12);
  LossWeights bad;
  bad.beta = -1;
  EXPECT_THROW(total_loss({s, m, g, r}, bad), ConfigError);
}

TEST(UnionMask, CombinesWarpedMovingAndFixed) {
  auto moving = torch::zeros({1, 1, 6, 6});
  moving[0][0][2][2] = 1;
  auto fixed = torch::zeros({1, 1, 6, 6});
  fixed[0][0][5][5] = 1;
  auto phi = torch::zeros({1, 2, 6, 6});
  phi.select(1, 1).fill_(1.0);  // sample one column to the right
  auto u = union_mask(moving, fixed, phi);
  EXPECT_EQ(u.sum().item<double>(), 2.0);
  EXPECT_EQ(u[0][0][2][1].item<double>(), 1.0);
  EXPECT_EQ(u[0][0][5][5].item<double>(), 1.0);
}

TEST(LossGradients, AllFourMatchFiniteDifferences) {
  torch::manual_seed(7);
  auto opts = torch::TensorOptions().dtype(torch::kDouble);
  auto gt = torch::rand({1, 1, 8, 8}, opts);
  auto mask = (torch::rand({1, 1, 8, 8}, opts) > 0.5).to(torch::kDouble);
  auto target = torch::rand({1, 1, 8, 8}, opts);
  auto p = torch::rand({1, 1, 8, 8}, opts).requires_grad_(true);
  auto phi = torch::randn({1, 2, 8, 8}, opts).requires_grad_(true);
  std::vector<std::pair<torch::Tensor*, std::function<torch::Tensor()>>> cases = {
      {&p, [&] { return sim_loss(p, gt, mask); }},
      {&phi, [&] { return smooth_loss(phi); }},
      {&p, [&] { return guidance_loss(p, p * 0.5, target, target); }},
      {&p, [&] { return recon_loss(p, target, p * p, gt); }},
  };
  for (auto& [param, f] : cases) {
    param->mutable_grad() = torch::Tensor();
    f().backward();
    auto numeric = oracle::finite_difference(*param, [&] { return f().item<double>(); });
    EXPECT_LT(oracle::relative_error(param->grad(), numeric), 1e-3);
  }
}

TEST(LossGradients, SmallStepDecreasesTotal) {
  torch::manual_seed(8);
  auto gt = torch::rand({1, 1, 8, 8});
  auto p = torch::rand({1, 1, 8, 8}).requires_grad_(true);
  auto phi = torch::randn({1, 2, 8, 8}).requires_grad_(true);
  auto f = [&] {
    return total_loss({sim_loss(p, gt, torch::ones({1, 1, 8, 8})), smooth_loss(phi), guidance_loss(p, p, gt, gt),
                       recon_loss(p, gt, p, gt)},
                      LossWeights{});
  };
  auto before = f();
  before.backward();
  {
    torch::NoGradGuard g;
    p -= 1e-4 * p.grad();
    phi -= 1e-4 * phi.grad();
  }
  EXPECT_LT(f().item<double>(), before.item<double>());
}
