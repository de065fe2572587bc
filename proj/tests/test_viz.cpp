#include "mambareg/common.hpp"
#include "mambareg/viz.hpp"

#include <gtest/gtest.h>

using namespace mambareg;

namespace {
torch::Tensor pixel(const torch::Tensor& rgb, int64_t y, int64_t x) { return rgb.index({torch::indexing::Slice(), y, x}); }

void expect_rgb(const torch::Tensor& px, double r, double g, double b) {
  EXPECT_NEAR(px[0].item<double>(), r, 1e-6);
  EXPECT_NEAR(px[1].item<double>(), g, 1e-6);
  EXPECT_NEAR(px[2].item<double>(), b, 1e-6);
}
}  // namespace

TEST(Flow, ZeroFieldIsWhite) {
  auto rgb = viz::flow_to_rgb(torch::zeros({2, 5, 7}));
  EXPECT_EQ(rgb.sizes(), (std::vector<int64_t>{3, 5, 7}));
  EXPECT_EQ(rgb.min().item<float>(), 1.0f);
}

TEST(Flow, DirectionsMapToHues) {
  auto phi = torch::zeros({2, 1, 4});
  phi[1][0][0] = 2.0;   // +x  -> hue 0
  phi[0][0][1] = 2.0;   // +y  -> hue 90
  phi[1][0][2] = -2.0;  // -x  -> hue 180
  phi[1][0][3] = 1.0;   // half magnitude, +x
  auto rgb = viz::flow_to_rgb(phi);
  expect_rgb(pixel(rgb, 0, 0), 1, 0, 0);
  expect_rgb(pixel(rgb, 0, 1), 0.5, 1, 0);
  expect_rgb(pixel(rgb, 0, 2), 0, 1, 1);
  expect_rgb(pixel(rgb, 0, 3), 1, 0.5, 0.5);
}

TEST(Flow, ExplicitScaleSaturates) {
  auto phi = torch::zeros({2, 1, 1});
  phi[1][0][0] = 10.0;
  expect_rgb(pixel(viz::flow_to_rgb(phi, 5.0), 0, 0), 1, 0, 0);
  expect_rgb(pixel(viz::flow_to_rgb(phi, 20.0), 0, 0), 1, 0.5, 0.5);
}

TEST(Panel, LayoutAndSeparators) {
  auto m = torch::full({1, 6, 5}, 0.25), f = torch::full({3, 6, 5}, 0.5), w = torch::full({1, 6, 5}, 0.75);
  auto p = viz::registration_panel(m, f, w, torch::zeros({2, 6, 5}), 2);
  EXPECT_EQ(p.sizes(), (std::vector<int64_t>{3, 6, 4 * 5 + 3 * 2}));
  EXPECT_FLOAT_EQ(p[1][0][0].item<float>(), 0.25f);
  EXPECT_FLOAT_EQ(p[1][0][5].item<float>(), 1.0f);
  EXPECT_FLOAT_EQ(p[1][0][7].item<float>(), 0.5f);
  EXPECT_FLOAT_EQ(p[2][3][14].item<float>(), 0.75f);
  EXPECT_THROW(viz::registration_panel(m, f, w, torch::zeros({2, 6, 4})), ShapeError);
  EXPECT_THROW(viz::registration_panel(torch::zeros({2, 6, 5}), f, w, torch::zeros({2, 6, 5})), ShapeError);
}
