#include "mambareg/feature_extractors.hpp"

#include <gtest/gtest.h>

using namespace mambareg;
using namespace mambareg::features;

namespace {
ExtractorOptions small(MambaMode mode = MambaMode::Bi) { return ExtractorOptions(1, 8).n_blocks(2).mode(mode); }
}  // namespace

TEST(Disentangle, MdPlusMiReconstructsImageExactly) {
  torch::manual_seed(1);
  MDFE mdfe(small());
  auto image = torch::rand({2, 1, 16, 16});
  auto md = mdfe->forward(image);
  auto mi = split_mi(image, md);
  EXPECT_TRUE(torch::equal(mi, image - md));
  EXPECT_TRUE(torch::allclose(mi + md, image, 0, 1e-6));
}

TEST(Disentangle, SplitRejectsShapeMismatch) {
  EXPECT_THROW(split_mi(torch::zeros({1, 1, 8, 8}), torch::zeros({1, 1, 8, 4})), ShapeError);
}

TEST(MDFE, SeparateInstancesDiffer) {
  torch::manual_seed(2);
  MDFE mdfe_x(small());
  MDFE mdfe_y(small());
  auto image = torch::rand({1, 1, 16, 16});
  EXPECT_GT((mdfe_x->forward(image) - mdfe_y->forward(image)).abs().max().item<double>(), 0.0);
}

TEST(MDFE, ShapesAndFiniteness) {
  torch::manual_seed(3);
  for (auto mode : {MambaMode::None, MambaMode::Uni, MambaMode::Bi}) {
    MDFE mdfe(small(mode));
    auto out = mdfe->forward(torch::rand({2, 1, 16, 16}));
    EXPECT_EQ(out.sizes(), (std::vector<int64_t>{2, 1, 16, 16}));
    EXPECT_TRUE(torch::isfinite(out).all().item<bool>());
  }
}

TEST(MDFE, ZeroInputZeroOutput) {
  MDFE mdfe(small());
  auto out = mdfe->forward(torch::zeros({1, 1, 8, 8}));
  EXPECT_TRUE(torch::equal(out, torch::zeros_like(out)));
}

TEST(MIFE, SharedCodeRenderedPerModality) {
  torch::manual_seed(4);
  MIFE mife(small());
  auto mi = torch::rand({1, 1, 16, 16});
  auto pair = mife->forward(mi);
  auto code = mife->encode(mi);
  EXPECT_TRUE(torch::allclose(pair.r_x, mife->render(code, Modality::X)));
  EXPECT_TRUE(torch::allclose(pair.r_y, mife->render(code, Modality::Y)));
  EXPECT_GT((pair.r_x - pair.r_y).abs().max().item<double>(), 0.0);
  EXPECT_EQ(code.size(1), 8);
}

TEST(MIFE, ParametersRegistered) {
  MIFE mife(small(MambaMode::None));
  auto names = mife->named_parameters().keys();
  EXPECT_NE(std::find(names.begin(), names.end(), "mi_x_filters"), names.end());
  EXPECT_NE(std::find(names.begin(), names.end(), "mi_y_filters"), names.end());
  MIFE with_mamba(small(MambaMode::Bi));
  EXPECT_GT(with_mamba->parameters().size(), mife->parameters().size());
}
