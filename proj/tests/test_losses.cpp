#include "ivf/losses.hpp"
#include "ivf/metrics.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

namespace {

using ivf::Graph;
using ivf::Image;
using ivf::LossConfig;
using ivf::NodeId;
using ivf::Raster;
using ivf::Tensor;

Raster random_raster(Eigen::Index h, Eigen::Index w, unsigned seed, double lo = 0.0, double hi = 1.0) {
  std::mt19937 gen(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Raster r(h, w);
  for (Eigen::Index i = 0; i < r.size(); ++i) r.data()[i] = u(gen);
  return r;
}

Image random_image(std::size_t side, unsigned seed) {
  return Image(random_raster(static_cast<Eigen::Index>(side), static_cast<Eigen::Index>(side), seed));
}

ivf::LossBreakdown evaluate(const Image& o, const Image& ir, const Image& vis, const LossConfig& cfg) {
  Graph g;
  const auto nodes = ivf::total_loss(g, g.input(Tensor::from_image(o)), ir, vis, cfg);
  return ivf::extract_breakdown(g, nodes);
}

TEST(Weight, Examples) {
  const Raster half = Raster::Constant(2, 2, 0.5);
  const auto w = ivf::weight(half, half, 0.0);
  EXPECT_EQ(w.w_a.maxCoeff(), 0.5);
  EXPECT_EQ(w.w_b.minCoeff(), 0.5);
  const auto z = ivf::weight(Raster::Zero(1, 1), Raster::Zero(1, 1), 1e-8);
  EXPECT_EQ(z.w_a(0, 0), 0.0);
  EXPECT_EQ(z.w_b(0, 0), 0.0);
  const auto t = ivf::weight(Raster::Constant(1, 1, 3.0), Raster::Constant(1, 1, 1.0), 1e-8);
  EXPECT_NEAR(t.w_a(0, 0), 0.75, 1e-8);
  EXPECT_THROW(ivf::weight(Raster::Constant(1, 1, -0.1), Raster::Zero(1, 1), 1e-8), std::domain_error);
  EXPECT_THROW(ivf::weight(Raster::Zero(1, 2), Raster::Zero(2, 1), 1e-8), ivf::ShapeError);
}

TEST(Weight, NormalizationOutsideEpsilonRegime) {
  const double eps = 1e-8;
  // spans the epsilon-dominated regime up to ordinary magnitudes
  Raster a(1, 4000), b(1, 4000);
  std::mt19937 gen(1);
  std::uniform_real_distribution<double> expo(-12.0, 1.0);
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    a(0, i) = std::pow(10.0, expo(gen));
    b(0, i) = std::pow(10.0, expo(gen));
  }
  const auto w = ivf::weight(a, b, eps);
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double s = w.w_a(0, i) + w.w_b(0, i);
    EXPECT_GE(w.w_a(0, i), 0.0);
    EXPECT_LE(s, 1.0);
    // s = t / (t + eps) with t = a + b, so the deficit is below eps / t
    const double t = a(0, i) + b(0, i);
    if (t >= 100 * eps) EXPECT_GE(s, 1.0 - eps / t - 1e-15);
    if (t >= 1e6 * eps) EXPECT_GE(s, 1.0 - 1e-6);
  }
}

TEST(Weight, RatioInvarianceWithoutEpsilon) {
  const Raster a = random_raster(8, 8, 2, 0.01, 1.0);
  const Raster b = random_raster(8, 8, 3, 0.01, 1.0);
  const auto base = ivf::weight(a, b, 0.0);
  for (double c : {0.5, 2.0, 10.0}) {
    const auto s = ivf::weight(Raster(c * a), Raster(c * b), 0.0);
    EXPECT_LE((s.w_a - base.w_a).abs().maxCoeff(), 1e-9);
    EXPECT_LE((s.w_b - base.w_b).abs().maxCoeff(), 1e-9);
  }
}

TEST(PixelWeights, Examples) {
  const Image a = random_image(6, 4);
  const auto same = ivf::pixel_weights(a, a);
  // a / (2a + eps) falls short of one half by about eps / 4a
  const Raster half = a.pixels() / (2.0 * a.pixels() + 1e-8);
  EXPECT_LE((same.w_a - half).abs().maxCoeff(), 1e-15);
  EXPECT_LE((same.w_a - 0.5).abs().maxCoeff(), 1e-8 / (4 * a.pixels().minCoeff()));
  const auto one_sided = ivf::pixel_weights(Image(3, 3, 1.0), Image(3, 3, 0.0));
  EXPECT_NEAR(one_sided.w_a.minCoeff(), 1.0, 1e-7);
  EXPECT_EQ(one_sided.w_b.maxCoeff(), 0.0);
  const auto r = ivf::pixel_weights(random_image(6, 5), random_image(6, 6));
  EXPECT_LE((r.w_a + r.w_b).maxCoeff(), 1.0);
  EXPECT_THROW(ivf::pixel_weights(Image(3, 3), Image(4, 3)), ivf::ShapeError);
}

TEST(GradientWeights, Examples) {
  const auto flat = ivf::gradient_weights(Image(5, 5, 0.2), Image(5, 5, 0.7));
  EXPECT_EQ(flat.w_a.maxCoeff(), 0.0);
  EXPECT_EQ(flat.w_b.maxCoeff(), 0.0);

  Raster step = Raster::Zero(6, 6);
  step.rightCols(3).setOnes();
  const auto edge = ivf::gradient_weights(Image(6, 6, 0.4), Image(step));
  EXPECT_NEAR(edge.w_b(3, 2), 1.0, 1e-8);
  EXPECT_EQ(edge.w_a(3, 2), 0.0);

  const Image ir = random_image(7, 7);
  const Image vis = random_image(7, 8);
  const auto gw = ivf::gradient_weights(ir, vis);
  const auto gi = ivf::sobel_gradient(ir).values;
  const auto gv = ivf::sobel_gradient(vis).values;
  for (auto [y, x] : {std::pair{0, 0}, {3, 4}, {6, 6}, {2, 5}}) {
    EXPECT_NEAR(gw.w_a(y, x), gi(y, x) / (gi(y, x) + gv(y, x) + 1e-8), 1e-15);
  }
  EXPECT_THROW(ivf::gradient_weights(Image(2, 2), Image(2, 2)), ivf::SizeError);
}

TEST(Ssim, IdentityIsOne) {
  const LossConfig cfg;
  const Raster x = random_raster(16, 16, 9);
  EXPECT_EQ(ivf::ssim_value(x, x, cfg), 1.0);
  Graph g;
  const NodeId n = g.constant(Tensor::from_raster(x));
  EXPECT_EQ(g.value(ivf::ssim_graph(g, n, n, cfg)).item(), 1.0);
}

TEST(Ssim, AnticorrelatedBinaryIsNegative) {
  Raster x(16, 16);
  for (Eigen::Index y = 0; y < 16; ++y)
    for (Eigen::Index c = 0; c < 16; ++c) x(y, c) = ((y / 2 + c / 3) % 2) ? 1.0 : 0.0;
  const Raster inv = 1.0 - x;
  EXPECT_LT(ivf::ssim_value(x, inv, LossConfig{}), 0.0);
}

TEST(Ssim, ConstantImagesClosedForm) {
  const LossConfig cfg;
  const double mx = 0.3, my = 0.4;
  const double expect = (2 * mx * my + cfg.ssim_c1) * cfg.ssim_c2 / ((mx * mx + my * my + cfg.ssim_c1) * cfg.ssim_c2);
  EXPECT_NEAR(ivf::ssim_value(Raster::Constant(12, 12, mx), Raster::Constant(12, 12, my), cfg), expect, 1e-12);
}

TEST(Ssim, GraphAndPlainPathsAgreeBitForBit) {
  const LossConfig cfg;
  for (unsigned s = 0; s < 5; ++s) {
    const Raster x = random_raster(20, 17, 10 + s);
    const Raster y = random_raster(20, 17, 20 + s);
    Graph g;
    const double graph = g.value(ivf::ssim_graph(g, g.constant(Tensor::from_raster(x)), g.constant(Tensor::from_raster(y)), cfg)).item();
    EXPECT_EQ(graph, ivf::ssim_value(x, y, cfg));
  }
}

TEST(Ssim, WindowLargerThanImage) {
  EXPECT_THROW(ivf::ssim_value(Raster::Zero(8, 8), Raster::Zero(8, 8), LossConfig{}), ivf::SizeError);
}

TEST(LossInt, ZeroPointAndConstantOffset) {
  const Image ir = random_image(12, 30);
  const Image vis = random_image(12, 31);
  const auto p = ivf::pixel_weights(ir, vis);
  const Raster target = p.w_a * ir.pixels() + p.w_b * vis.pixels();
  Graph g;
  EXPECT_LT(std::abs(g.value(ivf::loss_int(g, g.input(Tensor::from_raster(target)), ir, vis, LossConfig{})).item()), 1e-12);

  const Image lo(12, 12, 0.2);
  const Image hi(12, 12, 0.6);
  const auto q = ivf::pixel_weights(lo, hi);
  const Raster shifted = q.w_a * lo.pixels() + q.w_b * hi.pixels() + 0.1;
  EXPECT_NEAR(g.value(ivf::loss_int(g, g.input(Tensor::from_raster(shifted)), lo, hi, LossConfig{})).item(), 0.1, 1e-12);
}

TEST(LossInt, MatchesPixelLoop) {
  const Image ir = random_image(9, 32), vis = random_image(9, 33), o = random_image(9, 34);
  double acc = 0;
  for (std::size_t y = 0; y < 9; ++y) {
    for (std::size_t x = 0; x < 9; ++x) {
      const double a = ir(y, x), b = vis(y, x);
      acc += std::abs(o(y, x) - (a * a + b * b) / (a + b + 1e-8));
    }
  }
  Graph g;
  EXPECT_NEAR(g.value(ivf::loss_int(g, g.input(Tensor::from_image(o)), ir, vis, LossConfig{})).item(), acc / 81, 1e-14);
}

TEST(LossGrad, ConstantImagesAndFlatOutput) {
  Graph g;
  const Image c(8, 8, 0.4);
  // the convolution path leaves roundoff on flat input
  EXPECT_LT(g.value(ivf::loss_grad(g, g.input(Tensor::from_image(c)), c, Image(8, 8, 0.9), LossConfig{})).item(), 1e-15);

  Raster step = Raster::Zero(8, 8);
  step.rightCols(4).setConstant(0.8);
  const Image vis(step);
  const auto gw = ivf::gradient_weights(c, vis);
  const double expect = (gw.w_b * ivf::sobel_gradient(vis).values).mean();
  EXPECT_NEAR(g.value(ivf::loss_grad(g, g.input(Tensor::from_image(c)), c, vis, LossConfig{})).item(), expect, 1e-14);
}

TEST(LossGrad, GradientMatchesFiniteDifferences) {
  const Image ir = random_image(8, 40), vis = random_image(8, 41);
  const auto r = ivf::grad_check("loss_grad", [&](Graph& g, NodeId o) { return ivf::loss_grad(g, o, ir, vis, LossConfig{}); },
                                 Tensor::from_image(random_image(8, 42)), 1e-5, 1e-5);
  EXPECT_TRUE(r.passed) << r.max_rel_error;
}

TEST(LossSsim, PerfectFusionFixedPoint) {
  const Image x = random_image(16, 50);
  Graph g;
  EXPECT_LT(g.value(ivf::loss_ssim(g, g.input(Tensor::from_image(x)), x, x, LossConfig{})).item(), 1e-7);
}

TEST(LossSsim, NoiseIsNearOne) {
  const Image ir = random_image(32, 51), vis = random_image(32, 52), o = random_image(32, 53);
  Graph g;
  EXPECT_NEAR(g.value(ivf::loss_ssim(g, g.input(Tensor::from_image(o)), ir, vis, LossConfig{})).item(), 1.0, 0.1);
}

TEST(TotalLoss, DegenerateWeightsAndHandSum) {
  const Image ir = random_image(16, 60), vis = random_image(16, 61), o = random_image(16, 62);
  LossConfig none;
  none.alpha = 0;
  none.beta = 0;
  const auto b0 = evaluate(o, ir, vis, none);
  EXPECT_EQ(b0.total, b0.l_int);
  const auto b = evaluate(o, ir, vis, LossConfig{});
  EXPECT_NEAR(b.total, b.l_int + 1.0 * b.l_grad + 0.2 * b.l_ssim, 1e-12);
  EXPECT_GE(b.l_int, 0.0);
  EXPECT_GE(b.l_grad, 0.0);
  EXPECT_GE(b.l_ssim, 0.0);
}

TEST(TotalLoss, ZeroAtPerfectFusion) {
  const Image x = random_image(16, 63);
  EXPECT_LT(evaluate(x, x, x, LossConfig{}).total, 1e-6);
}

TEST(TotalLoss, SymmetricInSources) {
  for (bool detach : {true, false}) {
    LossConfig cfg;
    cfg.detach_ssim_weights = detach;
    const Image ir = random_image(16, 70), vis = random_image(16, 71), o = random_image(16, 72);
    const auto a = evaluate(o, ir, vis, cfg);
    const auto b = evaluate(o, vis, ir, cfg);
    EXPECT_NEAR(a.l_int, b.l_int, 1e-15);
    EXPECT_NEAR(a.l_grad, b.l_grad, 1e-15);
    EXPECT_NEAR(a.l_ssim, b.l_ssim, 1e-15);
  }
}

TEST(TotalLoss, ShapeMismatch) {
  Graph g;
  EXPECT_THROW(ivf::total_loss(g, g.input(Tensor::zeros({1, 8, 8})), Image(8, 8), Image(9, 8), LossConfig{}), ivf::ShapeError);
}

TEST(LossConfig, Validation) {
  LossConfig c;
  c.epsilon = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.ssim_window = 4;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.alpha = -1;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(LossCsv, RowFormat) {
  EXPECT_EQ(ivf::loss_csv_row(3, {0.5, 0.25, 1, 0.95}), "3,0.5,0.25,1,0.95");
}

}  // namespace
