#include "ivf/metrics.hpp"
#include "ivf/model.hpp"
#include "ivf/synth.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <random>

namespace {

using ivf::Image;
using ivf::Raster;

Image random_image(std::size_t w, std::size_t h, unsigned seed) {
  std::mt19937 gen(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Raster r(h, w);
  for (Eigen::Index i = 0; i < r.size(); ++i) r.data()[i] = u(gen);
  return Image(r);
}

Image add_noise(const Image& img, double amplitude, unsigned seed) {
  std::mt19937 gen(seed);
  std::normal_distribution<double> n(0.0, amplitude);
  Raster r = img.pixels();
  for (Eigen::Index i = 0; i < r.size(); ++i) r.data()[i] = std::clamp(r.data()[i] + n(gen), 0.0, 1.0);
  return Image(r);
}

Image blur(const Image& img) {
  return Image(Raster(ivf::correlate_replicate(img.pixels(), ivf::gaussian_window(5, 1.2))));
}

TEST(Entropy, FixedPoints) {
  EXPECT_EQ(ivf::entropy(Image(9, 4, 0.3)), 0.0);
  Raster all(4, 64);
  for (int k = 0; k < 256; ++k) all.data()[k] = k / 255.0;
  EXPECT_NEAR(ivf::entropy(Image(all)), 8.0, 1e-9);
  Raster two(2, 5);
  two.topRows(1).setConstant(0.1);
  two.bottomRows(1).setConstant(0.9);
  EXPECT_NEAR(ivf::entropy(Image(two)), 1.0, 1e-12);
}

TEST(Entropy, PermutationInvariantAndBounded) {
  const Image a = random_image(20, 20, 1);
  Raster shuffled = a.pixels();
  std::mt19937 gen(2);
  std::shuffle(shuffled.data(), shuffled.data() + shuffled.size(), gen);
  EXPECT_EQ(ivf::entropy(a), ivf::entropy(Image(shuffled)));
  EXPECT_LE(ivf::entropy(a), 8.0);
}

TEST(MutualInformation, FixedPoints) {
  const Image a = random_image(30, 30, 3);
  EXPECT_NEAR(ivf::mutual_information(a, a), ivf::entropy(a), 1e-9);
  EXPECT_EQ(ivf::mutual_information(Image(30, 30, 0.5), a), 0.0);
  const Image b = random_image(30, 30, 4);
  EXPECT_LT(std::abs(ivf::mutual_information(a, b) - ivf::mutual_information(b, a)), 1e-9);
  EXPECT_LE(ivf::mutual_information(a, b), std::min(ivf::entropy(a), ivf::entropy(b)) + 1e-9);
  EXPECT_THROW(ivf::mutual_information(a, Image(3, 3)), ivf::SizeError);
}

TEST(MutualInformation, MatchesJointHistogramLoop) {
  const Image a = random_image(24, 24, 5);
  Raster perm = a.pixels();
  std::mt19937 gen(6);
  std::shuffle(perm.data(), perm.data() + perm.size(), gen);
  const Image b(perm);
  std::map<std::pair<int, int>, double> joint;
  std::map<int, double> pa, pb;
  const double n = static_cast<double>(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    const int x = ivf::intensity_bin(a.data()[i]);
    const int y = ivf::intensity_bin(b.data()[i]);
    joint[{x, y}] += 1 / n;
    pa[x] += 1 / n;
    pb[y] += 1 / n;
  }
  double mi = 0;
  for (const auto& [xy, p] : joint) mi += p * std::log2(p / (pa[xy.first] * pb[xy.second]));
  EXPECT_NEAR(ivf::mutual_information(a, b), std::max(mi, 0.0), 1e-12);
}

TEST(MiFusion, Compositions) {
  const Image x = random_image(16, 16, 7);
  EXPECT_NEAR(ivf::mi_fusion(x, x, x), 2 * ivf::entropy(x), 1e-9);
  EXPECT_EQ(ivf::mi_fusion(x, random_image(16, 16, 8), Image(16, 16, 0.2)), 0.0);
  const Image ir = random_image(16, 16, 9), vis = random_image(16, 16, 10), o = random_image(16, 16, 11);
  EXPECT_EQ(ivf::mi_fusion(ir, vis, o), ivf::mutual_information(ir, o) + ivf::mutual_information(vis, o));
}

TEST(SsimMetric, IdentityIsExactlyOne) {
  const Image x = random_image(20, 20, 12);
  const auto s = ivf::ssim_metric(x, x, x);
  EXPECT_EQ(s.ssim_ir, 1.0);
  EXPECT_EQ(s.ssim_vis, 1.0);
  EXPECT_EQ(s.ssim_mean, 1.0);
}

TEST(SsimMetric, NoiseNearZeroAndSharedWithLossPath) {
  const Image ir = random_image(48, 48, 13), vis = random_image(48, 48, 14), o = random_image(48, 48, 15);
  const auto s = ivf::ssim_metric(ir, vis, o);
  EXPECT_LT(std::abs(s.ssim_mean), 0.05);
  ivf::Graph g;
  const ivf::LossConfig cfg;
  const double graph = g.value(ivf::ssim_graph(g, g.constant(ivf::Tensor::from_image(ir)), g.constant(ivf::Tensor::from_image(o)), cfg)).item();
  EXPECT_EQ(graph, s.ssim_ir);
}

TEST(Qabf, PerfectPreservationCeiling) {
  const auto scene = ivf::render_scene(3, 0, 32);
  const ivf::QabfParams p;
  const double qg = p.gamma_g / (1 + std::exp(p.kappa_g * (1 - p.sigma_g)));
  const double qa = p.gamma_a / (1 + std::exp(p.kappa_a * (1 - p.sigma_a)));
  EXPECT_NEAR(ivf::qabf(scene.vis, scene.vis, scene.vis), qg * qa, 1e-12);
  EXPECT_LT(qg * qa, 1.0);
}

TEST(Qabf, DegenerateCases) {
  const auto scene = ivf::render_scene(4, 0, 32);
  EXPECT_LT(ivf::qabf(scene.ir, scene.vis, Image(32, 32, 0.4)), 0.01);
  EXPECT_EQ(ivf::qabf(Image(8, 8, 0.1), Image(8, 8, 0.2), Image(8, 8, 0.3)), 0.0);
}

TEST(Qabf, RangeAndSourceSymmetry) {
  std::mt19937 gen(16);
  for (unsigned k = 0; k < 100; ++k) {
    const std::size_t w = 8 + gen() % 24, h = 8 + gen() % 24;
    Image ir = random_image(w, h, 100 + k);
    Image vis = k % 3 == 0 ? Image(w, h, 0.5) : random_image(w, h, 200 + k);
    Image o = k % 4 == 0 ? blur(ir) : random_image(w, h, 300 + k);
    const double q = ivf::qabf(ir, vis, o);
    EXPECT_GE(q, 0.0);
    EXPECT_LE(q, 1.0);
    if (k < 10) EXPECT_EQ(q, ivf::qabf(vis, ir, o));
  }
}

TEST(Vif, FixedPointsAndBlur) {
  const auto scene = ivf::render_scene(5, 0, 64);
  EXPECT_NEAR(ivf::vif_fusion(scene.vis, scene.vis, scene.vis), 1.0, 1e-6);
  EXPECT_LT(ivf::vif_fusion(scene.ir, scene.vis, Image(64, 64, 0.5)), 0.01);
  const double blurred = ivf::vif_fusion(scene.vis, scene.vis, blur(scene.vis));
  EXPECT_GT(blurred, 0.0);
  EXPECT_LT(blurred, 1.0);
  EXPECT_THROW(ivf::vif_fusion(Image(31, 40), Image(31, 40), Image(31, 40)), ivf::SizeError);
}

TEST(Vif, NoiseNeverHelps) {
  for (std::uint64_t scene_index = 0; scene_index < 4; ++scene_index) {
    const auto scene = ivf::render_scene(6, scene_index, 64);
    const Image o = Image(Raster(0.5 * (scene.ir.pixels() + scene.vis.pixels())));
    double prev = ivf::vif_fusion(scene.ir, scene.vis, o);
    for (double amp : {0.01, 0.03, 0.06, 0.12}) {
      const double v = ivf::vif_fusion(scene.ir, scene.vis, add_noise(o, amp, static_cast<unsigned>(scene_index)));
      EXPECT_LE(v, prev) << "scene " << scene_index << " noise " << amp;
      prev = v;
    }
  }
}

TEST(EvaluateSet, Aggregation) {
  const auto corpus = ivf::make_corpus(7, 2, 32);
  const auto pairs = corpus.aligned_pairs();
  const auto model = ivf::init_model(1);

  const auto one = ivf::evaluate_set(model, std::span(pairs).first(1));
  ASSERT_EQ(one.rows.size(), 1u);
  EXPECT_EQ(ivf::metric_csv_fields(one.mean), ivf::metric_csv_fields(one.rows[0]));

  const std::vector<ivf::ImagePair> dup = {pairs[0], pairs[0]};
  EXPECT_EQ(ivf::metric_csv_fields(ivf::evaluate_set(model, dup).mean), ivf::metric_csv_fields(one.mean));

  const auto two = ivf::evaluate_set(model, pairs);
  EXPECT_NEAR(two.mean.qabf, (two.rows[0].qabf + two.rows[1].qabf) / 2, 1e-15);
  EXPECT_NEAR(two.mean.en, (two.rows[0].en + two.rows[1].en) / 2, 1e-15);
  EXPECT_EQ(two.mean.pair_id, "mean");

  const auto threaded = ivf::evaluate_set(model, pairs, {}, 2);
  EXPECT_EQ(ivf::format_metric_csv(threaded), ivf::format_metric_csv(two));
  EXPECT_THROW(ivf::evaluate_set(model, std::span<const ivf::ImagePair>{}), std::invalid_argument);
}

TEST(EvaluateSet, CsvLayout) {
  const auto corpus = ivf::make_corpus(8, 3, 32);
  const auto csv = ivf::format_metric_csv(ivf::evaluate_set(ivf::zero_model(), corpus.aligned_pairs()));
  EXPECT_EQ(csv.rfind("pair_id,en,mi,vif,qabf,ssim_ir,ssim_vis,ssim_mean\n", 0), 0u);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
  EXPECT_NE(csv.find("\nmean,"), std::string::npos);
}

TEST(MetricRanges, OnTrainedLikeOutputs) {
  const auto scene = ivf::render_scene(9, 0, 48);
  const auto r = ivf::compute_metrics(scene.ir, scene.vis, ivf::fuse(ivf::init_model(2), scene.ir, scene.vis));
  EXPECT_GE(r.en, 0.0);
  EXPECT_LE(r.en, 8.0);
  EXPECT_GE(r.mi, 0.0);
  EXPECT_GE(r.vif, 0.0);
  EXPECT_GE(r.qabf, 0.0);
  EXPECT_LE(r.qabf, 1.0);
  EXPECT_GE(r.ssim_mean, -1.0);
  EXPECT_LE(r.ssim_mean, 1.0);
}

}  // namespace
