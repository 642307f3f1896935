// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any failure.
#include "commands.hpp"

#include "ivf/config.hpp"
#include "ivf/gradcheck_suite.hpp"
#include "ivf/io.hpp"
#include "ivf/losses.hpp"
#include "ivf/metrics.hpp"
#include "ivf/model.hpp"
#include "ivf/pairing.hpp"
#include "ivf/synth.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include <unistd.h>

namespace {

namespace fs = std::filesystem;
using ivf::Image;
using ivf::Paradigm;
using ivf::Raster;

struct Outcome {
  bool pass;
  std::string detail;
};

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Image random_image(std::size_t side, std::mt19937_64& gen) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Raster r(side, side);
  for (Eigen::Index i = 0; i < r.size(); ++i) r.data()[i] = u(gen);
  return Image(r);
}

Outcome pair_count_law() {
  const std::vector<std::tuple<Paradigm, std::uint64_t, std::uint64_t>> table = {
      {Paradigm::kAptp, 15, 225},     {Paradigm::kAptp, 30, 900},     {Paradigm::kAptp, 60, 3600},
      {Paradigm::kAptp, 150, 22500},  {Paradigm::kUptp, 150, 22350}, {Paradigm::kSptp, 150, 150}};
  for (const auto& [p, n, want] : table) {
    const auto got = ivf::universe_size(p, n);
    if (got != want) return {false, ivf::to_string(p) + " n=" + std::to_string(n) + " gave " + std::to_string(got)};
  }
  return {true, "6 table entries exact"};
}

Outcome set_algebra() {
  for (std::uint32_t n = 2; n <= 12; ++n) {
    const auto s = ivf::enumerate_plan(Paradigm::kSptp, n, 1).pairs;
    const auto u = ivf::enumerate_plan(Paradigm::kUptp, n, 2).pairs;
    const auto a = ivf::enumerate_plan(Paradigm::kAptp, n, 3).pairs;
    std::set<ivf::IndexPair> ss(s.begin(), s.end()), us(u.begin(), u.end()), as(a.begin(), a.end());
    for (const auto& p : ss)
      if (us.count(p)) return {false, "overlap at n=" + std::to_string(n)};
    std::set<ivf::IndexPair> uni = ss;
    uni.insert(us.begin(), us.end());
    if (uni != as) return {false, "union mismatch at n=" + std::to_string(n)};
  }
  return {true, "n=2..12 disjoint, union exact"};
}

Outcome paired_ratio() {
  std::string detail;
  for (std::uint32_t n : {15u, 150u}) {
    const auto r = ivf::plan_stats(ivf::enumerate_plan(Paradigm::kAptp, n, 1)).ratio();
    if (r != "1:" + std::to_string(n - 1)) return {false, "n=" + std::to_string(n) + " gave " + r};
    detail += (detail.empty() ? "" : ", ") + r;
  }
  return {true, detail};
}

Outcome gradient_fidelity() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto reports = ivf::run_gradcheck_suite();
  const double elapsed = seconds_since(t0);
  double worst = 0;
  for (const auto& r : reports) {
    if (!r.passed) return {false, r.name + " error " + fmt(r.max_rel_error)};
    worst = std::max(worst, r.max_rel_error);
  }
  if (elapsed >= 30) return {false, "took " + fmt(elapsed) + " s"};
  return {true, std::to_string(reports.size()) + " checks, worst " + fmt(worst) + ", " + fmt(elapsed) + " s"};
}

Outcome loss_zero_points() {
  const auto scene = ivf::render_scene(11, 0, 32);
  const ivf::LossConfig cfg;
  const auto w = ivf::pixel_weights(scene.ir, scene.vis, cfg.epsilon);
  const Image target(Raster(w.w_a * scene.ir.pixels() + w.w_b * scene.vis.pixels()));
  ivf::Graph g;
  const double l_int =
      g.value(ivf::loss_int(g, g.constant(ivf::Tensor::from_image(target)), scene.ir, scene.vis, cfg)).item();
  ivf::Graph h;
  const auto nodes = ivf::total_loss(h, h.constant(ivf::Tensor::from_image(scene.vis)), scene.vis, scene.vis, cfg);
  const double total = h.value(nodes.total).item();
  const bool ok = std::abs(l_int) < 1e-12 && total < 1e-6;
  return {ok, "L_int " + fmt(l_int) + ", total " + fmt(total)};
}

Outcome weighting() {
  const double eps = 1e-8;
  std::vector<double> grid = {0.0};
  for (int k = -10; k <= 3; ++k) grid.push_back(std::pow(10.0, k));
  // The sum is t / (t + eps) for t = a + b: at least 1 - eps / t, which
  // reaches 1 - 1e-6 once t >= 1e6 eps.
  double worst_bound_gap = 0;
  double worst_sum = 2;
  std::size_t checked = 0;
  for (double a : grid)
    for (double b : grid) {
      const double t = a + b;
      if (t < 100 * eps) continue;
      const auto w = ivf::weight(Raster::Constant(1, 1, a), Raster::Constant(1, 1, b), eps);
      const double sum = w.w_a(0, 0) + w.w_b(0, 0);
      worst_bound_gap = std::max(worst_bound_gap, (1 - eps / t) - sum);
      if (t >= 1e6 * eps) worst_sum = std::min(worst_sum, sum);
      ++checked;
    }
  std::mt19937_64 gen(5);
  std::uniform_real_distribution<double> u(0.01, 1.0);
  Raster a(16, 16), b(16, 16);
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    a.data()[i] = u(gen);
    b.data()[i] = u(gen);
  }
  const auto base = ivf::weight(a, b, 0.0);
  double worst_ratio = 0;
  for (double c : {0.5, 2.0, 10.0}) {
    const auto s = ivf::weight(c * a, c * b, 0.0);
    worst_ratio = std::max({worst_ratio, (s.w_a - base.w_a).abs().maxCoeff(), (s.w_b - base.w_b).abs().maxCoeff()});
  }
  const bool ok = worst_bound_gap <= 1e-15 && worst_sum >= 1 - 1e-6 && worst_ratio <= 1e-9;
  return {ok, std::to_string(checked) + " grid points, sum >= 1 - eps/(a+b) everywhere, min sum at a+b >= 1e6 eps " +
                  fmt(worst_sum) + ", ratio drift " + fmt(worst_ratio)};
}

Outcome metric_fixed_points() {
  std::mt19937_64 gen(21);
  const Image x = random_image(48, gen);
  Raster uniform(16, 16);
  for (int k = 0; k < 256; ++k) uniform.data()[k] = k / 255.0;
  const Image y = random_image(48, gen);
  std::vector<std::string> bad;
  if (ivf::entropy(Image(16, 16, 0.4)) != 0) bad.push_back("entropy(constant)");
  if (std::abs(ivf::entropy(Image(uniform)) - 8) > 1e-9) bad.push_back("entropy(uniform)");
  if (std::abs(ivf::mutual_information(x, x) - ivf::entropy(x)) > 1e-9) bad.push_back("MI(x,x)");
  if (std::abs(ivf::mutual_information(x, y) - ivf::mutual_information(y, x)) >= 1e-9) bad.push_back("MI symmetry");
  if (ivf::ssim_metric(x, x, x).ssim_mean != 1.0) bad.push_back("ssim");
  const auto scene = ivf::render_scene(21, 0, 64);
  const double v = ivf::vif_fusion(scene.vis, scene.vis, scene.vis);
  if (std::abs(v - 1) > 1e-6) bad.push_back("vif " + fmt(v));
  double qmin = 1, qmax = 0;
  for (int k = 0; k < 100; ++k) {
    const std::size_t side = 8 + gen() % 40;
    const Image ir = random_image(side, gen);
    const Image vis = k % 5 == 0 ? Image(side, side, 0.3) : random_image(side, gen);
    const Image o = k % 3 == 0 ? ir : random_image(side, gen);
    const double q = ivf::qabf(ir, vis, o);
    qmin = std::min(qmin, q);
    qmax = std::max(qmax, q);
  }
  if (qmin < 0 || qmax > 1) bad.push_back("qabf range");
  if (!bad.empty()) {
    std::string d;
    for (const auto& b : bad) d += (d.empty() ? "" : ", ") + b;
    return {false, d};
  }
  return {true, "all fixed points hold, qabf in [" + fmt(qmin) + ", " + fmt(qmax) + "]"};
}

// Shared setup for the two training comparisons: seed-1 training corpus,
// held-out aligned pairs from a disjoint index range.
struct Lab {
  ivf::Corpus train = ivf::make_corpus(1, 32, 64);
  std::vector<ivf::ImagePair> held_out = ivf::make_corpus(2, 4, 64, 1000).aligned_pairs();
  ivf::TrainConfig cfg = [] {
    ivf::ExperimentConfig e;
    e.seed = 1;
    e.iterations = 500;
    return e.train_config();
  }();

  struct Run {
    double smoothed;
    double ssim;
  };

  Run run(Paradigm p, std::uint32_t base, std::uint64_t k) const {
    const auto plan = ivf::sample_plan(p, base, k, cfg.seed, train.ir_manifest.id);
    ivf::TrainState st{ivf::init_model(cfg.seed), {}};
    const auto rec = ivf::train(cfg, plan, train.ir, train.vis, held_out, st);
    return {ivf::smoothed_tail(rec, 50), rec.evals.back().metrics.ssim_mean};
  }
};

Outcome paradigm_parity(const Lab& lab) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto s = lab.run(Paradigm::kSptp, 32, 32);
  const auto u = lab.run(Paradigm::kUptp, 32, 32);
  const double rel = std::abs(s.smoothed - u.smoothed) / std::min(s.smoothed, u.smoothed);
  const double dssim = std::abs(s.ssim - u.ssim);
  const double elapsed = seconds_since(t0);
  const bool ok = rel <= 0.10 && dssim <= 0.08 && elapsed < 900;
  return {ok, "loss sptp " + fmt(s.smoothed) + " uptp " + fmt(u.smoothed) + " (" + fmt(100 * rel) + "%), ssim " +
                  fmt(s.ssim) + " vs " + fmt(u.ssim) + ", " + fmt(elapsed) + " s"};
}

Outcome expansion_benefit(const Lab& lab) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto s = lab.run(Paradigm::kSptp, 8, 8);
  const auto a = lab.run(Paradigm::kAptp, 8, 64);
  const double elapsed = seconds_since(t0);
  const bool ok = a.ssim >= s.ssim - 0.02 && elapsed < 600;
  return {ok, "ssim aptp-64 " + fmt(a.ssim) + " vs sptp-8 " + fmt(s.ssim) + ", " + fmt(elapsed) + " s"};
}

std::map<std::string, std::string> pipeline_outputs(const fs::path& dir) {
  fs::remove_all(dir);
  fs::create_directories(dir);
  const auto p = [&](const std::string& rel) { return (dir / rel).string(); };
  ivf::write_file_atomic(p("run.cfg"),
                         "paradigm=aptp\nseed=5\niterations=60\neval_every=20\ntrainable_pairs=40\n"
                         "ir_manifest=train/ir.manifest\nvis_manifest=train/vis.manifest\n"
                         "eval_ir_manifest=test/ir.manifest\neval_vis_manifest=test/vis.manifest\n");
  const std::vector<std::vector<std::string>> steps = {
      {"--config", p("run.cfg"), "synth", "--out", p("train"), "--n", "8", "--size", "48"},
      {"--config", p("run.cfg"), "synth", "--out", p("test"), "--n", "2", "--size", "48", "--first-index", "500"},
      {"--config", p("run.cfg"), "pairs", "--out", p("plan.txt")},
      {"--config", p("run.cfg"), "train", "--plan", p("plan.txt"), "--out", p("run")},
      {"--config", p("run.cfg"), "eval", "--checkpoint", p("run/model.ivck"), "--out", p("metrics.csv")},
  };
  for (const auto& args : steps) {
    std::ostringstream out, err;
    if (ivf::cli::run(args, out, err) != 0) throw std::runtime_error(args[2] + " failed: " + err.str());
  }
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) files[fs::relative(e.path(), dir).string()] = ivf::read_file_text(e.path().string());
  }
  return files;
}

Outcome end_to_end_determinism() {
  const fs::path root = fs::temp_directory_path() / ("ivfuse_accept_" + std::to_string(::getpid()));
  const auto a = pipeline_outputs(root / "one");
  const auto b = pipeline_outputs(root / "two");
  fs::remove_all(root);
  if (a.size() != b.size()) return {false, "file sets differ"};
  for (const auto& [name, bytes] : a) {
    const auto it = b.find(name);
    if (it == b.end() || it->second != bytes) return {false, name + " differs"};
  }
  return {true, std::to_string(a.size()) + " files byte-identical"};
}

}  // namespace

int main() {
  const Lab lab;
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"pair-count law", pair_count_law},
      {"set algebra", set_algebra},
      {"paired/unpaired ratio", paired_ratio},
      {"gradient fidelity", gradient_fidelity},
      {"loss zero-points", loss_zero_points},
      {"weighting normalization and ratio invariance", weighting},
      {"metric fixed points", metric_fixed_points},
      {"paradigm parity", [&] { return paradigm_parity(lab); }},
      {"expansion benefit", [&] { return expansion_benefit(lab); }},
      {"end-to-end determinism", end_to_end_determinism},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += o.pass ? 0 : 1;
    std::cout << (o.pass ? "PASS" : "FAIL") << " " << i + 1 << " " << criteria[i].first << ": " << o.detail
              << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
