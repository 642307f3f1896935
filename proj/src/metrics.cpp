#include "ivf/metrics.hpp"

#include "ivf/model.hpp"
#include "ivf/parallel.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace ivf {

namespace {

void require_same_shape(const Image& a, const Image& b, const char* what) {
  if (a.width() != b.width() || a.height() != b.height()) {
    throw SizeError(std::string(what) + ": image shapes differ");
  }
}

}  // namespace

double entropy(const Image& img) {
  const auto h = histogram256(img);
  const double total = static_cast<double>(h.total);
  double e = 0.0;
  for (auto c : h.bins) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / total;
    e -= p * std::log2(p);
  }
  return e;
}

double mutual_information(const Image& a, const Image& b) {
  require_same_shape(a, b, "mutual_information");
  std::vector<std::uint64_t> joint(256 * 256, 0);
  std::array<std::uint64_t, 256> ma{};
  std::array<std::uint64_t, 256> mb{};
  const auto da = a.data();
  const auto db = b.data();
  for (std::size_t i = 0; i < da.size(); ++i) {
    const int ba = intensity_bin(da[i]);
    const int bb = intensity_bin(db[i]);
    ++joint[static_cast<std::size_t>(ba * 256 + bb)];
    ++ma[static_cast<std::size_t>(ba)];
    ++mb[static_cast<std::size_t>(bb)];
  }
  const double n = static_cast<double>(da.size());
  double mi = 0.0;
  for (int i = 0; i < 256; ++i) {
    if (ma[i] == 0) continue;
    const double pa = static_cast<double>(ma[i]) / n;
    for (int j = 0; j < 256; ++j) {
      const auto c = joint[static_cast<std::size_t>(i * 256 + j)];
      if (c == 0) continue;
      const double pab = static_cast<double>(c) / n;
      const double pb = static_cast<double>(mb[j]) / n;
      mi += pab * std::log2(pab / (pa * pb));
    }
  }
  // rounding can leave a tiny negative value for independent inputs
  return std::max(mi, 0.0);
}

double mi_fusion(const Image& ir, const Image& vis, const Image& fused) {
  return mutual_information(ir, fused) + mutual_information(vis, fused);
}

SsimScores ssim_metric(const Image& ir, const Image& vis, const Image& fused, const LossConfig& cfg) {
  require_same_shape(ir, fused, "ssim_metric");
  require_same_shape(vis, fused, "ssim_metric");
  SsimScores s;
  s.ssim_ir = ssim_value(ir.pixels(), fused.pixels(), cfg);
  s.ssim_vis = ssim_value(vis.pixels(), fused.pixels(), cfg);
  s.ssim_mean = (s.ssim_ir + s.ssim_vis) / 2.0;
  return s;
}

double qabf(const Image& ir, const Image& vis, const Image& fused, const QabfParams& p) {
  require_same_shape(ir, fused, "qabf");
  require_same_shape(vis, fused, "qabf");
  struct Edges {
    Raster strength;
    Raster orientation;
  };
  auto edges = [](const Image& img) {
    const auto [gx, gy] = sobel_components(img.pixels());
    Edges e{(gx * gx + gy * gy).sqrt(), Raster(gx.rows(), gx.cols())};
    for (Eigen::Index i = 0; i < gx.size(); ++i) {
      const double x = gx.data()[i];
      e.orientation.data()[i] = x == 0.0 ? std::numbers::pi / 2 : std::atan(gy.data()[i] / x);
    }
    return e;
  };
  const Edges a = edges(ir);
  const Edges b = edges(vis);
  const Edges f = edges(fused);

  auto preservation = [&](const Edges& s, Eigen::Index i) {
    const double gs = s.strength.data()[i];
    const double gf = f.strength.data()[i];
    const double rel_g = gs > gf ? gf / gs : (gs < gf ? gs / gf : 1.0);
    const double rel_a = 1.0 - std::abs(s.orientation.data()[i] - f.orientation.data()[i]) / (std::numbers::pi / 2);
    const double qg = p.gamma_g / (1.0 + std::exp(p.kappa_g * (rel_g - p.sigma_g)));
    const double qa = p.gamma_a / (1.0 + std::exp(p.kappa_a * (rel_a - p.sigma_a)));
    return qg * qa;
  };

  double num = 0.0;
  double den = 0.0;
  for (Eigen::Index i = 0; i < f.strength.size(); ++i) {
    const double wa = std::pow(a.strength.data()[i], p.weight_exponent);
    const double wb = std::pow(b.strength.data()[i], p.weight_exponent);
    if (wa + wb == 0.0) continue;
    num += preservation(a, i) * wa + preservation(b, i) * wb;
    den += wa + wb;
  }
  return den > 0.0 ? num / den : 0.0;
}

// Pixel-domain VIF. Intensities are rescaled to [0, 255] so the noise
// variance and the variance floors keep their customary 8-bit values
// (sigma_n^2 = 2 on that range, i.e. 2 / 255^2 on [0, 1]).
double vif(const Image& reference, const Image& distorted) {
  require_same_shape(reference, distorted, "vif");
  if (reference.width() < 32 || reference.height() < 32) throw SizeError("vif requires at least 32x32 images");
  constexpr double kNoiseVar = 2.0;
  constexpr double kFloor = 1e-10;
  constexpr int kWindows[4] = {11, 9, 7, 5};

  Raster ref = reference.pixels() * 255.0;
  Raster dist = distorted.pixels() * 255.0;
  double num = 0.0;
  double den = 0.0;
  for (int scale = 0; scale < 4; ++scale) {
    const int n = kWindows[scale];
    const Raster win = gaussian_window(n, n / 5.0);
    if (scale > 0) {
      const Raster rs = correlate_replicate(ref, win);
      const Raster ds = correlate_replicate(dist, win);
      const Eigen::Index h = (rs.rows() + 1) / 2;
      const Eigen::Index w = (rs.cols() + 1) / 2;
      ref.resize(h, w);
      dist.resize(h, w);
      for (Eigen::Index y = 0; y < h; ++y) {
        for (Eigen::Index x = 0; x < w; ++x) {
          ref(y, x) = rs(2 * y, 2 * x);
          dist(y, x) = ds(2 * y, 2 * x);
        }
      }
    }
    const Raster mu1 = correlate_replicate(ref, win);
    const Raster mu2 = correlate_replicate(dist, win);
    const Raster s1_raw = correlate_replicate(Raster(ref * ref), win) - mu1 * mu1;
    const Raster s2_raw = correlate_replicate(Raster(dist * dist), win) - mu2 * mu2;
    const Raster s12 = correlate_replicate(Raster(ref * dist), win) - mu1 * mu2;
    for (Eigen::Index i = 0; i < mu1.size(); ++i) {
      double s1 = std::max(s1_raw.data()[i], 0.0);
      const double s2 = std::max(s2_raw.data()[i], 0.0);
      double g = s12.data()[i] / (s1 + kFloor);
      double sv = s2 - g * s12.data()[i];
      if (s1 < kFloor) {
        g = 0.0;
        sv = s2;
        s1 = 0.0;
      }
      if (s2 < kFloor) {
        g = 0.0;
        sv = 0.0;
      }
      if (g < 0.0) {
        sv = s2;
        g = 0.0;
      }
      if (sv <= kFloor) sv = kFloor;
      num += std::log10(1.0 + g * g * s1 / (sv + kNoiseVar));
      den += std::log10(1.0 + s1 / kNoiseVar);
    }
  }
  return den > 0.0 ? num / den : 0.0;
}

double vif_fusion(const Image& ir, const Image& vis, const Image& fused) {
  return (vif(ir, fused) + vif(vis, fused)) / 2.0;
}

MetricRow compute_metrics(const Image& ir, const Image& vis, const Image& fused, const LossConfig& cfg) {
  MetricRow r;
  r.en = entropy(fused);
  r.mi = mi_fusion(ir, vis, fused);
  r.vif = vif_fusion(ir, vis, fused);
  r.qabf = qabf(ir, vis, fused);
  const auto s = ssim_metric(ir, vis, fused, cfg);
  r.ssim_ir = s.ssim_ir;
  r.ssim_vis = s.ssim_vis;
  r.ssim_mean = s.ssim_mean;
  return r;
}

MetricRow mean_row(std::span<const MetricRow> rows) {
  if (rows.empty()) throw std::invalid_argument("cannot average an empty metric set");
  MetricRow m;
  m.pair_id = "mean";
  for (const auto& r : rows) {
    m.en += r.en;
    m.mi += r.mi;
    m.vif += r.vif;
    m.qabf += r.qabf;
    m.ssim_ir += r.ssim_ir;
    m.ssim_vis += r.ssim_vis;
    m.ssim_mean += r.ssim_mean;
  }
  const double n = static_cast<double>(rows.size());
  m.en /= n;
  m.mi /= n;
  m.vif /= n;
  m.qabf /= n;
  m.ssim_ir /= n;
  m.ssim_vis /= n;
  m.ssim_mean /= n;
  return m;
}

MetricReport evaluate_set(const ModelParams& model, std::span<const ImagePair> pairs, const LossConfig& cfg,
                          unsigned threads) {
  if (pairs.empty()) throw std::invalid_argument("evaluation set is empty");
  MetricReport rep;
  rep.rows.resize(pairs.size());
  parallel_for(pairs.size(), threads, [&](std::size_t i) {
    const Image fused = fuse(model, pairs[i].ir, pairs[i].vis);
    rep.rows[i] = compute_metrics(pairs[i].ir, pairs[i].vis, fused, cfg);
    rep.rows[i].pair_id = pairs[i].id;
  });
  rep.mean = mean_row(rep.rows);
  return rep;
}

std::string metric_csv_fields(const MetricRow& r) {
  return format_double(r.en) + ',' + format_double(r.mi) + ',' + format_double(r.vif) + ',' + format_double(r.qabf) +
         ',' + format_double(r.ssim_ir) + ',' + format_double(r.ssim_vis) + ',' + format_double(r.ssim_mean);
}

std::string format_metric_csv(const MetricReport& report) {
  std::string out = std::string(kMetricCsvHeader) + '\n';
  for (const auto& r : report.rows) out += r.pair_id + ',' + metric_csv_fields(r) + '\n';
  out += "mean," + metric_csv_fields(report.mean) + '\n';
  return out;
}

}  // namespace ivf
