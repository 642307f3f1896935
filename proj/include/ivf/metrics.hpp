#pragma once

#include "ivf/image.hpp"
#include "ivf/losses.hpp"

#include <span>
#include <string>
#include <utility>
#include <vector>

namespace ivf {

struct ModelParams;

/// Shannon entropy of the 256-bin histogram, in bits.
double entropy(const Image& img);

/// Mutual information from the 256 x 256 joint histogram, in bits.
double mutual_information(const Image& a, const Image& b);

/// MI(ir, fused) + MI(vis, fused).
double mi_fusion(const Image& ir, const Image& vis, const Image& fused);

struct SsimScores {
  double ssim_ir = 0;
  double ssim_vis = 0;
  double ssim_mean = 0;
};

/// SSIM of each source against the fused image, using the loss definition.
SsimScores ssim_metric(const Image& ir, const Image& vis, const Image& fused, const LossConfig& cfg = {});

/// Edge-preservation constants of the Q^{AB/F} index.
struct QabfParams {
  double gamma_g = 0.9994;
  double kappa_g = -15.0;
  double sigma_g = 0.5;
  double gamma_a = 0.9879;
  double kappa_a = -22.0;
  double sigma_a = 0.8;
  double weight_exponent = 1.0;
};

/// Xydeas-Petrovic edge-preservation index in [0, 1]; 0 when no source has edges.
double qabf(const Image& ir, const Image& vis, const Image& fused, const QabfParams& p = {});

/// Pixel-domain VIF of a distorted image against a reference (4 scales).
double vif(const Image& reference, const Image& distorted);
/// Mean of VIF(ir, fused) and VIF(vis, fused). Images must be at least 32 x 32.
double vif_fusion(const Image& ir, const Image& vis, const Image& fused);

struct MetricRow {
  std::string pair_id;
  double en = 0;
  double mi = 0;
  double vif = 0;
  double qabf = 0;
  double ssim_ir = 0;
  double ssim_vis = 0;
  double ssim_mean = 0;
};

struct MetricReport {
  std::vector<MetricRow> rows;
  MetricRow mean;
};

struct ImagePair {
  std::string id;
  Image ir;
  Image vis;
};

MetricRow compute_metrics(const Image& ir, const Image& vis, const Image& fused, const LossConfig& cfg = {});

/// Arithmetic mean over rows in order; pair_id of the result is "mean".
MetricRow mean_row(std::span<const MetricRow> rows);

/// Fuses each aligned test pair with the model and scores it.
MetricReport evaluate_set(const ModelParams& model, std::span<const ImagePair> pairs, const LossConfig& cfg = {},
                          unsigned threads = 1);

inline constexpr const char* kMetricCsvHeader = "pair_id,en,mi,vif,qabf,ssim_ir,ssim_vis,ssim_mean";
inline constexpr const char* kEvalCsvHeader = "iter,en,mi,vif,qabf,ssim_ir,ssim_vis,ssim_mean";

/// Metric values after the leading id column.
std::string metric_csv_fields(const MetricRow& r);
/// Header, one row per pair, then the `mean` row.
std::string format_metric_csv(const MetricReport& report);

}  // namespace ivf
