#pragma once

#include "ivf/autodiff.hpp"
#include "ivf/image.hpp"

#include <string>

namespace ivf {

struct LossConfig {
  double alpha = 1.0;    ///< weight of the gradient term
  double beta = 0.2;     ///< weight of the structural term
  double epsilon = 1e-8; ///< stabilizer in the weighting denominator
  bool detach_ssim_weights = true;
  int ssim_window = 11;
  double ssim_sigma = 1.5;
  double ssim_c1 = 0.01 * 0.01;
  double ssim_c2 = 0.03 * 0.03;

  /// Throws std::invalid_argument on out-of-range fields.
  void validate() const;
};

/// Per-pixel convex weights of two sources.
struct WeightPair {
  Raster w_a;
  Raster w_b;
};

/// w_a = a / (a + b + eps), w_b = b / (a + b + eps). Entries must be >= 0.
WeightPair weight(const Raster& a, const Raster& b, double epsilon);

/// Weights from raw intensities.
WeightPair pixel_weights(const Image& ir, const Image& vis, double epsilon = 1e-8);
/// Weights from Sobel gradient magnitudes.
WeightPair gradient_weights(const Image& ir, const Image& vis, double epsilon = 1e-8);

/// Mean SSIM of two [1, H, W] nodes over all valid window positions,
/// built from differentiable primitives. Unclamped.
NodeId ssim_graph(Graph& g, NodeId x, NodeId y, const LossConfig& cfg);

/// Same definition and arithmetic order as ssim_graph, outside the graph.
/// The two agree bit-for-bit.
double ssim_value(const Raster& x, const Raster& y, const LossConfig& cfg);

NodeId loss_int(Graph& g, NodeId fused, const Image& ir, const Image& vis, const LossConfig& cfg);
NodeId loss_grad(Graph& g, NodeId fused, const Image& ir, const Image& vis, const LossConfig& cfg);
NodeId loss_ssim(Graph& g, NodeId fused, const Image& ir, const Image& vis, const LossConfig& cfg);

struct LossNodes {
  NodeId l_int;
  NodeId l_grad;
  NodeId l_ssim;
  NodeId total;
};

struct LossBreakdown {
  double l_int = 0;
  double l_grad = 0;
  double l_ssim = 0;
  double total = 0;
};

/// total = l_int + alpha * l_grad + beta * l_ssim as graph nodes.
LossNodes total_loss(Graph& g, NodeId fused, const Image& ir, const Image& vis, const LossConfig& cfg);
LossBreakdown extract_breakdown(const Graph& g, const LossNodes& nodes);

inline constexpr const char* kLossCsvHeader = "iter,l_int,l_grad,l_ssim,total";
std::string loss_csv_row(std::size_t iteration, const LossBreakdown& b);

/// Shortest round-trip decimal form of a double.
std::string format_double(double v);

}  // namespace ivf
