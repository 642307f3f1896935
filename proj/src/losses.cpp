#include "ivf/losses.hpp"

#include <charconv>
#include <stdexcept>

namespace ivf {

void LossConfig::validate() const {
  if (!(alpha >= 0.0) || !(beta >= 0.0)) throw std::invalid_argument("alpha and beta must be >= 0");
  if (!(epsilon > 0.0)) throw std::invalid_argument("epsilon must be > 0");
  if (ssim_window < 3 || ssim_window % 2 == 0) throw std::invalid_argument("ssim_window must be odd and >= 3");
  if (!(ssim_sigma > 0.0)) throw std::invalid_argument("ssim_sigma must be > 0");
  if (!(ssim_c1 > 0.0) || !(ssim_c2 > 0.0)) throw std::invalid_argument("ssim constants must be > 0");
}

WeightPair weight(const Raster& a, const Raster& b, double epsilon) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeError("weight: shape mismatch");
  if (!(epsilon >= 0.0)) throw std::invalid_argument("weight: epsilon must be >= 0");
  if ((a < 0).any() || (b < 0).any()) throw std::domain_error("weight: inputs must be non-negative");
  const Raster denom = a + b + epsilon;
  return {a / denom, b / denom};
}

WeightPair pixel_weights(const Image& ir, const Image& vis, double epsilon) {
  return weight(ir.pixels(), vis.pixels(), epsilon);
}

WeightPair gradient_weights(const Image& ir, const Image& vis, double epsilon) {
  if (ir.width() != vis.width() || ir.height() != vis.height()) throw ShapeError("gradient_weights: shape mismatch");
  return weight(sobel_gradient(ir).values, sobel_gradient(vis).values, epsilon);
}

// The SSIM map is
//   ((2 mx my + C1)(2 cxy + C2)) / ((mx^2 + my^2 + C1)(vx + vy + C2))
// with Gaussian-weighted local moments over valid window positions.
NodeId ssim_graph(Graph& g, NodeId x, NodeId y, const LossConfig& cfg) {
  if (g.value(x).shape != g.value(y).shape) throw ShapeError("ssim: shape mismatch");
  const Raster win = gaussian_window(cfg.ssim_window, cfg.ssim_sigma);
  const NodeId mx = g.window_filter(x, win);
  const NodeId my = g.window_filter(y, win);
  const NodeId exx = g.window_filter(g.mul(x, x), win);
  const NodeId eyy = g.window_filter(g.mul(y, y), win);
  const NodeId exy = g.window_filter(g.mul(x, y), win);
  const NodeId mx2 = g.mul(mx, mx);
  const NodeId my2 = g.mul(my, my);
  const NodeId mxy = g.mul(mx, my);
  const NodeId vx = g.sub(exx, mx2);
  const NodeId vy = g.sub(eyy, my2);
  const NodeId cxy = g.sub(exy, mxy);
  const NodeId num = g.mul(g.add_const(g.scale(mxy, 2.0), cfg.ssim_c1), g.add_const(g.scale(cxy, 2.0), cfg.ssim_c2));
  const NodeId den = g.mul(g.add_const(g.add(mx2, my2), cfg.ssim_c1), g.add_const(g.add(vx, vy), cfg.ssim_c2));
  return g.reduce_mean(g.div_eps(num, den, 0.0));
}

double ssim_value(const Raster& x, const Raster& y, const LossConfig& cfg) {
  if (x.rows() != y.rows() || x.cols() != y.cols()) throw ShapeError("ssim: shape mismatch");
  const Raster win = gaussian_window(cfg.ssim_window, cfg.ssim_sigma);
  const Raster mx = correlate_valid(x, win);
  const Raster my = correlate_valid(y, win);
  const Raster exx = correlate_valid(Raster(x * x), win);
  const Raster eyy = correlate_valid(Raster(y * y), win);
  const Raster exy = correlate_valid(Raster(x * y), win);
  const Raster mx2 = mx * mx;
  const Raster my2 = my * my;
  const Raster mxy = mx * my;
  const Raster vx = exx - mx2;
  const Raster vy = eyy - my2;
  const Raster cxy = exy - mxy;
  const Raster num = (2.0 * mxy + cfg.ssim_c1) * (2.0 * cxy + cfg.ssim_c2);
  const Raster den = ((mx2 + my2) + cfg.ssim_c1) * ((vx + vy) + cfg.ssim_c2);
  return ordered_mean(Raster(num / (den + 0.0)));
}

namespace {

void require_same_dims(const Graph& g, NodeId fused, const Image& ir, const Image& vis) {
  const Tensor& o = g.value(fused);
  if (ir.width() != vis.width() || ir.height() != vis.height() || o.shape != Shape{1, ir.height(), ir.width()}) {
    throw ShapeError("loss: fused " + shape_string(o.shape) + " and sources must share one [1, H, W] shape");
  }
}

}  // namespace

NodeId loss_int(Graph& g, NodeId fused, const Image& ir, const Image& vis, const LossConfig& cfg) {
  require_same_dims(g, fused, ir, vis);
  const auto p = pixel_weights(ir, vis, cfg.epsilon);
  const Raster target = p.w_a * ir.pixels() + p.w_b * vis.pixels();
  return g.reduce_mean_abs(g.sub(fused, g.constant(Tensor::from_raster(target))));
}

NodeId loss_grad(Graph& g, NodeId fused, const Image& ir, const Image& vis, const LossConfig& cfg) {
  require_same_dims(g, fused, ir, vis);
  const GradientMap gi = sobel_gradient(ir);
  const GradientMap gv = sobel_gradient(vis);
  const auto w = weight(gi.values, gv.values, cfg.epsilon);
  const Raster target = w.w_a * gi.values + w.w_b * gv.values;

  const NodeId kx = g.constant(Tensor({1, 1, 3, 3}, Eigen::Map<const Eigen::ArrayXd>(sobel_kernel_x().data(), 9)));
  const NodeId ky = g.constant(Tensor({1, 1, 3, 3}, Eigen::Map<const Eigen::ArrayXd>(sobel_kernel_y().data(), 9)));
  const NodeId zero = g.constant(Tensor::zeros({1}));
  const NodeId mag = g.hypot(g.conv2d(fused, kx, zero), g.conv2d(fused, ky, zero));
  return g.reduce_mean_abs(g.sub(mag, g.constant(Tensor::from_raster(target))));
}

NodeId loss_ssim(Graph& g, NodeId fused, const Image& ir, const Image& vis, const LossConfig& cfg) {
  require_same_dims(g, fused, ir, vis);
  const NodeId s_ir = ssim_graph(g, g.constant(Tensor::from_image(ir)), fused, cfg);
  const NodeId s_vis = ssim_graph(g, g.constant(Tensor::from_image(vis)), fused, cfg);
  NodeId c_ir = g.clamp(s_ir, 0.0, 1.0);
  NodeId c_vis = g.clamp(s_vis, 0.0, 1.0);
  if (cfg.detach_ssim_weights) {
    c_ir = g.stop_gradient(c_ir);
    c_vis = g.stop_gradient(c_vis);
  }
  const NodeId denom = g.add(c_ir, c_vis);
  const NodeId w_ir = g.div_eps(c_ir, denom, cfg.epsilon);
  const NodeId w_vis = g.div_eps(c_vis, denom, cfg.epsilon);
  const NodeId combined = g.add(g.mul(w_ir, s_ir), g.mul(w_vis, s_vis));
  return g.abs(g.add_const(g.scale(combined, -1.0), 1.0));
}

LossNodes total_loss(Graph& g, NodeId fused, const Image& ir, const Image& vis, const LossConfig& cfg) {
  cfg.validate();
  LossNodes n{};
  n.l_int = loss_int(g, fused, ir, vis, cfg);
  n.l_grad = loss_grad(g, fused, ir, vis, cfg);
  n.l_ssim = loss_ssim(g, fused, ir, vis, cfg);
  n.total = g.add(g.add(n.l_int, g.scale(n.l_grad, cfg.alpha)), g.scale(n.l_ssim, cfg.beta));
  return n;
}

LossBreakdown extract_breakdown(const Graph& g, const LossNodes& n) {
  return {g.value(n.l_int).item(), g.value(n.l_grad).item(), g.value(n.l_ssim).item(), g.value(n.total).item()};
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string loss_csv_row(std::size_t iteration, const LossBreakdown& b) {
  return std::to_string(iteration) + ',' + format_double(b.l_int) + ',' + format_double(b.l_grad) + ',' +
         format_double(b.l_ssim) + ',' + format_double(b.total);
}

}  // namespace ivf
