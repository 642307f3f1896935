#include "ivf/gradcheck_suite.hpp"

#include "ivf/losses.hpp"
#include "ivf/model.hpp"
#include "ivf/rng.hpp"

#include <algorithm>
#include <cstdio>

namespace ivf {

namespace {

constexpr std::size_t kSide = 8;

Tensor random_tensor(Rng& rng, Shape shape, double lo, double hi) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (Eigen::Index i = 0; i < t.data.size(); ++i) t.data[i] = rng.uniform(lo, hi);
  return t;
}

Image random_image(Rng& rng) {
  Raster r(kSide, kSide);
  for (Eigen::Index i = 0; i < r.size(); ++i) r.data()[i] = rng.uniform(0.05, 0.95);
  return Image(r);
}

// Scalarizes a node through a fixed random projection so every output entry
// contributes a distinct weight to the gradient.
NodeId project(Graph& g, NodeId x, const Tensor& weights) {
  return g.reduce_mean(g.mul(x, g.constant(weights)));
}

// conv2d with the correct forward value but a scaled input adjoint.
NodeId broken_conv(Graph& g, NodeId x, NodeId k, NodeId b) {
  Graph probe;
  const NodeId px = probe.constant(g.value(x));
  const NodeId out = probe.conv2d(px, probe.constant(g.value(k)), probe.constant(g.value(b)));
  const Tensor value = probe.value(out);
  const Tensor kernel = g.value(k);
  const Tensor bias = g.value(b);
  return g.custom("broken_conv2d", {x}, value, [kernel, bias](const Tensor& adj, std::span<const Tensor* const> ps) {
    Graph inner;
    const NodeId in = inner.input(*ps[0]);
    const NodeId o = inner.conv2d(in, inner.constant(kernel), inner.constant(bias));
    inner.backward(inner.reduce_mean(inner.mul(o, inner.constant(adj))));
    Tensor grad = inner.adjoint(in);
    grad.data *= static_cast<double>(adj.size()) * 1.05;
    return std::vector<Tensor>{grad};
  });
}

// Default loss with the SSIM weights frozen at the values they take for
// `base`. Its true gradient at `base` is what the detached backward computes.
NodeId frozen_weight_loss(Graph& g, NodeId o, const Tensor& base, const Image& ir, const Image& vis,
                          const LossConfig& cfg) {
  const Raster fused = base.channel(0);
  const double s_ir = std::clamp(ssim_value(ir.pixels(), fused, cfg), 0.0, 1.0);
  const double s_vis = std::clamp(ssim_value(vis.pixels(), fused, cfg), 0.0, 1.0);
  const double w_ir = s_ir / (s_ir + s_vis + cfg.epsilon);
  const double w_vis = s_vis / (s_ir + s_vis + cfg.epsilon);
  const NodeId a = g.scale(ssim_graph(g, g.constant(Tensor::from_image(ir)), o, cfg), w_ir);
  const NodeId b = g.scale(ssim_graph(g, g.constant(Tensor::from_image(vis)), o, cfg), w_vis);
  const NodeId l_ssim = g.abs(g.add_const(g.scale(g.add(a, b), -1.0), 1.0));
  const NodeId l_int = loss_int(g, o, ir, vis, cfg);
  const NodeId l_grad = loss_grad(g, o, ir, vis, cfg);
  return g.add(g.add(l_int, g.scale(l_grad, cfg.alpha)), g.scale(l_ssim, cfg.beta));
}

NodeId model_forward(Graph& g, const ModelParams& model, const std::string& name, NodeId leaf, const Image& ir,
                     const Image& vis) {
  NodeId x = g.concat_channels(g.constant(Tensor::from_image(ir)), g.constant(Tensor::from_image(vis)));
  const char* layers[] = {"conv1", "conv2", "conv3"};
  for (int l = 0; l < 3; ++l) {
    const std::string kn = std::string(layers[l]) + ".kernel";
    const std::string bn = std::string(layers[l]) + ".bias";
    const NodeId k = kn == name ? leaf : g.constant(model.at(kn).value);
    const NodeId b = bn == name ? leaf : g.constant(model.at(bn).value);
    x = g.conv2d(x, k, b);
    x = l < 2 ? g.leaky_relu(x) : g.sigmoid(x);
  }
  return x;
}

}  // namespace

std::vector<GradCheckReport> run_gradcheck_suite(const GradCheckSuiteOptions& opts) {
  Rng rng(opts.seed, "gradcheck");
  const double h = kGradCheckStep;
  const double tol = kPrimitiveTolerance;
  std::vector<GradCheckReport> out;

  const Shape img{1, kSide, kSide};
  const Tensor x = random_tensor(rng, img, -2, 2);
  const Tensor other = random_tensor(rng, img, -2, 2);
  const Tensor positive = random_tensor(rng, img, 0.5, 2);
  const Tensor proj = random_tensor(rng, img, -1, 1);
  const Tensor proj2 = random_tensor(rng, {2, kSide, kSide}, -1, 1);
  const Tensor proj3 = random_tensor(rng, {3, kSide, kSide}, -1, 1);
  const Tensor x2 = random_tensor(rng, {2, kSide, kSide}, -2, 2);
  const Tensor kernel = random_tensor(rng, {3, 2, 3, 3}, -1, 1);
  const Tensor bias = random_tensor(rng, {3}, -1, 1);
  const Raster window = gaussian_window(5, 1.0);
  const Tensor proj_win = random_tensor(rng, {1, kSide - 4, kSide - 4}, -1, 1);

  auto unary = [&](const char* name, auto op, const Tensor& input) {
    out.push_back(grad_check(name, [&](Graph& g, NodeId in) { return project(g, op(g, in), proj); }, input, h, tol));
  };

  if (opts.inject_conv_fault) {
    out.push_back(grad_check("conv2d", [&](Graph& g, NodeId in) {
      return project(g, broken_conv(g, in, g.constant(kernel), g.constant(bias)), proj3);
    }, x2, h, tol));
  } else {
    out.push_back(grad_check("conv2d", [&](Graph& g, NodeId in) {
      return project(g, g.conv2d(in, g.constant(kernel), g.constant(bias)), proj3);
    }, x2, h, tol));
  }
  out.push_back(grad_check("conv2d.kernel", [&](Graph& g, NodeId k) {
    return project(g, g.conv2d(g.constant(x2), k, g.constant(bias)), proj3);
  }, kernel, h, tol));
  out.push_back(grad_check("conv2d.bias", [&](Graph& g, NodeId b) {
    return project(g, g.conv2d(g.constant(x2), g.constant(kernel), b), proj3);
  }, bias, h, tol));

  unary("add", [&](Graph& g, NodeId in) { return g.add(in, g.constant(other)); }, x);
  unary("sub", [&](Graph& g, NodeId in) { return g.sub(g.constant(other), in); }, x);
  unary("mul", [&](Graph& g, NodeId in) { return g.mul(in, g.mul(in, g.constant(other))); }, x);
  unary("div_eps.numerator", [&](Graph& g, NodeId in) { return g.div_eps(in, g.constant(positive)); }, x);
  unary("div_eps.denominator", [&](Graph& g, NodeId in) { return g.div_eps(g.constant(other), in); }, positive);
  unary("abs", [&](Graph& g, NodeId in) { return g.abs(in); }, x);
  unary("tanh", [&](Graph& g, NodeId in) { return g.tanh(in); }, x);
  unary("sigmoid", [&](Graph& g, NodeId in) { return g.sigmoid(in); }, x);
  unary("leaky_relu", [&](Graph& g, NodeId in) { return g.leaky_relu(in); }, x);
  unary("scale", [&](Graph& g, NodeId in) { return g.scale(in, -1.7); }, x);
  unary("add_const", [&](Graph& g, NodeId in) { return g.mul(g.add_const(in, 0.3), g.constant(other)); }, x);
  unary("hypot", [&](Graph& g, NodeId in) { return g.hypot(in, g.constant(other)); }, x);
  unary("clamp", [&](Graph& g, NodeId in) { return g.clamp(in, -1.0, 1.0); }, x);
  {
    Tensor squared = x;
    squared.data = x.data * x.data;
    out.push_back(grad_check("stop_gradient", [&](Graph& g, NodeId in) {
      return project(g, g.add(g.mul(in, g.constant(other)), g.stop_gradient(g.mul(in, in))), proj);
    }, [&](Graph& g, NodeId in) {
      return project(g, g.add(g.mul(in, g.constant(other)), g.constant(squared)), proj);
    }, x, h, tol));
  }
  out.push_back(grad_check("reduce_mean", [&](Graph& g, NodeId in) { return g.reduce_mean(g.mul(in, g.constant(proj))); }, x, h, tol));
  out.push_back(grad_check("reduce_mean_abs", [&](Graph& g, NodeId in) { return g.reduce_mean_abs(in); }, x, h, tol));
  out.push_back(grad_check("concat_channels", [&](Graph& g, NodeId in) {
    return project(g, g.concat_channels(in, g.constant(other)), proj2);
  }, x, h, tol));
  out.push_back(grad_check("window_filter", [&](Graph& g, NodeId in) {
    return project(g, g.window_filter(in, window), proj_win);
  }, x, h, tol));

  // Composed training loss on 8x8 inputs; the SSIM window is shrunk to fit.
  // The fused point sits near the sources so both SSIM weights are active.
  const Image ir = random_image(rng);
  const Image vis = random_image(rng);
  Tensor fused = Tensor::zeros(img);
  for (Eigen::Index i = 0; i < fused.data.size(); ++i) {
    fused.data[i] = 0.5 * (ir.data()[i] + vis.data()[i]) + rng.uniform(-0.1, 0.1);
  }
  LossConfig cfg;
  cfg.ssim_window = 5;
  cfg.ssim_sigma = 1.0;
  LossConfig attached = cfg;
  attached.detach_ssim_weights = false;

  out.push_back(grad_check("total_loss.fused", [&](Graph& g, NodeId o) {
    return total_loss(g, o, ir, vis, cfg).total;
  }, [&](Graph& g, NodeId o) {
    return frozen_weight_loss(g, o, fused, ir, vis, cfg);
  }, fused, kComposedStep, kComposedTolerance, FdScheme::kRichardson));
  out.push_back(grad_check("total_loss.fused.attached", [&](Graph& g, NodeId o) {
    return total_loss(g, o, ir, vis, attached).total;
  }, fused, kComposedStep, kComposedTolerance, FdScheme::kRichardson));

  const ModelParams model = init_model(opts.seed);
  const Tensor base = Tensor::from_image(fuse(model, ir, vis));
  for (const auto& p : model.tensors) {
    out.push_back(grad_check("total_loss.model." + p.name, [&](Graph& g, NodeId leaf) {
      return total_loss(g, model_forward(g, model, p.name, leaf, ir, vis), ir, vis, cfg).total;
    }, [&](Graph& g, NodeId leaf) {
      return frozen_weight_loss(g, model_forward(g, model, p.name, leaf, ir, vis), base, ir, vis, cfg);
    }, p.value, kComposedStep, kComposedTolerance, FdScheme::kRichardson));
    out.push_back(grad_check("total_loss.model." + p.name + ".attached", [&](Graph& g, NodeId leaf) {
      return total_loss(g, model_forward(g, model, p.name, leaf, ir, vis), ir, vis, attached).total;
    }, p.value, kComposedStep, kComposedTolerance, FdScheme::kRichardson));
  }
  return out;
}

std::string format_gradcheck_table(const std::vector<GradCheckReport>& reports) {
  std::string out;
  char line[256];
  std::snprintf(line, sizeof(line), "%-44s %14s %8s %9s %s\n", "check", "max_rel_err", "coords", "excluded", "result");
  out += line;
  for (const auto& r : reports) {
    std::snprintf(line, sizeof(line), "%-44s %14.3e %8zu %9zu %s\n", r.name.c_str(), r.max_rel_error, r.checked,
                  r.excluded.size(), r.passed ? "pass" : "FAIL");
    out += line;
  }
  return out;
}

}  // namespace ivf
