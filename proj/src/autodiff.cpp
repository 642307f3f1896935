#include "ivf/autodiff.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>
#include <sstream>

namespace ivf {

namespace {

using PlaneMap = Eigen::Map<Raster>;
using ConstPlaneMap = Eigen::Map<const Raster>;

void check_finite(const Tensor& t, Op op) {
  if (!t.data.allFinite()) {
    throw NumericError(std::string("non-finite value produced by ") + op_name(op));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape != b.shape) {
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_string(a.shape) + " vs " +
                     shape_string(b.shape));
  }
}

void require_chw(const Tensor& t, const char* what) {
  if (t.rank() != 3) throw ShapeError(std::string(what) + ": expected [C, H, W], got " + shape_string(t.shape));
}

Raster replicate_pad(const double* plane, Eigen::Index h, Eigen::Index w, Eigen::Index r) {
  ConstPlaneMap src(plane, h, w);
  Raster p(h + 2 * r, w + 2 * r);
  for (Eigen::Index y = 0; y < p.rows(); ++y) {
    const Eigen::Index sy = std::clamp<Eigen::Index>(y - r, 0, h - 1);
    for (Eigen::Index x = 0; x < p.cols(); ++x) {
      p(y, x) = src(sy, std::clamp<Eigen::Index>(x - r, 0, w - 1));
    }
  }
  return p;
}

double sigmoid_scalar(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

std::string shape_string(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? ", " : "") << s[i];
  os << ']';
  return os.str();
}

std::size_t shape_size(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

const char* op_name(Op op) {
  switch (op) {
    case Op::kConstant: return "constant";
    case Op::kInput: return "input";
    case Op::kParam: return "param";
    case Op::kConv2d: return "conv2d";
    case Op::kAdd: return "add";
    case Op::kSub: return "sub";
    case Op::kMul: return "mul";
    case Op::kDivEps: return "div_eps";
    case Op::kAbs: return "abs";
    case Op::kTanh: return "tanh";
    case Op::kSigmoid: return "sigmoid";
    case Op::kLeakyRelu: return "leaky_relu";
    case Op::kScale: return "scale";
    case Op::kAddConst: return "add_const";
    case Op::kHypot: return "hypot";
    case Op::kClamp: return "clamp";
    case Op::kReduceMean: return "reduce_mean";
    case Op::kReduceMeanAbs: return "reduce_mean_abs";
    case Op::kConcat: return "concat_channels";
    case Op::kStopGradient: return "stop_gradient";
    case Op::kWindowFilter: return "window_filter";
    case Op::kCustom: return "custom";
  }
  return "unknown";
}

Tensor::Tensor(Shape s, Eigen::ArrayXd d) : shape(std::move(s)), data(std::move(d)) {
  if (shape.empty() || std::find(shape.begin(), shape.end(), 0u) != shape.end()) {
    throw ShapeError("tensor dimensions must be positive, got " + shape_string(shape));
  }
  if (shape_size(shape) != static_cast<std::size_t>(data.size())) {
    throw ShapeError("tensor data length " + std::to_string(data.size()) + " does not match shape " +
                     shape_string(shape));
  }
}

Tensor Tensor::zeros(Shape s) { return constant(std::move(s), 0.0); }

Tensor Tensor::constant(Shape s, double v) {
  const auto n = static_cast<Eigen::Index>(shape_size(s));
  return Tensor(std::move(s), Eigen::ArrayXd::Constant(n, v));
}

Tensor Tensor::from_image(const Image& img) { return from_raster(img.pixels()); }

Tensor Tensor::from_raster(const Raster& r) {
  Eigen::ArrayXd d(r.size());
  std::copy(r.data(), r.data() + r.size(), d.data());
  return Tensor({1, static_cast<std::size_t>(r.rows()), static_cast<std::size_t>(r.cols())}, std::move(d));
}

double Tensor::item() const {
  if (data.size() != 1) throw ShapeError("item() on non-scalar tensor " + shape_string(shape));
  return data[0];
}

Raster Tensor::channel(std::size_t c) const {
  if (rank() != 3 || c >= shape[0]) throw ShapeError("channel index out of range");
  const auto h = static_cast<Eigen::Index>(shape[1]);
  const auto w = static_cast<Eigen::Index>(shape[2]);
  return ConstPlaneMap(data.data() + static_cast<Eigen::Index>(c) * h * w, h, w);
}

Parameter::Parameter(std::string n, Tensor v)
    : name(std::move(n)), value(std::move(v)), gradient(Tensor::zeros(value.shape)) {}

void Parameter::zero_grad() { gradient.data.setZero(); }

// ---------------------------------------------------------------------------

NodeId Graph::push(Node n) {
  check_finite(n.value, n.op);
  nodes_.push_back(std::move(n));
  return nodes_.size() - 1;
}

bool Graph::any_requires(std::initializer_list<NodeId> ids) const {
  return std::any_of(ids.begin(), ids.end(), [&](NodeId id) { return nodes_.at(id).requires_grad; });
}

void Graph::mix_signature(std::uint64_t v) {
  signature_ ^= v + 0x9e3779b97f4a7c15ull + (signature_ << 6) + (signature_ >> 2);
}

NodeId Graph::constant(Tensor t) { return push(Node{.op = Op::kConstant, .value = std::move(t)}); }

NodeId Graph::input(Tensor t) {
  return push(Node{.op = Op::kInput, .value = std::move(t), .requires_grad = true});
}

NodeId Graph::param(Parameter& p) {
  if (p.gradient.shape != p.value.shape) throw ShapeError("parameter " + p.name + " gradient shape mismatch");
  return push(Node{.op = Op::kParam, .value = p.value, .param = &p, .requires_grad = true, .name = p.name});
}

NodeId Graph::conv2d(NodeId input, NodeId kernel, NodeId bias) {
  const Tensor& x = val(input);
  const Tensor& k = val(kernel);
  const Tensor& b = val(bias);
  require_chw(x, "conv2d input");
  if (k.rank() != 4) throw ShapeError("conv2d kernel must be [C_out, C_in, k, k], got " + shape_string(k.shape));
  const std::size_t cin = x.shape[0];
  const std::size_t cout = k.shape[0];
  if (k.shape[1] != cin) {
    throw ShapeError("conv2d channel mismatch: input has " + std::to_string(cin) + ", kernel expects " +
                     std::to_string(k.shape[1]));
  }
  if (k.shape[2] != k.shape[3] || k.shape[2] % 2 == 0) throw ShapeError("conv2d kernel must be odd and square");
  if (b.shape != Shape{cout}) throw ShapeError("conv2d bias must be [C_out]");

  const auto h = static_cast<Eigen::Index>(x.shape[1]);
  const auto w = static_cast<Eigen::Index>(x.shape[2]);
  const auto ks = static_cast<Eigen::Index>(k.shape[2]);
  const Eigen::Index r = ks / 2;

  std::vector<Raster> padded;
  padded.reserve(cin);
  for (std::size_t ci = 0; ci < cin; ++ci) padded.push_back(replicate_pad(x.data.data() + ci * h * w, h, w, r));

  Tensor out = Tensor::zeros({cout, x.shape[1], x.shape[2]});
  for (std::size_t co = 0; co < cout; ++co) {
    PlaneMap o(out.data.data() + co * h * w, h, w);
    for (std::size_t ci = 0; ci < cin; ++ci) {
      for (Eigen::Index ky = 0; ky < ks; ++ky) {
        for (Eigen::Index kx = 0; kx < ks; ++kx) {
          const double kv = k.data[static_cast<Eigen::Index>(((co * cin + ci) * ks + ky) * ks + kx)];
          o += kv * padded[ci].block(ky, kx, h, w);
        }
      }
    }
    o += b.data[static_cast<Eigen::Index>(co)];
  }
  return push(Node{.op = Op::kConv2d,
                   .parents = {input, kernel, bias},
                   .value = std::move(out),
                   .requires_grad = any_requires({input, kernel, bias})});
}

NodeId Graph::add(NodeId a, NodeId b) {
  require_same_shape(val(a), val(b), "add");
  return push(Node{.op = Op::kAdd,
                   .parents = {a, b},
                   .value = Tensor(val(a).shape, val(a).data + val(b).data),
                   .requires_grad = any_requires({a, b})});
}

NodeId Graph::sub(NodeId a, NodeId b) {
  require_same_shape(val(a), val(b), "sub");
  return push(Node{.op = Op::kSub,
                   .parents = {a, b},
                   .value = Tensor(val(a).shape, val(a).data - val(b).data),
                   .requires_grad = any_requires({a, b})});
}

NodeId Graph::mul(NodeId a, NodeId b) {
  require_same_shape(val(a), val(b), "mul");
  return push(Node{.op = Op::kMul,
                   .parents = {a, b},
                   .value = Tensor(val(a).shape, val(a).data * val(b).data),
                   .requires_grad = any_requires({a, b})});
}

NodeId Graph::div_eps(NodeId a, NodeId b, double eps) {
  require_same_shape(val(a), val(b), "div_eps");
  if (!(eps >= 0.0) || !std::isfinite(eps)) throw std::invalid_argument("div_eps requires a finite eps >= 0");
  return push(Node{.op = Op::kDivEps,
                   .parents = {a, b},
                   .value = Tensor(val(a).shape, val(a).data / (val(b).data + eps)),
                   .p0 = eps,
                   .requires_grad = any_requires({a, b})});
}

NodeId Graph::abs(NodeId x) {
  const auto& d = val(x).data;
  for (Eigen::Index i = 0; i < d.size(); ++i) mix_signature(d[i] < 0 ? 1 : (d[i] == 0 ? 2 : 3));
  return push(Node{.op = Op::kAbs,
                   .parents = {x},
                   .value = Tensor(val(x).shape, d.abs()),
                   .requires_grad = any_requires({x})});
}

NodeId Graph::tanh(NodeId x) {
  return push(Node{.op = Op::kTanh,
                   .parents = {x},
                   .value = Tensor(val(x).shape, val(x).data.tanh()),
                   .requires_grad = any_requires({x})});
}

NodeId Graph::sigmoid(NodeId x) {
  return push(Node{.op = Op::kSigmoid,
                   .parents = {x},
                   .value = Tensor(val(x).shape, val(x).data.unaryExpr(&sigmoid_scalar)),
                   .requires_grad = any_requires({x})});
}

NodeId Graph::leaky_relu(NodeId x) {
  const auto& d = val(x).data;
  for (Eigen::Index i = 0; i < d.size(); ++i) mix_signature(d[i] < 0 ? 5 : 6);
  return push(Node{.op = Op::kLeakyRelu,
                   .parents = {x},
                   .value = Tensor(val(x).shape, (d < 0).select(kLeakySlope * d, d)),
                   .requires_grad = any_requires({x})});
}

NodeId Graph::scale(NodeId x, double c) {
  return push(Node{.op = Op::kScale,
                   .parents = {x},
                   .value = Tensor(val(x).shape, c * val(x).data),
                   .p0 = c,
                   .requires_grad = any_requires({x})});
}

NodeId Graph::add_const(NodeId x, double c) {
  return push(Node{.op = Op::kAddConst,
                   .parents = {x},
                   .value = Tensor(val(x).shape, val(x).data + c),
                   .p0 = c,
                   .requires_grad = any_requires({x})});
}

NodeId Graph::hypot(NodeId a, NodeId b) {
  require_same_shape(val(a), val(b), "hypot");
  const auto& da = val(a).data;
  const auto& db = val(b).data;
  Eigen::ArrayXd r = (da * da + db * db).sqrt();
  for (Eigen::Index i = 0; i < r.size(); ++i) mix_signature(r[i] == 0 ? 7 : 8);
  return push(Node{.op = Op::kHypot,
                   .parents = {a, b},
                   .value = Tensor(val(a).shape, std::move(r)),
                   .requires_grad = any_requires({a, b})});
}

NodeId Graph::clamp(NodeId x, double lo, double hi) {
  if (!(lo <= hi)) throw std::invalid_argument("clamp requires lo <= hi");
  const auto& d = val(x).data;
  for (Eigen::Index i = 0; i < d.size(); ++i) mix_signature(d[i] < lo ? 9 : (d[i] > hi ? 10 : 11));
  return push(Node{.op = Op::kClamp,
                   .parents = {x},
                   .value = Tensor(val(x).shape, d.max(lo).min(hi)),
                   .p0 = lo,
                   .p1 = hi,
                   .requires_grad = any_requires({x})});
}

NodeId Graph::reduce_mean(NodeId x) {
  const auto& d = val(x).data;
  double acc = 0;
  for (Eigen::Index i = 0; i < d.size(); ++i) acc += d[i];
  return push(Node{.op = Op::kReduceMean,
                   .parents = {x},
                   .value = Tensor::scalar(acc / static_cast<double>(d.size())),
                   .requires_grad = any_requires({x})});
}

NodeId Graph::reduce_mean_abs(NodeId x) {
  const auto& d = val(x).data;
  double acc = 0;
  for (Eigen::Index i = 0; i < d.size(); ++i) {
    acc += std::abs(d[i]);
    mix_signature(d[i] < 0 ? 1 : (d[i] == 0 ? 2 : 3));
  }
  return push(Node{.op = Op::kReduceMeanAbs,
                   .parents = {x},
                   .value = Tensor::scalar(acc / static_cast<double>(d.size())),
                   .requires_grad = any_requires({x})});
}

NodeId Graph::concat_channels(NodeId a, NodeId b) {
  const Tensor& ta = val(a);
  const Tensor& tb = val(b);
  require_chw(ta, "concat_channels");
  require_chw(tb, "concat_channels");
  if (ta.shape[1] != tb.shape[1] || ta.shape[2] != tb.shape[2]) {
    throw ShapeError("concat_channels spatial mismatch " + shape_string(ta.shape) + " vs " + shape_string(tb.shape));
  }
  Eigen::ArrayXd d(ta.data.size() + tb.data.size());
  d << ta.data, tb.data;
  return push(Node{.op = Op::kConcat,
                   .parents = {a, b},
                   .value = Tensor({ta.shape[0] + tb.shape[0], ta.shape[1], ta.shape[2]}, std::move(d)),
                   .requires_grad = any_requires({a, b})});
}

NodeId Graph::stop_gradient(NodeId x) {
  return push(Node{.op = Op::kStopGradient, .parents = {x}, .value = val(x), .requires_grad = false});
}

NodeId Graph::window_filter(NodeId x, const Raster& kernel) {
  const Tensor& t = val(x);
  require_chw(t, "window_filter");
  if (t.shape[0] != 1) throw ShapeError("window_filter expects a single channel");
  Raster out = correlate_valid(t.channel(0), kernel);
  return push(Node{.op = Op::kWindowFilter,
                   .parents = {x},
                   .value = Tensor::from_raster(out),
                   .kernel = kernel,
                   .requires_grad = any_requires({x})});
}

NodeId Graph::custom(std::string name, std::vector<NodeId> parents, Tensor value, CustomBackward backward) {
  bool req = false;
  for (NodeId p : parents) req = req || nodes_.at(p).requires_grad;
  return push(Node{.op = Op::kCustom,
                   .parents = std::move(parents),
                   .value = std::move(value),
                   .requires_grad = req,
                   .name = std::move(name),
                   .custom = std::move(backward)});
}

void Graph::accumulate(NodeId id, const Eigen::ArrayXd& delta) {
  if (!nodes_[id].requires_grad) return;
  auto& a = adjoints_[id];
  if (a.size() == 0) {
    a = delta;
  } else {
    a += delta;
  }
}

Tensor Graph::adjoint(NodeId id) const {
  const Tensor& v = nodes_.at(id).value;
  if (id >= adjoints_.size() || adjoints_[id].size() == 0) return Tensor::zeros(v.shape);
  return Tensor(v.shape, adjoints_[id]);
}

void Graph::backward(NodeId output) {
  if (val(output).size() != 1) {
    throw ShapeError("backward requires a scalar output, got " + shape_string(val(output).shape));
  }
  adjoints_.assign(nodes_.size(), Eigen::ArrayXd());
  adjoints_[output] = Eigen::ArrayXd::Ones(1);

  for (NodeId id = output + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.requires_grad || adjoints_[id].size() == 0) continue;
    const Eigen::ArrayXd& g = adjoints_[id];
    const auto& ps = n.parents;

    switch (n.op) {
      case Op::kConstant:
      case Op::kInput:
      case Op::kStopGradient:
        break;
      case Op::kParam:
        n.param->gradient.data += g;
        break;
      case Op::kAdd:
        accumulate(ps[0], g);
        accumulate(ps[1], g);
        break;
      case Op::kSub:
        accumulate(ps[0], g);
        accumulate(ps[1], -g);
        break;
      case Op::kMul:
        accumulate(ps[0], g * val(ps[1]).data);
        accumulate(ps[1], g * val(ps[0]).data);
        break;
      case Op::kDivEps: {
        const Eigen::ArrayXd denom = val(ps[1]).data + n.p0;
        accumulate(ps[0], g / denom);
        accumulate(ps[1], -g * val(ps[0]).data / (denom * denom));
        break;
      }
      case Op::kAbs:
        accumulate(ps[0], g * val(ps[0]).data.sign());
        break;
      case Op::kTanh:
        accumulate(ps[0], g * (1.0 - n.value.data.square()));
        break;
      case Op::kSigmoid:
        accumulate(ps[0], g * n.value.data * (1.0 - n.value.data));
        break;
      case Op::kLeakyRelu:
        accumulate(ps[0], (val(ps[0]).data < 0).select(kLeakySlope * g, g));
        break;
      case Op::kScale:
        accumulate(ps[0], n.p0 * g);
        break;
      case Op::kAddConst:
        accumulate(ps[0], g);
        break;
      case Op::kHypot: {
        const Eigen::ArrayXd& r = n.value.data;
        const Eigen::ArrayXd inv = (r > 0).select(r.inverse(), 0.0);
        accumulate(ps[0], g * val(ps[0]).data * inv);
        accumulate(ps[1], g * val(ps[1]).data * inv);
        break;
      }
      case Op::kClamp: {
        const auto& x = val(ps[0]).data;
        accumulate(ps[0], (x >= n.p0 && x <= n.p1).select(g, 0.0));
        break;
      }
      case Op::kReduceMean: {
        const auto cnt = val(ps[0]).data.size();
        accumulate(ps[0], Eigen::ArrayXd::Constant(cnt, g[0] / static_cast<double>(cnt)));
        break;
      }
      case Op::kReduceMeanAbs: {
        const auto& x = val(ps[0]).data;
        accumulate(ps[0], x.sign() * (g[0] / static_cast<double>(x.size())));
        break;
      }
      case Op::kConcat: {
        const auto na = val(ps[0]).data.size();
        accumulate(ps[0], g.head(na));
        accumulate(ps[1], g.tail(g.size() - na));
        break;
      }
      case Op::kWindowFilter: {
        const Tensor& x = val(ps[0]);
        const auto h = static_cast<Eigen::Index>(x.shape[1]);
        const auto w = static_cast<Eigen::Index>(x.shape[2]);
        const auto oh = static_cast<Eigen::Index>(n.value.shape[1]);
        const auto ow = static_cast<Eigen::Index>(n.value.shape[2]);
        ConstPlaneMap go(g.data(), oh, ow);
        Eigen::ArrayXd dx = Eigen::ArrayXd::Zero(h * w);
        PlaneMap dmap(dx.data(), h, w);
        for (Eigen::Index ky = 0; ky < n.kernel.rows(); ++ky) {
          for (Eigen::Index kx = 0; kx < n.kernel.cols(); ++kx) {
            dmap.block(ky, kx, oh, ow) += n.kernel(ky, kx) * go;
          }
        }
        accumulate(ps[0], dx);
        break;
      }
      case Op::kConv2d: {
        const Tensor& x = val(ps[0]);
        const Tensor& k = val(ps[1]);
        const std::size_t cin = x.shape[0];
        const std::size_t cout = k.shape[0];
        const auto h = static_cast<Eigen::Index>(x.shape[1]);
        const auto w = static_cast<Eigen::Index>(x.shape[2]);
        const auto ks = static_cast<Eigen::Index>(k.shape[2]);
        const Eigen::Index r = ks / 2;
        const bool need_x = nodes_[ps[0]].requires_grad;
        const bool need_k = nodes_[ps[1]].requires_grad;
        const bool need_b = nodes_[ps[2]].requires_grad;

        std::vector<Raster> padded;
        if (need_k) {
          for (std::size_t ci = 0; ci < cin; ++ci) padded.push_back(replicate_pad(x.data.data() + ci * h * w, h, w, r));
        }
        std::vector<Raster> dpad;
        if (need_x) dpad.assign(cin, Raster::Zero(h + 2 * r, w + 2 * r));
        Eigen::ArrayXd dk = Eigen::ArrayXd::Zero(need_k ? k.data.size() : 0);
        Eigen::ArrayXd db = Eigen::ArrayXd::Zero(static_cast<Eigen::Index>(cout));

        for (std::size_t co = 0; co < cout; ++co) {
          ConstPlaneMap go(g.data() + co * h * w, h, w);
          if (need_b) db[static_cast<Eigen::Index>(co)] = go.sum();
          for (std::size_t ci = 0; ci < cin; ++ci) {
            for (Eigen::Index ky = 0; ky < ks; ++ky) {
              for (Eigen::Index kx = 0; kx < ks; ++kx) {
                const auto ki = static_cast<Eigen::Index>(((co * cin + ci) * ks + ky) * ks + kx);
                if (need_k) dk[ki] = (go * padded[ci].block(ky, kx, h, w)).sum();
                if (need_x) dpad[ci].block(ky, kx, h, w) += k.data[ki] * go;
              }
            }
          }
        }
        if (need_x) {
          Eigen::ArrayXd dx = Eigen::ArrayXd::Zero(x.data.size());
          for (std::size_t ci = 0; ci < cin; ++ci) {
            PlaneMap dm(dx.data() + ci * h * w, h, w);
            const Raster& dp = dpad[ci];
            for (Eigen::Index y = 0; y < dp.rows(); ++y) {
              const Eigen::Index sy = std::clamp<Eigen::Index>(y - r, 0, h - 1);
              for (Eigen::Index xx = 0; xx < dp.cols(); ++xx) {
                dm(sy, std::clamp<Eigen::Index>(xx - r, 0, w - 1)) += dp(y, xx);
              }
            }
          }
          accumulate(ps[0], dx);
        }
        if (need_k) accumulate(ps[1], dk);
        if (need_b) accumulate(ps[2], db);
        break;
      }
      case Op::kCustom: {
        std::vector<const Tensor*> pv;
        for (NodeId p : ps) pv.push_back(&val(p));
        const auto grads = n.custom(Tensor(n.value.shape, g), pv);
        if (grads.size() != ps.size()) throw ShapeError("custom node " + n.name + " returned wrong adjoint count");
        for (std::size_t i = 0; i < ps.size(); ++i) {
          if (grads[i].size() == 0) continue;
          require_same_shape(grads[i], val(ps[i]), "custom adjoint");
          accumulate(ps[i], grads[i].data);
        }
        break;
      }
    }
  }
}

// ---------------------------------------------------------------------------

double gradient_error(double analytic, double numeric) {
  const double diff = std::abs(analytic - numeric);
  const double scale = std::max(std::abs(analytic), std::abs(numeric));
  if (scale < 1e-8) return diff;
  return diff / scale;
}

GradCheckReport grad_check(const std::string& name, const GraphBuilder& builder, const Tensor& input, double h,
                           double tol, FdScheme scheme) {
  return grad_check(name, builder, builder, input, h, tol, scheme);
}

GradCheckReport grad_check(const std::string& name, const GraphBuilder& builder, const GraphBuilder& reference,
                           const Tensor& input, double h, double tol, FdScheme scheme) {
  if (!(h > 0)) throw std::invalid_argument("grad_check step must be positive");
  GradCheckReport rep{.name = name, .tolerance = tol};

  Graph g;
  const NodeId in = g.input(input);
  g.backward(builder(g, in));
  const Tensor analytic = g.adjoint(in);

  auto eval = [&](const Tensor& x) {
    Graph gg;
    const NodeId out = reference(gg, gg.input(x));
    return std::pair{gg.value(out).item(), gg.branch_signature()};
  };

  auto central = [&](std::size_t i, double step, bool& straddles) {
    Tensor xp = input;
    Tensor xm = input;
    xp.data[static_cast<Eigen::Index>(i)] += step;
    xm.data[static_cast<Eigen::Index>(i)] -= step;
    const auto [fp, sp] = eval(xp);
    const auto [fm, sm] = eval(xm);
    straddles = straddles || sp != sm;
    return (fp - fm) / (2.0 * step);
  };

  for (std::size_t i = 0; i < input.size(); ++i) {
    bool straddles = false;
    double numeric = central(i, h, straddles);
    if (scheme == FdScheme::kRichardson) numeric = (4.0 * central(i, h / 2, straddles) - numeric) / 3.0;
    if (straddles) {
      rep.excluded.push_back(i);
      continue;
    }
    rep.max_rel_error = std::max(rep.max_rel_error, gradient_error(analytic.data[static_cast<Eigen::Index>(i)], numeric));
    ++rep.checked;
  }
  rep.passed = rep.max_rel_error < tol;
  return rep;
}

// ---------------------------------------------------------------------------

namespace {

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

template <typename T>
T get_le(std::span<const std::uint8_t> bytes, std::size_t& off) {
  if (off > bytes.size() || bytes.size() - off < sizeof(T)) throw ParseError("truncated tensor dump", off);
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(bytes[off + i]) << (8 * i);
  off += sizeof(T);
  return v;
}

}  // namespace

void append_tensor(std::vector<std::uint8_t>& out, const Tensor& t) {
  if (t.rank() > 255) throw ShapeError("tensor rank exceeds dump format");
  for (char c : {'I', 'V', 'T', 'D'}) out.push_back(static_cast<std::uint8_t>(c));
  out.push_back(kTensorDumpVersion);
  out.push_back(static_cast<std::uint8_t>(t.rank()));
  for (std::size_t d : t.shape) put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
  for (Eigen::Index i = 0; i < t.data.size(); ++i) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(t.data[i]));
}

std::vector<std::uint8_t> dump_tensor(const Tensor& t) {
  std::vector<std::uint8_t> out;
  append_tensor(out, t);
  return out;
}

Tensor read_tensor(std::span<const std::uint8_t> bytes, std::size_t& offset) {
  const std::size_t start = offset;
  if (bytes.size() < offset + 6) throw ParseError("truncated tensor dump", offset);
  if (bytes[offset] != 'I' || bytes[offset + 1] != 'V' || bytes[offset + 2] != 'T' || bytes[offset + 3] != 'D') {
    throw ParseError("bad tensor magic", start);
  }
  offset += 4;
  const auto version = bytes[offset++];
  if (version != kTensorDumpVersion) throw ParseError("unsupported tensor dump version " + std::to_string(version), start + 4);
  const auto rank = bytes[offset++];
  if (rank == 0) throw ParseError("tensor rank 0", start + 5);
  Shape shape;
  for (int i = 0; i < rank; ++i) {
    const std::size_t at = offset;
    const auto d = get_le<std::uint32_t>(bytes, offset);
    if (d == 0) throw ParseError("zero tensor dimension", at);
    shape.push_back(d);
  }
  const std::size_t n = shape_size(shape);
  if ((bytes.size() - offset) / 8 < n) throw ParseError("truncated tensor data", offset);
  Eigen::ArrayXd data(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) data[static_cast<Eigen::Index>(i)] = std::bit_cast<double>(get_le<std::uint64_t>(bytes, offset));
  return Tensor(std::move(shape), std::move(data));
}

Tensor load_tensor(std::span<const std::uint8_t> bytes) {
  std::size_t off = 0;
  Tensor t = read_tensor(bytes, off);
  if (off != bytes.size()) throw ParseError("trailing bytes after tensor", off);
  return t;
}

}  // namespace ivf
