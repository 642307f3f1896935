#pragma once

#include "ivf/image.hpp"

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ivf {

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a primitive produces NaN or Inf.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& s);

/// Dense row-major tensor of doubles.
struct Tensor {
  Shape shape;
  Eigen::ArrayXd data;

  Tensor() = default;
  Tensor(Shape s, Eigen::ArrayXd d);
  static Tensor zeros(Shape s);
  static Tensor constant(Shape s, double v);
  static Tensor scalar(double v) { return constant({1}, v); }
  /// [1, H, W] tensor holding the image.
  static Tensor from_image(const Image& img);
  static Tensor from_raster(const Raster& r);

  std::size_t size() const { return static_cast<std::size_t>(data.size()); }
  std::size_t rank() const { return shape.size(); }
  double item() const;

  /// Channel c of a [C, H, W] tensor as an H x W raster copy.
  Raster channel(std::size_t c) const;

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape == b.shape && a.data.size() == b.data.size() && (a.data == b.data).all();
  }
};

std::size_t shape_size(const Shape& s);

/// Trainable tensor with its accumulated gradient.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor gradient;

  Parameter() = default;
  Parameter(std::string n, Tensor v);
  void zero_grad();
};

using NodeId = std::size_t;

enum class Op {
  kConstant,
  kInput,
  kParam,
  kConv2d,
  kAdd,
  kSub,
  kMul,
  kDivEps,
  kAbs,
  kTanh,
  kSigmoid,
  kLeakyRelu,
  kScale,
  kAddConst,
  kHypot,
  kClamp,
  kReduceMean,
  kReduceMeanAbs,
  kConcat,
  kStopGradient,
  kWindowFilter,
  kCustom,
};

const char* op_name(Op op);

inline constexpr double kLeakySlope = 0.2;
inline constexpr double kDefaultDivEps = 1e-8;

/// Backward rule for a custom node: receives the node's adjoint and its parents'
/// forward values, returns one adjoint per parent (empty tensor for "none").
using CustomBackward =
    std::function<std::vector<Tensor>(const Tensor& adjoint, std::span<const Tensor* const> parents)>;

/// Eager tape for reverse-mode differentiation.
///
/// Every primitive computes its value immediately and appends a node whose
/// parents all precede it, so node order is a valid topological order. A graph
/// is confined to one thread; separate graphs are independent.
class Graph {
 public:
  NodeId constant(Tensor t);
  /// Leaf whose adjoint is kept after backward(); used for input gradients.
  NodeId input(Tensor t);
  /// Leaf bound to a Parameter; backward() adds into p.gradient.
  NodeId param(Parameter& p);

  /// Stride-1 cross-correlation, odd square kernel, replicate padding.
  NodeId conv2d(NodeId input, NodeId kernel, NodeId bias);

  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  /// a / (b + eps). eps must be non-negative.
  NodeId div_eps(NodeId a, NodeId b, double eps = kDefaultDivEps);
  /// |x|; subgradient 0 at 0.
  NodeId abs(NodeId x);
  NodeId tanh(NodeId x);
  NodeId sigmoid(NodeId x);
  NodeId leaky_relu(NodeId x);
  NodeId scale(NodeId x, double c);
  NodeId add_const(NodeId x, double c);
  /// sqrt(a^2 + b^2) pointwise; gradient 0 where both are 0.
  NodeId hypot(NodeId a, NodeId b);
  /// Clamp to [lo, hi]; gradient passes on the closed interval.
  NodeId clamp(NodeId x, double lo, double hi);

  NodeId reduce_mean(NodeId x);
  NodeId reduce_mean_abs(NodeId x);
  NodeId concat_channels(NodeId a, NodeId b);
  NodeId stop_gradient(NodeId x);
  /// Valid-mode correlation of a [1, H, W] node with a fixed kernel.
  NodeId window_filter(NodeId x, const Raster& kernel);

  NodeId custom(std::string name, std::vector<NodeId> parents, Tensor value, CustomBackward backward);

  const Tensor& value(NodeId id) const { return nodes_.at(id).value; }
  Op op(NodeId id) const { return nodes_.at(id).op; }
  const std::vector<NodeId>& parents(NodeId id) const { return nodes_.at(id).parents; }
  std::size_t size() const { return nodes_.size(); }

  /// Reverse accumulation from a scalar output. Parameter gradients accumulate;
  /// callers zero them between steps.
  void backward(NodeId output);
  /// Adjoint of a node after backward(); zeros if nothing flowed into it.
  Tensor adjoint(NodeId id) const;

  /// Hash of the branch taken at every non-smooth point (abs, leaky_relu,
  /// clamp, hypot). Two evaluations with equal signatures lie on the same
  /// smooth piece.
  std::uint64_t branch_signature() const { return signature_; }

 private:
  struct Node {
    Op op = Op::kConstant;
    std::vector<NodeId> parents = {};
    Tensor value = {};
    double p0 = 0.0;
    double p1 = 0.0;
    Raster kernel = {};
    Parameter* param = nullptr;
    bool requires_grad = false;
    std::string name = {};
    CustomBackward custom = {};
  };

  NodeId push(Node n);
  const Tensor& val(NodeId id) const { return nodes_.at(id).value; }
  bool any_requires(std::initializer_list<NodeId> ids) const;
  void mix_signature(std::uint64_t v);
  void accumulate(NodeId id, const Eigen::ArrayXd& delta);

  std::vector<Node> nodes_;
  std::vector<Eigen::ArrayXd> adjoints_;
  std::uint64_t signature_ = 0x9e3779b97f4a7c15ull;
};

// ---------------------------------------------------------------------------
// Finite-difference verification

/// Builds a scalar output from an input node. Must be deterministic.
using GraphBuilder = std::function<NodeId(Graph&, NodeId input)>;

struct GradCheckReport {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  /// Coordinates where x - h and x + h straddle a non-smooth point.
  std::vector<std::size_t> excluded = {};
  double tolerance = 0.0;
  bool passed = false;
};

enum class FdScheme {
  /// (f(x+h) - f(x-h)) / 2h
  kCentral,
  /// (4 D(h/2) - D(h)) / 3 over central differences D; cancels the h^2 term.
  kRichardson,
};

/// Finite differences per coordinate against the analytic gradient. Errors
/// are relative, or absolute where both values are below 1e-8. A coordinate
/// is excluded when any probe lands on a different smooth piece.
GradCheckReport grad_check(const std::string& name, const GraphBuilder& builder, const Tensor& input,
                           double h, double tol, FdScheme scheme = FdScheme::kCentral);

/// As above, but finite differences are taken of `reference` instead of
/// `builder`. Used where the analytic path deliberately detaches part of the
/// computation and the reference freezes the same part at the input point.
GradCheckReport grad_check(const std::string& name, const GraphBuilder& builder, const GraphBuilder& reference,
                           const Tensor& input, double h, double tol, FdScheme scheme = FdScheme::kCentral);

double gradient_error(double analytic, double numeric);

// ---------------------------------------------------------------------------
// Raw tensor dump: "IVTD", u8 version, u8 rank, u32 LE dims, f64 LE data.

inline constexpr std::uint8_t kTensorDumpVersion = 1;

void append_tensor(std::vector<std::uint8_t>& out, const Tensor& t);
std::vector<std::uint8_t> dump_tensor(const Tensor& t);

/// Reads one tensor starting at offset; advances offset. Throws ParseError.
Tensor read_tensor(std::span<const std::uint8_t> bytes, std::size_t& offset);
Tensor load_tensor(std::span<const std::uint8_t> bytes);

}  // namespace ivf
