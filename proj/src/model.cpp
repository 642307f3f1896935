#include "ivf/model.hpp"

#include "ivf/io.hpp"
#include "ivf/parallel.hpp"
#include "ivf/rng.hpp"

#include <cmath>
#include <stdexcept>

namespace ivf {

namespace {

struct LayerSpec {
  const char* kernel;
  const char* bias;
  std::size_t out;
  std::size_t in;
};

constexpr LayerSpec kLayers[] = {
    {"conv1.kernel", "conv1.bias", kHiddenChannels, 2},
    {"conv2.kernel", "conv2.bias", kHiddenChannels, kHiddenChannels},
    {"conv3.kernel", "conv3.bias", 1, kHiddenChannels},
};
constexpr std::size_t kKernelSize = 3;

ModelParams make_model(const std::function<double(std::size_t fan_in)>& draw) {
  ModelParams m;
  for (const auto& l : kLayers) {
    Tensor k = Tensor::zeros({l.out, l.in, kKernelSize, kKernelSize});
    const std::size_t fan_in = l.in * kKernelSize * kKernelSize;
    for (Eigen::Index i = 0; i < k.data.size(); ++i) k.data[i] = draw(fan_in);
    m.tensors.emplace_back(l.kernel, std::move(k));
    m.tensors.emplace_back(l.bias, Tensor::zeros({l.out}));
  }
  return m;
}

}  // namespace

Parameter& ModelParams::at(const std::string& name) {
  for (auto& p : tensors) {
    if (p.name == name) return p;
  }
  throw std::out_of_range("no parameter named " + name);
}

const Parameter& ModelParams::at(const std::string& name) const {
  return const_cast<ModelParams*>(this)->at(name);
}

std::size_t ModelParams::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : tensors) n += p.value.size();
  return n;
}

void ModelParams::zero_grad() {
  for (auto& p : tensors) p.zero_grad();
}

bool operator==(const ModelParams& a, const ModelParams& b) {
  if (a.tensors.size() != b.tensors.size()) return false;
  for (std::size_t i = 0; i < a.tensors.size(); ++i) {
    if (a.tensors[i].name != b.tensors[i].name || !(a.tensors[i].value == b.tensors[i].value)) return false;
  }
  return true;
}

ModelParams init_model(std::uint64_t seed) {
  Rng rng(seed, "model-init");
  return make_model([&](std::size_t fan_in) {
    const double s = std::sqrt(1.0 / static_cast<double>(fan_in));
    return rng.uniform(-s, s);
  });
}

ModelParams zero_model() {
  return make_model([](std::size_t) { return 0.0; });
}

namespace {

template <typename Leaf>
NodeId build_forward(Graph& g, NodeId ir, NodeId vis, Leaf&& leaf) {
  NodeId x = g.concat_channels(ir, vis);
  for (std::size_t i = 0; i < std::size(kLayers); ++i) {
    x = g.conv2d(x, leaf(kLayers[i].kernel), leaf(kLayers[i].bias));
    x = i + 1 < std::size(kLayers) ? g.leaky_relu(x) : g.sigmoid(x);
  }
  return x;
}

}  // namespace

NodeId fuse_forward(Graph& g, ModelParams& params, NodeId ir, NodeId vis) {
  return build_forward(g, ir, vis, [&](const char* name) { return g.param(params.at(name)); });
}

Image fuse(const ModelParams& params, const Image& ir, const Image& vis) {
  if (ir.width() != vis.width() || ir.height() != vis.height()) throw ShapeError("fuse: source shapes differ");
  Graph g;
  const NodeId out = build_forward(g, g.constant(Tensor::from_image(ir)), g.constant(Tensor::from_image(vis)),
                                   [&](const char* name) { return g.constant(params.at(name).value); });
  return Image(g.value(out).channel(0));
}

AdamState AdamState::for_model(const ModelParams& params) {
  AdamState s;
  for (const auto& p : params.tensors) {
    s.m.push_back(Tensor::zeros(p.value.shape));
    s.v.push_back(Tensor::zeros(p.value.shape));
  }
  return s;
}

void adam_step(ModelParams& params, AdamState& state, const AdamConfig& cfg) {
  if (state.m.size() != params.tensors.size() || state.v.size() != params.tensors.size()) {
    throw std::invalid_argument("adam state does not match the model");
  }
  for (const auto& p : params.tensors) {
    if (!p.gradient.data.allFinite()) throw NumericError("non-finite gradient in parameter " + p.name);
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < params.tensors.size(); ++i) {
    auto& p = params.tensors[i];
    auto& m = state.m[i].data;
    auto& v = state.v[i].data;
    const auto& grad = p.gradient.data;
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * grad;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * grad.square();
    p.value.data -= cfg.lr * (m / c1) / ((v / c2).sqrt() + cfg.eps);
    if (!p.value.data.allFinite()) throw NumericError("non-finite value after update in parameter " + p.name);
  }
}

void TrainConfig::validate() const {
  if (iterations < 1) throw std::invalid_argument("iterations must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (patch_size < 16) throw std::invalid_argument("patch_size must be >= 16");
  if (static_cast<std::size_t>(loss.ssim_window) > patch_size) {
    throw std::invalid_argument("ssim window does not fit in the patch");
  }
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning rate must be > 0");
  loss.validate();
}

TrainingAborted::TrainingAborted(std::uint64_t iteration, LossBreakdown last, const std::string& why)
    : std::runtime_error("training aborted at iteration " + std::to_string(iteration) + ": " + why +
                         " (last loss: l_int=" + format_double(last.l_int) + " l_grad=" + format_double(last.l_grad) +
                         " l_ssim=" + format_double(last.l_ssim) + " total=" + format_double(last.total) + ")"),
      iteration_(iteration),
      last_(last) {}

PatchSelection select_patches(const TrainConfig& cfg, const PairingPlan& plan, std::uint64_t slot, const Image& ir,
                              const Image& vis) {
  const std::size_t p = cfg.patch_size;
  if (ir.width() < p || ir.height() < p || vis.width() < p || vis.height() < p) {
    throw SizeError("training image smaller than patch size " + std::to_string(p));
  }
  const auto& pr = plan.pairs[slot % plan.pairs.size()];
  Rng rng(cfg.seed, "patch", slot);
  PatchSelection s{};
  s.ir_y = rng.below(ir.height() - p + 1);
  s.ir_x = rng.below(ir.width() - p + 1);
  const bool aligned = plan.same_base() && pr.ir == pr.vis && ir.width() == vis.width() && ir.height() == vis.height();
  if (aligned) {
    s.vis_y = s.ir_y;
    s.vis_x = s.ir_x;
  } else {
    s.vis_y = rng.below(vis.height() - p + 1);
    s.vis_x = rng.below(vis.width() - p + 1);
  }
  return s;
}

TrainRecord train(const TrainConfig& cfg, const PairingPlan& plan, std::span<const Image> ir_store,
                  std::span<const Image> vis_store, std::span<const ImagePair> eval_set, TrainState& state,
                  const TrainCallback& on_step) {
  cfg.validate();
  if (plan.pairs.empty()) throw std::invalid_argument("pairing plan is empty");
  validate_plan(plan, ir_store.size(), vis_store.size());
  if (state.adam.m.empty()) state.adam = AdamState::for_model(state.params);

  const AdamConfig adam{.lr = cfg.learning_rate};
  const std::size_t batch = cfg.batch_size;
  TrainRecord rec;
  LossBreakdown last{};

  for (std::uint64_t t = state.adam.step + 1; t <= cfg.iterations; ++t) {
    std::vector<ModelParams> local(batch, state.params);
    std::vector<LossBreakdown> parts(batch);
    try {
      parallel_for(batch, cfg.threads, [&](std::size_t b) {
        const std::uint64_t slot = (t - 1) * batch + b;
        const auto& pr = plan.pairs[slot % plan.pairs.size()];
        const Image& ir = ir_store[pr.ir];
        const Image& vis = vis_store[pr.vis];
        const auto sel = select_patches(cfg, plan, slot, ir, vis);
        const Image ir_patch = crop(ir, sel.ir_y, sel.ir_x, cfg.patch_size);
        const Image vis_patch = crop(vis, sel.vis_y, sel.vis_x, cfg.patch_size);

        ModelParams& params = local[b];
        params.zero_grad();
        Graph g;
        const NodeId fused = fuse_forward(g, params, g.constant(Tensor::from_image(ir_patch)),
                                          g.constant(Tensor::from_image(vis_patch)));
        const LossNodes nodes = total_loss(g, fused, ir_patch, vis_patch, cfg.loss);
        parts[b] = extract_breakdown(g, nodes);
        g.backward(nodes.total);
      });
    } catch (const NumericError& e) {
      throw TrainingAborted(t, last, e.what());
    }

    // fixed-order reduction over batch members
    LossBreakdown mean{};
    state.params.zero_grad();
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t k = 0; k < state.params.tensors.size(); ++k) {
        state.params.tensors[k].gradient.data += local[b].tensors[k].gradient.data;
      }
      mean.l_int += parts[b].l_int;
      mean.l_grad += parts[b].l_grad;
      mean.l_ssim += parts[b].l_ssim;
      mean.total += parts[b].total;
    }
    if (batch > 1) {
      const double inv = 1.0 / static_cast<double>(batch);
      for (auto& p : state.params.tensors) p.gradient.data *= inv;
      mean.l_int *= inv;
      mean.l_grad *= inv;
      mean.l_ssim *= inv;
      mean.total *= inv;
    }
    if (!std::isfinite(mean.total)) throw TrainingAborted(t, last, "non-finite loss");
    last = mean;

    try {
      adam_step(state.params, state.adam, adam);
    } catch (const NumericError& e) {
      throw TrainingAborted(t, last, e.what());
    }
    rec.losses.push_back({t, mean});
    if (on_step) on_step(state, rec.losses.back());

    if (cfg.eval_every > 0 && t % cfg.eval_every == 0 && !eval_set.empty()) {
      rec.evals.push_back({t, evaluate_set(state.params, eval_set, cfg.loss, cfg.threads).mean});
    }
  }
  return rec;
}

// ---------------------------------------------------------------------------

namespace {

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_table(std::vector<std::uint8_t>& out, const std::vector<std::pair<std::string, const Tensor*>>& table) {
  put_u16(out, static_cast<std::uint16_t>(table.size()));
  for (const auto& [name, t] : table) {
    out.push_back(static_cast<std::uint8_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    append_tensor(out, *t);
  }
}

std::vector<std::pair<std::string, Tensor>> get_table(std::span<const std::uint8_t> bytes, std::size_t& off) {
  if (bytes.size() < off + 2) throw ParseError("truncated checkpoint", off);
  const std::uint16_t count = static_cast<std::uint16_t>(bytes[off] | (bytes[off + 1] << 8));
  off += 2;
  std::vector<std::pair<std::string, Tensor>> table;
  for (std::uint16_t i = 0; i < count; ++i) {
    if (off >= bytes.size()) throw ParseError("truncated checkpoint", off);
    const std::size_t len = bytes[off++];
    if (bytes.size() - off < len) throw ParseError("truncated checkpoint", off);
    std::string name(bytes.begin() + static_cast<std::ptrdiff_t>(off), bytes.begin() + static_cast<std::ptrdiff_t>(off + len));
    off += len;
    table.emplace_back(std::move(name), read_tensor(bytes, off));
  }
  return table;
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const TrainState& state) {
  std::vector<std::uint8_t> out = {'I', 'V', 'C', 'K', kCheckpointVersion};
  std::vector<std::pair<std::string, const Tensor*>> params;
  for (const auto& p : state.params.tensors) params.emplace_back(p.name, &p.value);
  put_table(out, params);

  AdamState adam = state.adam.m.empty() ? AdamState::for_model(state.params) : state.adam;
  std::vector<std::pair<std::string, const Tensor*>> moments;
  for (std::size_t i = 0; i < state.params.tensors.size(); ++i) {
    moments.emplace_back(state.params.tensors[i].name + ".m", &adam.m.at(i));
    moments.emplace_back(state.params.tensors[i].name + ".v", &adam.v.at(i));
  }
  put_table(out, moments);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(state.adam.step >> (8 * i)));
  return out;
}

TrainState decode_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 5 || bytes[0] != 'I' || bytes[1] != 'V' || bytes[2] != 'C' || bytes[3] != 'K') {
    throw ParseError("corrupt checkpoint: bad magic", 0);
  }
  if (bytes[4] != kCheckpointVersion) {
    throw ParseError("checkpoint version mismatch: got " + std::to_string(bytes[4]) + ", expected " +
                         std::to_string(kCheckpointVersion),
                     4);
  }
  std::size_t off = 5;
  const auto params = get_table(bytes, off);
  const std::size_t moments_at = off;
  const auto moments = get_table(bytes, off);
  if (bytes.size() - off != 8) throw ParseError("corrupt checkpoint: bad trailer length", off);
  std::uint64_t step = 0;
  for (int i = 0; i < 8; ++i) step |= static_cast<std::uint64_t>(bytes[off + i]) << (8 * i);

  TrainState s;
  s.params = zero_model();
  if (params.size() != s.params.tensors.size()) throw ParseError("checkpoint does not match the model layout", 5);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = s.params.tensors[i];
    if (params[i].first != p.name || params[i].second.shape != p.value.shape) {
      throw ParseError("checkpoint tensor '" + params[i].first + "' does not match model tensor '" + p.name + "'", 5);
    }
    p.value = params[i].second;
  }
  if (moments.size() != 2 * params.size()) throw ParseError("checkpoint optimizer table has wrong size", moments_at);
  s.adam.step = step;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& m = moments[2 * i];
    const auto& v = moments[2 * i + 1];
    const auto& name = s.params.tensors[i].name;
    if (m.first != name + ".m" || v.first != name + ".v" || m.second.shape != s.params.tensors[i].value.shape ||
        v.second.shape != s.params.tensors[i].value.shape) {
      throw ParseError("checkpoint optimizer state does not match '" + name + "'", moments_at);
    }
    s.adam.m.push_back(m.second);
    s.adam.v.push_back(v.second);
  }
  return s;
}

void save_checkpoint(const TrainState& state, const std::string& path) {
  write_file_atomic(path, encode_checkpoint(state));
}

TrainState load_checkpoint(const std::string& path) {
  const auto bytes = read_file_bytes(path);
  try {
    return decode_checkpoint(bytes);
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.what(), e.offset());
  }
}

std::string format_loss_csv(const TrainRecord& rec) {
  std::string out = std::string(kLossCsvHeader) + '\n';
  for (const auto& r : rec.losses) out += loss_csv_row(r.iteration, r.loss) + '\n';
  return out;
}

std::string format_eval_csv(const TrainRecord& rec) {
  std::string out = std::string(kEvalCsvHeader) + '\n';
  for (const auto& r : rec.evals) out += std::to_string(r.iteration) + ',' + metric_csv_fields(r.metrics) + '\n';
  return out;
}

double smoothed_tail(const TrainRecord& rec, std::size_t window, double LossBreakdown::*field) {
  if (rec.losses.empty() || window == 0) throw std::invalid_argument("no loss rows to smooth");
  const std::size_t n = std::min(window, rec.losses.size());
  double acc = 0.0;
  for (std::size_t i = rec.losses.size() - n; i < rec.losses.size(); ++i) acc += rec.losses[i].loss.*field;
  return acc / static_cast<double>(n);
}

}  // namespace ivf
