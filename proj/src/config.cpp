#include "ivf/config.hpp"

#include "ivf/io.hpp"

#include <charconv>
#include <filesystem>
#include <functional>
#include <map>
#include <set>
#include <stdexcept>

namespace ivf {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

template <typename T>
T to_number(std::string_view key, std::string_view v) {
  T out{};
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
    throw std::invalid_argument("config key '" + std::string(key) + "': invalid value '" + std::string(v) + "'");
  }
  return out;
}

bool to_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument("config key '" + std::string(key) + "': expected true or false");
}

}  // namespace

TrainConfig ExperimentConfig::train_config(unsigned threads) const {
  TrainConfig t;
  t.learning_rate = lr;
  t.iterations = iterations;
  t.batch_size = batch_size;
  t.patch_size = patch_size;
  t.seed = seed;
  t.loss.alpha = alpha;
  t.loss.beta = beta;
  t.loss.epsilon = epsilon;
  t.loss.detach_ssim_weights = detach_ssim_weights;
  t.eval_every = eval_every;
  t.threads = threads;
  return t;
}

ExperimentConfig parse_config(std::string_view text, const std::string& base_dir) {
  ExperimentConfig c;
  auto path = [&](std::string_view v) {
    std::filesystem::path p{std::string(v)};
    if (p.is_relative() && !base_dir.empty()) p = std::filesystem::path(base_dir) / p;
    return p.string();
  };
  const std::map<std::string, std::function<void(std::string_view, std::string_view)>, std::less<>> setters = {
      {"paradigm", [&](auto, auto v) { c.paradigm = parse_paradigm(v); }},
      {"base_pairs", [&](auto k, auto v) { c.base_pairs = to_number<std::uint64_t>(k, v); }},
      {"trainable_pairs", [&](auto k, auto v) { c.trainable_pairs = to_number<std::uint64_t>(k, v); }},
      {"seed", [&](auto k, auto v) { c.seed = to_number<std::uint64_t>(k, v); }},
      {"iterations", [&](auto k, auto v) { c.iterations = to_number<std::uint64_t>(k, v); }},
      {"lr", [&](auto k, auto v) { c.lr = to_number<double>(k, v); }},
      {"patch_size", [&](auto k, auto v) { c.patch_size = to_number<std::size_t>(k, v); }},
      {"batch_size", [&](auto k, auto v) { c.batch_size = to_number<std::size_t>(k, v); }},
      {"alpha", [&](auto k, auto v) { c.alpha = to_number<double>(k, v); }},
      {"beta", [&](auto k, auto v) { c.beta = to_number<double>(k, v); }},
      {"epsilon", [&](auto k, auto v) { c.epsilon = to_number<double>(k, v); }},
      {"detach_ssim_weights", [&](auto k, auto v) { c.detach_ssim_weights = to_bool(k, v); }},
      {"eval_every", [&](auto k, auto v) { c.eval_every = to_number<std::uint64_t>(k, v); }},
      {"ir_manifest", [&](auto, auto v) { c.ir_manifest = path(v); }},
      {"vis_manifest", [&](auto, auto v) { c.vis_manifest = path(v); }},
      {"eval_ir_manifest", [&](auto, auto v) { c.eval_ir_manifest = path(v); }},
      {"eval_vis_manifest", [&](auto, auto v) { c.eval_vis_manifest = path(v); }},
  };

  std::set<std::string, std::less<>> seen;
  std::size_t line_no = 0;
  while (!text.empty()) {
    ++line_no;
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text.remove_prefix(nl == std::string_view::npos ? text.size() : nl + 1);
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw std::invalid_argument("config line " + std::to_string(line_no) + ": expected key=value");
    }
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    const auto it = setters.find(key);
    if (it == setters.end()) throw std::invalid_argument("config line " + std::to_string(line_no) + ": unknown key '" + std::string(key) + "'");
    if (!seen.emplace(key).second) throw std::invalid_argument("config line " + std::to_string(line_no) + ": repeated key '" + std::string(key) + "'");
    it->second(key, value);
  }
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  return parse_config(read_file_text(path), std::filesystem::path(path).parent_path().string());
}

std::string format_config(const ExperimentConfig& c) {
  std::string out;
  out += "paradigm=" + to_string(c.paradigm) + "\n";
  out += "base_pairs=" + std::to_string(c.base_pairs) + "\n";
  out += "trainable_pairs=" + std::to_string(c.trainable_pairs) + "\n";
  out += "seed=" + std::to_string(c.seed) + "\n";
  out += "iterations=" + std::to_string(c.iterations) + "\n";
  out += "lr=" + format_double(c.lr) + "\n";
  out += "patch_size=" + std::to_string(c.patch_size) + "\n";
  out += "batch_size=" + std::to_string(c.batch_size) + "\n";
  out += "alpha=" + format_double(c.alpha) + "\n";
  out += "beta=" + format_double(c.beta) + "\n";
  out += "epsilon=" + format_double(c.epsilon) + "\n";
  out += std::string("detach_ssim_weights=") + (c.detach_ssim_weights ? "true" : "false") + "\n";
  out += "eval_every=" + std::to_string(c.eval_every) + "\n";
  if (!c.ir_manifest.empty()) out += "ir_manifest=" + c.ir_manifest + "\n";
  if (!c.vis_manifest.empty()) out += "vis_manifest=" + c.vis_manifest + "\n";
  if (!c.eval_ir_manifest.empty()) out += "eval_ir_manifest=" + c.eval_ir_manifest + "\n";
  if (!c.eval_vis_manifest.empty()) out += "eval_vis_manifest=" + c.eval_vis_manifest + "\n";
  return out;
}

}  // namespace ivf
