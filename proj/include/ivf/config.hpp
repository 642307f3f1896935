#pragma once

#include "ivf/model.hpp"
#include "ivf/pairing.hpp"

#include <cstdint>
#include <string>
#include <string_view>

namespace ivf {

/// Flat key=value experiment description. Blank lines and '#' comments are
/// ignored; unknown or repeated keys are errors.
struct ExperimentConfig {
  Paradigm paradigm = Paradigm::kSptp;
  std::uint64_t base_pairs = 0;       ///< leading manifest entries used; 0 = all
  std::uint64_t trainable_pairs = 0;  ///< plan length; 0 = whole universe
  std::uint64_t seed = 0;
  std::uint64_t iterations = 500;
  double lr = 1e-3;
  std::size_t patch_size = 32;
  std::size_t batch_size = 1;
  double alpha = 1.0;
  double beta = 0.2;
  double epsilon = 1e-8;
  bool detach_ssim_weights = true;
  std::uint64_t eval_every = 50;
  std::string ir_manifest;
  std::string vis_manifest;
  std::string eval_ir_manifest;
  std::string eval_vis_manifest;

  TrainConfig train_config(unsigned threads = 1) const;
};

/// Relative manifest paths are resolved against base_dir.
ExperimentConfig parse_config(std::string_view text, const std::string& base_dir = "");
ExperimentConfig load_config(const std::string& path);
std::string format_config(const ExperimentConfig& cfg);

}  // namespace ivf
