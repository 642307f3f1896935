#pragma once

#include "ivf/autodiff.hpp"

#include <string>
#include <vector>

namespace ivf {

inline constexpr double kPrimitiveTolerance = 1e-6;
inline constexpr double kComposedTolerance = 1e-5;
inline constexpr double kGradCheckStep = 1e-5;
// The composed loss uses an extrapolated difference with a wider step: a
// plain central difference at 1e-5 loses parameter gradients of order 1e-6
// to roundoff.
inline constexpr double kComposedStep = 1e-3;

struct GradCheckSuiteOptions {
  std::uint64_t seed = 7;
  /// Replaces the conv2d case with one whose backward is deliberately wrong.
  bool inject_conv_fault = false;
};

/// One report per differentiable primitive plus the composed training loss
/// (with respect to the fused image and to every model parameter) on 8x8 inputs.
std::vector<GradCheckReport> run_gradcheck_suite(const GradCheckSuiteOptions& opts = {});

/// Text table: name, max relative error, pass/fail, one line per check.
std::string format_gradcheck_table(const std::vector<GradCheckReport>& reports);

}  // namespace ivf
