#pragma once

#include "cecg/tensor.hpp"

#include <Eigen/Core>

#include <string>
#include <utility>

namespace cecg {

/// How a window longer than n_fft is mapped onto n_fft-point transforms.
enum class FftWindowPolicy {
  two_halves,  ///< consecutive n_fft segments (two for 2048/1024), averaged
  first_half,  ///< leading n_fft samples only
  decimate,    ///< every (length / n_fft)-th sample
};

FftWindowPolicy parse_fft_window_policy(const std::string& name);
std::string to_string(FftWindowPolicy policy);

struct LossConfig {
  double alpha = 1.0;
  double beta = 1.0;
  double smooth_l1_threshold = 1.0;
  Index n_fft = 1024;
  FftWindowPolicy fft_window_policy = FftWindowPolicy::two_halves;

  void validate() const;
};

struct LossReport {
  double l_signal = 0.0;
  double l_frequency = 0.0;
  double l_total = 0.0;
};

/// Per-element SmoothL1: 0.5 d^2 when |d| < threshold, else |d| - 0.5 threshold.
template <typename Derived>
auto smooth_l1_elementwise(const Eigen::ArrayBase<Derived>& diff, double threshold) {
  const auto a = diff.abs();
  return (a < threshold).select(0.5 * diff.square(), a - 0.5 * threshold);
}

/// d/dd of smooth_l1_elementwise.
template <typename Derived>
auto smooth_l1_derivative(const Eigen::ArrayBase<Derived>& diff, double threshold) {
  return (diff.abs() < threshold).select(diff, diff.sign());
}

/// Mean SmoothL1 over all elements.
double smooth_l1(const Eigen::Ref<const Eigen::ArrayXd>& diff, double threshold = 1.0);

/// Mean SmoothL1 of (target - pred) in the signal domain.
Var signal_loss(Var pred, Var target, double threshold = 1.0);

/// Mean SmoothL1 over real and imaginary parts of rfft(target) - rfft(pred),
/// taken per n_fft segment according to cfg.fft_window_policy.
Var frequency_loss(Var pred, Var target, const LossConfig& cfg);

/// alpha * signal_loss + beta * frequency_loss.
std::pair<Var, LossReport> total_loss(Var pred, Var target, const LossConfig& cfg);

}  // namespace cecg
