#pragma once

#include <Eigen/Core>

#include <complex>
#include <span>
#include <vector>

namespace cecg::dsp {

using Eigen::Index;

/// Transposed direct-form II second-order section, a0 normalized to 1.
struct Biquad {
  double b0 = 1, b1 = 0, b2 = 0;
  double a1 = 0, a2 = 0;
};

struct BiquadCascade {
  std::vector<Biquad> sections;
  double gain = 1.0;
  double centre = 0.25;  ///< passband centre in cycles per sample

  /// H(e^{i 2 pi f / fs}).
  std::complex<double> response(double freq_hz, double fs) const;
  /// Group delay in samples at `freq_hz`.
  double group_delay(double freq_hz, double fs) const;
  std::vector<std::complex<double>> poles() const;
  bool stable() const;
};

/// Digital Butterworth bandpass. `order` is the low-pass prototype order
/// (even), so the result has `order` biquads. Band edges are prewarped so the
/// single-pass response is -3 dB at `low_hz` and `high_hz`.
BiquadCascade butter_bandpass(int order, double low_hz, double high_hz, double fs);

/// Single causal pass from zero initial state.
Eigen::ArrayXd lfilter(const BiquadCascade& cascade, const Eigen::Ref<const Eigen::ArrayXd>& signal);

/// Edge padding used by filtfilt: 3x the group delay at the passband centre,
/// never less than 3x the filter order.
Index filtfilt_padding(const BiquadCascade& cascade);

/// Zero-phase forward-backward filtering with odd reflection padding and
/// steady-state initial conditions. Throws if the signal is not longer than
/// the padding.
Eigen::ArrayXd filtfilt(const BiquadCascade& cascade, const Eigen::Ref<const Eigen::ArrayXd>& signal);

/// Kaiser-windowed sinc resampling to round(len * fs_out / fs_in) samples.
Eigen::ArrayXd resample(const Eigen::Ref<const Eigen::ArrayXd>& signal, double fs_in, double fs_out);

/// Affine map onto [0, 1]; a constant signal maps to zeros.
template <typename Derived>
Eigen::Array<typename Derived::Scalar, Eigen::Dynamic, 1> minmax_normalize(const Eigen::ArrayBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  const Scalar lo = x.minCoeff();
  const Scalar span = x.maxCoeff() - lo;
  if (span == Scalar(0)) return Eigen::Array<Scalar, Eigen::Dynamic, 1>::Zero(x.size());
  return (x - lo) / span;
}

double mse(const Eigen::Ref<const Eigen::ArrayXd>& a, const Eigen::Ref<const Eigen::ArrayXd>& b);

struct XcorrResult {
  double coefficient = 0.0;
  Index lag = 0;
  bool degenerate = false;  ///< an input had zero variance
};

/// Maximum Pearson coefficient over lags in [-max_lag, max_lag], pairing a[i]
/// with b[i + lag] on the overlap. Ties go to the smallest |lag|.
XcorrResult xcorr_max(const Eigen::Ref<const Eigen::ArrayXd>& a, const Eigen::Ref<const Eigen::ArrayXd>& b,
                      Index max_lag);

struct SimilaritySummary {
  double mean_mse = 0.0;
  double mean_xcorr = 0.0;
  double mean_lag = 0.0;  ///< signed, in samples
  std::size_t windows = 0;
};

/// Per window: min-max normalize both, then MSE and xcorr_max; returns means.
SimilaritySummary summarize_similarity(std::span<const Eigen::ArrayXd> predictions,
                                       std::span<const Eigen::ArrayXd> references, Index max_lag);

}  // namespace cecg::dsp
