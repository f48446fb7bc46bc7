#pragma once

#include <Eigen/Core>

#include <iosfwd>
#include <vector>

namespace cecg::qrs {

using Eigen::Index;

/// Detected R peaks as ascending sample indices at `fs`.
struct PeakAnnotations {
  std::vector<Index> samples;
  double fs = 0.0;
  bool too_short = false;  ///< input under 2 s; no detection attempted

  Eigen::ArrayXd times_s() const;
};

/// Hamilton-style detector constants. Durations in seconds.
struct DetectorOptions {
  double average_window_s = 0.080;
  double refractory_s = 0.200;
  double threshold_coefficient = 0.3125;
  int buffer_depth = 8;
  double searchback_factor = 1.5;
  double refine_half_window_s = 0.040;
  double peak_window_s = 0.095;  ///< half-width of the envelope local-maximum test
  double learning_s = 8.0;
};

/// QRS detection on an already bandpassed ECG.
///
/// Differentiates, rectifies and smooths the signal with a centred moving
/// average, then classifies envelope peaks against an adaptive threshold
/// noise + c * (qrs - noise) built from the means of the last few QRS and
/// noise peak amplitudes. Peaks inside the refractory period are ignored.
/// When no beat has been found for searchback_factor x the mean RR, the
/// largest skipped peak above half the threshold is taken. Detections are
/// moved to the signal maximum within the refine window.
///
/// Every decision compares amplitudes against linear combinations of other
/// amplitudes, so scaling the input by c > 0 leaves the peak set unchanged.
PeakAnnotations hamilton_detect(const Eigen::Ref<const Eigen::ArrayXd>& ecg, double fs,
                                const DetectorOptions& options = {});

/// 4th-order Butterworth 0.5-60 Hz zero-phase bandpass (upper edge clamped
/// below Nyquist for low rates).
Eigen::ArrayXd preprocess(const Eigen::Ref<const Eigen::ArrayXd>& ecg, double fs);

/// preprocess followed by hamilton_detect.
PeakAnnotations detect_rpeaks(const Eigen::Ref<const Eigen::ArrayXd>& ecg, double fs);

/// Successive peak differences in seconds. Needs at least two peaks.
Eigen::ArrayXd rr_intervals(const PeakAnnotations& peaks);

struct TimeDomainHrv {
  double mean_rr_s = 0.0;
  double rmssd_s = 0.0;
  double pnn50_pct = 0.0;
};

TimeDomainHrv time_domain_hrv(const Eigen::Ref<const Eigen::ArrayXd>& rr);

struct LfHf {
  double ratio = 0.0;
  double lf_power = 0.0;
  double hf_power = 0.0;
  bool short_record = false;  ///< under 60 s of beats
  bool hf_vanished = false;   ///< HF power below 1e-12; ratio is +inf
};

/// LF (0.04-0.15 Hz) over HF (0.15-0.40 Hz) power of the RR tachogram.
/// `peak_times` holds either one time per interval (the interval's end) or
/// one more than rr (all beat times). The tachogram is resampled at 4 Hz with
/// a natural cubic spline, mean-removed, and passed to a Welch estimate with
/// 256-sample Hann segments at 50% overlap.
LfHf lf_hf_ratio(const Eigen::Ref<const Eigen::ArrayXd>& rr, const Eigen::Ref<const Eigen::ArrayXd>& peak_times);

struct HrvReport {
  double mean_rr_s = 0.0;
  double rmssd_s = 0.0;
  double pnn50_pct = 0.0;
  double lf_hf = 0.0;
  std::size_t beats = 0;
  bool short_record = false;
  bool insufficient = false;  ///< fewer than three beats; metrics are zero
};

HrvReport hrv_report(const PeakAnnotations& peaks);

struct RpeakCorrelation {
  double coefficient = 0.0;
  Index lag = 0;
  bool degenerate = false;
};

/// Renders each peak train as Gaussian bumps (sigma 50 ms) over signal_len
/// samples and returns the best normalized cross-correlation within +-250 ms.
RpeakCorrelation rpeak_xcorr(const PeakAnnotations& pred, const PeakAnnotations& ref, Index signal_len);

/// One line per peak: "index<TAB>time_s".
void write_annotations(std::ostream& out, const PeakAnnotations& peaks);
PeakAnnotations read_annotations(std::istream& in, double fs);

}  // namespace cecg::qrs
