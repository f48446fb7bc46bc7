#include "cecg/qrs.hpp"

#include "cecg/dsp.hpp"
#include "cecg/error.hpp"
#include "cecg/spectral.hpp"

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include <algorithm>
#include <cmath>
#include <deque>
#include <iomanip>
#include <istream>
#include <limits>
#include <numbers>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>

namespace cecg::qrs {

Eigen::ArrayXd PeakAnnotations::times_s() const {
  Eigen::ArrayXd t(static_cast<Index>(samples.size()));
  for (std::size_t i = 0; i < samples.size(); ++i) t[static_cast<Index>(i)] = static_cast<double>(samples[i]) / fs;
  return t;
}

namespace {

// Fixed-depth FIFO whose mean feeds the adaptive threshold.
class PeakBuffer {
 public:
  PeakBuffer(int depth, double fill) : depth_(depth), values_(static_cast<std::size_t>(depth), fill) {}
  void push(double v) {
    values_.push_back(v);
    if (static_cast<int>(values_.size()) > depth_) values_.pop_front();
  }
  double mean() const {
    return std::accumulate(values_.begin(), values_.end(), 0.0) / static_cast<double>(values_.size());
  }
  std::deque<double>& values() { return values_; }

 private:
  int depth_;
  std::deque<double> values_;
};

Index samples_for(double seconds, double fs) {
  return std::max<Index>(1, static_cast<Index>(std::llround(seconds * fs)));
}

}  // namespace

PeakAnnotations hamilton_detect(const Eigen::Ref<const Eigen::ArrayXd>& ecg, double fs,
                                const DetectorOptions& options) {
  if (!(fs >= 100.0)) throw ValidationError("qrs_hrv.hamilton_detect", "fs must be >= 100 Hz");
  PeakAnnotations out;
  out.fs = fs;
  const Index n = ecg.size();
  if (static_cast<double>(n) < 2.0 * fs) {
    out.too_short = true;
    return out;
  }
  if (!ecg.allFinite()) throw NumericError("qrs_hrv.hamilton_detect", "non-finite input");

  // Rectified first difference, smoothed by a centred moving average.
  Eigen::ArrayXd rect = Eigen::ArrayXd::Zero(n);
  rect.tail(n - 1) = (ecg.tail(n - 1) - ecg.head(n - 1)).abs();
  const Index w = samples_for(options.average_window_s, fs);
  Eigen::ArrayXd prefix(n + 1);
  prefix[0] = 0.0;
  for (Index i = 0; i < n; ++i) prefix[i + 1] = prefix[i] + rect[i];
  Eigen::ArrayXd env(n);
  for (Index i = 0; i < n; ++i) {
    const Index lo = std::max<Index>(0, i - w / 2);
    const Index hi = std::min<Index>(n, i - w / 2 + w);
    env[i] = (prefix[hi] - prefix[lo]) / static_cast<double>(w);
  }

  // Candidate peaks: envelope maxima dominating a +-peak_window neighbourhood
  // (strictly above earlier samples, at least equal to later ones).
  const Index pw = samples_for(options.peak_window_s, fs);
  std::vector<Index> candidates;
  for (Index i = 1; i + 1 < n; ++i) {
    if (!(env[i] > 0.0) || !(env[i] > env[i - 1]) || !(env[i] >= env[i + 1])) continue;
    bool dominant = true;
    for (Index j = std::max<Index>(0, i - pw); j < i && dominant; ++j) dominant = env[j] < env[i];
    for (Index j = i + 1; j <= std::min(n - 1, i + pw) && dominant; ++j) dominant = env[j] <= env[i];
    if (dominant) candidates.push_back(i);
  }

  // Learning phase: one QRS amplitude estimate per second of the first
  // learning_s seconds; noise estimates start at zero.
  const Index second = samples_for(1.0, fs);
  const Index learn = std::min(n, samples_for(options.learning_s, fs));
  PeakBuffer qrs_buf(options.buffer_depth, 0.0), noise_buf(options.buffer_depth, 0.0);
  qrs_buf.values().clear();
  for (Index s = 0; s + second <= learn; s += second) qrs_buf.push(env.segment(s, second).maxCoeff());
  if (qrs_buf.values().empty()) qrs_buf.push(env.head(learn).maxCoeff());
  PeakBuffer rr_buf(options.buffer_depth, fs);  // initial RR estimate: 1 s

  const Index refractory = samples_for(options.refractory_s, fs);
  Index last_qrs = -1;
  std::vector<Index> detections;
  std::vector<Index> skipped;  // sub-threshold candidates since the last QRS

  auto threshold = [&] {
    const double noise = noise_buf.mean();
    return noise + options.threshold_coefficient * (qrs_buf.mean() - noise);
  };
  auto accept = [&](Index i) {
    qrs_buf.push(env[i]);
    if (last_qrs >= 0) rr_buf.push(static_cast<double>(i - last_qrs));
    last_qrs = i;
    detections.push_back(i);
    skipped.clear();
  };
  auto search_back = [&](Index now) {
    while (last_qrs >= 0 && static_cast<double>(now - last_qrs) > options.searchback_factor * rr_buf.mean()) {
      const double floor = 0.5 * threshold();
      Index best = -1;
      for (Index s : skipped)
        if (s - last_qrs >= refractory && env[s] > floor && (best < 0 || env[s] > env[best])) best = s;
      if (best < 0) return;
      std::erase_if(skipped, [&](Index s) { return s <= best; });
      const std::vector<Index> rest = skipped;
      accept(best);
      skipped = rest;
    }
  };

  for (Index c : candidates) {
    search_back(c);
    if (last_qrs >= 0 && c - last_qrs < refractory) continue;
    if (env[c] > threshold()) {
      accept(c);
    } else {
      noise_buf.push(env[c]);
      skipped.push_back(c);
    }
  }
  search_back(n);

  // Move each detection onto the signal maximum nearby, then re-impose the
  // refractory spacing, keeping the taller of two clashing peaks.
  const Index half = samples_for(options.refine_half_window_s, fs);
  for (Index& d : detections) {
    const Index lo = std::max<Index>(0, d - half);
    const Index hi = std::min<Index>(n - 1, d + half);
    Index arg = lo;
    for (Index i = lo + 1; i <= hi; ++i)
      if (ecg[i] > ecg[arg]) arg = i;
    d = arg;
  }
  std::sort(detections.begin(), detections.end());
  for (Index d : detections) {
    if (!out.samples.empty() && d - out.samples.back() < refractory) {
      if (ecg[d] > ecg[out.samples.back()]) out.samples.back() = d;
      continue;
    }
    out.samples.push_back(d);
  }
  return out;
}

Eigen::ArrayXd preprocess(const Eigen::Ref<const Eigen::ArrayXd>& ecg, double fs) {
  const double high = std::min(60.0, 0.45 * fs);
  return dsp::filtfilt(dsp::butter_bandpass(4, 0.5, high, fs), ecg);
}

PeakAnnotations detect_rpeaks(const Eigen::Ref<const Eigen::ArrayXd>& ecg, double fs) {
  if (static_cast<double>(ecg.size()) < 2.0 * fs) {
    PeakAnnotations out;
    out.fs = fs;
    out.too_short = true;
    return out;
  }
  return hamilton_detect(preprocess(ecg, fs), fs);
}

Eigen::ArrayXd rr_intervals(const PeakAnnotations& peaks) {
  if (peaks.samples.size() < 2) throw ValidationError("qrs_hrv.rr_intervals", "need at least two peaks");
  if (!(peaks.fs > 0)) throw ValidationError("qrs_hrv.rr_intervals", "fs must be > 0");
  Eigen::ArrayXd rr(static_cast<Index>(peaks.samples.size()) - 1);
  for (Index i = 0; i < rr.size(); ++i)
    rr[i] = static_cast<double>(peaks.samples[static_cast<std::size_t>(i) + 1] - peaks.samples[static_cast<std::size_t>(i)]) /
            peaks.fs;
  return rr;
}

TimeDomainHrv time_domain_hrv(const Eigen::Ref<const Eigen::ArrayXd>& rr) {
  if (rr.size() < 2) throw ValidationError("qrs_hrv.time_domain_hrv", "need at least two RR intervals");
  const Index m = rr.size() - 1;
  const Eigen::ArrayXd diff = rr.tail(m) - rr.head(m);
  TimeDomainHrv h;
  h.mean_rr_s = rr.mean();
  h.rmssd_s = std::sqrt(diff.square().mean());
  h.pnn50_pct = 100.0 * static_cast<double>((diff.abs() > 0.050).count()) / static_cast<double>(m);
  return h;
}

namespace {

// Natural cubic spline through (x, y), evaluated at `at` (clamped to the knot range).
Eigen::ArrayXd natural_spline(const Eigen::ArrayXd& x, const Eigen::ArrayXd& y, const Eigen::ArrayXd& at) {
  const Index n = x.size();
  Eigen::ArrayXd h = x.tail(n - 1) - x.head(n - 1);
  Eigen::VectorXd second = Eigen::VectorXd::Zero(n);
  if (n > 2) {
    const Index m = n - 2;
    Eigen::SparseMatrix<double> a(m, m);
    std::vector<Eigen::Triplet<double>> entries;
    Eigen::VectorXd rhs(m);
    for (Index i = 0; i < m; ++i) {
      entries.emplace_back(i, i, 2.0 * (h[i] + h[i + 1]));
      if (i > 0) entries.emplace_back(i, i - 1, h[i]);
      if (i + 1 < m) entries.emplace_back(i, i + 1, h[i + 1]);
      rhs[i] = 6.0 * ((y[i + 2] - y[i + 1]) / h[i + 1] - (y[i + 1] - y[i]) / h[i]);
    }
    a.setFromTriplets(entries.begin(), entries.end());
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver(a);
    if (solver.info() != Eigen::Success) throw NumericError("qrs_hrv.lf_hf_ratio", "spline system is singular");
    second.segment(1, m) = solver.solve(rhs);
  }
  Eigen::ArrayXd out(at.size());
  Index k = 0;
  for (Index j = 0; j < at.size(); ++j) {
    const double t = std::clamp(at[j], x[0], x[n - 1]);
    while (k + 2 < n && t > x[k + 1]) ++k;
    const double hk = h[k];
    const double u = (x[k + 1] - t) / hk;
    const double v = (t - x[k]) / hk;
    out[j] = u * y[k] + v * y[k + 1] +
             ((u * u * u - u) * second[k] + (v * v * v - v) * second[k + 1]) * hk * hk / 6.0;
  }
  return out;
}

}  // namespace

LfHf lf_hf_ratio(const Eigen::Ref<const Eigen::ArrayXd>& rr, const Eigen::Ref<const Eigen::ArrayXd>& peak_times) {
  constexpr const char* where = "qrs_hrv.lf_hf_ratio";
  Eigen::ArrayXd t;
  if (peak_times.size() == rr.size() + 1) {
    t = peak_times.tail(rr.size());
  } else if (peak_times.size() == rr.size()) {
    t = peak_times;
  } else {
    throw ValidationError(where, "peak_times must have rr.size() or rr.size()+1 entries");
  }
  if (rr.size() < 3) throw ValidationError(where, "need at least three RR intervals");
  for (Index i = 1; i < t.size(); ++i)
    if (!(t[i] > t[i - 1])) throw ValidationError(where, "peak times must be strictly increasing");

  LfHf result;
  const double span = t[t.size() - 1] - t[0];
  result.short_record = span < 60.0;

  constexpr double rate = 4.0;
  const Index samples = static_cast<Index>(std::floor(span * rate)) + 1;
  Eigen::ArrayXd grid(samples);
  for (Index i = 0; i < samples; ++i) grid[i] = t[0] + static_cast<double>(i) / rate;
  Eigen::ArrayXd series = natural_spline(t, rr, grid);
  series -= series.mean();

  const Index seg = std::min<Index>(256, samples);
  if (seg < 8) throw ValidationError(where, "tachogram too short for spectral estimation");
  Index n_fft = 1;
  while (n_fft < seg) n_fft <<= 1;
  const Index hop = std::max<Index>(1, seg / 2);
  Eigen::ArrayXd window(seg);
  for (Index i = 0; i < seg; ++i)
    window[i] = seg == 1 ? 1.0 : 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(seg - 1));
  const double window_power = window.square().sum();

  Eigen::ArrayXd psd = Eigen::ArrayXd::Zero(n_fft / 2 + 1);
  Index segments = 0;
  Eigen::ArrayXd frame = Eigen::ArrayXd::Zero(n_fft);
  for (Index start = 0; start + seg <= samples; start += hop) {
    frame.head(seg) = series.segment(start, seg) * window;
    psd += rfft(frame, n_fft).bins.abs2();
    ++segments;
  }
  psd /= static_cast<double>(segments) * rate * window_power;
  psd.segment(1, n_fft / 2 - 1) *= 2.0;

  const double df = rate / static_cast<double>(n_fft);
  for (Index k = 0; k < psd.size(); ++k) {
    const double f = static_cast<double>(k) * df;
    if (f >= 0.04 && f < 0.15) result.lf_power += psd[k] * df;
    if (f >= 0.15 && f < 0.40) result.hf_power += psd[k] * df;
  }
  if (result.hf_power < 1e-12) {
    result.hf_vanished = true;
    result.ratio = std::numeric_limits<double>::infinity();
  } else {
    result.ratio = result.lf_power / result.hf_power;
  }
  return result;
}

HrvReport hrv_report(const PeakAnnotations& peaks) {
  HrvReport r;
  r.beats = peaks.samples.size();
  if (peaks.samples.size() < 3) {
    r.insufficient = true;
    return r;
  }
  const Eigen::ArrayXd rr = rr_intervals(peaks);
  const TimeDomainHrv td = time_domain_hrv(rr);
  r.mean_rr_s = td.mean_rr_s;
  r.rmssd_s = td.rmssd_s;
  r.pnn50_pct = td.pnn50_pct;
  if (rr.size() >= 3) {
    const LfHf lh = lf_hf_ratio(rr, peaks.times_s());
    r.lf_hf = lh.ratio;
    r.short_record = lh.short_record;
  } else {
    r.short_record = true;
  }
  return r;
}

RpeakCorrelation rpeak_xcorr(const PeakAnnotations& pred, const PeakAnnotations& ref, Index signal_len) {
  constexpr const char* where = "qrs_hrv.rpeak_xcorr";
  if (pred.fs != ref.fs || !(ref.fs > 0)) throw ValidationError(where, "annotations must share a positive fs");
  if (pred.samples.empty() || ref.samples.empty()) return {0.0, 0, true};
  const double fs = ref.fs;
  const double sigma = 0.050 * fs;
  const Index reach = static_cast<Index>(std::ceil(4.0 * sigma));
  auto render = [&](const PeakAnnotations& p) {
    Eigen::ArrayXd s = Eigen::ArrayXd::Zero(signal_len);
    for (Index c : p.samples) {
      for (Index i = std::max<Index>(0, c - reach); i <= std::min(signal_len - 1, c + reach); ++i) {
        const double d = static_cast<double>(i - c) / sigma;
        s[i] += std::exp(-0.5 * d * d);
      }
    }
    return s;
  };
  const Index max_lag = std::min<Index>(signal_len - 1, static_cast<Index>(std::llround(0.250 * fs)));
  const dsp::XcorrResult xc = dsp::xcorr_max(render(pred), render(ref), max_lag);
  return {xc.coefficient, xc.lag, xc.degenerate};
}

void write_annotations(std::ostream& out, const PeakAnnotations& peaks) {
  out << std::fixed << std::setprecision(6);
  for (Index s : peaks.samples) out << s << '\t' << static_cast<double>(s) / peaks.fs << '\n';
}

PeakAnnotations read_annotations(std::istream& in, double fs) {
  PeakAnnotations p;
  p.fs = fs;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream fields(line);
    long long index = 0;
    double time = 0.0;
    if (!(fields >> index >> time))
      throw FormatError("qrs_hrv.read_annotations", "malformed line " + std::to_string(line_no));
    if (!p.samples.empty() && index <= p.samples.back())
      throw FormatError("qrs_hrv.read_annotations", "indices not strictly increasing at line " + std::to_string(line_no));
    p.samples.push_back(static_cast<Index>(index));
  }
  return p;
}

}  // namespace cecg::qrs
