#include "cecg/dsp.hpp"

#include "cecg/error.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace cecg::dsp {

using cd = std::complex<double>;

std::complex<double> BiquadCascade::response(double freq_hz, double fs) const {
  const double w = 2.0 * std::numbers::pi * freq_hz / fs;
  const cd z1 = std::polar(1.0, -w);
  const cd z2 = z1 * z1;
  cd h = gain;
  for (const Biquad& s : sections) h *= (s.b0 + s.b1 * z1 + s.b2 * z2) / (1.0 + s.a1 * z1 + s.a2 * z2);
  return h;
}

double BiquadCascade::group_delay(double freq_hz, double fs) const {
  const double w = 2.0 * std::numbers::pi * freq_hz / fs;
  const cd z1 = std::polar(1.0, -w);
  const cd z2 = z1 * z1;
  // For c(w) = sum_k c_k e^{-ikw}: group delay = Re(sum k c_k e^{-ikw} / c(w)).
  auto delay = [&](double c0, double c1, double c2) {
    return std::real((c1 * z1 + 2.0 * c2 * z2) / (c0 + c1 * z1 + c2 * z2));
  };
  double gd = 0.0;
  for (const Biquad& s : sections) gd += delay(s.b0, s.b1, s.b2) - delay(1.0, s.a1, s.a2);
  return gd;
}

std::vector<std::complex<double>> BiquadCascade::poles() const {
  std::vector<cd> out;
  for (const Biquad& s : sections) {
    const cd disc = std::sqrt(cd(s.a1 * s.a1 - 4.0 * s.a2));
    out.push_back((-s.a1 + disc) / 2.0);
    out.push_back((-s.a1 - disc) / 2.0);
  }
  return out;
}

bool BiquadCascade::stable() const {
  return std::ranges::all_of(poles(), [](cd p) { return std::abs(p) < 1.0; });
}

BiquadCascade butter_bandpass(int order, double low_hz, double high_hz, double fs) {
  constexpr const char* where = "dsp_eval.butter_bandpass";
  if (order < 2 || order % 2 != 0) throw ValidationError(where, "order must be even and >= 2");
  if (!(fs > 0) || !(low_hz > 0) || !(low_hz < high_hz) || !(high_hz < fs / 2))
    throw ValidationError(where, "need 0 < low < high < fs/2");

  const double t2 = 2.0 * fs;
  const double wl = t2 * std::tan(std::numbers::pi * low_hz / fs);
  const double wh = t2 * std::tan(std::numbers::pi * high_hz / fs);
  const double bw = wh - wl;
  const double w0sq = wl * wh;

  BiquadCascade cascade;
  for (int k = 1; k <= order / 2; ++k) {
    const cd p = std::polar(1.0, std::numbers::pi * (2.0 * k + order - 1) / (2.0 * order));
    // Low-pass -> band-pass: each prototype pole p yields the roots of
    // s^2 - p*bw*s + w0^2.
    const cd half = p * bw / 2.0;
    const cd root = std::sqrt(half * half - w0sq);
    for (const cd s : {half + root, half - root}) {
      const cd z = (t2 + s) / (t2 - s);
      cascade.sections.push_back({1.0, 0.0, -1.0, -2.0 * z.real(), std::norm(z)});
    }
  }
  const double centre_hz = std::atan(std::sqrt(w0sq) / t2) * fs / std::numbers::pi;
  cascade.gain = 1.0 / std::abs(cascade.response(centre_hz, fs));
  cascade.centre = centre_hz / fs;
  return cascade;
}

namespace {

// Sections with the overall gain folded into the first numerator.
std::vector<Biquad> folded(const BiquadCascade& c) {
  std::vector<Biquad> s = c.sections;
  if (!s.empty()) {
    s[0].b0 *= c.gain;
    s[0].b1 *= c.gain;
    s[0].b2 *= c.gain;
  }
  return s;
}

struct State {
  double z1 = 0, z2 = 0;
};

void run(const std::vector<Biquad>& sections, std::vector<State>& state, Eigen::ArrayXd& x) {
  for (std::size_t k = 0; k < sections.size(); ++k) {
    const Biquad& s = sections[k];
    State& st = state[k];
    for (Index n = 0; n < x.size(); ++n) {
      const double in = x[n];
      const double y = s.b0 * in + st.z1;
      st.z1 = s.b1 * in - s.a1 * y + st.z2;
      st.z2 = s.b2 * in - s.a2 * y;
      x[n] = y;
    }
  }
}

// State each section would hold after an infinitely long constant input `level`.
std::vector<State> steady_state(const std::vector<Biquad>& sections, double level) {
  std::vector<State> out(sections.size());
  double in = level;
  for (std::size_t k = 0; k < sections.size(); ++k) {
    const Biquad& s = sections[k];
    const double y = in * (s.b0 + s.b1 + s.b2) / (1.0 + s.a1 + s.a2);
    out[k].z2 = s.b2 * in - s.a2 * y;
    out[k].z1 = y - s.b0 * in;
    in = y;
  }
  return out;
}

}  // namespace

Eigen::ArrayXd lfilter(const BiquadCascade& cascade, const Eigen::Ref<const Eigen::ArrayXd>& signal) {
  Eigen::ArrayXd y = signal;
  const auto sections = folded(cascade);
  std::vector<State> state(sections.size());
  run(sections, state, y);
  return y;
}

Index filtfilt_padding(const BiquadCascade& cascade) {
  const double gd = std::abs(cascade.group_delay(cascade.centre, 1.0));
  const Index order_floor = 3 * (2 * static_cast<Index>(cascade.sections.size()) + 1);
  return std::max(order_floor, 3 * static_cast<Index>(std::ceil(gd)));
}

Eigen::ArrayXd filtfilt(const BiquadCascade& cascade, const Eigen::Ref<const Eigen::ArrayXd>& signal) {
  const Index n = signal.size();
  const Index pad = filtfilt_padding(cascade);
  if (n <= pad)
    throw ValidationError("dsp_eval.filtfilt", "signal of " + std::to_string(n) + " samples is too short for " +
                                                   std::to_string(pad) + "-sample edge padding");
  Eigen::ArrayXd ext(n + 2 * pad);
  for (Index i = 0; i < pad; ++i) {
    ext[i] = 2.0 * signal[0] - signal[pad - i];
    ext[n + pad + i] = 2.0 * signal[n - 1] - signal[n - 2 - i];
  }
  ext.segment(pad, n) = signal;

  const auto sections = folded(cascade);
  auto state = steady_state(sections, ext[0]);
  run(sections, state, ext);
  ext.reverseInPlace();
  state = steady_state(sections, ext[0]);
  run(sections, state, ext);
  ext.reverseInPlace();
  return ext.segment(pad, n);
}

Eigen::ArrayXd resample(const Eigen::Ref<const Eigen::ArrayXd>& signal, double fs_in, double fs_out) {
  constexpr const char* where = "dsp_eval.resample";
  if (!(fs_in > 0) || !(fs_out > 0)) throw ValidationError(where, "sampling rates must be > 0");
  if (fs_in == fs_out) return signal;
  const Index n = signal.size();
  const Index n_out = static_cast<Index>(std::llround(static_cast<double>(n) * fs_out / fs_in));
  Eigen::ArrayXd out = Eigen::ArrayXd::Zero(n_out);
  if (n == 0 || n_out == 0) return out;

  // Cutoff at 0.45 of the lower rate, in cycles per input sample.
  const double fc = 0.45 * std::min(fs_in, fs_out) / fs_in;
  const double half_width = 32.0 / fc;  // 64 zero crossings of the sinc
  const Index hw = static_cast<Index>(std::ceil(half_width));
  constexpr double beta = 8.6;
  const double norm = std::cyl_bessel_i(0.0, beta);

  // Odd reflection keeps value and slope continuous at the edges.
  auto sample = [&](Index i) {
    if (n == 1) return signal[0];
    if (i < 0) return 2.0 * signal[0] - signal[std::min(-i, n - 1)];
    if (i >= n) return 2.0 * signal[n - 1] - signal[std::max<Index>(2 * (n - 1) - i, 0)];
    return signal[i];
  };

  for (Index m = 0; m < n_out; ++m) {
    const double t = static_cast<double>(m) * fs_in / fs_out;
    const Index centre = static_cast<Index>(std::floor(t));
    double acc = 0.0, weight = 0.0;
    for (Index i = centre - hw; i <= centre + hw + 1; ++i) {
      const double d = t - static_cast<double>(i);
      const double r = d / half_width;
      if (std::abs(r) >= 1.0) continue;
      const double arg = 2.0 * fc * d;
      const double sinc = arg == 0.0 ? 1.0 : std::sin(std::numbers::pi * arg) / (std::numbers::pi * arg);
      const double k = sinc * std::cyl_bessel_i(0.0, beta * std::sqrt(1.0 - r * r)) / norm;
      acc += k * sample(i);
      weight += k;
    }
    out[m] = acc / weight;
  }
  return out;
}

double mse(const Eigen::Ref<const Eigen::ArrayXd>& a, const Eigen::Ref<const Eigen::ArrayXd>& b) {
  if (a.size() != b.size())
    throw ValidationError("dsp_eval.mse", "length mismatch " + std::to_string(a.size()) + " vs " +
                                              std::to_string(b.size()));
  if (a.size() == 0) throw ValidationError("dsp_eval.mse", "empty input");
  return (a - b).square().mean();
}

XcorrResult xcorr_max(const Eigen::Ref<const Eigen::ArrayXd>& a, const Eigen::Ref<const Eigen::ArrayXd>& b,
                      Index max_lag) {
  constexpr const char* where = "dsp_eval.xcorr_max";
  const Index n = a.size();
  if (b.size() != n) throw ValidationError(where, "length mismatch");
  if (max_lag < 0 || max_lag >= n) throw ValidationError(where, "max_lag must lie in [0, length)");
  auto flat = [](const Eigen::Ref<const Eigen::ArrayXd>& x) { return (x - x.mean()).square().sum() == 0.0; };
  if (flat(a) || flat(b)) return {0.0, 0, true};

  XcorrResult best{-2.0, 0, false};
  // Visit 0, +1, -1, +2, -2, ... and keep only strict improvements, so ties
  // resolve toward the smallest |lag|.
  for (Index step = 0; step <= 2 * max_lag; ++step) {
    const Index lag = step % 2 == 1 ? (step + 1) / 2 : -(step / 2);
    const Index start = std::max<Index>(0, -lag);
    const Index count = n - std::abs(lag);
    if (count < 2) continue;
    const auto sa = a.segment(start, count);
    const auto sb = b.segment(start + lag, count);
    const Eigen::ArrayXd da = sa - sa.mean();
    const Eigen::ArrayXd db = sb - sb.mean();
    const double denom = std::sqrt(da.square().sum() * db.square().sum());
    if (denom == 0.0) continue;
    const double r = (da * db).sum() / denom;
    if (r > best.coefficient) best = {r, lag, false};
  }
  if (best.coefficient < -1.0) return {0.0, 0, true};
  return best;
}

SimilaritySummary summarize_similarity(std::span<const Eigen::ArrayXd> predictions,
                                       std::span<const Eigen::ArrayXd> references, Index max_lag) {
  constexpr const char* where = "dsp_eval.summarize_similarity";
  if (predictions.size() != references.size()) throw ValidationError(where, "window count mismatch");
  if (predictions.empty()) throw ValidationError(where, "no windows");
  SimilaritySummary s;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const Eigen::ArrayXd p = minmax_normalize(predictions[i]);
    const Eigen::ArrayXd r = minmax_normalize(references[i]);
    const XcorrResult xc = xcorr_max(p, r, max_lag);
    s.mean_mse += mse(p, r);
    s.mean_xcorr += xc.coefficient;
    s.mean_lag += static_cast<double>(xc.lag);
  }
  s.windows = predictions.size();
  const double n = static_cast<double>(s.windows);
  s.mean_mse /= n;
  s.mean_xcorr /= n;
  s.mean_lag /= n;
  return s;
}

}  // namespace cecg::dsp
