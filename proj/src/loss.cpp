#include "cecg/loss.hpp"

#include "cecg/error.hpp"
#include "cecg/ops.hpp"
#include "cecg/spectral.hpp"

#include <vector>

namespace cecg {

FftWindowPolicy parse_fft_window_policy(const std::string& name) {
  if (name == "two_halves") return FftWindowPolicy::two_halves;
  if (name == "first_half") return FftWindowPolicy::first_half;
  if (name == "decimate") return FftWindowPolicy::decimate;
  throw ValidationError("loss.LossConfig", "unknown fft_window_policy '" + name + "'");
}

std::string to_string(FftWindowPolicy policy) {
  switch (policy) {
    case FftWindowPolicy::two_halves: return "two_halves";
    case FftWindowPolicy::first_half: return "first_half";
    case FftWindowPolicy::decimate: return "decimate";
  }
  return "unknown";
}

void LossConfig::validate() const {
  if (alpha < 0 || beta < 0) throw ValidationError("loss.LossConfig", "alpha and beta must be >= 0");
  if (alpha == 0 && beta == 0) throw ValidationError("loss.LossConfig", "alpha and beta are both zero");
  if (!(smooth_l1_threshold > 0)) throw ValidationError("loss.LossConfig", "smooth_l1_threshold must be > 0");
  if (!is_power_of_two(n_fft) || n_fft < 2)
    throw ValidationError("loss.LossConfig", "n_fft must be a power of two >= 2");
}

double smooth_l1(const Eigen::Ref<const Eigen::ArrayXd>& diff, double threshold) {
  if (!(threshold > 0)) throw ValidationError("loss.smooth_l1", "threshold must be > 0");
  if (diff.size() == 0) throw ValidationError("loss.smooth_l1", "empty input");
  return smooth_l1_elementwise(diff, threshold).mean();
}

Var signal_loss(Var pred, Var target, double threshold) {
  if (!(pred.shape() == target.shape()))
    throw ValidationError("loss.signal_loss",
                          "shape mismatch: " + to_string(pred.shape()) + " vs " + to_string(target.shape()));
  if (!(threshold > 0)) throw ValidationError("loss.signal_loss", "threshold must be > 0");
  const Eigen::ArrayXd diff = target.value().values() - pred.value().values();
  const double count = static_cast<double>(diff.size());
  const double value = smooth_l1(diff, threshold);
  const int pi = pred.id(), ti = target.id();
  return pred.tape().record("signal_loss", Tensor::constant({1, 1, 1}, value), {pred, target},
                            [=](Tape& tape, int self) {
                              const double up = tape.grad(self)[0];
                              const Eigen::ArrayXd d = up / count * smooth_l1_derivative(diff, threshold);
                              if (tape.requires_grad(ti)) tape.grad_buffer(ti) += d;
                              if (tape.requires_grad(pi)) tape.grad_buffer(pi) -= d;
                            });
}

namespace {

// Sample positions, within one row, feeding each n_fft-point transform.
std::vector<std::vector<Index>> segment_taps(Index length, const LossConfig& cfg) {
  const Index n = cfg.n_fft;
  if (length % n != 0)
    throw ValidationError("loss.frequency_loss", "length " + std::to_string(length) +
                                                     " is not a multiple of n_fft " + std::to_string(n));
  const Index ratio = length / n;
  std::vector<std::vector<Index>> segments;
  switch (cfg.fft_window_policy) {
    case FftWindowPolicy::two_halves:
      for (Index s = 0; s < ratio; ++s) {
        std::vector<Index> taps(n);
        for (Index k = 0; k < n; ++k) taps[k] = s * n + k;
        segments.push_back(std::move(taps));
      }
      break;
    case FftWindowPolicy::first_half: {
      std::vector<Index> taps(n);
      for (Index k = 0; k < n; ++k) taps[k] = k;
      segments.push_back(std::move(taps));
      break;
    }
    case FftWindowPolicy::decimate: {
      std::vector<Index> taps(n);
      for (Index k = 0; k < n; ++k) taps[k] = k * ratio;
      segments.push_back(std::move(taps));
      break;
    }
  }
  return segments;
}

}  // namespace

Var frequency_loss(Var pred, Var target, const LossConfig& cfg) {
  cfg.validate();
  if (!(pred.shape() == target.shape()))
    throw ValidationError("loss.frequency_loss",
                          "shape mismatch: " + to_string(pred.shape()) + " vs " + to_string(target.shape()));
  const Shape shape = pred.shape();
  const auto segments = segment_taps(shape.length, cfg);
  const Index bins = cfg.n_fft / 2 + 1;
  const double threshold = cfg.smooth_l1_threshold;

  // One difference spectrum (target - pred) per (row, segment).
  std::vector<Eigen::ArrayXcd> diffs;
  double total = 0.0;
  Eigen::ArrayXd seg_pred(cfg.n_fft), seg_target(cfg.n_fft);
  for (Index b = 0; b < shape.batch; ++b) {
    for (Index c = 0; c < shape.channels; ++c) {
      const auto p_row = pred.value().row(b, c);
      const auto t_row = target.value().row(b, c);
      for (const auto& taps : segments) {
        for (Index k = 0; k < cfg.n_fft; ++k) {
          seg_pred[k] = p_row[taps[k]];
          seg_target[k] = t_row[taps[k]];
        }
        Eigen::ArrayXcd d = rfft(seg_target, cfg.n_fft).bins - rfft(seg_pred, cfg.n_fft).bins;
        total += smooth_l1_elementwise(d.real(), threshold).sum() +
                 smooth_l1_elementwise(d.imag(), threshold).sum();
        diffs.push_back(std::move(d));
      }
    }
  }
  const double count = static_cast<double>(diffs.size() * 2 * bins);
  const int pi = pred.id(), ti = target.id();

  return pred.tape().record(
      "frequency_loss", Tensor::constant({1, 1, 1}, total / count), {pred, target},
      [=, diffs = std::move(diffs)](Tape& tape, int self) {
        const double up = tape.grad(self)[0] / count;
        Eigen::ArrayXd* dp = tape.requires_grad(pi) ? &tape.grad_buffer(pi) : nullptr;
        Eigen::ArrayXd* dt = tape.requires_grad(ti) ? &tape.grad_buffer(ti) : nullptr;
        std::size_t n = 0;
        for (Index b = 0; b < shape.batch; ++b) {
          for (Index c = 0; c < shape.channels; ++c) {
            const Index row = (b * shape.channels + c) * shape.length;
            for (const auto& taps : segments) {
              const Eigen::ArrayXcd& d = diffs[n++];
              Eigen::ArrayXcd g(bins);
              g.real() = up * smooth_l1_derivative(d.real(), threshold);
              g.imag() = up * smooth_l1_derivative(d.imag(), threshold);
              // g is dL/dD for D = rfft(target) - rfft(pred).
              const Eigen::ArrayXd dseg = rfft_backward(g, cfg.n_fft);
              for (Index k = 0; k < cfg.n_fft; ++k) {
                if (dt) (*dt)[row + taps[k]] += dseg[k];
                if (dp) (*dp)[row + taps[k]] -= dseg[k];
              }
            }
          }
        }
      });
}

std::pair<Var, LossReport> total_loss(Var pred, Var target, const LossConfig& cfg) {
  cfg.validate();
  Var ls = signal_loss(pred, target, cfg.smooth_l1_threshold);
  Var lf = frequency_loss(pred, target, cfg);
  Var total = add(scale(ls, cfg.alpha), scale(lf, cfg.beta));
  LossReport report;
  report.l_signal = ls.value().values()[0];
  report.l_frequency = lf.value().values()[0];
  report.l_total = total.value().values()[0];
  return {total, report};
}

}  // namespace cecg
