#include "support.hpp"

#include "cecg/error.hpp"
#include "cecg/loss.hpp"
#include "cecg/ops.hpp"
#include "cecg/spectral.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

using namespace cecg;
using cecg::testing::check_gradients;
using cecg::testing::random_tensor;

namespace {

LossConfig config(double alpha, double beta, Index n_fft, FftWindowPolicy policy = FftWindowPolicy::two_halves) {
  LossConfig c;
  c.alpha = alpha;
  c.beta = beta;
  c.n_fft = n_fft;
  c.fft_window_policy = policy;
  return c;
}

/// Mean SmoothL1 over the real and imaginary parts of one-sided DFT
/// differences, averaged over the given segments; built from rfft directly.
double frequency_oracle(const Tensor& pred, const Tensor& target, Index n_fft, Index segments, Index step) {
  double total = 0.0;
  Index count = 0;
  for (Index b = 0; b < pred.batch(); ++b)
    for (Index s = 0; s < segments; ++s) {
      Eigen::ArrayXd p(n_fft), t(n_fft);
      for (Index i = 0; i < n_fft; ++i) {
        const Index at = step == 1 ? s * n_fft + i : i * step;
        p[i] = pred(b, 0, at);
        t[i] = target(b, 0, at);
      }
      const Eigen::ArrayXcd d = rfft(t, n_fft).bins - rfft(p, n_fft).bins;
      total += smooth_l1_elementwise(d.real(), 1.0).sum() + smooth_l1_elementwise(d.imag(), 1.0).sum();
      count += 2 * d.size();
    }
  return total / static_cast<double>(count);
}

}  // namespace

TEST(SmoothL1, Branches) {
  EXPECT_EQ(smooth_l1(Eigen::ArrayXd::Zero(5)), 0.0);
  EXPECT_DOUBLE_EQ(smooth_l1(Eigen::ArrayXd::Constant(1, 0.5)), 0.125);
  EXPECT_DOUBLE_EQ(smooth_l1(Eigen::ArrayXd::Constant(1, 2.0)), 1.5);
  EXPECT_DOUBLE_EQ(smooth_l1(Eigen::ArrayXd::Constant(1, -2.0)), 1.5);
  EXPECT_THROW(smooth_l1(Eigen::ArrayXd()), ValidationError);
}

TEST(SmoothL1, SmoothAtUnitThreshold) {
  Eigen::ArrayXd d(2);
  d << std::nextafter(1.0, 0.0), 1.0;
  const Eigen::ArrayXd value = smooth_l1_elementwise(d, 1.0);
  const Eigen::ArrayXd slope = smooth_l1_derivative(d, 1.0);
  EXPECT_NEAR(value[0], value[1], 1e-12);
  EXPECT_NEAR(slope[0], slope[1], 1e-12);
}

TEST(SignalLoss, ValuesAndGradient) {
  Tape tape;
  const Tensor target = random_tensor({2, 1, 16}, 1);
  Tensor shifted = target;
  shifted.values() += 0.5;
  EXPECT_EQ(signal_loss(tape.constant(target), tape.constant(target)).value().values()[0], 0.0);
  const Var pred = tape.variable(shifted);
  const Var l = signal_loss(pred, tape.constant(target));
  EXPECT_NEAR(l.value().values()[0], 0.125, 1e-15);
  tape.backward(l);
  // d = target - pred = -0.5, so dL/dpred = -d / count.
  EXPECT_LT((pred.grad() - 0.5 / 32.0).abs().maxCoeff(), 1e-15);
}

TEST(SignalLoss, RejectsShapeMismatch) {
  Tape tape;
  EXPECT_THROW(signal_loss(tape.constant(Tensor({1, 1, 8})), tape.constant(Tensor({1, 1, 9}))), ValidationError);
}

TEST(FrequencyLoss, ZeroForIdenticalSignals) {
  Tape tape;
  const Tensor x = random_tensor({2, 1, 64}, 2);
  for (auto policy : {FftWindowPolicy::two_halves, FftWindowPolicy::first_half, FftWindowPolicy::decimate})
    EXPECT_EQ(frequency_loss(tape.constant(x), tape.constant(x), config(1, 1, 32, policy)).value().values()[0], 0.0);
}

TEST(FrequencyLoss, MatchesDirectDftOracle) {
  const Tensor p = random_tensor({2, 1, 64}, 3);
  const Tensor t = random_tensor({2, 1, 64}, 4);
  Tape tape;
  const auto value = [&](FftWindowPolicy policy) {
    return frequency_loss(tape.constant(p), tape.constant(t), config(1, 1, 32, policy)).value().values()[0];
  };
  EXPECT_NEAR(value(FftWindowPolicy::two_halves), frequency_oracle(p, t, 32, 2, 1), 1e-12);
  EXPECT_NEAR(value(FftWindowPolicy::first_half), frequency_oracle(p, t, 32, 1, 1), 1e-12);
  EXPECT_NEAR(value(FftWindowPolicy::decimate), frequency_oracle(p, t, 32, 1, 2), 1e-12);
}

TEST(FrequencyLoss, HalfPeriodShiftOfToneLandsInItsBin) {
  // 32 Hz at 1024 Hz over a 1024-point half: bin 32. Half a period is 16 samples.
  const Index n = 2048;
  Tensor target({1, 1, n}), pred({1, 1, n});
  for (Index i = 0; i < n; ++i) {
    target(0, 0, i) = std::sin(2.0 * std::numbers::pi * 32.0 * i / 1024.0);
    pred(0, 0, i) = std::sin(2.0 * std::numbers::pi * 32.0 * (i - 16) / 1024.0);
  }
  Tape tape;
  const double lf = frequency_loss(tape.constant(pred), tape.constant(target), config(1, 1, 1024)).value().values()[0];
  EXPECT_GT(lf, 0.0);
  // Spectra differ only at bin 32 where Y - Y_pred = -1024 i, so each half
  // contributes SmoothL1(1024) = 1023.5 over 2 * 513 components.
  EXPECT_NEAR(lf, 1023.5 / (2.0 * 513.0), 1e-9);
}

TEST(FrequencyLoss, RejectsIncompatibleLength) {
  Tape tape;
  const Var x = tape.constant(Tensor({1, 1, 48}));
  EXPECT_THROW(frequency_loss(x, x, config(1, 1, 32)), ValidationError);
  EXPECT_THROW(frequency_loss(x, x, config(1, 1, 24)), ValidationError);
}

TEST(FrequencyLoss, GradientOnEightSampleToy) {
  const auto r = check_gradients({random_tensor({1, 1, 8}, 5, -2, 2), random_tensor({1, 1, 8}, 6, -2, 2)},
                                 [](Tape&, const std::vector<Var>& v) {
                                   return frequency_loss(v[0], v[1], config(1, 1, 4));
                                 });
  EXPECT_LT(r.max_error, 1e-3) << r.worst;
}

TEST(FrequencyLoss, GradientUnderEachPolicy) {
  for (auto policy : {FftWindowPolicy::two_halves, FftWindowPolicy::first_half, FftWindowPolicy::decimate}) {
    const auto r = check_gradients({random_tensor({2, 1, 32}, 7, -0.3, 0.3), random_tensor({2, 1, 32}, 8, -0.3, 0.3)},
                                   [&](Tape&, const std::vector<Var>& v) {
                                     return frequency_loss(v[0], v[1], config(1, 1, 16, policy));
                                   });
    EXPECT_LT(r.max_error, 1e-3) << to_string(policy) << " " << r.worst;
  }
}

TEST(SignalLoss, GradientAcrossBothBranches) {
  const auto r = check_gradients({random_tensor({1, 1, 32}, 9, -3, 3), random_tensor({1, 1, 32}, 10, -3, 3)},
                                 [](Tape&, const std::vector<Var>& v) { return signal_loss(v[0], v[1]); });
  EXPECT_LT(r.max_error, 1e-3) << r.worst;
}

TEST(TotalLoss, WeightedCombination) {
  Tape tape;
  const Tensor p = random_tensor({1, 1, 64}, 11), t = random_tensor({1, 1, 64}, 12);
  const auto [l, report] = total_loss(tape.constant(p), tape.constant(t), config(0.3, 2.0, 32));
  EXPECT_EQ(report.l_total, 0.3 * report.l_signal + 2.0 * report.l_frequency);
  EXPECT_EQ(l.value().values()[0], report.l_total);

  const auto [l1, signal_only] = total_loss(tape.constant(p), tape.constant(t), config(1, 0, 32));
  EXPECT_EQ(signal_only.l_total, signal_only.l_signal);
  const auto [l0, freq_only] = total_loss(tape.constant(t), tape.constant(t), config(0, 1, 32));
  EXPECT_EQ(freq_only.l_total, 0.0);
}

TEST(TotalLoss, MonotoneInWeights) {
  Tape tape;
  const Tensor p = random_tensor({1, 1, 64}, 13), t = random_tensor({1, 1, 64}, 14);
  double prev = -1.0;
  for (double beta : {0.0, 0.5, 1.0, 2.0}) {
    const double v = total_loss(tape.constant(p), tape.constant(t), config(1, beta, 32)).second.l_total;
    EXPECT_GE(v, prev);
    prev = v;
  }
}

TEST(TotalLoss, GradientIsLinearInComponents) {
  const Tensor p = random_tensor({1, 1, 64}, 15), t = random_tensor({1, 1, 64}, 16);
  auto grad = [&](double alpha, double beta) {
    Tape tape;
    const Var v = tape.variable(p);
    tape.backward(total_loss(v, tape.constant(t), config(alpha, beta, 32)).first);
    return Eigen::ArrayXd(v.grad());
  };
  const Eigen::ArrayXd gs = grad(1, 0), gf = grad(0, 1), gt = grad(0.7, 1.9);
  EXPECT_LT((gt - (0.7 * gs + 1.9 * gf)).abs().maxCoeff(), 1e-12);
}

TEST(LossConfig, Validation) {
  EXPECT_THROW(config(0, 0, 32).validate(), ValidationError);
  EXPECT_THROW(config(-1, 1, 32).validate(), ValidationError);
  EXPECT_THROW(config(1, 1, 30).validate(), ValidationError);
  LossConfig c;
  c.smooth_l1_threshold = 0.0;
  EXPECT_THROW(c.validate(), ValidationError);
  EXPECT_EQ(parse_fft_window_policy("decimate"), FftWindowPolicy::decimate);
  EXPECT_THROW(parse_fft_window_policy("halves"), ValidationError);
}
