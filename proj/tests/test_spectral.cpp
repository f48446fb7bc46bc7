#include "cecg/error.hpp"
#include "cecg/spectral.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

using namespace cecg;
using Eigen::ArrayXcd;
using Eigen::ArrayXd;
using Eigen::Index;

namespace {

ArrayXd random_signal(Index n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist;
  ArrayXd x(n);
  for (Index i = 0; i < n; ++i) x[i] = dist(rng);
  return x;
}

ArrayXcd naive_dft(const ArrayXd& x) {
  const Index n = x.size();
  ArrayXcd out(n / 2 + 1);
  for (Index k = 0; k <= n / 2; ++k) {
    std::complex<double> acc = 0.0;
    for (Index t = 0; t < n; ++t) {
      // Reduce k*t mod n first so the angle stays small and exact.
      const double angle = -2.0 * std::numbers::pi * static_cast<double>((k * t) % n) / static_cast<double>(n);
      acc += x[t] * std::polar(1.0, angle);
    }
    out[k] = acc;
  }
  return out;
}

double one_sided_energy(const ArrayXcd& bins, Index n) {
  double e = std::norm(bins[0]) + std::norm(bins[n / 2]);
  for (Index k = 1; k < n / 2; ++k) e += 2.0 * std::norm(bins[k]);
  return e / static_cast<double>(n);
}

}  // namespace

TEST(Rfft, UnitImpulse) {
  ArrayXd x = ArrayXd::Zero(8);
  x[0] = 1.0;
  const Spectrum s = rfft(x, 8);
  ASSERT_EQ(s.bins.size(), 5);
  for (Index k = 0; k < 5; ++k) {
    EXPECT_NEAR(s.bins[k].real(), 1.0, 1e-15);
    EXPECT_NEAR(s.bins[k].imag(), 0.0, 1e-15);
  }
}

TEST(Rfft, SingleTone) {
  ArrayXd x(8);
  for (Index n = 0; n < 8; ++n) x[n] = std::cos(2.0 * std::numbers::pi * 3.0 * n / 8.0);
  const Spectrum s = rfft(x, 8);
  for (Index k = 0; k < 5; ++k) {
    const std::complex<double> expected = k == 3 ? 4.0 : 0.0;
    EXPECT_LT(std::abs(s.bins[k] - expected), 1e-12) << "bin " << k;
  }
}

TEST(Rfft, MatchesNaiveDft) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const ArrayXd x = random_signal(1024, seed);
    EXPECT_LT((rfft(x, 1024).bins - naive_dft(x)).abs().maxCoeff(), 1e-9);
  }
}

TEST(Rfft, RejectsBadLengths) {
  EXPECT_THROW(rfft(ArrayXd::Zero(12), 12), ValidationError);
  EXPECT_THROW(rfft(ArrayXd::Zero(8), 16), ValidationError);
}

TEST(Rfft, ParsevalAndRealEndpoints) {
  const ArrayXd x = random_signal(1024, 11);
  const Spectrum s = rfft(x, 1024);
  EXPECT_EQ(s.bins[0].imag(), 0.0);
  EXPECT_EQ(s.bins[512].imag(), 0.0);
  const double energy = x.square().sum();
  EXPECT_NEAR(one_sided_energy(s.bins, 1024) / energy, 1.0, 1e-9);
}

TEST(Rfft, Linearity) {
  const ArrayXd a = random_signal(256, 1), b = random_signal(256, 2);
  const ArrayXcd lhs = rfft(2.5 * a - 0.75 * b, 256).bins;
  const ArrayXcd rhs = 2.5 * rfft(a, 256).bins - 0.75 * rfft(b, 256).bins;
  EXPECT_LT((lhs - rhs).abs().maxCoeff(), 1e-10);
}

TEST(Irfft, Roundtrip) {
  const ArrayXd x = random_signal(1024, 3);
  EXPECT_LT((irfft(rfft(x, 1024)) - x).abs().maxCoeff(), 1e-10);
}

TEST(Irfft, ZeroAndDcSpectra) {
  Spectrum s{16, ArrayXcd::Zero(9)};
  EXPECT_TRUE((irfft(s) == 0.0).all());
  s.bins[0] = 16.0;
  EXPECT_LT((irfft(s) - 1.0).abs().maxCoeff(), 1e-15);
}

TEST(Irfft, RejectsComplexEndpoints) {
  Spectrum s{8, ArrayXcd::Zero(5)};
  s.bins[0] = {1.0, 0.5};
  EXPECT_THROW(irfft(s), ValidationError);
  s.bins[0] = 1.0;
  s.bins[4] = {0.0, 1.0};
  EXPECT_THROW(irfft(s), ValidationError);
}

TEST(RfftBackward, DcBinIsPlainSum) {
  ArrayXcd g = ArrayXcd::Zero(9);
  g[0] = 1.0;
  EXPECT_LT((rfft_backward(g, 16) - 1.0).abs().maxCoeff(), 1e-15);
}

TEST(RfftBackward, ParsevalWeightedEnergy) {
  // L = |X_0|^2 + |X_{N/2}|^2 + 2 sum_interior |X_k|^2 = N sum x^2, so dL/dx = 2 N x.
  const Index n = 64;
  const ArrayXd x = random_signal(n, 4);
  const ArrayXcd bins = rfft(x, n).bins;
  ArrayXcd g = 2.0 * bins;
  g.segment(1, n / 2 - 1) *= 2.0;
  EXPECT_LT((rfft_backward(g, n) - 2.0 * n * x).abs().maxCoeff(), 1e-9);
}

TEST(RfftBackward, AdjointIdentity) {
  const Index n = 1024;
  const ArrayXd x = random_signal(n, 5);
  const ArrayXd gr = random_signal(n / 2 + 1, 6), gi = random_signal(n / 2 + 1, 7);
  ArrayXcd g(n / 2 + 1);
  g.real() = gr;
  g.imag() = gi;
  const ArrayXcd X = rfft(x, n).bins;
  const double lhs = (X.real() * gr + X.imag() * gi).sum();
  const double rhs = (x * rfft_backward(g, n)).sum();
  EXPECT_NEAR(lhs, rhs, 1e-9 * std::max(1.0, std::abs(lhs)));
}

TEST(FftInplace, ForwardThenInverseScalesByLength) {
  ArrayXcd z(32);
  const ArrayXd re = random_signal(32, 8), im = random_signal(32, 9);
  z.real() = re;
  z.imag() = im;
  const ArrayXcd original = z;
  fft_inplace(z, false);
  fft_inplace(z, true);
  EXPECT_LT((z / 32.0 - original).abs().maxCoeff(), 1e-13);
}
