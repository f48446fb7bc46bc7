#include "cecg/spectral.hpp"

#include "cecg/error.hpp"

#include <cmath>
#include <numbers>
#include <utility>

namespace cecg {

bool is_power_of_two(Eigen::Index n) { return n > 0 && (n & (n - 1)) == 0; }

void fft_inplace(Eigen::Ref<Eigen::ArrayXcd> data, bool inverse) {
  const Eigen::Index n = data.size();
  if (!is_power_of_two(n))
    throw ValidationError("spectral.fft", "length " + std::to_string(n) + " is not a power of two");

  for (Eigen::Index i = 1, j = 0; i < n; ++i) {
    Eigen::Index bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(data[i], data[j]);
  }

  const double sign = inverse ? 1.0 : -1.0;
  for (Eigen::Index len = 2; len <= n; len <<= 1) {
    const Eigen::Index half = len / 2;
    // Twiddles computed directly per index rather than by repeated
    // multiplication, which drifts at n = 1024.
    for (Eigen::Index k = 0; k < half; ++k) {
      const double angle = sign * 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(len);
      const std::complex<double> w(std::cos(angle), std::sin(angle));
      for (Eigen::Index start = 0; start < n; start += len) {
        const std::complex<double> u = data[start + k];
        const std::complex<double> v = w * data[start + k + half];
        data[start + k] = u + v;
        data[start + k + half] = u - v;
      }
    }
  }
}

Spectrum rfft(const Eigen::Ref<const Eigen::ArrayXd>& signal, Eigen::Index n_fft) {
  if (!is_power_of_two(n_fft))
    throw ValidationError("spectral.rfft", "n_fft " + std::to_string(n_fft) + " is not a power of two");
  if (signal.size() != n_fft)
    throw ValidationError("spectral.rfft", "signal length " + std::to_string(signal.size()) +
                                               " != n_fft " + std::to_string(n_fft));
  Eigen::ArrayXcd work = signal.cast<std::complex<double>>();
  fft_inplace(work, false);
  Spectrum out{n_fft, work.head(n_fft / 2 + 1)};
  // Real input: DC and Nyquist are real up to rounding; make it exact.
  out.bins[0] = out.bins[0].real();
  out.bins[n_fft / 2] = out.bins[n_fft / 2].real();
  return out;
}

namespace {

Eigen::ArrayXd inverse_one_sided(const Eigen::ArrayXcd& bins, Eigen::Index n) {
  Eigen::ArrayXcd full(n);
  const Eigen::Index half = n / 2;
  full.head(half + 1) = bins;
  for (Eigen::Index k = 1; k < half; ++k) full[n - k] = std::conj(bins[k]);
  fft_inplace(full, true);
  return full.real() / static_cast<double>(n);
}

}  // namespace

Eigen::ArrayXd irfft(const Spectrum& spectrum) {
  const Eigen::Index n = spectrum.n_fft;
  if (!is_power_of_two(n) || n < 2)
    throw ValidationError("spectral.irfft", "n_fft " + std::to_string(n) + " is not a power of two >= 2");
  if (spectrum.bins.size() != n / 2 + 1)
    throw ValidationError("spectral.irfft", "expected " + std::to_string(n / 2 + 1) + " bins, got " +
                                                std::to_string(spectrum.bins.size()));
  if (spectrum.bins[0].imag() != 0.0 || spectrum.bins[n / 2].imag() != 0.0)
    throw ValidationError("spectral.irfft", "DC and Nyquist bins must have zero imaginary part");
  return inverse_one_sided(spectrum.bins, n);
}

Eigen::ArrayXd rfft_backward(const Eigen::Ref<const Eigen::ArrayXcd>& upstream, Eigen::Index n_fft) {
  if (!is_power_of_two(n_fft) || n_fft < 2)
    throw ValidationError("spectral.rfft_backward", "n_fft must be a power of two >= 2");
  const Eigen::Index half = n_fft / 2;
  if (upstream.size() != half + 1)
    throw ValidationError("spectral.rfft_backward", "expected " + std::to_string(half + 1) +
                                                        " bins, got " + std::to_string(upstream.size()));
  // dL/dx_n = Re(sum_k G_k exp(+2 pi i k n / N)) over the one-sided bins.
  // Writing that as N * irfft(Z) needs Z_k = G_k / 2 for interior bins and
  // the real part only at DC and Nyquist (their imaginary parts are constant 0).
  Eigen::ArrayXcd z = upstream / 2.0;
  z[0] = upstream[0].real();
  z[half] = upstream[half].real();
  return inverse_one_sided(z, n_fft) * static_cast<double>(n_fft);
}

}  // namespace cecg
