#pragma once

#include <Eigen/Core>

#include <complex>

namespace cecg {

/// One-sided transform of a real signal: bins 0..n_fft/2.
struct Spectrum {
  Eigen::Index n_fft = 0;
  Eigen::ArrayXcd bins;
};

bool is_power_of_two(Eigen::Index n);

/// In-place iterative radix-2 complex FFT. `inverse` uses the +i kernel and
/// does not scale by 1/n.
void fft_inplace(Eigen::Ref<Eigen::ArrayXcd> data, bool inverse);

/// X_k = sum_n x_n exp(-2 pi i k n / N) for k = 0..N/2. Requires
/// signal.size() == n_fft and n_fft a power of two.
Spectrum rfft(const Eigen::Ref<const Eigen::ArrayXd>& signal, Eigen::Index n_fft);

/// Inverse of rfft. The DC and Nyquist bins must be real.
Eigen::ArrayXd irfft(const Spectrum& spectrum);

/// Jacobian-transpose of rfft. `upstream` holds dL/dRe(X_k) + i dL/dIm(X_k)
/// per one-sided bin; the result is dL/dx.
Eigen::ArrayXd rfft_backward(const Eigen::Ref<const Eigen::ArrayXcd>& upstream, Eigen::Index n_fft);

}  // namespace cecg
