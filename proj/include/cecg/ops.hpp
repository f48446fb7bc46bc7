#pragma once

#include "cecg/tensor.hpp"

#include <random>

namespace cecg {

/// Geometry of a 1D convolution. Weights are [out, in, kernel] for conv1d
/// and [in, out, kernel] for conv1d_transpose.
struct ConvSpec {
  Index in_channels = 1;
  Index out_channels = 1;
  Index kernel_size = 1;
  Index stride = 1;
  Index dilation = 1;
  Index padding = 0;

  void validate() const;
  Index extent() const { return (kernel_size - 1) * dilation + 1; }
  Index output_length(Index length) const {
    return (length + 2 * padding - extent()) / stride + 1;
  }
  Index transpose_output_length(Index length) const {
    return (length - 1) * stride - 2 * padding + extent();
  }
};

/// Running statistics of one batch-norm layer, updated in train mode.
struct BatchNormState {
  Eigen::ArrayXd running_mean;
  Eigen::ArrayXd running_var;

  static BatchNormState fresh(Index channels) {
    return {Eigen::ArrayXd::Zero(channels), Eigen::ArrayXd::Ones(channels)};
  }
};

struct BatchNormOptions {
  double eps = 1e-5;
  double momentum = 0.1;
};

// Cross-correlation (no kernel flip) of the zero-padded input with `weight`,
// plus a per-output-channel bias of shape [1, out, 1].
Var conv1d(Var input, Var weight, Var bias, const ConvSpec& spec);

// Adjoint of conv1d with the same weight tensor, plus bias.
Var conv1d_transpose(Var input, Var weight, Var bias, const ConvSpec& spec);

// Per-channel normalization over batch x length. gamma/beta are [1, C, 1].
Var batchnorm1d(Var input, Var gamma, Var beta, BatchNormState& state, Mode mode,
                const BatchNormOptions& options = {});

Var leaky_relu(Var input, double slope);

// Inverted dropout: survivors are scaled by 1/(1-rate). Identity in eval mode.
Var dropout(Var input, double rate, std::mt19937_64& rng, Mode mode);

// Channel concatenation; `a` occupies the leading channels.
Var concat_channels(Var a, Var b);

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var sum(Var a);
Var mean(Var a);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator*(double factor, Var a) { return scale(a, factor); }

}  // namespace cecg
