#pragma once

#include "cecg/loss.hpp"
#include "cecg/network.hpp"
#include "cecg/ops.hpp"
#include "cecg/spectral.hpp"
#include "cecg/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace cecg::testing {

inline Tensor random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor t(shape);
  for (Index i = 0; i < t.size(); ++i) t.values()[i] = dist(rng);
  return t;
}

/// Uniform values with magnitude in [gap, 1], random sign; keeps kinks at 0 out
/// of finite-difference reach.
inline Tensor away_from_zero(Shape shape, std::uint64_t seed, double gap = 0.05) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> mag(gap, 1.0);
  std::bernoulli_distribution sign(0.5);
  Tensor t(shape);
  for (Index i = 0; i < t.size(); ++i) t.values()[i] = (sign(rng) ? 1.0 : -1.0) * mag(rng);
  return t;
}

/// Reduces any output to a scalar through a fixed random projection, so the
/// check exercises the full vector-Jacobian product.
inline Var project(Var out, std::uint64_t seed = 99) {
  return sum(mul(out, out.tape().constant(random_tensor(out.shape(), seed))));
}

/// |analytic - numeric| / max(|analytic|, |numeric|, floor).
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

struct GradCheckResult {
  double max_error = 0.0;
  std::string worst;
  Index checked = 0;
  Index kink_crossings = 0;  ///< elements whose stencil straddles a non-differentiable point
};

using LossBuilder = std::function<Var(Tape&, const std::vector<Var>&)>;

/// Central differences of `build` against the tape's reverse pass, over every
/// element of every input.
inline GradCheckResult check_gradients(const std::vector<Tensor>& inputs, const LossBuilder& build,
                                       double eps = 1e-4) {
  std::vector<Eigen::ArrayXd> analytic;
  {
    Tape tape;
    std::vector<Var> leaves;
    for (const Tensor& t : inputs) leaves.push_back(tape.variable(t));
    tape.backward(build(tape, leaves));
    for (const Var& v : leaves) analytic.push_back(v.grad());
  }
  auto evaluate = [&](const std::vector<Tensor>& values) {
    Tape tape;
    std::vector<Var> leaves;
    for (const Tensor& t : values) leaves.push_back(tape.variable(t));
    return build(tape, leaves).value().values()[0];
  };

  GradCheckResult result;
  std::vector<Tensor> probe = inputs;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    for (Index i = 0; i < inputs[k].size(); ++i) {
      const double x = inputs[k].values()[i];
      probe[k].values()[i] = x + eps;
      const double up = evaluate(probe);
      probe[k].values()[i] = x - eps;
      const double down = evaluate(probe);
      probe[k].values()[i] = x;
      const double err = relative_error(analytic[k][i], (up - down) / (2 * eps));
      ++result.checked;
      if (err > result.max_error) {
        result.max_error = err;
        result.worst = "input " + std::to_string(k) + " element " + std::to_string(i);
      }
    }
  }
  return result;
}

/// Which side of every non-differentiable point the recorded pass sits on:
/// the sign of each leaky ReLU input and, for each SmoothL1 residual, whether
/// it lies inside the threshold.
inline std::vector<bool> kink_pattern(const Tape& tape, const LossConfig& loss) {
  std::vector<bool> out;
  const double thr = loss.smooth_l1_threshold;
  for (int id = 0; id < static_cast<int>(tape.size()); ++id) {
    const std::string_view op = tape.op(id);
    if (op == "leaky_relu") {
      for (double v : tape.value(tape.inputs(id)[0]).values()) out.push_back(v > 0);
    } else if (op == "signal_loss") {
      const Eigen::ArrayXd d = tape.value(tape.inputs(id)[1]).values() - tape.value(tape.inputs(id)[0]).values();
      for (double v : d) out.push_back(std::abs(v) < thr);
    } else if (op == "frequency_loss") {
      const Tensor& p = tape.value(tape.inputs(id)[0]);
      const Tensor& t = tape.value(tape.inputs(id)[1]);
      const Index n = loss.n_fft, ratio = p.length() / n;
      const Index segments = loss.fft_window_policy == FftWindowPolicy::two_halves ? ratio : 1;
      const Index step = loss.fft_window_policy == FftWindowPolicy::decimate ? ratio : 1;
      for (Index b = 0; b < p.batch(); ++b)
        for (Index s = 0; s < segments; ++s) {
          Eigen::ArrayXd d(n);
          for (Index k = 0; k < n; ++k) {
            const Index at = step == 1 ? s * n + k : k * step;
            d[k] = t(b, 0, at) - p(b, 0, at);
          }
          for (const auto& z : rfft(d, n).bins) {
            out.push_back(std::abs(z.real()) < thr);
            out.push_back(std::abs(z.imag()) < thr);
          }
        }
    }
  }
  return out;
}

struct NetworkLoss {
  double value;
  std::vector<bool> kinks;
};

/// Train-mode total loss of a network with a fixed dropout seed.
inline NetworkLoss network_loss(Network& net, const Tensor& x, const Tensor& y, const LossConfig& loss,
                                std::uint64_t dropout_seed) {
  Tape tape;
  BoundParameters params(tape, net.parameters(), false);
  std::mt19937_64 rng(dropout_seed);
  const Var pred = net.forward(params, tape.constant(x), Mode::train, rng);
  const double value = total_loss(pred, tape.constant(y), loss).second.l_total;
  return {value, kink_pattern(tape, loss)};
}

/// Finite-difference check of every network parameter. Central differences
/// are no oracle where the stencil crosses a kink, so those elements are
/// counted instead of compared.
inline GradCheckResult check_network_gradients(Network& net, const Tensor& x, const Tensor& y,
                                               const LossConfig& loss, std::uint64_t dropout_seed = 7,
                                               double eps = 1e-4) {
  std::vector<Eigen::ArrayXd> analytic;
  {
    Tape tape;
    BoundParameters params(tape, net.parameters(), true);
    std::mt19937_64 rng(dropout_seed);
    const Var pred = net.forward(params, tape.constant(x), Mode::train, rng);
    tape.backward(total_loss(pred, tape.constant(y), loss).first);
    for (std::size_t i = 0; i < params.size(); ++i) analytic.push_back(params.at(i).grad());
  }
  GradCheckResult result;
  for (std::size_t k = 0; k < net.parameters().size(); ++k) {
    Parameter& p = net.parameters()[k];
    for (Index i = 0; i < p.value.size(); ++i) {
      const double v = p.value.values()[i];
      p.value.values()[i] = v + eps;
      const NetworkLoss up = network_loss(net, x, y, loss, dropout_seed);
      p.value.values()[i] = v - eps;
      const NetworkLoss down = network_loss(net, x, y, loss, dropout_seed);
      p.value.values()[i] = v;
      ++result.checked;
      if (up.kinks != down.kinks) {
        ++result.kink_crossings;
        continue;
      }
      const double err = relative_error(analytic[k][i], (up.value - down.value) / (2 * eps));
      if (err > result.max_error) {
        result.max_error = err;
        result.worst = p.name + "[" + std::to_string(i) + "]";
      }
    }
  }
  return result;
}

}  // namespace cecg::testing
