#include "cecg/ops.hpp"

#include "cecg/error.hpp"

#include <algorithm>
#include <cmath>

namespace cecg {
namespace {

void require_shape(const char* where, const char* what, const Shape& got, const Shape& want) {
  if (!(got == want))
    throw ValidationError(where, std::string(what) + " shape " + to_string(got) + ", expected " +
                                     to_string(want));
}

void require_finite(const char* where, const Tensor& t) {
  if (!t.all_finite()) throw NumericError(where, "non-finite input value");
}

// Range [first, last) of positions t such that t * stride + offset lies in [0, limit).
std::pair<Index, Index> tap_range(Index count, Index stride, Index offset, Index limit) {
  Index first = 0;
  if (offset < 0) first = (-offset + stride - 1) / stride;
  Index last = 0;
  if (limit - 1 - offset >= 0) last = (limit - 1 - offset) / stride + 1;
  last = std::min(last, count);
  return {first, std::max(first, last)};
}

void check_conv_common(const char* where, const Tensor& x, const Tensor& b, const ConvSpec& spec) {
  spec.validate();
  if (x.channels() != spec.in_channels)
    throw ValidationError(where, "input channels " + std::to_string(x.channels()) + " != spec.in_channels " +
                                     std::to_string(spec.in_channels));
  require_shape(where, "bias", b.shape(), {1, spec.out_channels, 1});
  require_finite(where, x);
}

}  // namespace

void ConvSpec::validate() const {
  if (in_channels < 1 || out_channels < 1)
    throw ValidationError("tensor_core.ConvSpec", "channel counts must be >= 1");
  if (kernel_size < 1) throw ValidationError("tensor_core.ConvSpec", "kernel_size must be >= 1");
  if (stride < 1) throw ValidationError("tensor_core.ConvSpec", "stride must be >= 1");
  if (dilation < 1) throw ValidationError("tensor_core.ConvSpec", "dilation must be >= 1");
  if (padding < 0) throw ValidationError("tensor_core.ConvSpec", "padding must be >= 0");
}

Var conv1d(Var input, Var weight, Var bias, const ConvSpec& spec) {
  constexpr const char* where = "tensor_core.conv1d";
  const Tensor& x = input.value();
  const Tensor& w = weight.value();
  check_conv_common(where, x, bias.value(), spec);
  require_shape(where, "weight", w.shape(), {spec.out_channels, spec.in_channels, spec.kernel_size});
  if (spec.extent() > x.length() + 2 * spec.padding)
    throw ValidationError(where, "kernel extent " + std::to_string(spec.extent()) +
                                     " exceeds padded length " +
                                     std::to_string(x.length() + 2 * spec.padding));

  const Index batch = x.batch();
  const Index in_len = x.length();
  const Index out_len = spec.output_length(in_len);
  Tensor y({batch, spec.out_channels, out_len});
  const Tensor& bv = bias.value();

  for (Index b = 0; b < batch; ++b) {
    for (Index o = 0; o < spec.out_channels; ++o) {
      double* yr = y.row(b, o).data();
      std::fill(yr, yr + out_len, bv(0, o, 0));
      for (Index i = 0; i < spec.in_channels; ++i) {
        const double* xr = x.row(b, i).data();
        for (Index j = 0; j < spec.kernel_size; ++j) {
          const double wv = w(o, i, j);
          const Index off = j * spec.dilation - spec.padding;
          const auto [t0, t1] = tap_range(out_len, spec.stride, off, in_len);
          for (Index t = t0; t < t1; ++t) yr[t] += wv * xr[t * spec.stride + off];
        }
      }
    }
  }

  const int xi = input.id(), wi = weight.id(), bi = bias.id();
  return input.tape().record(
      "conv1d", std::move(y), {input, weight, bias}, [=](Tape& tape, int self) {
        const Tensor& xv = tape.value(xi);
        const Tensor& wv = tape.value(wi);
        const Shape ys = tape.value(self).shape();
        const Eigen::ArrayXd& dy = tape.grad(self);
        auto dy_row = [&](Index b, Index o) { return dy.data() + (b * ys.channels + o) * ys.length; };
        if (tape.requires_grad(bi)) {
          Eigen::ArrayXd& db = tape.grad_buffer(bi);
          for (Index b = 0; b < ys.batch; ++b)
            for (Index o = 0; o < ys.channels; ++o)
              db[o] += Eigen::Map<const Eigen::ArrayXd>(dy_row(b, o), ys.length).sum();
        }
        const bool need_x = tape.requires_grad(xi);
        const bool need_w = tape.requires_grad(wi);
        Eigen::ArrayXd* dx = need_x ? &tape.grad_buffer(xi) : nullptr;
        Eigen::ArrayXd* dw = need_w ? &tape.grad_buffer(wi) : nullptr;
        const Index in_len = xv.length();
        for (Index b = 0; b < ys.batch; ++b) {
          for (Index o = 0; o < ys.channels; ++o) {
            const double* g = dy_row(b, o);
            for (Index i = 0; i < spec.in_channels; ++i) {
              const double* xr = xv.row(b, i).data();
              double* dxr = need_x ? dx->data() + (b * spec.in_channels + i) * in_len : nullptr;
              for (Index j = 0; j < spec.kernel_size; ++j) {
                const Index off = j * spec.dilation - spec.padding;
                const auto [t0, t1] = tap_range(ys.length, spec.stride, off, in_len);
                if (need_x) {
                  const double w_oij = wv(o, i, j);
                  for (Index t = t0; t < t1; ++t) dxr[t * spec.stride + off] += w_oij * g[t];
                }
                if (need_w) {
                  double acc = 0.0;
                  for (Index t = t0; t < t1; ++t) acc += g[t] * xr[t * spec.stride + off];
                  (*dw)[(o * spec.in_channels + i) * spec.kernel_size + j] += acc;
                }
              }
            }
          }
        }
      });
}

Var conv1d_transpose(Var input, Var weight, Var bias, const ConvSpec& spec) {
  constexpr const char* where = "tensor_core.conv1d_transpose";
  const Tensor& x = input.value();
  const Tensor& w = weight.value();
  check_conv_common(where, x, bias.value(), spec);
  require_shape(where, "weight", w.shape(), {spec.in_channels, spec.out_channels, spec.kernel_size});
  const Index batch = x.batch();
  const Index in_len = x.length();
  const Index out_len = spec.transpose_output_length(in_len);
  if (out_len < 1)
    throw ValidationError(where, "non-positive output length for input length " + std::to_string(in_len));

  Tensor y({batch, spec.out_channels, out_len});
  const Tensor& bv = bias.value();
  for (Index b = 0; b < batch; ++b) {
    for (Index o = 0; o < spec.out_channels; ++o) {
      double* yr = y.row(b, o).data();
      std::fill(yr, yr + out_len, bv(0, o, 0));
      for (Index i = 0; i < spec.in_channels; ++i) {
        const double* xr = x.row(b, i).data();
        for (Index j = 0; j < spec.kernel_size; ++j) {
          const double wv = w(i, o, j);
          const Index off = j * spec.dilation - spec.padding;
          const auto [t0, t1] = tap_range(in_len, spec.stride, off, out_len);
          for (Index t = t0; t < t1; ++t) yr[t * spec.stride + off] += wv * xr[t];
        }
      }
    }
  }

  const int xi = input.id(), wi = weight.id(), bi = bias.id();
  return input.tape().record(
      "conv1d_transpose", std::move(y), {input, weight, bias}, [=](Tape& tape, int self) {
        const Tensor& xv = tape.value(xi);
        const Tensor& wv = tape.value(wi);
        const Shape ys = tape.value(self).shape();
        const Eigen::ArrayXd& dy = tape.grad(self);
        auto dy_row = [&](Index b, Index o) { return dy.data() + (b * ys.channels + o) * ys.length; };
        if (tape.requires_grad(bi)) {
          Eigen::ArrayXd& db = tape.grad_buffer(bi);
          for (Index b = 0; b < ys.batch; ++b)
            for (Index o = 0; o < ys.channels; ++o)
              db[o] += Eigen::Map<const Eigen::ArrayXd>(dy_row(b, o), ys.length).sum();
        }
        const bool need_x = tape.requires_grad(xi);
        const bool need_w = tape.requires_grad(wi);
        Eigen::ArrayXd* dx = need_x ? &tape.grad_buffer(xi) : nullptr;
        Eigen::ArrayXd* dw = need_w ? &tape.grad_buffer(wi) : nullptr;
        const Index in_len = xv.length();
        for (Index b = 0; b < ys.batch; ++b) {
          for (Index i = 0; i < spec.in_channels; ++i) {
            const double* xr = xv.row(b, i).data();
            double* dxr = need_x ? dx->data() + (b * spec.in_channels + i) * in_len : nullptr;
            for (Index o = 0; o < ys.channels; ++o) {
              const double* g = dy_row(b, o);
              for (Index j = 0; j < spec.kernel_size; ++j) {
                const Index off = j * spec.dilation - spec.padding;
                const auto [t0, t1] = tap_range(in_len, spec.stride, off, ys.length);
                if (need_x) {
                  const double w_ioj = wv(i, o, j);
                  for (Index t = t0; t < t1; ++t) dxr[t] += w_ioj * g[t * spec.stride + off];
                }
                if (need_w) {
                  double acc = 0.0;
                  for (Index t = t0; t < t1; ++t) acc += xr[t] * g[t * spec.stride + off];
                  (*dw)[(i * spec.out_channels + o) * spec.kernel_size + j] += acc;
                }
              }
            }
          }
        }
      });
}

Var batchnorm1d(Var input, Var gamma, Var beta, BatchNormState& state, Mode mode,
                const BatchNormOptions& options) {
  constexpr const char* where = "tensor_core.batchnorm1d";
  const Tensor& x = input.value();
  const Index channels = x.channels();
  require_shape(where, "gamma", gamma.value().shape(), {1, channels, 1});
  require_shape(where, "beta", beta.value().shape(), {1, channels, 1});
  if (!(options.eps > 0)) throw ValidationError(where, "eps must be > 0");
  if (state.running_mean.size() != channels || state.running_var.size() != channels)
    throw ValidationError(where, "running statistics sized for " +
                                     std::to_string(state.running_mean.size()) + " channels, input has " +
                                     std::to_string(channels));
  require_finite(where, x);

  const Index batch = x.batch();
  const Index len = x.length();
  const double count = static_cast<double>(batch * len);
  Eigen::ArrayXd mean_c(channels), inv_std(channels);

  if (mode == Mode::train) {
    if (count < 1) throw ValidationError(where, "empty batch");
    for (Index c = 0; c < channels; ++c) {
      double s = 0.0;
      for (Index b = 0; b < batch; ++b) s += x.row(b, c).sum();
      const double m = s / count;
      double ss = 0.0;
      for (Index b = 0; b < batch; ++b) ss += (x.row(b, c) - m).square().sum();
      const double var = ss / count;
      mean_c[c] = m;
      inv_std[c] = 1.0 / std::sqrt(var + options.eps);
      const double unbiased = count > 1 ? ss / (count - 1) : var;
      state.running_mean[c] = (1 - options.momentum) * state.running_mean[c] + options.momentum * m;
      state.running_var[c] = (1 - options.momentum) * state.running_var[c] + options.momentum * unbiased;
    }
  } else {
    mean_c = state.running_mean;
    inv_std = (state.running_var + options.eps).rsqrt();
  }

  Tensor xhat(x.shape());
  Tensor y(x.shape());
  const Tensor& g = gamma.value();
  const Tensor& bt = beta.value();
  for (Index b = 0; b < batch; ++b) {
    for (Index c = 0; c < channels; ++c) {
      xhat.row(b, c) = (x.row(b, c) - mean_c[c]) * inv_std[c];
      y.row(b, c) = g(0, c, 0) * xhat.row(b, c) + bt(0, c, 0);
    }
  }

  const int xi = input.id(), gi = gamma.id(), bi = beta.id();
  return input.tape().record(
      "batchnorm1d", std::move(y), {input, gamma, beta},
      [=, xhat = std::move(xhat)](Tape& tape, int self) {
        const Shape s = xhat.shape();
        const Eigen::ArrayXd& dy_all = tape.grad(self);
        auto dy = [&](Index b, Index c) {
          return Eigen::Map<const Eigen::ArrayXd>(dy_all.data() + (b * s.channels + c) * s.length, s.length);
        };
        const Tensor& gv = tape.value(gi);
        for (Index c = 0; c < s.channels; ++c) {
          double sum_dy = 0.0, sum_dy_xhat = 0.0;
          for (Index b = 0; b < s.batch; ++b) {
            sum_dy += dy(b, c).sum();
            sum_dy_xhat += (dy(b, c) * xhat.row(b, c)).sum();
          }
          if (tape.requires_grad(gi)) tape.grad_buffer(gi)[c] += sum_dy_xhat;
          if (tape.requires_grad(bi)) tape.grad_buffer(bi)[c] += sum_dy;
          if (!tape.requires_grad(xi)) continue;
          Eigen::ArrayXd& dx = tape.grad_buffer(xi);
          const double gc = gv(0, c, 0);
          for (Index b = 0; b < s.batch; ++b) {
            auto dxr = Eigen::Map<Eigen::ArrayXd>(dx.data() + (b * s.channels + c) * s.length, s.length);
            if (mode == Mode::train) {
              dxr += gc * inv_std[c] / count *
                     (count * dy(b, c) - sum_dy - xhat.row(b, c) * sum_dy_xhat);
            } else {
              dxr += gc * inv_std[c] * dy(b, c);
            }
          }
        }
      });
}

Var leaky_relu(Var input, double slope) {
  const Tensor& x = input.value();
  Tensor y(x.shape(), (x.values() >= 0).select(x.values(), slope * x.values()));
  const int xi = input.id();
  return input.tape().record("leaky_relu", std::move(y), {input}, [=](Tape& tape, int self) {
    const Eigen::ArrayXd& xv = tape.value(xi).values();
    tape.grad_buffer(xi) += (xv >= 0).select(tape.grad(self), slope * tape.grad(self));
  });
}

Var dropout(Var input, double rate, std::mt19937_64& rng, Mode mode) {
  if (!(rate >= 0.0 && rate < 1.0))
    throw ValidationError("tensor_core.dropout", "rate must lie in [0, 1), got " + std::to_string(rate));
  if (mode == Mode::eval || rate == 0.0) return input;
  const Tensor& x = input.value();
  std::bernoulli_distribution keep(1.0 - rate);
  Eigen::ArrayXd mask(x.size());
  const double survivor_scale = 1.0 / (1.0 - rate);
  for (Index n = 0; n < mask.size(); ++n) mask[n] = keep(rng) ? survivor_scale : 0.0;
  Tensor y(x.shape(), x.values() * mask);
  const int xi = input.id();
  return input.tape().record("dropout", std::move(y), {input},
                             [=, mask = std::move(mask)](Tape& tape, int self) {
                               tape.grad_buffer(xi) += tape.grad(self) * mask;
                             });
}

Var concat_channels(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.batch() != bv.batch() || av.length() != bv.length())
    throw ValidationError("tensor_core.concat_channels",
                          "batch/length mismatch: " + to_string(av.shape()) + " vs " + to_string(bv.shape()));
  const Index ca = av.channels(), cb = bv.channels();
  Tensor y({av.batch(), ca + cb, av.length()});
  for (Index n = 0; n < av.batch(); ++n) {
    for (Index c = 0; c < ca; ++c) y.row(n, c) = av.row(n, c);
    for (Index c = 0; c < cb; ++c) y.row(n, ca + c) = bv.row(n, c);
  }
  const int ai = a.id(), bi = b.id();
  return a.tape().record("concat_channels", std::move(y), {a, b}, [=](Tape& tape, int self) {
    const Shape s = tape.value(self).shape();
    const Eigen::ArrayXd& dy = tape.grad(self);
    auto block = [&](Index n, Index c) {
      return Eigen::Map<const Eigen::ArrayXd>(dy.data() + (n * s.channels + c) * s.length, s.length);
    };
    if (tape.requires_grad(ai)) {
      Eigen::ArrayXd& da = tape.grad_buffer(ai);
      for (Index n = 0; n < s.batch; ++n)
        da.segment((n * ca) * s.length, ca * s.length) +=
            Eigen::Map<const Eigen::ArrayXd>(block(n, 0).data(), ca * s.length);
    }
    if (tape.requires_grad(bi)) {
      Eigen::ArrayXd& db = tape.grad_buffer(bi);
      for (Index n = 0; n < s.batch; ++n)
        db.segment((n * cb) * s.length, cb * s.length) +=
            Eigen::Map<const Eigen::ArrayXd>(block(n, ca).data(), cb * s.length);
    }
  });
}

namespace {

void require_same(const char* where, Var a, Var b) {
  if (!(a.shape() == b.shape()))
    throw ValidationError(where, "shape mismatch: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
}

}  // namespace

Var add(Var a, Var b) {
  require_same("tensor_core.add", a, b);
  const int ai = a.id(), bi = b.id();
  return a.tape().record("add", Tensor(a.shape(), a.value().values() + b.value().values()), {a, b},
                         [=](Tape& tape, int self) {
                           if (tape.requires_grad(ai)) tape.grad_buffer(ai) += tape.grad(self);
                           if (tape.requires_grad(bi)) tape.grad_buffer(bi) += tape.grad(self);
                         });
}

Var sub(Var a, Var b) {
  require_same("tensor_core.sub", a, b);
  const int ai = a.id(), bi = b.id();
  return a.tape().record("sub", Tensor(a.shape(), a.value().values() - b.value().values()), {a, b},
                         [=](Tape& tape, int self) {
                           if (tape.requires_grad(ai)) tape.grad_buffer(ai) += tape.grad(self);
                           if (tape.requires_grad(bi)) tape.grad_buffer(bi) -= tape.grad(self);
                         });
}

Var mul(Var a, Var b) {
  require_same("tensor_core.mul", a, b);
  const int ai = a.id(), bi = b.id();
  return a.tape().record("mul", Tensor(a.shape(), a.value().values() * b.value().values()), {a, b},
                         [=](Tape& tape, int self) {
                           const Eigen::ArrayXd& g = tape.grad(self);
                           if (tape.requires_grad(ai)) tape.grad_buffer(ai) += g * tape.value(bi).values();
                           if (tape.requires_grad(bi)) tape.grad_buffer(bi) += g * tape.value(ai).values();
                         });
}

Var scale(Var a, double factor) {
  const int ai = a.id();
  return a.tape().record("scale", Tensor(a.shape(), factor * a.value().values()), {a},
                         [=](Tape& tape, int self) { tape.grad_buffer(ai) += factor * tape.grad(self); });
}

Var sum(Var a) {
  const int ai = a.id();
  return a.tape().record("sum", Tensor::constant({1, 1, 1}, a.value().values().sum()), {a},
                         [=](Tape& tape, int self) { tape.grad_buffer(ai) += tape.grad(self)[0]; });
}

Var mean(Var a) {
  const Index n = a.value().size();
  if (n == 0) throw ValidationError("tensor_core.mean", "empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

}  // namespace cecg
