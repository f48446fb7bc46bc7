#pragma once

#include "cecg/data.hpp"
#include "cecg/dsp.hpp"
#include "cecg/loss.hpp"
#include "cecg/network.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <span>
#include <vector>

namespace cecg {

struct TrainConfig {
  double learning_rate = 0.01;
  double momentum = 0.7;
  Index batch_size = 256;
  std::uint64_t epochs = 2500;
  std::uint64_t seed = 0;
  std::uint64_t checkpoint_every = 0;  ///< 0 disables periodic checkpoints
  double clip_norm = 0.0;              ///< global gradient norm limit; 0 disables
  LossConfig loss;

  void validate() const;
};

struct EpochRecord {
  std::uint64_t epoch = 0;  ///< 1-based
  double l_signal = 0.0;
  double l_frequency = 0.0;
  double l_total = 0.0;
  double wall_s = 0.0;
};

struct TrainLog {
  std::vector<EpochRecord> epochs;
};

/// One JSON object per line; `with_time = false` drops wall_s so logs from
/// identical runs compare byte-equal.
void write_log_line(std::ostream& out, const EpochRecord& record, bool with_time = true);
TrainLog read_log(std::istream& in);

/// v <- momentum * v + g; p <- p - lr * v. Gradients and velocity are matched
/// to parameters by name and shape.
void sgd_momentum_step(ParameterStore& params, std::span<const NamedArray> grads, std::vector<NamedArray>& velocity,
                       double learning_rate, double momentum);

/// Zero velocity for every parameter.
std::vector<NamedArray> zero_velocity(const ParameterStore& params);

/// Everything besides the network needed to continue a run exactly.
struct TrainState {
  std::uint64_t epochs_done = 0;
  std::vector<NamedArray> velocity;
};

CheckpointExtras to_extras(const TrainState& state);
TrainState from_extras(const CheckpointExtras& extras, const ParameterStore& params);

struct TrainOptions {
  std::filesystem::path checkpoint_dir;  ///< periodic checkpoints go here when set
  std::function<void(const EpochRecord&)> on_epoch;
};

/// Runs epochs state.epochs_done + 1 .. cfg.epochs. Each epoch draws its
/// shuffle and dropout masks from a generator seeded by (cfg.seed, epoch),
/// so a run resumed from a checkpoint follows the uninterrupted trajectory.
TrainLog train(Network& net, std::span<const data::WindowPair> windows, const TrainConfig& cfg, TrainState& state,
               const TrainOptions& options = {});

/// Loss and gradients of one batch in the given mode. Gradients are aligned
/// with the parameter store.
struct BatchResult {
  LossReport report;
  std::vector<NamedArray> grads;
};
BatchResult batch_gradients(Network& net, const Tensor& x, const Tensor& y, const LossConfig& loss, Mode mode,
                            std::mt19937_64& rng);

/// Eval-mode loss on a batch without touching gradients.
LossReport evaluate_loss(const Network& net, const Tensor& x, const Tensor& y, const LossConfig& loss);

/// Eval-mode predictions for each window compared with its reference after
/// min-max normalization; max_lag in samples.
dsp::SimilaritySummary evaluate_denoising(const Network& net, std::span<const data::WindowPair> windows,
                                          Index max_lag = 256);

/// The same summary for raw input channel `channel` in place of predictions.
dsp::SimilaritySummary evaluate_channel(std::span<const data::WindowPair> windows, Index channel,
                                        Index max_lag = 256);

}  // namespace cecg
