#pragma once

#include "cecg/ops.hpp"
#include "cecg/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

namespace cecg {

/// Multi-dilation residual block: parallel length-preserving dilated convs,
/// a 1x1 combiner back to `channels`, then input + combined.
struct InceptionBlockConfig {
  Index channels = 1;
  std::vector<Index> branch_dilations{1, 2, 4};
  Index branch_kernel = 3;

  void validate() const;
  /// Per-side padding that keeps a branch length-preserving.
  Index branch_padding(Index dilation) const { return dilation * (branch_kernel - 1) / 2; }
};

struct NetworkConfig {
  Index levels = 8;
  Index in_channels = 3;
  Index out_channels = 1;
  Index base_filters = 16;
  Index filter_cap = 512;
  Index kernel = 4;
  Index stride = 2;
  Index input_length = 2048;
  double dropout_rate = 0.3;
  double leaky_slope = 0.2;
  double bn_eps = 1e-5;
  double bn_momentum = 0.1;
  std::vector<Index> branch_dilations{1, 2, 4};
  Index branch_kernel = 3;
  std::uint64_t init_seed = 0;

  void validate() const;

  /// Encoder filters at level 1..levels: min(base * 2^(level-1), cap).
  Index filters_at(Index level) const;
  /// Padding that makes each strided conv exactly divide the length by `stride`.
  Index down_padding() const { return (kernel - stride) / 2; }
  InceptionBlockConfig inception(Index channels) const { return {channels, branch_dilations, branch_kernel}; }

  friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

struct Parameter {
  std::string name;
  Tensor value;
};

/// Ordered, uniquely named parameter arrays.
class ParameterStore {
 public:
  void add(std::string name, Tensor value);
  bool contains(const std::string& name) const { return index_.contains(name); }
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  std::size_t size() const { return params_.size(); }
  Index scalar_count() const;

  std::vector<Parameter>::iterator begin() { return params_.begin(); }
  std::vector<Parameter>::iterator end() { return params_.end(); }
  std::vector<Parameter>::const_iterator begin() const { return params_.begin(); }
  std::vector<Parameter>::const_iterator end() const { return params_.end(); }
  Parameter& operator[](std::size_t i) { return params_[i]; }
  const Parameter& operator[](std::size_t i) const { return params_[i]; }

 private:
  std::vector<Parameter> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Parameters placed on a tape, aligned with the store's order.
class BoundParameters {
 public:
  BoundParameters(Tape& tape, const ParameterStore& store, bool requires_grad);

  Var operator[](const std::string& name) const;
  Var at(std::size_t i) const { return vars_[i]; }
  std::size_t size() const { return vars_.size(); }

 private:
  std::vector<Var> vars_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Vars of one inception block.
struct InceptionParams {
  std::vector<Var> branch_weights;
  std::vector<Var> branch_biases;
  Var combine_weight;
  Var combine_bias;
};

Var inception_block(Var input, const InceptionParams& params, const InceptionBlockConfig& cfg);

/// The denoising encoder-decoder: [b, in_channels, L] -> [b, out_channels, L].
///
/// Encoder level l: strided conv -> batch norm -> leaky ReLU -> dropout ->
/// inception block. A 1x1 conv sits on the deepest level. Decoder level l:
/// transposed conv -> concat with the same-resolution encoder output (the
/// raw input at full resolution) -> batch norm -> leaky ReLU -> dropout ->
/// inception block. A final 1x1 conv produces the output channels.
class Network {
 public:
  /// Builds all layers and draws weights from the seeded initializer.
  explicit Network(NetworkConfig config);

  const NetworkConfig& config() const { return config_; }
  ParameterStore& parameters() { return params_; }
  const ParameterStore& parameters() const { return params_; }
  std::vector<std::pair<std::string, BatchNormState>>& batchnorm_states() { return bn_states_; }
  const std::vector<std::pair<std::string, BatchNormState>>& batchnorm_states() const { return bn_states_; }

  /// Records the full forward pass on the params' tape. Train mode updates
  /// batch-norm running statistics and draws dropout masks from `rng`.
  Var forward(const BoundParameters& params, Var input, Mode mode, std::mt19937_64& rng);

  /// Eval-mode inference on a detached tape.
  Tensor predict(const Tensor& input) const;

  /// Channel count of encoder level l output (l = 0 is the raw input).
  Index encoder_channels(Index level) const;
  /// Channel count leaving decoder level l (after concatenation).
  Index decoder_channels(Index level) const;

 private:
  InceptionParams inception_params(const BoundParameters& params, const std::string& prefix) const;
  BatchNormState& bn_state(const std::string& name);
  Var post_ops(const BoundParameters& params, Var x, const std::string& prefix, Mode mode,
               std::mt19937_64& rng);

  NetworkConfig config_;
  ParameterStore params_;
  std::vector<std::pair<std::string, BatchNormState>> bn_states_;
};

inline Network build_network(const NetworkConfig& config) { return Network(config); }

/// Named array carried alongside the network in a checkpoint (e.g. optimizer
/// velocity). Stored with its shape.
struct NamedArray {
  std::string name;
  Shape shape;
  Eigen::ArrayXd values;
};

struct CheckpointExtras {
  std::uint64_t epochs_done = 0;
  std::vector<NamedArray> arrays;
};

struct Checkpoint {
  Network network;
  CheckpointExtras extras;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const Network& net, const std::filesystem::path& path,
                     const CheckpointExtras& extras = {});
Checkpoint load_checkpoint(const std::filesystem::path& path);
/// Loads and verifies the stored architecture against `expected`; throws a
/// ValidationError naming the first array whose name or shape differs.
Checkpoint load_checkpoint(const std::filesystem::path& path, const NetworkConfig& expected);

}  // namespace cecg
