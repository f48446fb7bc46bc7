#include "cecg/network.hpp"

#include "binary_io.hpp"
#include "cecg/error.hpp"

#include <algorithm>
#include <cmath>

namespace cecg {

void InceptionBlockConfig::validate() const {
  constexpr const char* where = "network.InceptionBlockConfig";
  if (channels < 1) throw ValidationError(where, "channels must be >= 1");
  if (branch_dilations.size() < 2) throw ValidationError(where, "at least two branches required");
  if (branch_kernel < 1) throw ValidationError(where, "branch_kernel must be >= 1");
  for (Index d : branch_dilations) {
    if (d < 1) throw ValidationError(where, "dilations must be >= 1");
    if ((d * (branch_kernel - 1)) % 2 != 0)
      throw ValidationError(where, "kernel " + std::to_string(branch_kernel) + " with dilation " +
                                       std::to_string(d) + " has no integral length-preserving padding");
  }
}

void NetworkConfig::validate() const {
  constexpr const char* where = "network.NetworkConfig";
  if (levels < 1) throw ValidationError(where, "levels must be >= 1");
  if (in_channels < 1 || out_channels < 1) throw ValidationError(where, "channel counts must be >= 1");
  if (base_filters < 1 || filter_cap < base_filters)
    throw ValidationError(where, "need 1 <= base_filters <= filter_cap");
  if (stride < 1 || kernel < stride || (kernel - stride) % 2 != 0)
    throw ValidationError(where, "kernel - stride must be a non-negative even number");
  Index divisor = 1;
  for (Index l = 0; l < levels; ++l) divisor *= stride;
  if (input_length < divisor || input_length % divisor != 0)
    throw ValidationError(where, "input_length " + std::to_string(input_length) +
                                     " is not divisible by stride^levels = " + std::to_string(divisor));
  if (!(dropout_rate >= 0 && dropout_rate < 1)) throw ValidationError(where, "dropout_rate must lie in [0, 1)");
  if (!(bn_eps > 0)) throw ValidationError(where, "bn_eps must be > 0");
  if (!(bn_momentum >= 0 && bn_momentum <= 1)) throw ValidationError(where, "bn_momentum must lie in [0, 1]");
  inception(1).validate();
}

Index NetworkConfig::filters_at(Index level) const {
  Index f = base_filters;
  for (Index l = 1; l < level && f < filter_cap; ++l) f *= 2;
  return std::min(f, filter_cap);
}

void ParameterStore::add(std::string name, Tensor value) {
  if (index_.contains(name)) throw ValidationError("network.ParameterStore", "duplicate parameter '" + name + "'");
  index_.emplace(name, params_.size());
  params_.push_back({std::move(name), std::move(value)});
}

Tensor& ParameterStore::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ValidationError("network.ParameterStore", "no parameter '" + name + "'");
  return params_[it->second].value;
}

const Tensor& ParameterStore::at(const std::string& name) const {
  return const_cast<ParameterStore*>(this)->at(name);
}

Index ParameterStore::scalar_count() const {
  Index n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

BoundParameters::BoundParameters(Tape& tape, const ParameterStore& store, bool requires_grad) {
  vars_.reserve(store.size());
  for (std::size_t i = 0; i < store.size(); ++i) {
    vars_.push_back(requires_grad ? tape.variable(store[i].value) : tape.constant(store[i].value));
    index_.emplace(store[i].name, i);
  }
}

Var BoundParameters::operator[](const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ValidationError("network.forward", "unbound parameter '" + name + "'");
  return vars_[it->second];
}

Var inception_block(Var input, const InceptionParams& params, const InceptionBlockConfig& cfg) {
  cfg.validate();
  if (input.shape().channels != cfg.channels)
    throw ValidationError("network.inception_block", "input channels " + std::to_string(input.shape().channels) +
                                                         " != block channels " + std::to_string(cfg.channels));
  if (params.branch_weights.size() != cfg.branch_dilations.size())
    throw ValidationError("network.inception_block", "branch parameter count does not match dilations");
  Var merged;
  for (std::size_t k = 0; k < cfg.branch_dilations.size(); ++k) {
    const Index d = cfg.branch_dilations[k];
    ConvSpec spec{cfg.channels, cfg.channels, cfg.branch_kernel, 1, d, cfg.branch_padding(d)};
    Var branch = conv1d(input, params.branch_weights[k], params.branch_biases[k], spec);
    merged = merged.valid() ? concat_channels(merged, branch) : branch;
  }
  const Index branches = static_cast<Index>(cfg.branch_dilations.size());
  ConvSpec combine{branches * cfg.channels, cfg.channels, 1, 1, 1, 0};
  return add(input, conv1d(merged, params.combine_weight, params.combine_bias, combine));
}

namespace {

std::string level_name(const char* part, Index level) { return part + std::to_string(level); }

}  // namespace

Index Network::encoder_channels(Index level) const {
  return level == 0 ? config_.in_channels : config_.filters_at(level);
}

Index Network::decoder_channels(Index level) const {
  return config_.filters_at(std::max<Index>(level - 1, 1)) + encoder_channels(level - 1);
}

Network::Network(NetworkConfig config) : config_(std::move(config)) {
  config_.validate();
  std::mt19937_64 rng(config_.init_seed);

  auto weights = [&](const std::string& name, Shape shape, Index fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Tensor t(shape);
    for (Index i = 0; i < t.size(); ++i) t.values()[i] = dist(rng);
    params_.add(name, std::move(t));
  };
  auto conv = [&](const std::string& prefix, Index in, Index out, Index k) {
    weights(prefix + ".weight", {out, in, k}, in * k);
    weights(prefix + ".bias", {1, out, 1}, in * k);
  };
  auto conv_t = [&](const std::string& prefix, Index in, Index out, Index k) {
    weights(prefix + ".weight", {in, out, k}, in * k);
    weights(prefix + ".bias", {1, out, 1}, in * k);
  };
  auto norm = [&](const std::string& prefix, Index channels) {
    params_.add(prefix + ".gamma", Tensor::constant({1, channels, 1}, 1.0));
    params_.add(prefix + ".beta", Tensor({1, channels, 1}));
    bn_states_.emplace_back(prefix, BatchNormState::fresh(channels));
  };
  auto block = [&](const std::string& prefix, Index channels) {
    for (std::size_t k = 0; k < config_.branch_dilations.size(); ++k)
      conv(prefix + ".branch" + std::to_string(k), channels, channels, config_.branch_kernel);
    conv(prefix + ".combine", channels * static_cast<Index>(config_.branch_dilations.size()), channels, 1);
  };

  for (Index l = 1; l <= config_.levels; ++l) {
    const std::string p = level_name("enc", l);
    conv(p + ".conv", encoder_channels(l - 1), encoder_channels(l), config_.kernel);
    norm(p + ".bn", encoder_channels(l));
    block(p + ".inc", encoder_channels(l));
  }
  conv("bottleneck", encoder_channels(config_.levels), encoder_channels(config_.levels), 1);
  for (Index l = config_.levels; l >= 1; --l) {
    const std::string p = level_name("dec", l);
    const Index in = l == config_.levels ? encoder_channels(config_.levels) : decoder_channels(l + 1);
    conv_t(p + ".up", in, config_.filters_at(std::max<Index>(l - 1, 1)), config_.kernel);
    norm(p + ".bn", decoder_channels(l));
    block(p + ".inc", decoder_channels(l));
  }
  conv("head", decoder_channels(1), config_.out_channels, 1);
}

BatchNormState& Network::bn_state(const std::string& name) {
  for (auto& [n, s] : bn_states_)
    if (n == name) return s;
  throw ValidationError("network.forward", "no batch-norm state '" + name + "'");
}

InceptionParams Network::inception_params(const BoundParameters& params, const std::string& prefix) const {
  InceptionParams ip;
  for (std::size_t k = 0; k < config_.branch_dilations.size(); ++k) {
    const std::string b = prefix + ".branch" + std::to_string(k);
    ip.branch_weights.push_back(params[b + ".weight"]);
    ip.branch_biases.push_back(params[b + ".bias"]);
  }
  ip.combine_weight = params[prefix + ".combine.weight"];
  ip.combine_bias = params[prefix + ".combine.bias"];
  return ip;
}

namespace {

Var checked(Var v, const std::string& layer) {
  if (!v.value().all_finite()) throw NumericError("network.forward", "non-finite activation in " + layer);
  return v;
}

}  // namespace

Var Network::post_ops(const BoundParameters& params, Var x, const std::string& prefix, Mode mode,
                      std::mt19937_64& rng) {
  x = batchnorm1d(x, params[prefix + ".bn.gamma"], params[prefix + ".bn.beta"], bn_state(prefix + ".bn"), mode,
                  {config_.bn_eps, config_.bn_momentum});
  x = leaky_relu(x, config_.leaky_slope);
  x = dropout(x, config_.dropout_rate, rng, mode);
  const Index channels = x.shape().channels;
  return checked(inception_block(x, inception_params(params, prefix + ".inc"), config_.inception(channels)),
                 prefix);
}

Var Network::forward(const BoundParameters& params, Var input, Mode mode, std::mt19937_64& rng) {
  const Shape in = input.shape();
  if (in.channels != config_.in_channels || in.length != config_.input_length)
    throw ValidationError("network.forward", "input shape " + to_string(in) + ", expected [b," +
                                                 std::to_string(config_.in_channels) + "," +
                                                 std::to_string(config_.input_length) + "]");
  if (in.batch < 1) throw ValidationError("network.forward", "empty batch");
  if (!input.value().all_finite()) throw NumericError("network.forward", "non-finite input");

  const Index pad = config_.down_padding();
  std::vector<Var> skips{input};
  Var x = input;
  for (Index l = 1; l <= config_.levels; ++l) {
    const std::string p = level_name("enc", l);
    ConvSpec spec{encoder_channels(l - 1), encoder_channels(l), config_.kernel, config_.stride, 1, pad};
    x = checked(conv1d(x, params[p + ".conv.weight"], params[p + ".conv.bias"], spec), p + ".conv");
    x = post_ops(params, x, p, mode, rng);
    skips.push_back(x);
  }
  const Index deep = encoder_channels(config_.levels);
  x = checked(conv1d(x, params["bottleneck.weight"], params["bottleneck.bias"], ConvSpec{deep, deep, 1, 1, 1, 0}),
              "bottleneck");
  for (Index l = config_.levels; l >= 1; --l) {
    const std::string p = level_name("dec", l);
    ConvSpec spec{x.shape().channels, config_.filters_at(std::max<Index>(l - 1, 1)), config_.kernel,
                  config_.stride, 1, pad};
    x = checked(conv1d_transpose(x, params[p + ".up.weight"], params[p + ".up.bias"], spec), p + ".up");
    x = concat_channels(x, skips[static_cast<std::size_t>(l - 1)]);
    x = post_ops(params, x, p, mode, rng);
  }
  ConvSpec head{decoder_channels(1), config_.out_channels, 1, 1, 1, 0};
  return checked(conv1d(x, params["head.weight"], params["head.bias"], head), "head");
}

Tensor Network::predict(const Tensor& input) const {
  // Eval mode never writes batch-norm state, so the cast does not mutate.
  auto& self = const_cast<Network&>(*this);
  Tape tape;
  BoundParameters params(tape, params_, false);
  std::mt19937_64 unused(0);
  return self.forward(params, tape.constant(input), Mode::eval, unused).value();
}

// Checkpoint layout (little-endian):
//   "CECGCKPT" u32 version
//   config block
//   u64 epochs_done
//   u32 record count, then per record:
//     u32 name length, name, u8 dtype (1 = float64), u32 ndim, u64 dims[ndim], payload
namespace {

constexpr char kMagic[8] = {'C', 'E', 'C', 'G', 'C', 'K', 'P', 'T'};
constexpr std::uint8_t kFloat64 = 1;

void write_config(detail::BinaryWriter& w, const NetworkConfig& c) {
  for (Index v : {c.levels, c.in_channels, c.out_channels, c.base_filters, c.filter_cap, c.kernel, c.stride,
                  c.input_length, c.branch_kernel})
    w.put(static_cast<std::int64_t>(v));
  for (double v : {c.dropout_rate, c.leaky_slope, c.bn_eps, c.bn_momentum}) w.put(v);
  w.put(static_cast<std::uint32_t>(c.branch_dilations.size()));
  for (Index d : c.branch_dilations) w.put(static_cast<std::int64_t>(d));
  w.put(c.init_seed);
}

NetworkConfig read_config(detail::BinaryReader& r) {
  NetworkConfig c;
  for (Index* v : {&c.levels, &c.in_channels, &c.out_channels, &c.base_filters, &c.filter_cap, &c.kernel,
                   &c.stride, &c.input_length, &c.branch_kernel})
    *v = r.get<std::int64_t>();
  for (double* v : {&c.dropout_rate, &c.leaky_slope, &c.bn_eps, &c.bn_momentum}) *v = r.get<double>();
  const auto n = r.get<std::uint32_t>();
  if (n > 64) throw FormatError("network.load_checkpoint", "corrupt checkpoint: implausible dilation count");
  c.branch_dilations.resize(n);
  for (auto& d : c.branch_dilations) d = r.get<std::int64_t>();
  c.init_seed = r.get<std::uint64_t>();
  return c;
}

void write_array(detail::BinaryWriter& w, const std::string& name, const std::vector<Index>& dims,
                 const Eigen::ArrayXd& values) {
  w.put_string(name);
  w.put(kFloat64);
  w.put(static_cast<std::uint32_t>(dims.size()));
  for (Index d : dims) w.put(static_cast<std::uint64_t>(d));
  w.put_doubles(values.data(), static_cast<std::size_t>(values.size()));
}

struct RawArray {
  std::string name;
  std::vector<Index> dims;
  Eigen::ArrayXd values;
};

RawArray read_array(detail::BinaryReader& r) {
  constexpr const char* where = "network.load_checkpoint";
  RawArray a;
  a.name = r.get_string();
  if (r.get<std::uint8_t>() != kFloat64) throw FormatError(where, "corrupt checkpoint: unknown dtype in '" + a.name + "'");
  const auto ndim = r.get<std::uint32_t>();
  if (ndim > 8) throw FormatError(where, "corrupt checkpoint: bad rank for '" + a.name + "'");
  std::uint64_t count = 1;
  for (std::uint32_t i = 0; i < ndim; ++i) {
    const auto d = r.get<std::uint64_t>();
    a.dims.push_back(static_cast<Index>(d));
    count *= d;
  }
  if (count > (std::uint64_t{1} << 40)) throw FormatError(where, "corrupt checkpoint: oversized '" + a.name + "'");
  a.values.resize(static_cast<Index>(count));
  r.get_doubles(a.values.data(), count);
  return a;
}

std::vector<Index> dims_of(const Shape& s) { return {s.batch, s.channels, s.length}; }

}  // namespace

void save_checkpoint(const Network& net, const std::filesystem::path& path, const CheckpointExtras& extras) {
  detail::BinaryWriter w;
  w.put_bytes(kMagic, sizeof kMagic);
  w.put(kCheckpointVersion);
  write_config(w, net.config());
  w.put(extras.epochs_done);
  const std::size_t records = net.parameters().size() + 2 * net.batchnorm_states().size() + extras.arrays.size();
  w.put(static_cast<std::uint32_t>(records));
  for (const auto& p : net.parameters()) write_array(w, p.name, dims_of(p.value.shape()), p.value.values());
  for (const auto& [name, s] : net.batchnorm_states()) {
    write_array(w, "state/" + name + ".running_mean", {s.running_mean.size()}, s.running_mean);
    write_array(w, "state/" + name + ".running_var", {s.running_var.size()}, s.running_var);
  }
  for (const auto& a : extras.arrays) write_array(w, a.name, dims_of(a.shape), a.values);
  w.write_file(path.string(), "network.save_checkpoint");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  constexpr const char* where = "network.load_checkpoint";
  detail::BinaryReader r(path.string(), where);
  char magic[8];
  r.get_bytes(magic, sizeof magic);
  if (!std::equal(magic, magic + 8, kMagic)) throw FormatError(where, "corrupt checkpoint: bad magic");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw FormatError(where, "checkpoint format version " + std::to_string(version) + ", expected " +
                                 std::to_string(kCheckpointVersion));
  NetworkConfig config = read_config(r);
  Checkpoint ck{Network(config), {}};
  ck.extras.epochs_done = r.get<std::uint64_t>();
  const auto records = r.get<std::uint32_t>();

  auto& params = ck.network.parameters();
  auto& states = ck.network.batchnorm_states();
  const std::size_t expected = params.size() + 2 * states.size();
  if (records < expected) throw FormatError(where, "corrupt checkpoint: too few records");

  auto expect_name = [&](const RawArray& a, const std::string& name, const std::vector<Index>& dims) {
    if (a.name != name) throw ValidationError(where, "array mismatch: found '" + a.name + "', expected '" + name + "'");
    if (a.dims != dims) throw ValidationError(where, "shape header of '" + name + "' disagrees with architecture");
  };
  for (auto& p : params) {
    RawArray a = read_array(r);
    expect_name(a, p.name, dims_of(p.value.shape()));
    p.value.values() = std::move(a.values);
  }
  for (auto& [name, s] : states) {
    RawArray m = read_array(r);
    expect_name(m, "state/" + name + ".running_mean", {s.running_mean.size()});
    s.running_mean = std::move(m.values);
    RawArray v = read_array(r);
    expect_name(v, "state/" + name + ".running_var", {s.running_var.size()});
    s.running_var = std::move(v.values);
  }
  for (std::size_t i = expected; i < records; ++i) {
    RawArray a = read_array(r);
    if (a.dims.size() != 3) throw FormatError(where, "corrupt checkpoint: extra array '" + a.name + "' is not 3D");
    ck.extras.arrays.push_back({a.name, {a.dims[0], a.dims[1], a.dims[2]}, std::move(a.values)});
  }
  if (!r.at_end()) throw FormatError(where, "corrupt checkpoint: trailing bytes");
  return ck;
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const NetworkConfig& expected) {
  Checkpoint ck = load_checkpoint(path);
  const Network reference(expected);
  const auto& got = ck.network.parameters();
  const auto& want = reference.parameters();
  const std::size_t n = std::max(got.size(), want.size());
  for (std::size_t i = 0; i < n; ++i) {
    if (i >= got.size())
      throw ValidationError("network.load_checkpoint", "checkpoint lacks array '" + want[i].name + "'");
    if (i >= want.size())
      throw ValidationError("network.load_checkpoint", "unexpected array '" + got[i].name + "'");
    if (got[i].name != want[i].name || !(got[i].value.shape() == want[i].value.shape()))
      throw ValidationError("network.load_checkpoint",
                            "first differing array: '" + got[i].name + "' " + to_string(got[i].value.shape()) +
                                " vs expected '" + want[i].name + "' " + to_string(want[i].value.shape()));
  }
  return ck;
}

}  // namespace cecg
