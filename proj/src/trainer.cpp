#include "cecg/trainer.hpp"

#include "cecg/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>
#include <unordered_map>

namespace cecg {

void TrainConfig::validate() const {
  constexpr const char* where = "trainer.TrainConfig";
  if (!(learning_rate >= 0) || !std::isfinite(learning_rate))
    throw ValidationError(where, "learning_rate must be finite and >= 0");
  if (!(momentum >= 0 && momentum < 1)) throw ValidationError(where, "momentum must lie in [0, 1)");
  if (batch_size < 1) throw ValidationError(where, "batch_size must be >= 1");
  if (!(clip_norm >= 0)) throw ValidationError(where, "clip_norm must be >= 0");
  loss.validate();
}

void write_log_line(std::ostream& out, const EpochRecord& r, bool with_time) {
  nlohmann::ordered_json j;
  j["epoch"] = r.epoch;
  j["l_signal"] = r.l_signal;
  j["l_frequency"] = r.l_frequency;
  j["l_total"] = r.l_total;
  if (with_time) j["wall_s"] = r.wall_s;
  out << j.dump() << '\n';
}

TrainLog read_log(std::istream& in) {
  TrainLog log;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      EpochRecord r;
      r.epoch = j.at("epoch").get<std::uint64_t>();
      r.l_signal = j.at("l_signal").get<double>();
      r.l_frequency = j.at("l_frequency").get<double>();
      r.l_total = j.at("l_total").get<double>();
      r.wall_s = j.value("wall_s", 0.0);
      log.epochs.push_back(r);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("trainer.read_log", "line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return log;
}

void sgd_momentum_step(ParameterStore& params, std::span<const NamedArray> grads, std::vector<NamedArray>& velocity,
                       double learning_rate, double momentum) {
  constexpr const char* where = "trainer.sgd_momentum_step";
  if (grads.size() != params.size() || velocity.size() != params.size())
    throw ValidationError(where, "expected " + std::to_string(params.size()) + " gradients and velocities, got " +
                                     std::to_string(grads.size()) + " and " + std::to_string(velocity.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = params[i];
    const NamedArray& g = grads[i];
    NamedArray& v = velocity[i];
    if (g.name != p.name || v.name != p.name)
      throw ValidationError(where, "misaligned entry " + std::to_string(i) + ": parameter '" + p.name +
                                       "', gradient '" + g.name + "', velocity '" + v.name + "'");
    if (g.values.size() != p.value.size() || v.values.size() != p.value.size())
      throw ValidationError(where, "size mismatch for '" + p.name + "'");
    v.values = momentum * v.values + g.values;
    p.value.values() -= learning_rate * v.values;
  }
}

std::vector<NamedArray> zero_velocity(const ParameterStore& params) {
  std::vector<NamedArray> v;
  v.reserve(params.size());
  for (const Parameter& p : params) v.push_back({p.name, p.value.shape(), Eigen::ArrayXd::Zero(p.value.size())});
  return v;
}

namespace {

constexpr std::string_view kVelocityPrefix = "velocity/";

}  // namespace

CheckpointExtras to_extras(const TrainState& state) {
  CheckpointExtras extras;
  extras.epochs_done = state.epochs_done;
  for (const NamedArray& v : state.velocity)
    extras.arrays.push_back({std::string(kVelocityPrefix) + v.name, v.shape, v.values});
  return extras;
}

TrainState from_extras(const CheckpointExtras& extras, const ParameterStore& params) {
  TrainState state;
  state.epochs_done = extras.epochs_done;
  std::unordered_map<std::string, const NamedArray*> by_name;
  for (const NamedArray& a : extras.arrays)
    if (a.name.starts_with(kVelocityPrefix)) by_name[a.name.substr(kVelocityPrefix.size())] = &a;
  if (by_name.empty()) {
    state.velocity = zero_velocity(params);
    return state;
  }
  for (const Parameter& p : params) {
    const auto it = by_name.find(p.name);
    if (it == by_name.end())
      throw FormatError("trainer.resume", "checkpoint has no velocity for '" + p.name + "'");
    if (it->second->shape != p.value.shape())
      throw FormatError("trainer.resume", "velocity shape mismatch for '" + p.name + "'");
    state.velocity.push_back({p.name, p.value.shape(), it->second->values});
  }
  return state;
}

BatchResult batch_gradients(Network& net, const Tensor& x, const Tensor& y, const LossConfig& loss, Mode mode,
                            std::mt19937_64& rng) {
  Tape tape;
  BoundParameters params(tape, net.parameters(), true);
  const Var pred = net.forward(params, tape.constant(x), mode, rng);
  auto [total, report] = total_loss(pred, tape.constant(y), loss);
  tape.backward(total);

  std::vector<bool> consumed(tape.size(), false);
  for (std::size_t id = 0; id < tape.size(); ++id)
    for (int in : tape.inputs(static_cast<int>(id))) consumed[static_cast<std::size_t>(in)] = true;

  BatchResult result{report, {}};
  result.grads.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Parameter& p = net.parameters()[i];
    const Var v = params.at(i);
    if (!consumed[static_cast<std::size_t>(v.id())] || v.grad().size() != p.value.size())
      throw NumericError("trainer.train", "parameter '" + p.name + "' received no gradient");
    result.grads.push_back({p.name, p.value.shape(), v.grad()});
  }
  return result;
}

LossReport evaluate_loss(const Network& net, const Tensor& x, const Tensor& y, const LossConfig& loss) {
  Tape tape;
  const Var pred = tape.constant(net.predict(x));
  return total_loss(pred, tape.constant(y), loss).second;
}

namespace {

std::mt19937_64 epoch_rng(std::uint64_t seed, std::uint64_t epoch) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(epoch >> 32)};
  return std::mt19937_64(seq);
}

void clip_gradients(std::vector<NamedArray>& grads, double max_norm) {
  double sq = 0.0;
  for (const NamedArray& g : grads) sq += g.values.square().sum();
  const double norm = std::sqrt(sq);
  if (norm > max_norm)
    for (NamedArray& g : grads) g.values *= max_norm / norm;
}

}  // namespace

TrainLog train(Network& net, std::span<const data::WindowPair> windows, const TrainConfig& cfg, TrainState& state,
               const TrainOptions& options) {
  constexpr const char* where = "trainer.train";
  cfg.validate();
  if (windows.empty()) throw ValidationError(where, "empty dataset");
  const NetworkConfig& nc = net.config();
  for (const auto& w : windows)
    if (w.x.shape() != Shape{1, nc.in_channels, nc.input_length} ||
        w.y.shape() != Shape{1, nc.out_channels, nc.input_length})
      throw ValidationError(where, "window from '" + w.record_id + "' has shape " + to_string(w.x.shape()) +
                                       ", network expects length " + std::to_string(nc.input_length));
  if (state.velocity.empty()) state.velocity = zero_velocity(net.parameters());

  TrainLog log;
  std::vector<std::size_t> order(windows.size());
  const std::size_t batch = static_cast<std::size_t>(cfg.batch_size);
  for (std::uint64_t epoch = state.epochs_done + 1; epoch <= cfg.epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    std::mt19937_64 rng = epoch_rng(cfg.seed, epoch);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);

    EpochRecord record;
    record.epoch = epoch;
    std::size_t steps = 0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t count = std::min(batch, order.size() - start);
      const auto [x, y] = data::stack(windows, std::span(order).subspan(start, count));
      BatchResult step = batch_gradients(net, x, y, cfg.loss, Mode::train, rng);
      if (!std::isfinite(step.report.l_total))
        throw NumericError(where, "non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                      std::to_string(start / batch));
      if (cfg.clip_norm > 0) clip_gradients(step.grads, cfg.clip_norm);
      sgd_momentum_step(net.parameters(), step.grads, state.velocity, cfg.learning_rate, cfg.momentum);
      record.l_signal += step.report.l_signal;
      record.l_frequency += step.report.l_frequency;
      record.l_total += step.report.l_total;
      ++steps;
    }
    record.l_signal /= static_cast<double>(steps);
    record.l_frequency /= static_cast<double>(steps);
    record.l_total /= static_cast<double>(steps);
    record.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    state.epochs_done = epoch;
    log.epochs.push_back(record);
    if (options.on_epoch) options.on_epoch(record);

    if (!options.checkpoint_dir.empty() && cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0) {
      char name[40];
      std::snprintf(name, sizeof name, "checkpoint_epoch%06llu.bin", static_cast<unsigned long long>(epoch));
      save_checkpoint(net, options.checkpoint_dir / name, to_extras(state));
    }
  }
  return log;
}

namespace {

constexpr std::size_t kEvalBatch = 32;

dsp::SimilaritySummary summarize(std::span<const data::WindowPair> windows, std::vector<Eigen::ArrayXd> outputs,
                                 Index max_lag) {
  std::vector<Eigen::ArrayXd> refs;
  refs.reserve(windows.size());
  for (const auto& w : windows) refs.emplace_back(w.y.row(0, 0));
  return dsp::summarize_similarity(outputs, refs, max_lag);
}

}  // namespace

dsp::SimilaritySummary evaluate_denoising(const Network& net, std::span<const data::WindowPair> windows,
                                          Index max_lag) {
  if (windows.empty()) throw ValidationError("trainer.evaluate_denoising", "empty test set");
  std::vector<Eigen::ArrayXd> outputs;
  outputs.reserve(windows.size());
  std::vector<std::size_t> order(windows.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t start = 0; start < windows.size(); start += kEvalBatch) {
    const std::size_t count = std::min(kEvalBatch, windows.size() - start);
    const Tensor pred = net.predict(data::stack(windows, std::span(order).subspan(start, count)).first);
    for (Index b = 0; b < pred.batch(); ++b) outputs.emplace_back(pred.row(b, 0));
  }
  return summarize(windows, std::move(outputs), max_lag);
}

dsp::SimilaritySummary evaluate_channel(std::span<const data::WindowPair> windows, Index channel, Index max_lag) {
  if (windows.empty()) throw ValidationError("trainer.evaluate_channel", "empty test set");
  std::vector<Eigen::ArrayXd> outputs;
  outputs.reserve(windows.size());
  for (const auto& w : windows) outputs.emplace_back(w.x.row(0, channel));
  return summarize(windows, std::move(outputs), max_lag);
}

}  // namespace cecg
