#include "cecg/config.hpp"

#include "cecg/error.hpp"

#include <json.hpp>

#include <fstream>
#include <set>
#include <sstream>

namespace cecg {

using nlohmann::json;
using nlohmann::ordered_json;

void DataConfig::validate() const {
  if (stride < 0) throw ValidationError("cli.config", "data.stride must be >= 0");
  if (!(fs > 0)) throw ValidationError("cli.config", "data.fs must be > 0");
}

void RunConfig::validate() const {
  network.validate();
  train.validate();
  synth.validate();
  data.validate();
}

namespace {

/// Reads the keys of one section, rejecting anything unrecognized.
class Section {
 public:
  Section(const json& root, const std::string& name) : name_(name) {
    if (root.contains(name)) {
      node_ = &root.at(name);
      if (!node_->is_object()) throw ValidationError("cli.config", "section '" + name + "' must be an object");
    }
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!node_ || !node_->contains(key)) return;
    try {
      out = node_->at(key).get<T>();
    } catch (const json::exception&) {
      throw ValidationError("cli.config", name_ + "." + key + " has the wrong type");
    }
  }

  void finish() const {
    if (!node_) return;
    for (const auto& [key, value] : node_->items())
      if (!seen_.contains(key)) throw ValidationError("cli.config", "unknown key '" + name_ + "." + key + "'");
  }

 private:
  std::string name_;
  const json* node_ = nullptr;
  std::set<std::string> seen_;
};

}  // namespace

RunConfig parse_config(const std::string& text, const std::string& source) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ValidationError("cli.config", source + ": " + e.what());
  }
  if (!root.is_object()) throw ValidationError("cli.config", source + ": top level must be an object");
  for (const auto& [key, value] : root.items())
    if (key != "network" && key != "train" && key != "loss" && key != "synth" && key != "data")
      throw ValidationError("cli.config", source + ": unknown section '" + key + "'");

  RunConfig cfg;
  NetworkConfig& n = cfg.network;
  Section net(root, "network");
  net.get("levels", n.levels);
  net.get("in_channels", n.in_channels);
  net.get("out_channels", n.out_channels);
  net.get("base_filters", n.base_filters);
  net.get("filter_cap", n.filter_cap);
  net.get("kernel", n.kernel);
  net.get("stride", n.stride);
  net.get("input_length", n.input_length);
  net.get("dropout_rate", n.dropout_rate);
  net.get("leaky_slope", n.leaky_slope);
  net.get("bn_eps", n.bn_eps);
  net.get("bn_momentum", n.bn_momentum);
  net.get("branch_dilations", n.branch_dilations);
  net.get("branch_kernel", n.branch_kernel);
  net.get("init_seed", n.init_seed);
  net.finish();

  TrainConfig& t = cfg.train;
  Section tr(root, "train");
  tr.get("learning_rate", t.learning_rate);
  tr.get("momentum", t.momentum);
  tr.get("batch_size", t.batch_size);
  tr.get("epochs", t.epochs);
  tr.get("seed", t.seed);
  tr.get("checkpoint_every", t.checkpoint_every);
  tr.get("clip_norm", t.clip_norm);
  tr.finish();

  LossConfig& l = t.loss;
  Section loss(root, "loss");
  std::string policy = to_string(l.fft_window_policy);
  loss.get("alpha", l.alpha);
  loss.get("beta", l.beta);
  loss.get("smooth_l1_threshold", l.smooth_l1_threshold);
  loss.get("n_fft", l.n_fft);
  loss.get("fft_window_policy", policy);
  loss.finish();
  l.fft_window_policy = parse_fft_window_policy(policy);

  data::SynthConfig& s = cfg.synth;
  Section syn(root, "synth");
  syn.get("records", cfg.synth_records);
  syn.get("duration_s", s.duration_s);
  syn.get("fs", s.fs);
  syn.get("heart_rate_bpm", s.heart_rate_bpm);
  syn.get("heart_rate_sd_bpm", s.heart_rate_sd_bpm);
  syn.get("channel_gains", s.channel_gains);
  syn.get("gain_drift", s.gain_drift);
  syn.get("gain_drift_hz", s.gain_drift_hz);
  syn.get("wander_amplitude", s.wander_amplitude);
  syn.get("wander_hz", s.wander_hz);
  syn.get("artifact_rate_hz", s.artifact_rate_hz);
  syn.get("artifact_amplitude", s.artifact_amplitude);
  syn.get("artifact_duration_s", s.artifact_duration_s);
  syn.get("noise_sigma", s.noise_sigma);
  syn.get("seed", s.seed);
  syn.finish();

  DataConfig& d = cfg.data;
  Section dat(root, "data");
  dat.get("train_files", d.train_files);
  dat.get("test_files", d.test_files);
  dat.get("split_seed", d.split_seed);
  dat.get("stride", d.stride);
  dat.get("fs", d.fs);
  dat.finish();

  cfg.validate();
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cli.config", "cannot open config '" + path.string() + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), path.string());
}

std::string dump_config(const RunConfig& cfg) {
  const NetworkConfig& n = cfg.network;
  const TrainConfig& t = cfg.train;
  const data::SynthConfig& s = cfg.synth;
  const DataConfig& d = cfg.data;
  ordered_json j;
  j["network"] = {{"levels", n.levels},
                  {"in_channels", n.in_channels},
                  {"out_channels", n.out_channels},
                  {"base_filters", n.base_filters},
                  {"filter_cap", n.filter_cap},
                  {"kernel", n.kernel},
                  {"stride", n.stride},
                  {"input_length", n.input_length},
                  {"dropout_rate", n.dropout_rate},
                  {"leaky_slope", n.leaky_slope},
                  {"bn_eps", n.bn_eps},
                  {"bn_momentum", n.bn_momentum},
                  {"branch_dilations", n.branch_dilations},
                  {"branch_kernel", n.branch_kernel},
                  {"init_seed", n.init_seed}};
  j["train"] = {{"learning_rate", t.learning_rate}, {"momentum", t.momentum},
                {"batch_size", t.batch_size},       {"epochs", t.epochs},
                {"seed", t.seed},                   {"checkpoint_every", t.checkpoint_every},
                {"clip_norm", t.clip_norm}};
  j["loss"] = {{"alpha", t.loss.alpha},
               {"beta", t.loss.beta},
               {"smooth_l1_threshold", t.loss.smooth_l1_threshold},
               {"n_fft", t.loss.n_fft},
               {"fft_window_policy", to_string(t.loss.fft_window_policy)}};
  j["synth"] = {{"records", cfg.synth_records},
                {"duration_s", s.duration_s},
                {"fs", s.fs},
                {"heart_rate_bpm", s.heart_rate_bpm},
                {"heart_rate_sd_bpm", s.heart_rate_sd_bpm},
                {"channel_gains", s.channel_gains},
                {"gain_drift", s.gain_drift},
                {"gain_drift_hz", s.gain_drift_hz},
                {"wander_amplitude", s.wander_amplitude},
                {"wander_hz", s.wander_hz},
                {"artifact_rate_hz", s.artifact_rate_hz},
                {"artifact_amplitude", s.artifact_amplitude},
                {"artifact_duration_s", s.artifact_duration_s},
                {"noise_sigma", s.noise_sigma},
                {"seed", s.seed}};
  j["data"] = {{"train_files", d.train_files},
               {"test_files", d.test_files},
               {"split_seed", d.split_seed},
               {"stride", d.stride},
               {"fs", d.fs}};
  return j.dump(2);
}

}  // namespace cecg
