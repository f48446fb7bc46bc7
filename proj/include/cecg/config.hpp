#pragma once

#include "cecg/data.hpp"
#include "cecg/network.hpp"
#include "cecg/trainer.hpp"

#include <cstddef>
#include <filesystem>
#include <string>

namespace cecg {

/// How cmd_train turns a record directory into train and test sets.
struct DataConfig {
  std::size_t train_files = 0;  ///< 0 with test_files 0: every record trains
  std::size_t test_files = 0;
  std::uint64_t split_seed = 0;
  Index stride = 0;             ///< 0 means the window length
  double fs = 1024.0;

  void validate() const;
};

struct RunConfig {
  NetworkConfig network;
  TrainConfig train;
  data::SynthConfig synth;
  std::size_t synth_records = 4;
  DataConfig data;

  void validate() const;
};

/// JSON object with optional "network", "train", "loss", "synth" and "data"
/// sections. Missing keys keep their defaults; unknown keys are rejected.
RunConfig parse_config(const std::string& text, const std::string& source = "<string>");
RunConfig load_config(const std::filesystem::path& path);

/// Canonical JSON of every field, suitable for manifests.
std::string dump_config(const RunConfig& cfg);

}  // namespace cecg
