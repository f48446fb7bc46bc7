#pragma once

#include "cecg/config.hpp"
#include "cecg/data.hpp"
#include "cecg/qrs.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace cecg {

inline constexpr const char* kToolkitVersion = "0.1.0";

struct RunManifest {
  std::string command;
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  std::string started;
  std::string finished;  ///< empty while the command runs
};

/// Writes <dir>/manifest.json.
void write_manifest(const std::filesystem::path& dir, const RunManifest& manifest);

struct SynthArgs {
  std::filesystem::path config;
  std::filesystem::path out;
  std::optional<std::uint64_t> seed;
  data::Format format = data::Format::bin;
};

/// Writes synth.records records (record i seeded with seed + i), index.json
/// and the manifest. Returns the record paths.
std::vector<std::filesystem::path> cmd_synth(const SynthArgs& args);

struct TrainArgs {
  std::filesystem::path config;
  std::filesystem::path data;
  std::filesystem::path out;
  std::optional<std::uint64_t> seed;  ///< overrides train.seed and network.init_seed
  bool resume = false;
  std::filesystem::path checkpoint;  ///< resume source; defaults to <out>/checkpoint_final.bin
  std::optional<data::Format> format;
};

struct TrainSummary {
  TrainLog log;
  std::size_t train_windows = 0;
  std::size_t test_windows = 0;
  std::optional<dsp::SimilaritySummary> test_denoised;
};

/// Split, window, train. Inputs are checked before the output directory is
/// created. Writes checkpoint_final.bin, periodic checkpoints,
/// train_log.jsonl (appended on resume), split.json, evaluation.json when
/// there is a test set, and the manifest.
TrainSummary cmd_train(const TrainArgs& args, std::ostream& progress);

struct DenoiseArgs {
  std::filesystem::path checkpoint;
  std::filesystem::path data;
  std::filesystem::path out;
  std::optional<data::Format> format;
};

/// Per record: resample, cut non-overlapping windows, run the network in eval
/// mode and concatenate the outputs. Writes <id>.csv with columns t,pred,ref.
/// Records shorter than one window produce a warning and no file.
std::vector<std::filesystem::path> cmd_denoise(const DenoiseArgs& args, std::ostream& warnings);

struct EvalArgs {
  std::filesystem::path predictions;      ///< directory of t,pred,ref or t,pred CSVs
  std::optional<std::filesystem::path> references;  ///< records supplying ref instead
  std::filesystem::path out;
  std::optional<data::Format> format;
};

struct FileReport {
  std::string id;
  qrs::HrvReport ref;
  qrs::HrvReport pred;
  qrs::RpeakCorrelation rpeaks;
};

struct EvalReport {
  std::vector<FileReport> files;
  dsp::SimilaritySummary aggregate;
};

/// HRV of reference and prediction per file plus R-location correlation, and
/// windowed MSE / cross-correlation over everything. Writes report.jsonl,
/// report.txt, peaks/<id>.{ref,pred}.tsv and the manifest.
EvalReport cmd_eval(const EvalArgs& args);

/// The aligned text rendering written to report.txt.
std::string render_report(const EvalReport& report);

}  // namespace cecg
