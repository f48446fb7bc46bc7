#pragma once

#include "cecg/tensor.hpp"

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace cecg::data {

/// One recording: three capacitive channels and the LEAD I reference, all
/// sampled at `fs`.
struct Record {
  std::string id;
  double fs = 0.0;
  std::array<Eigen::ArrayXd, 3> cecg;
  Eigen::ArrayXd ref;
  std::vector<Index> r_peaks;  ///< ground truth, synthetic records only

  Index length() const { return ref.size(); }
  void validate() const;
};

enum class Format { csv, bin };

Format parse_format(const std::string& name);
const char* extension(Format format);

/// CSV: header "t,ch1,ch2,ch3,ref", one row per sample; fs comes from the t
/// column, which must be uniform within 1e-6 relative.
Record load_record_csv(const std::filesystem::path& path);
void save_record_csv(const Record& record, const std::filesystem::path& path);

/// Numeric CSV with exactly the given header line, returned column by column.
std::vector<Eigen::ArrayXd> read_csv_columns(const std::filesystem::path& path, const std::vector<std::string>& header);
/// Sampling rate from a uniform time column (within 1e-6 relative).
double infer_rate(const Eigen::Ref<const Eigen::ArrayXd>& t, const std::filesystem::path& path);

/// BIN (little-endian): "CECGREC1", u32 version, f64 fs, u32 channel count
/// (4: ch1..ch3, ref), u64 length, u32 id length + id, u64 annotation count +
/// i64 annotations, then each channel's float64 samples in order.
Record load_record_bin(const std::filesystem::path& path);
void save_record_bin(const Record& record, const std::filesystem::path& path);

/// A single file, or every file with the format's extension in a directory
/// (sorted by name). The record id is the file stem.
std::vector<Record> load_records(const std::filesystem::path& path, Format format);
void save_record(const Record& record, const std::filesystem::path& path, Format format);

/// A fixed-length training example: x is [1, 3, L], y is [1, 1, L].
struct WindowPair {
  Tensor x;
  Tensor y;
  std::string record_id;
  Index start = 0;
};

struct WindowSet {
  std::vector<WindowPair> windows;
  std::size_t skipped_records = 0;  ///< records shorter than one window
};

/// Resamples records to fs_target when needed, then cuts windows at
/// `stride` (0 means window_len). Trailing partial windows are dropped.
WindowSet make_windows(std::span<const Record> records, double fs_target = 1024.0, Index window_len = 2048,
                       Index stride = 0);

/// Record-level split: a seeded shuffle, then the first train_count records
/// train and the next test_count test.
std::pair<std::vector<Record>, std::vector<Record>> split_by_file(std::vector<Record> records,
                                                                  std::size_t train_count, std::size_t test_count,
                                                                  std::uint64_t seed);

/// Stacks the selected windows into [b, 3, L] inputs and [b, 1, L] targets.
std::pair<Tensor, Tensor> stack(std::span<const WindowPair> windows, std::span<const std::size_t> order);

struct SynthConfig {
  double duration_s = 60.0;
  double fs = 1024.0;
  double heart_rate_bpm = 72.0;
  double heart_rate_sd_bpm = 3.0;
  std::array<double, 3> channel_gains{0.7, 1.0, 0.5};
  double gain_drift = 0.3;          ///< relative amplitude of the slow gain modulation
  double gain_drift_hz = 0.05;
  double wander_amplitude = 0.5;    ///< mV
  double wander_hz = 0.25;
  double artifact_rate_hz = 0.1;    ///< mean bursts per second (Poisson)
  double artifact_amplitude = 1.5;  ///< mV
  double artifact_duration_s = 1.5; ///< mean burst length (exponential)
  double noise_sigma = 0.05;        ///< mV, white
  std::uint64_t seed = 1;

  void validate() const;
};

/// Sum-of-Gaussians P-QRS-T reference with ground-truth R annotations, and
/// three capacitive channels: gain_i(t) * ref + baseline wander + motion
/// bursts + white noise. Bit-identical for identical configs.
Record synth_generate(const SynthConfig& cfg, std::string id = "synth");

}  // namespace cecg::data
