#include "cecg/data.hpp"

#include "binary_io.hpp"
#include "cecg/dsp.hpp"
#include "cecg/error.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

namespace cecg::data {

namespace fs = std::filesystem;

void Record::validate() const {
  if (!(fs > 0)) throw ValidationError("data_io.Record", "fs must be > 0 in record '" + id + "'");
  for (const auto& c : cecg)
    if (c.size() != ref.size())
      throw ValidationError("data_io.Record", "channel lengths differ in record '" + id + "'");
}

Format parse_format(const std::string& name) {
  if (name == "csv") return Format::csv;
  if (name == "bin") return Format::bin;
  throw ValidationError("data_io.format", "unknown format '" + name + "' (csv|bin)");
}

const char* extension(Format format) { return format == Format::csv ? ".csv" : ".bin"; }

namespace {

double parse_double(std::string_view field, const fs::path& path, std::size_t line) {
  while (!field.empty() && (field.front() == ' ' || field.front() == '\t')) field.remove_prefix(1);
  while (!field.empty() && (field.back() == ' ' || field.back() == '\t' || field.back() == '\r'))
    field.remove_suffix(1);
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
  if (ec != std::errc() || ptr != field.data() + field.size())
    throw FormatError("data_io.load_records",
                      path.string() + ":" + std::to_string(line) + ": bad number '" + std::string(field) + "'");
  return value;
}

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    out.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

}  // namespace

std::vector<Eigen::ArrayXd> read_csv_columns(const fs::path& path, const std::vector<std::string>& header) {
  constexpr const char* where = "data_io.load_records";
  std::ifstream in(path);
  if (!in) throw ValidationError(where, "cannot open '" + path.string() + "'");
  std::string expected;
  for (const auto& h : header) expected += (expected.empty() ? "" : ",") + h;
  std::string line;
  if (!std::getline(in, line)) throw FormatError(where, path.string() + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != expected)
    throw FormatError(where, path.string() + ": header must be '" + expected + "', got '" + line + "'");

  std::vector<std::vector<double>> cols(header.size());
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto fields = split_commas(line);
    if (fields.size() != header.size())
      throw FormatError(where, path.string() + ":" + std::to_string(line_no) + ": expected " +
                                   std::to_string(header.size()) + " columns, got " + std::to_string(fields.size()));
    for (std::size_t k = 0; k < fields.size(); ++k) cols[k].push_back(parse_double(fields[k], path, line_no));
  }
  std::vector<Eigen::ArrayXd> out;
  for (const auto& c : cols) out.push_back(Eigen::Map<const Eigen::ArrayXd>(c.data(), static_cast<Index>(c.size())));
  return out;
}

double infer_rate(const Eigen::Ref<const Eigen::ArrayXd>& t, const fs::path& path) {
  constexpr const char* where = "data_io.load_records";
  if (t.size() < 2) throw FormatError(where, path.string() + ": need at least two samples to infer fs");
  const double dt = t[1] - t[0];
  if (!(dt > 0)) throw FormatError(where, path.string() + ": timestamps must increase");
  for (Index i = 2; i < t.size(); ++i)
    if (std::abs((t[i] - t[i - 1]) - dt) > 1e-6 * dt)
      throw FormatError(where, path.string() + ": non-uniform timestamps at row " + std::to_string(i + 1));
  double fs = static_cast<double>(t.size() - 1) / (t[t.size() - 1] - t[0]);
  // Printed timestamps rarely reproduce an integral rate exactly.
  if (std::abs(fs - std::round(fs)) < 1e-6 * fs) fs = std::round(fs);
  return fs;
}

Record load_record_csv(const fs::path& path) {
  auto cols = read_csv_columns(path, {"t", "ch1", "ch2", "ch3", "ref"});
  Record r;
  r.id = path.stem().string();
  r.fs = infer_rate(cols[0], path);
  for (std::size_t c = 0; c < 3; ++c) r.cecg[c] = std::move(cols[c + 1]);
  r.ref = std::move(cols[4]);
  return r;
}

void save_record_csv(const Record& record, const fs::path& path) {
  record.validate();
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("data_io.save_record", "cannot open '" + path.string() + "' for writing");
  out.precision(std::numeric_limits<double>::max_digits10);
  out << "t,ch1,ch2,ch3,ref\n";
  for (Index i = 0; i < record.length(); ++i) {
    out << static_cast<double>(i) / record.fs << ',' << record.cecg[0][i] << ',' << record.cecg[1][i] << ','
        << record.cecg[2][i] << ',' << record.ref[i] << '\n';
  }
  if (!out) throw Error("data_io.save_record", "write to '" + path.string() + "' failed");
}

namespace {

constexpr char kRecordMagic[8] = {'C', 'E', 'C', 'G', 'R', 'E', 'C', '1'};
constexpr std::uint32_t kRecordVersion = 1;

}  // namespace

Record load_record_bin(const fs::path& path) {
  constexpr const char* where = "data_io.load_records";
  detail::BinaryReader r(path.string(), where);
  char magic[8];
  r.get_bytes(magic, 8);
  if (!std::equal(magic, magic + 8, kRecordMagic)) throw FormatError(where, path.string() + ": bad magic");
  const auto version = r.get<std::uint32_t>();
  if (version != kRecordVersion)
    throw FormatError(where, path.string() + ": unsupported version " + std::to_string(version));
  Record rec;
  rec.fs = r.get<double>();
  const auto channels = r.get<std::uint32_t>();
  if (channels != 4) throw FormatError(where, path.string() + ": expected 4 channels, got " + std::to_string(channels));
  const auto length = r.get<std::uint64_t>();
  rec.id = r.get_string();
  const auto annotations = r.get<std::uint64_t>();
  if (annotations > length) throw FormatError(where, path.string() + ": more annotations than samples");
  rec.r_peaks.resize(annotations);
  for (auto& p : rec.r_peaks) p = static_cast<Index>(r.get<std::int64_t>());
  if (length > (std::uint64_t{1} << 36)) throw FormatError(where, path.string() + ": implausible length");
  for (auto& c : rec.cecg) {
    c.resize(static_cast<Index>(length));
    r.get_doubles(c.data(), length);
  }
  rec.ref.resize(static_cast<Index>(length));
  r.get_doubles(rec.ref.data(), length);
  if (!r.at_end()) throw FormatError(where, path.string() + ": trailing bytes");
  rec.validate();
  return rec;
}

void save_record_bin(const Record& record, const fs::path& path) {
  record.validate();
  detail::BinaryWriter w;
  w.put_bytes(kRecordMagic, 8);
  w.put(kRecordVersion);
  w.put(record.fs);
  w.put(std::uint32_t{4});
  w.put(static_cast<std::uint64_t>(record.length()));
  w.put_string(record.id);
  w.put(static_cast<std::uint64_t>(record.r_peaks.size()));
  for (Index p : record.r_peaks) w.put(static_cast<std::int64_t>(p));
  for (const auto& c : record.cecg) w.put_doubles(c.data(), static_cast<std::size_t>(c.size()));
  w.put_doubles(record.ref.data(), static_cast<std::size_t>(record.ref.size()));
  w.write_file(path.string(), "data_io.save_record");
}

void save_record(const Record& record, const fs::path& path, Format format) {
  format == Format::csv ? save_record_csv(record, path) : save_record_bin(record, path);
}

std::vector<Record> load_records(const fs::path& path, Format format) {
  auto load_one = [&](const fs::path& p) {
    Record r = format == Format::csv ? load_record_csv(p) : load_record_bin(p);
    if (format == Format::csv || r.id.empty()) r.id = p.stem().string();
    return r;
  };
  if (!fs::exists(path)) throw ValidationError("data_io.load_records", "'" + path.string() + "' does not exist");
  if (!fs::is_directory(path)) return {load_one(path)};
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(path))
    if (entry.is_regular_file() && entry.path().extension() == extension(format)) files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  std::vector<Record> out;
  for (const auto& f : files) out.push_back(load_one(f));
  return out;
}

WindowSet make_windows(std::span<const Record> records, double fs_target, Index window_len, Index stride) {
  if (window_len < 1) throw ValidationError("data_io.make_windows", "window_len must be >= 1");
  if (stride == 0) stride = window_len;
  if (stride < 1) throw ValidationError("data_io.make_windows", "stride must be >= 1");
  WindowSet set;
  for (const Record& rec : records) {
    rec.validate();
    std::array<Eigen::ArrayXd, 3> x;
    Eigen::ArrayXd y;
    if (rec.fs == fs_target) {
      x = rec.cecg;
      y = rec.ref;
    } else {
      for (std::size_t c = 0; c < 3; ++c) x[c] = dsp::resample(rec.cecg[c], rec.fs, fs_target);
      y = dsp::resample(rec.ref, rec.fs, fs_target);
    }
    if (y.size() < window_len) {
      ++set.skipped_records;
      continue;
    }
    for (Index start = 0; start + window_len <= y.size(); start += stride) {
      WindowPair w{Tensor({1, 3, window_len}), Tensor({1, 1, window_len}), rec.id, start};
      for (Index c = 0; c < 3; ++c) w.x.row(0, c) = x[static_cast<std::size_t>(c)].segment(start, window_len);
      w.y.row(0, 0) = y.segment(start, window_len);
      set.windows.push_back(std::move(w));
    }
  }
  return set;
}

std::pair<std::vector<Record>, std::vector<Record>> split_by_file(std::vector<Record> records,
                                                                  std::size_t train_count, std::size_t test_count,
                                                                  std::uint64_t seed) {
  if (train_count + test_count > records.size())
    throw ValidationError("data_io.split_by_file", "requested " + std::to_string(train_count) + "+" +
                                                       std::to_string(test_count) + " files but only " +
                                                       std::to_string(records.size()) + " available");
  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::pair<std::vector<Record>, std::vector<Record>> out;
  for (std::size_t i = 0; i < train_count + test_count; ++i)
    (i < train_count ? out.first : out.second).push_back(std::move(records[order[i]]));
  return out;
}

std::pair<Tensor, Tensor> stack(std::span<const WindowPair> windows, std::span<const std::size_t> order) {
  if (order.empty()) throw ValidationError("data_io.stack", "empty selection");
  const Index len = windows[order[0]].x.length();
  const Index b = static_cast<Index>(order.size());
  Tensor x({b, 3, len}), y({b, 1, len});
  for (Index i = 0; i < b; ++i) {
    const WindowPair& w = windows[order[static_cast<std::size_t>(i)]];
    if (w.x.length() != len) throw ValidationError("data_io.stack", "windows differ in length");
    x.values().segment(i * 3 * len, 3 * len) = w.x.values();
    y.values().segment(i * len, len) = w.y.values();
  }
  return {std::move(x), std::move(y)};
}

void SynthConfig::validate() const {
  constexpr const char* where = "data_io.SynthConfig";
  if (!(duration_s > 0)) throw ValidationError(where, "duration_s must be > 0");
  if (!(fs > 0)) throw ValidationError(where, "fs must be > 0");
  if (!(heart_rate_bpm >= 30 && heart_rate_bpm <= 200))
    throw ValidationError(where, "heart_rate_bpm must lie in [30, 200]");
  for (double v : {heart_rate_sd_bpm, gain_drift, gain_drift_hz, wander_amplitude, wander_hz, artifact_rate_hz,
                   artifact_amplitude, artifact_duration_s, noise_sigma})
    if (!(v >= 0)) throw ValidationError(where, "amplitudes, rates and durations must be >= 0");
  for (double g : channel_gains)
    if (!(g >= 0)) throw ValidationError(where, "channel gains must be >= 0");
}

namespace {

// Offset (s), width (s), amplitude (mV) of the P, Q, R, S, T waves.
struct Wave {
  double offset, width, amplitude;
};
constexpr std::array<Wave, 5> kTemplate{{
    {-0.200, 0.025, 0.15},
    {-0.025, 0.010, -0.12},
    {0.000, 0.010, 1.00},
    {0.025, 0.010, -0.25},
    {0.250, 0.040, 0.30},
}};

}  // namespace

Record synth_generate(const SynthConfig& cfg, std::string id) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  const double two_pi = 2.0 * std::numbers::pi;

  Record rec;
  rec.id = std::move(id);
  rec.fs = cfg.fs;
  const Index n = static_cast<Index>(std::llround(cfg.duration_s * cfg.fs));
  rec.ref = Eigen::ArrayXd::Zero(n);

  auto next_rr = [&] {
    const double hr = std::clamp(cfg.heart_rate_bpm + cfg.heart_rate_sd_bpm * normal(rng), 30.0, 200.0);
    return 60.0 / hr;
  };
  std::vector<double> beats;
  for (double t = 0.5 * next_rr(); t < cfg.duration_s; t += next_rr()) beats.push_back(t);

  const Index reach = static_cast<Index>(std::ceil(0.45 * cfg.fs));
  for (double beat : beats) {
    const Index centre = static_cast<Index>(std::llround(beat * cfg.fs));
    if (centre < n) rec.r_peaks.push_back(centre);
    for (Index i = std::max<Index>(0, centre - reach); i < std::min(n, centre + reach); ++i) {
      const double t = static_cast<double>(i) / cfg.fs - beat;
      for (const Wave& w : kTemplate) {
        const double z = (t - w.offset) / w.width;
        rec.ref[i] += w.amplitude * std::exp(-0.5 * z * z);
      }
    }
  }

  // Motion bursts are shared events across channels with channel-specific shapes.
  struct Burst {
    Index start, length;
  };
  std::vector<Burst> bursts;
  if (cfg.artifact_rate_hz > 0 && cfg.artifact_amplitude > 0) {
    std::exponential_distribution<double> gap(cfg.artifact_rate_hz);
    for (double t = gap(rng); t < cfg.duration_s; t += gap(rng)) {
      const double len_s = std::max(0.2, cfg.artifact_duration_s * -std::log(1.0 - uniform(rng)));
      bursts.push_back({static_cast<Index>(t * cfg.fs), std::max<Index>(2, static_cast<Index>(len_s * cfg.fs))});
    }
  }

  for (std::size_t c = 0; c < 3; ++c) {
    Eigen::ArrayXd& ch = rec.cecg[c];
    const double drift_phase = two_pi * uniform(rng);
    const double wander_phase = two_pi * uniform(rng);
    const double wander_hz = cfg.wander_hz * (0.8 + 0.4 * uniform(rng));
    ch.resize(n);
    for (Index i = 0; i < n; ++i) {
      const double t = static_cast<double>(i) / cfg.fs;
      const double gain = cfg.channel_gains[c] * (1.0 + cfg.gain_drift * std::sin(two_pi * cfg.gain_drift_hz * t + drift_phase));
      ch[i] = gain * rec.ref[i];
    }
    if (cfg.wander_amplitude > 0) {
      for (Index i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / cfg.fs;
        ch[i] += cfg.wander_amplitude * std::sin(two_pi * wander_hz * t + wander_phase);
      }
    }
    for (const Burst& b : bursts) {
      // Random walk normalized to unit spread, plus a few sharp electrode
      // pops, under a Hann taper.
      Eigen::ArrayXd walk(b.length);
      double acc = 0.0;
      for (Index k = 0; k < b.length; ++k) walk[k] = acc += normal(rng);
      walk -= walk.mean();
      const double spread = std::sqrt(walk.square().mean());
      if (spread > 0) walk /= spread;
      const double pops_expected = 3.0 * static_cast<double>(b.length) / cfg.fs;
      std::poisson_distribution<int> pop_count(pops_expected);
      const int pops = pop_count(rng);
      for (int p = 0; p < pops; ++p) {
        const double at = uniform(rng) * static_cast<double>(b.length);
        const double width = (0.010 + 0.020 * uniform(rng)) * cfg.fs;
        const double height = (uniform(rng) < 0.5 ? -1.0 : 1.0) * (0.5 + uniform(rng));
        for (Index k = 0; k < b.length; ++k) {
          const double z = (static_cast<double>(k) - at) / width;
          walk[k] += height * std::exp(-0.5 * z * z);
        }
      }
      const double scale = cfg.artifact_amplitude * (0.5 + uniform(rng));
      for (Index k = 0; k < b.length && b.start + k < n; ++k) {
        const double taper =
            0.5 - 0.5 * std::cos(two_pi * static_cast<double>(k) / static_cast<double>(b.length - 1));
        ch[b.start + k] += scale * taper * walk[k];
      }
    }
    if (cfg.noise_sigma > 0)
      for (Index i = 0; i < n; ++i) ch[i] += cfg.noise_sigma * normal(rng);
  }
  return rec;
}

}  // namespace cecg::data
