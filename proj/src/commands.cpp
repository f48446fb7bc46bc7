#include "cecg/commands.hpp"

#include "cecg/error.hpp"

#include <fmt/core.h>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <ctime>
#include <fstream>
#include <map>
#include <numeric>
#include <ostream>

namespace cecg {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

std::string utc_now() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_text(const fs::path& path, const std::string& text, const char* where) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(where, "cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw Error(where, "write to '" + path.string() + "' failed");
}

void require_exists(const fs::path& path, const char* what, const char* where) {
  if (path.empty()) throw ValidationError(where, std::string(what) + " path is required");
  if (!fs::exists(path)) throw ValidationError(where, std::string(what) + " '" + path.string() + "' does not exist");
}

void make_output_dir(const fs::path& dir, const char* where) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir))
    throw ValidationError(where, "cannot create output directory '" + dir.string() + "'");
}

/// BIN when the path is a .bin file or a directory holding any; CSV otherwise.
data::Format detect_format(const fs::path& path, std::optional<data::Format> requested) {
  if (requested) return *requested;
  if (!fs::is_directory(path)) return path.extension() == ".bin" ? data::Format::bin : data::Format::csv;
  for (const auto& entry : fs::directory_iterator(path))
    if (entry.path().extension() == ".bin") return data::Format::bin;
  return data::Format::csv;
}

ordered_json similarity_json(const dsp::SimilaritySummary& s) {
  return {{"mse", s.mean_mse}, {"cross_correlation", s.mean_xcorr}, {"lag", s.mean_lag}, {"windows", s.windows}};
}

}  // namespace

void write_manifest(const fs::path& dir, const RunManifest& m) {
  ordered_json j;
  j["command"] = m.command;
  j["config"] = m.config_path;
  j["seed"] = m.seed ? ordered_json(*m.seed) : ordered_json(nullptr);
  j["inputs"] = m.inputs;
  j["outputs"] = m.outputs;
  j["version"] = kToolkitVersion;
  j["started"] = m.started;
  j["finished"] = m.finished.empty() ? ordered_json(nullptr) : ordered_json(m.finished);
  write_text(dir / "manifest.json", j.dump(2) + "\n", "cli.manifest");
}

std::vector<fs::path> cmd_synth(const SynthArgs& args) {
  constexpr const char* where = "cli.synth";
  RunConfig cfg = load_config(args.config);
  if (args.seed) cfg.synth.seed = *args.seed;
  cfg.validate();

  RunManifest manifest{"synth", args.config.string(), cfg.synth.seed, {args.config.string()}, {args.out.string()},
                       utc_now(), ""};
  make_output_dir(args.out, where);
  write_manifest(args.out, manifest);

  std::vector<fs::path> written;
  ordered_json index;
  index["format"] = args.format == data::Format::bin ? "bin" : "csv";
  index["records"] = ordered_json::array();
  for (std::size_t i = 0; i < cfg.synth_records; ++i) {
    data::SynthConfig sc = cfg.synth;
    sc.seed = cfg.synth.seed + i;
    const std::string id = fmt::format("synth_{:03d}", i);
    const data::Record rec = data::synth_generate(sc, id);
    const fs::path path = args.out / (id + data::extension(args.format));
    data::save_record(rec, path, args.format);
    written.push_back(path);
    index["records"].push_back({{"id", id},
                                {"file", path.filename().string()},
                                {"seed", sc.seed},
                                {"fs", rec.fs},
                                {"samples", rec.length()},
                                {"r_peaks", rec.r_peaks.size()}});
  }
  index["config"] = ordered_json::parse(dump_config(cfg))["synth"];
  write_text(args.out / "index.json", index.dump(2) + "\n", where);

  manifest.finished = utc_now();
  write_manifest(args.out, manifest);
  return written;
}

TrainSummary cmd_train(const TrainArgs& args, std::ostream& progress) {
  constexpr const char* where = "cli.train";
  require_exists(args.config, "config", where);
  require_exists(args.data, "data", where);
  RunConfig cfg = load_config(args.config);
  if (args.seed) {
    cfg.train.seed = *args.seed;
    cfg.network.init_seed = *args.seed;
  }
  cfg.validate();
  if (cfg.network.input_length <= 0) throw ValidationError(where, "network.input_length must be > 0");
  const fs::path resume_from = args.checkpoint.empty() ? args.out / "checkpoint_final.bin" : args.checkpoint;
  if (args.resume) require_exists(resume_from, "checkpoint", where);

  std::vector<data::Record> records = data::load_records(args.data, detect_format(args.data, args.format));
  if (records.empty()) throw ValidationError(where, "no records in '" + args.data.string() + "'");
  std::vector<data::Record> train_set, test_set;
  if (cfg.data.train_files == 0 && cfg.data.test_files == 0) {
    train_set = std::move(records);
  } else {
    std::tie(train_set, test_set) =
        data::split_by_file(std::move(records), cfg.data.train_files, cfg.data.test_files, cfg.data.split_seed);
  }
  const Index len = cfg.network.input_length;
  const data::WindowSet train_windows = data::make_windows(train_set, cfg.data.fs, len, cfg.data.stride);
  const data::WindowSet test_windows = data::make_windows(test_set, cfg.data.fs, len, cfg.data.stride);
  if (train_windows.windows.empty()) throw ValidationError(where, "training records yield no windows");
  if (train_windows.skipped_records + test_windows.skipped_records > 0)
    progress << "warning: " << train_windows.skipped_records + test_windows.skipped_records
             << " record(s) shorter than one window skipped\n";

  RunManifest manifest{"train", args.config.string(), cfg.train.seed, {args.config.string(), args.data.string()},
                       {args.out.string()}, utc_now(), ""};
  if (args.resume) manifest.inputs.push_back(resume_from.string());
  make_output_dir(args.out, where);
  write_manifest(args.out, manifest);

  ordered_json split;
  split["train"] = ordered_json::array();
  split["test"] = ordered_json::array();
  for (const auto& r : train_set) split["train"].push_back(r.id);
  for (const auto& r : test_set) split["test"].push_back(r.id);
  write_text(args.out / "split.json", split.dump(2) + "\n", where);

  std::optional<Checkpoint> resumed;
  TrainState state;
  if (args.resume) {
    resumed.emplace(load_checkpoint(resume_from, cfg.network));
    state = from_extras(resumed->extras, resumed->network.parameters());
    progress << "resuming after epoch " << state.epochs_done << "\n";
  }
  Network net = resumed ? std::move(resumed->network) : Network(cfg.network);

  const fs::path log_path = args.out / "train_log.jsonl";
  std::ofstream log_out(log_path, args.resume ? std::ios::app : std::ios::trunc);
  if (!log_out) throw Error(where, "cannot open '" + log_path.string() + "'");
  TrainOptions options;
  options.checkpoint_dir = args.out;
  options.on_epoch = [&](const EpochRecord& r) {
    write_log_line(log_out, r);
    log_out.flush();
    progress << fmt::format("epoch {} l_signal {:.6g} l_frequency {:.6g} l_total {:.6g} ({:.1f} s)\n", r.epoch,
                            r.l_signal, r.l_frequency, r.l_total, r.wall_s);
  };

  TrainSummary summary;
  summary.train_windows = train_windows.windows.size();
  summary.test_windows = test_windows.windows.size();
  summary.log = train(net, train_windows.windows, cfg.train, state, options);
  save_checkpoint(net, args.out / "checkpoint_final.bin", to_extras(state));

  if (!test_windows.windows.empty()) {
    summary.test_denoised = evaluate_denoising(net, test_windows.windows);
    ordered_json eval;
    eval["denoised"] = similarity_json(*summary.test_denoised);
    for (Index c = 0; c < cfg.network.in_channels; ++c)
      eval[fmt::format("raw_ch{}", c + 1)] = similarity_json(evaluate_channel(test_windows.windows, c));
    write_text(args.out / "evaluation.json", eval.dump(2) + "\n", where);
  }

  manifest.finished = utc_now();
  write_manifest(args.out, manifest);
  return summary;
}

namespace {

void write_prediction_csv(const fs::path& path, double fs, const Eigen::ArrayXd& pred, const Eigen::ArrayXd& ref) {
  std::string text = "t,pred,ref\n";
  for (Index i = 0; i < pred.size(); ++i)
    text += fmt::format("{},{},{}\n", static_cast<double>(i) / fs, pred[i], ref[i]);
  write_text(path, text, "cli.denoise");
}

}  // namespace

std::vector<fs::path> cmd_denoise(const DenoiseArgs& args, std::ostream& warnings) {
  constexpr const char* where = "cli.denoise";
  require_exists(args.checkpoint, "checkpoint", where);
  require_exists(args.data, "data", where);
  const Checkpoint ckpt = load_checkpoint(args.checkpoint);
  const Network& net = ckpt.network;
  const NetworkConfig& nc = net.config();
  if (nc.in_channels != 3 || nc.out_channels != 1)
    throw ValidationError(where, "checkpoint maps " + std::to_string(nc.in_channels) + " to " +
                                     std::to_string(nc.out_channels) + " channels, records need 3 to 1");
  const std::vector<data::Record> records = data::load_records(args.data, detect_format(args.data, args.format));

  RunManifest manifest{"denoise", "", std::nullopt, {args.checkpoint.string(), args.data.string()},
                       {args.out.string()}, utc_now(), ""};
  make_output_dir(args.out, where);
  write_manifest(args.out, manifest);

  constexpr double kFs = 1024.0;
  constexpr std::size_t kBatch = 32;
  std::vector<fs::path> written;
  for (const data::Record& rec : records) {
    if (rec.length() == 0) {
      warnings << "warning: record '" << rec.id << "' is empty, skipped\n";
      continue;
    }
    const data::WindowSet ws = data::make_windows(std::span(&rec, 1), kFs, nc.input_length, nc.input_length);
    if (ws.windows.empty()) {
      warnings << "warning: record '" << rec.id << "' is shorter than one window, skipped\n";
      continue;
    }
    const Index len = nc.input_length;
    const Index total = len * static_cast<Index>(ws.windows.size());
    Eigen::ArrayXd pred(total), ref(total);
    std::vector<std::size_t> order(ws.windows.size());
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t start = 0; start < order.size(); start += kBatch) {
      const std::size_t count = std::min(kBatch, order.size() - start);
      const Tensor out = net.predict(data::stack(ws.windows, std::span(order).subspan(start, count)).first);
      for (std::size_t k = 0; k < count; ++k) {
        const Index at = static_cast<Index>(start + k) * len;
        pred.segment(at, len) = out.row(static_cast<Index>(k), 0);
        ref.segment(at, len) = ws.windows[start + k].y.row(0, 0);
      }
    }
    if (!pred.allFinite()) throw NumericError(where, "non-finite output for record '" + rec.id + "'");
    const fs::path path = args.out / (rec.id + ".csv");
    write_prediction_csv(path, kFs, pred, ref);
    written.push_back(path);
  }

  manifest.finished = utc_now();
  write_manifest(args.out, manifest);
  return written;
}

namespace {

struct PredictionFile {
  std::string id;
  double fs = 0.0;
  Eigen::ArrayXd pred;
  Eigen::ArrayXd ref;
};

std::string first_line(const fs::path& path) {
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return line;
}

std::vector<PredictionFile> load_predictions(const EvalArgs& args) {
  constexpr const char* where = "cli.eval";
  std::vector<fs::path> paths;
  for (const auto& entry : fs::directory_iterator(args.predictions))
    if (entry.is_regular_file() && entry.path().extension() == ".csv") paths.push_back(entry.path());
  std::sort(paths.begin(), paths.end());
  if (paths.empty()) throw ValidationError(where, "no prediction CSVs in '" + args.predictions.string() + "'");

  std::map<std::string, data::Record> refs;
  if (args.references)
    for (auto& r : data::load_records(*args.references, detect_format(*args.references, args.format)))
      refs.emplace(r.id, std::move(r));

  std::vector<PredictionFile> files;
  for (const fs::path& path : paths) {
    PredictionFile f;
    f.id = path.stem().string();
    const std::string header = first_line(path);
    std::vector<Eigen::ArrayXd> cols;
    if (header == "t,pred,ref") {
      cols = data::read_csv_columns(path, {"t", "pred", "ref"});
    } else if (header == "t,pred" && args.references) {
      cols = data::read_csv_columns(path, {"t", "pred"});
    } else {
      throw FormatError(where, path.string() + ": header must be 't,pred,ref' (or 't,pred' with --ref)");
    }
    f.fs = data::infer_rate(cols[0], path);
    f.pred = std::move(cols[1]);
    if (args.references) {
      const auto it = refs.find(f.id);
      if (it == refs.end()) throw ValidationError(where, "unmatched file sets: no reference for '" + f.id + "'");
      Eigen::ArrayXd ref = it->second.fs == f.fs ? it->second.ref : dsp::resample(it->second.ref, it->second.fs, f.fs);
      if (ref.size() < f.pred.size())
        throw ValidationError(where, "reference '" + f.id + "' is shorter than its prediction");
      f.ref = ref.head(f.pred.size());
      refs.erase(it);
    } else {
      f.ref = std::move(cols[2]);
    }
    files.push_back(std::move(f));
  }
  if (!refs.empty())
    throw ValidationError(where, "unmatched file sets: no prediction for '" + refs.begin()->first + "'");
  return files;
}

ordered_json hrv_json(const qrs::HrvReport& h) {
  return {{"mean_rr_s", h.mean_rr_s}, {"rmssd_s", h.rmssd_s},         {"pnn50_pct", h.pnn50_pct},
          {"lf_hf", h.lf_hf},         {"beats", h.beats},             {"short_record", h.short_record},
          {"insufficient", h.insufficient}};
}

void write_peaks(const fs::path& path, const qrs::PeakAnnotations& peaks) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cli.eval", "cannot open '" + path.string() + "' for writing");
  qrs::write_annotations(out, peaks);
}

constexpr Index kEvalWindow = 2048;
constexpr Index kEvalMaxLag = 256;

}  // namespace

EvalReport cmd_eval(const EvalArgs& args) {
  constexpr const char* where = "cli.eval";
  require_exists(args.predictions, "predictions", where);
  if (!fs::is_directory(args.predictions))
    throw ValidationError(where, "predictions '" + args.predictions.string() + "' is not a directory");
  if (args.references) require_exists(*args.references, "references", where);
  const std::vector<PredictionFile> files = load_predictions(args);

  RunManifest manifest{"eval", "", std::nullopt, {args.predictions.string()}, {args.out.string()}, utc_now(), ""};
  if (args.references) manifest.inputs.push_back(args.references->string());
  make_output_dir(args.out, where);
  make_output_dir(args.out / "peaks", where);
  write_manifest(args.out, manifest);

  EvalReport report;
  std::vector<Eigen::ArrayXd> pred_windows, ref_windows;
  std::string jsonl;
  for (const PredictionFile& f : files) {
    const qrs::PeakAnnotations ref_peaks = qrs::detect_rpeaks(f.ref, f.fs);
    const qrs::PeakAnnotations pred_peaks = qrs::detect_rpeaks(f.pred, f.fs);
    write_peaks(args.out / "peaks" / (f.id + ".ref.tsv"), ref_peaks);
    write_peaks(args.out / "peaks" / (f.id + ".pred.tsv"), pred_peaks);
    FileReport fr{f.id, qrs::hrv_report(ref_peaks), qrs::hrv_report(pred_peaks),
                  qrs::rpeak_xcorr(pred_peaks, ref_peaks, f.pred.size())};
    ordered_json j;
    j["type"] = "file";
    j["id"] = fr.id;
    j["ref"] = hrv_json(fr.ref);
    j["pred"] = hrv_json(fr.pred);
    j["cross_correlation"] = fr.rpeaks.coefficient;
    j["cross_correlation_lag"] = fr.rpeaks.lag;
    jsonl += j.dump() + "\n";
    report.files.push_back(fr);

    for (Index start = 0; start + kEvalWindow <= f.pred.size(); start += kEvalWindow) {
      pred_windows.emplace_back(f.pred.segment(start, kEvalWindow));
      ref_windows.emplace_back(f.ref.segment(start, kEvalWindow));
    }
  }
  if (!pred_windows.empty()) report.aggregate = dsp::summarize_similarity(pred_windows, ref_windows, kEvalMaxLag);
  ordered_json agg = {{"type", "aggregate"}};
  agg.update(similarity_json(report.aggregate));
  jsonl += agg.dump() + "\n";

  write_text(args.out / "report.jsonl", jsonl, where);
  write_text(args.out / "report.txt", render_report(report), where);
  manifest.finished = utc_now();
  write_manifest(args.out, manifest);
  return report;
}

std::string render_report(const EvalReport& report) {
  std::size_t id_width = 4;
  for (const auto& f : report.files) id_width = std::max(id_width, f.id.size());
  auto lf_hf = [](const qrs::HrvReport& h) {
    return std::isinf(h.lf_hf) ? std::string("inf") : fmt::format("{:.3f}", h.lf_hf);
  };

  std::string out = "HRV per file (ref / pred)\n";
  out += fmt::format("{:<{}}  {:>8} {:>8}  {:>8} {:>8}  {:>7} {:>7}  {:>7} {:>7}  {:>17}\n", "File", id_width,
                     "Mean RR", "", "RMSSD", "", "pNN50", "", "LF/HF", "", "Cross Correlation");
  out += fmt::format("{:<{}}  {:>8} {:>8}  {:>8} {:>8}  {:>7} {:>7}  {:>7} {:>7}  {:>17}\n", "", id_width, "ref ms",
                     "pred ms", "ref ms", "pred ms", "ref %", "pred %", "ref", "pred", "");
  for (const auto& f : report.files) {
    std::string flags;
    if (f.ref.short_record || f.pred.short_record) flags += " short";
    if (f.ref.insufficient || f.pred.insufficient) flags += " insufficient";
    out += fmt::format("{:<{}}  {:>8.1f} {:>8.1f}  {:>8.1f} {:>8.1f}  {:>7.2f} {:>7.2f}  {:>7} {:>7}  {:>17.3f}{}\n",
                       f.id, id_width, 1e3 * f.ref.mean_rr_s, 1e3 * f.pred.mean_rr_s, 1e3 * f.ref.rmssd_s,
                       1e3 * f.pred.rmssd_s, f.ref.pnn50_pct, f.pred.pnn50_pct, lf_hf(f.ref), lf_hf(f.pred),
                       f.rpeaks.coefficient, flags);
  }
  out += "\nSignal similarity (min-max normalized 2 s windows)\n";
  out += fmt::format("{:>10}  {:>22}  {:>10}  {:>7}\n", "Mean MSE", "Mean Cross Correlation", "Mean Lag", "Windows");
  out += fmt::format("{:>10.4f}  {:>22.4f}  {:>10.2f}  {:>7}\n", report.aggregate.mean_mse, report.aggregate.mean_xcorr,
                     report.aggregate.mean_lag, report.aggregate.windows);
  return out;
}

}  // namespace cecg
