#include "support.hpp"

#include "cecg/commands.hpp"
#include "cecg/config.hpp"
#include "cecg/data.hpp"
#include "cecg/dsp.hpp"
#include "cecg/error.hpp"
#include "cecg/loss.hpp"
#include "cecg/network.hpp"
#include "cecg/qrs.hpp"
#include "cecg/spectral.hpp"
#include "cecg/trainer.hpp"

#include <fmt/format.h>
#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>

using namespace cecg;
using cecg::testing::away_from_zero;
using cecg::testing::check_gradients;
using cecg::testing::project;
using cecg::testing::random_tensor;
using Eigen::ArrayXcd;
using Eigen::ArrayXd;

namespace fs = std::filesystem;

namespace {

constexpr double kGradTolerance = 1e-3;
constexpr double kGradEps = 1e-4;
constexpr double kDftTolerance = 1e-9;
constexpr double kParsevalTolerance = 1e-9;
constexpr double kRoundtripTolerance = 1e-10;
constexpr double kEdgeDb = -3.0103;
constexpr double kEdgeToleranceDb = 0.5;
constexpr double kDcResidual = 1e-3;
constexpr double kToneTolerance = 0.02;
constexpr double kDetectorRate = 0.99;
constexpr double kMatchWindowS = 0.050;
constexpr double kHrvExact = 1e-12;
constexpr double kLfHfSeparation = 10.0;
constexpr double kOverfitRatio = 0.05;
constexpr std::uint64_t kOverfitSteps = 500;
constexpr std::uint64_t kSmokeEpochs = 20;

struct Outcome {
  enum class Status { pass, fail, skip } status;
  std::string detail;
};

Outcome verdict(bool ok, std::string detail) {
  return {ok ? Outcome::Status::pass : Outcome::Status::fail, std::move(detail)};
}

/// Results of criterion 6 reused by criterion 7.
struct SmokeRun {
  std::optional<Network> joint;
  std::vector<data::WindowPair> held_out;
};

// ---------------------------------------------------------------- criterion 1

Outcome gradient_suite() {
  std::vector<std::pair<std::string, testing::GradCheckResult>> results;
  auto record = [&](std::string name, testing::GradCheckResult r) { results.emplace_back(std::move(name), r); };

  const ConvSpec conv{2, 3, 4, 2, 1, 1};
  record("conv1d", check_gradients({random_tensor({2, 2, 12}, 1), random_tensor({3, 2, 4}, 2), random_tensor({1, 3, 1}, 3)},
                                   [&](Tape&, const std::vector<Var>& v) { return project(conv1d(v[0], v[1], v[2], conv)); },
                                   kGradEps));
  const ConvSpec dilated{2, 2, 3, 1, 4, 4};
  record("dilated conv1d",
         check_gradients({random_tensor({1, 2, 16}, 4), random_tensor({2, 2, 3}, 5), random_tensor({1, 2, 1}, 6)},
                         [&](Tape&, const std::vector<Var>& v) { return project(conv1d(v[0], v[1], v[2], dilated)); },
                         kGradEps));
  const ConvSpec up{3, 2, 4, 2, 1, 1};
  record("conv1d_transpose",
         check_gradients({random_tensor({2, 3, 6}, 7), random_tensor({3, 2, 4}, 8), random_tensor({1, 2, 1}, 9)},
                         [&](Tape&, const std::vector<Var>& v) { return project(conv1d_transpose(v[0], v[1], v[2], up)); },
                         kGradEps));
  for (Mode mode : {Mode::train, Mode::eval})
    record(mode == Mode::train ? "batchnorm (train)" : "batchnorm (eval)",
           check_gradients({random_tensor({3, 2, 5}, 10), random_tensor({1, 2, 1}, 11, 0.5, 1.5), random_tensor({1, 2, 1}, 12)},
                           [&](Tape&, const std::vector<Var>& v) {
                             BatchNormState st{ArrayXd::Constant(2, 0.1), ArrayXd::Constant(2, 0.7)};
                             return project(batchnorm1d(v[0], v[1], v[2], st, mode));
                           },
                           kGradEps));
  record("leaky relu", check_gradients({away_from_zero({2, 2, 10}, 13)},
                                       [](Tape&, const std::vector<Var>& v) { return project(leaky_relu(v[0], 0.2)); },
                                       kGradEps));

  const InceptionBlockConfig block{2};
  std::vector<Tensor> block_inputs{random_tensor({2, 2, 16}, 14)};
  for (std::uint64_t k = 0; k < 3; ++k) {
    block_inputs.push_back(random_tensor({2, 2, 3}, 15 + k));
    block_inputs.push_back(random_tensor({1, 2, 1}, 18 + k));
  }
  block_inputs.push_back(random_tensor({2, 6, 1}, 21));
  block_inputs.push_back(random_tensor({1, 2, 1}, 22));
  record("inception block", check_gradients(block_inputs,
                                            [&](Tape&, const std::vector<Var>& v) {
                                              InceptionParams p;
                                              for (std::size_t k = 0; k < 3; ++k) {
                                                p.branch_weights.push_back(v[1 + 2 * k]);
                                                p.branch_biases.push_back(v[2 + 2 * k]);
                                              }
                                              p.combine_weight = v[7];
                                              p.combine_bias = v[8];
                                              return project(inception_block(v[0], p, block));
                                            },
                                            kGradEps));
  record("smooth l1", check_gradients({random_tensor({1, 1, 32}, 23, -3, 3), random_tensor({1, 1, 32}, 24, -3, 3)},
                                      [](Tape&, const std::vector<Var>& v) { return signal_loss(v[0], v[1]); }, kGradEps));
  LossConfig freq;
  freq.n_fft = 16;
  record("frequency loss",
         check_gradients({random_tensor({2, 1, 32}, 25, -0.3, 0.3), random_tensor({2, 1, 32}, 26, -0.3, 0.3)},
                         [&](Tape&, const std::vector<Var>& v) { return frequency_loss(v[0], v[1], freq); }, kGradEps));

  NetworkConfig nc;
  nc.levels = 3;
  nc.base_filters = 2;
  nc.input_length = 64;
  Network net(nc);
  LossConfig loss;
  loss.n_fft = 32;
  const auto full = testing::check_network_gradients(net, random_tensor({2, 3, 64}, 27), random_tensor({2, 1, 64}, 28),
                                                     loss, 7, kGradEps);
  const bool all_params = full.checked == net.parameters().scalar_count();
  const bool few_kinks = full.kink_crossings * 100 < full.checked;
  record(fmt::format("network ({} params)", full.checked), full);

  bool ok = all_params && few_kinks;
  std::string worst;
  double worst_error = 0.0;
  for (const auto& [name, r] : results) {
    ok = ok && r.max_error < kGradTolerance;
    if (r.max_error >= worst_error) {
      worst_error = r.max_error;
      worst = name;
    }
  }
  return verdict(ok, fmt::format("{} checks, max rel err {:.2e} ({}) < {:.0e}, {} kink-straddling elements skipped",
                                 results.size(), worst_error, worst, kGradTolerance, full.kink_crossings));
}

// ---------------------------------------------------------------- criterion 2

Outcome fft_oracle() {
  const Index n = 1024;
  ArrayXcd twiddle(n);
  for (Index j = 0; j < n; ++j) twiddle[j] = std::polar(1.0, -2.0 * std::numbers::pi * j / n);
  std::mt19937_64 rng(2024);
  std::normal_distribution<double> dist;
  double dft_err = 0.0, parseval_err = 0.0, roundtrip_err = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    ArrayXd x(n);
    for (Index i = 0; i < n; ++i) x[i] = dist(rng);
    const Spectrum s = rfft(x, n);
    for (Index k = 0; k <= n / 2; ++k) {
      std::complex<double> acc = 0.0;
      for (Index t = 0; t < n; ++t) acc += x[t] * twiddle[(k * t) % n];
      dft_err = std::max(dft_err, std::abs(s.bins[k] - acc));
    }
    double energy = std::norm(s.bins[0]) + std::norm(s.bins[n / 2]);
    for (Index k = 1; k < n / 2; ++k) energy += 2.0 * std::norm(s.bins[k]);
    parseval_err = std::max(parseval_err, std::abs(energy / n / x.square().sum() - 1.0));
    roundtrip_err = std::max(roundtrip_err, (irfft(s) - x).abs().maxCoeff());
  }
  return verdict(dft_err < kDftTolerance && parseval_err < kParsevalTolerance && roundtrip_err < kRoundtripTolerance,
                 fmt::format("100 vectors: DFT err {:.2e}, Parseval rel err {:.2e}, roundtrip err {:.2e}", dft_err,
                             parseval_err, roundtrip_err));
}

// ---------------------------------------------------------------- criterion 3

Outcome filter_suite() {
  const double fs = 1024.0;
  const dsp::BiquadCascade f = dsp::butter_bandpass(4, 0.5, 60.0, fs);
  double max_pole = 0.0;
  for (auto p : f.poles()) max_pole = std::max(max_pole, std::abs(p));
  const double low_db = 20.0 * std::log10(std::abs(f.response(0.5, fs)));
  const double high_db = 20.0 * std::log10(std::abs(f.response(60.0, fs)));

  const Index n = 20 * 1024;
  const double offset = 1.0;
  const double dc = std::abs(dsp::filtfilt(f, ArrayXd::Constant(n, offset)).mean()) / offset;

  ArrayXd tone(n);
  for (Index i = 0; i < n; ++i) tone[i] = std::sin(2.0 * std::numbers::pi * 10.0 * i / fs);
  const ArrayXd y = dsp::filtfilt(f, tone);
  // Amplitude by projection on sin and cos over whole periods in the middle half.
  double s = 0.0, c = 0.0;
  const Index from = n / 4, to = 3 * n / 4;
  for (Index i = from; i < to; ++i) {
    const double w = 2.0 * std::numbers::pi * 10.0 * i / fs;
    s += y[i] * std::sin(w);
    c += y[i] * std::cos(w);
  }
  const double amplitude = 2.0 * std::hypot(s, c) / static_cast<double>(to - from);

  const bool ok = f.stable() && max_pole < 1.0 && std::abs(low_db - kEdgeDb) <= kEdgeToleranceDb &&
                  std::abs(high_db - kEdgeDb) <= kEdgeToleranceDb && dc < kDcResidual &&
                  std::abs(amplitude - 1.0) < kToneTolerance;
  return verdict(ok, fmt::format("max |pole| {:.6f}, edges {:.3f}/{:.3f} dB, DC residual {:.2e}, 10 Hz gain {:.4f}",
                                 max_pole, low_db, high_db, dc, amplitude));
}

// ---------------------------------------------------------------- criterion 4

Outcome detector_suite() {
  bool ok = true;
  std::string detail;
  for (double bpm : {50.0, 75.0, 120.0}) {
    data::SynthConfig c;
    c.heart_rate_bpm = bpm;
    c.seed = static_cast<std::uint64_t>(bpm);
    const data::Record r = data::synth_generate(c);
    const ArrayXd filtered = qrs::preprocess(r.ref, r.fs);
    const qrs::PeakAnnotations p = qrs::hamilton_detect(filtered, r.fs);

    const Index tol = static_cast<Index>(std::lround(kMatchWindowS * r.fs));
    std::size_t tp = 0, j = 0;
    for (Index truth : r.r_peaks) {
      while (j < p.samples.size() && p.samples[j] < truth - tol) ++j;
      if (j < p.samples.size() && std::abs(p.samples[j] - truth) <= tol) {
        ++tp;
        ++j;
      }
    }
    const double se = static_cast<double>(tp) / static_cast<double>(r.r_peaks.size());
    const double ppv = p.samples.empty() ? 0.0 : static_cast<double>(tp) / static_cast<double>(p.samples.size());
    bool invariant = true;
    for (double gain : {0.1, 1.0, 10.0})
      invariant = invariant && qrs::hamilton_detect((gain * filtered).eval(), r.fs).samples == p.samples;
    ok = ok && se >= kDetectorRate && ppv >= kDetectorRate && invariant;
    detail += fmt::format("{}{:.0f} bpm Se {:.3f} +P {:.3f}{}", detail.empty() ? "" : "; ", bpm, se, ppv,
                          invariant ? "" : " (scale-variant)");
  }
  return verdict(ok, detail + "; gains {0.1,1,10} identical");
}

// ---------------------------------------------------------------- criterion 5

ArrayXd modulated_rr(double freq_hz, std::vector<double>& times) {
  times = {0.0};
  std::vector<double> rr;
  while (times.back() < 300.0) {
    rr.push_back(0.8 + 0.05 * std::sin(2.0 * std::numbers::pi * freq_hz * times.back()));
    times.push_back(times.back() + rr.back());
  }
  return Eigen::Map<const ArrayXd>(rr.data(), static_cast<Index>(rr.size()));
}

Outcome hrv_suite() {
  const qrs::TimeDomainHrv flat = qrs::time_domain_hrv(ArrayXd::Constant(20, 0.8));
  ArrayXd alt(20);
  for (Index i = 0; i < alt.size(); ++i) alt[i] = i % 2 ? 0.9 : 0.7;
  const qrs::TimeDomainHrv swing = qrs::time_domain_hrv(alt);

  std::vector<double> t_lf, t_hf;
  const ArrayXd rr_lf = modulated_rr(0.1, t_lf), rr_hf = modulated_rr(0.3, t_hf);
  const double lf = qrs::lf_hf_ratio(rr_lf, Eigen::Map<const ArrayXd>(t_lf.data(), static_cast<Index>(t_lf.size()))).ratio;
  const double hf = qrs::lf_hf_ratio(rr_hf, Eigen::Map<const ArrayXd>(t_hf.data(), static_cast<Index>(t_hf.size()))).ratio;

  const bool closed = flat.rmssd_s == 0.0 && flat.pnn50_pct == 0.0 && std::abs(swing.rmssd_s - 0.2) < kHrvExact &&
                      swing.pnn50_pct == 100.0;
  const bool separated = lf >= kLfHfSeparation && hf <= 1.0 / kLfHfSeparation;
  return verdict(closed && separated,
                 fmt::format("constant: RMSSD {} pNN50 {}; alternating: RMSSD {:.15f} pNN50 {}; LF/HF 0.1 Hz {:.2f}, "
                             "0.3 Hz {:.4f}",
                             flat.rmssd_s, flat.pnn50_pct, swing.rmssd_s, swing.pnn50_pct, lf, hf));
}

// ---------------------------------------------------------------- criterion 6

NetworkConfig toy_network() {
  NetworkConfig c;
  c.levels = 4;
  c.base_filters = 4;
  return c;
}

std::vector<data::Record> synth_records(std::initializer_list<std::uint64_t> seeds) {
  std::vector<data::Record> out;
  for (std::uint64_t s : seeds) {
    data::SynthConfig c;
    c.seed = s;
    out.push_back(data::synth_generate(c, fmt::format("synth_{}", s)));
  }
  return out;
}

Outcome training_smoke(SmokeRun& run) {
  // Overfit: one window, one step per epoch, loss as the optimizer sees it.
  const auto one = data::make_windows(synth_records({1})).windows;
  std::vector<data::WindowPair> single{one.front()};
  Network overfit(toy_network());
  TrainConfig oc;
  oc.batch_size = 1;
  oc.epochs = kOverfitSteps;
  TrainState os;
  const TrainLog olog = train(overfit, single, oc, os);
  const double ratio = olog.epochs.back().l_total / olog.epochs.front().l_total;
  bool ok = ratio < kOverfitRatio;
  std::string detail = fmt::format("overfit {} steps: {:.4f} -> {:.5f} (ratio {:.4f} < {})", kOverfitSteps,
                                   olog.epochs.front().l_total, olog.epochs.back().l_total, ratio, kOverfitRatio);

  const auto train_windows = data::make_windows(synth_records({1, 2, 3, 4, 5, 6, 7, 8})).windows;
  run.held_out = data::make_windows(synth_records({101, 102})).windows;
  for (double beta : {0.0, 1.0}) {
    Network net(toy_network());
    TrainConfig tc;
    tc.batch_size = 8;
    tc.epochs = kSmokeEpochs;
    tc.loss.alpha = 1.0;
    tc.loss.beta = beta;
    TrainState st;
    const TrainLog log = train(net, train_windows, tc, st);
    const double first = log.epochs.front().l_total, last = log.epochs.back().l_total;
    ok = ok && last < first;
    detail += fmt::format("; a=1,b={:g}: epoch 1 {:.4f} -> epoch {} {:.4f}", beta, first, kSmokeEpochs, last);
    if (beta == 1.0) run.joint.emplace(std::move(net));
  }
  detail += fmt::format(" ({} windows)", train_windows.size());
  return verdict(ok, detail);
}

// ---------------------------------------------------------------- criterion 7

Outcome denoising_sanity(const SmokeRun& run) {
  if (!run.joint) return verdict(false, "criterion 6 did not produce a trained network");
  const dsp::SimilaritySummary denoised = evaluate_denoising(*run.joint, run.held_out);
  double best_mse = INFINITY, best_cc = -INFINITY;
  for (Index ch = 0; ch < 3; ++ch) {
    const dsp::SimilaritySummary raw = evaluate_channel(run.held_out, ch);
    best_mse = std::min(best_mse, raw.mean_mse);
    best_cc = std::max(best_cc, raw.mean_xcorr);
  }
  return verdict(denoised.mean_mse < best_mse && denoised.mean_xcorr > best_cc,
                 fmt::format("{} held-out windows: denoised MSE {:.4f} CC {:.4f}; best raw MSE {:.4f} CC {:.4f}",
                             denoised.windows, denoised.mean_mse, denoised.mean_xcorr, best_mse, best_cc));
}

// ---------------------------------------------------------------- criterion 8

std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

/// Training logs carry wall-clock time; everything else must match byte for byte.
std::string comparable(const fs::path& p) {
  if (p.filename() != "train_log.jsonl") return file_bytes(p);
  std::ifstream in(p);
  std::string line, out;
  while (std::getline(in, line)) {
    auto j = nlohmann::ordered_json::parse(line);
    j.erase("wall_s");
    out += j.dump() + "\n";
  }
  return out;
}

std::vector<fs::path> relative_files(const fs::path& root) {
  std::vector<fs::path> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file() && e.path().filename() != "manifest.json") out.push_back(fs::relative(e.path(), root));
  std::sort(out.begin(), out.end());
  return out;
}

void pipeline(const fs::path& root, const fs::path& config) {
  std::ostringstream sink;
  cmd_synth({config, root / "data", 7});
  cmd_train({config, root / "data", root / "train", 3}, sink);
  cmd_denoise({root / "train" / "checkpoint_final.bin", root / "data", root / "pred"}, sink);
  cmd_eval({root / "pred", std::nullopt, root / "eval"});
}

Outcome determinism() {
  const fs::path root = fs::temp_directory_path() / "cecg_acceptance_determinism";
  fs::remove_all(root);
  fs::create_directories(root);
  const fs::path config = root / "config.json";
  std::ofstream(config) << R"({
  "network": {"levels": 3, "base_filters": 2},
  "train": {"epochs": 3, "batch_size": 4, "checkpoint_every": 2},
  "synth": {"records": 3, "duration_s": 12.0},
  "data": {"train_files": 2, "test_files": 1, "split_seed": 5}
})";
  pipeline(root / "a", config);
  pipeline(root / "b", config);

  const auto a = relative_files(root / "a"), b = relative_files(root / "b");
  if (a != b) return verdict(false, "runs produced different file sets");
  std::size_t bytes = 0;
  for (const fs::path& rel : a) {
    const std::string x = comparable(root / "a" / rel), y = comparable(root / "b" / rel);
    if (x != y) return verdict(false, fmt::format("{} differs between runs", rel.string()));
    bytes += x.size();
  }
  fs::remove_all(root);
  return verdict(true, fmt::format("synth, train, denoise, eval: {} files ({} bytes) identical across two runs",
                                   a.size(), bytes));
}

// ---------------------------------------------------------------- criterion 9

Outcome recorded_data() {
  const char* dir = std::getenv("CECG_UNOVIS_DIR");
  if (!dir || !*dir) return {Outcome::Status::skip, "set CECG_UNOVIS_DIR to a converted UnoViS_auto2012 directory"};
  const fs::path data_dir(dir);
  const fs::path root = fs::temp_directory_path() / "cecg_acceptance_unovis";
  fs::remove_all(root);
  fs::create_directories(root);
  const char* epochs = std::getenv("CECG_UNOVIS_EPOCHS");
  const fs::path config = root / "config.json";
  std::ofstream(config) << fmt::format(
      R"({{"train": {{"epochs": {}}}, "data": {{"train_files": 22, "test_files": 7}}}})", epochs ? epochs : "1");
  std::ostringstream sink;
  const TrainSummary summary = cmd_train({config, data_dir, root / "train"}, sink);

  std::ifstream split_file(root / "train" / "split.json");
  const auto split = nlohmann::json::parse(split_file);
  fs::create_directories(root / "test");
  for (const auto& e : fs::directory_iterator(data_dir))
    for (const auto& id : split["test"])
      if (e.path().stem() == id.get<std::string>()) fs::copy_file(e.path(), root / "test" / e.path().filename());
  cmd_denoise({root / "train" / "checkpoint_final.bin", root / "test", root / "pred"}, sink);
  const EvalReport report = cmd_eval({root / "pred", std::nullopt, root / "eval"});
  std::cout << render_report(report);
  const auto& t = summary.test_denoised;
  return verdict(report.files.size() == 7,
                 fmt::format("22/7 split, {} train windows; test MSE {:.3f} CC {:.3f} (published 0.167 / 0.476, not "
                             "gated); reports in {}",
                             summary.train_windows, t ? t->mean_mse : NAN, t ? t->mean_xcorr : NAN,
                             (root / "eval").string()));
}

}  // namespace

int main() {
  SmokeRun smoke;
  struct Criterion {
    int id;
    const char* name;
    double limit_s;  ///< 0: no limit
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria{
      {1, "gradient suite", 60, gradient_suite},
      {2, "FFT oracle", 30, fft_oracle},
      {3, "filter suite", 10, filter_suite},
      {4, "detector suite", 30, detector_suite},
      {5, "HRV closed forms", 30, hrv_suite},
      {6, "training smoke", 15 * 60, [&] { return training_smoke(smoke); }},
      {7, "denoising sanity", 5 * 60, [&] { return denoising_sanity(smoke); }},
      {8, "determinism", 0, determinism},
      {9, "recorded data (optional)", 0, recorded_data},
  };

  int failures = 0;
  for (const Criterion& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {Outcome::Status::fail, fmt::format("threw: {}", e.what())};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (o.status == Outcome::Status::pass && c.limit_s > 0 && secs > c.limit_s) {
      o.status = Outcome::Status::fail;
      o.detail += fmt::format("; over the {:.0f} s limit", c.limit_s);
    }
    const char* tag = o.status == Outcome::Status::pass ? "PASS" : o.status == Outcome::Status::fail ? "FAIL" : "SKIP";
    failures += o.status == Outcome::Status::fail;
    std::cout << fmt::format("{} criterion {} ({}): {} [{:.1f} s]", tag, c.id, c.name, o.detail, secs) << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
