#include "cecg/commands.hpp"
#include "cecg/error.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace {

std::optional<cecg::data::Format> format_flag(const std::string& name) {
  if (name.empty()) return std::nullopt;
  return cecg::data::parse_format(name);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Capacitive ECG denoising toolkit"};
  app.set_version_flag("--version", cecg::kToolkitVersion);
  app.require_subcommand(1);

  std::string config, data, out, checkpoint, ref, format;
  std::optional<std::uint64_t> seed;
  bool resume = false;

  auto* synth = app.add_subcommand("synth", "Generate synthetic cECG records");
  synth->add_option("--config", config, "Config file (JSON)")->required();
  synth->add_option("--out", out, "Output directory")->required();
  synth->add_option("--seed", seed, "Overrides synth.seed");
  synth->add_option("--format", format, "csv|bin (default bin)");

  auto* train = app.add_subcommand("train", "Train the denoising network");
  train->add_option("--config", config, "Config file (JSON)")->required();
  train->add_option("--data", data, "Record file or directory")->required();
  train->add_option("--out", out, "Output directory")->required();
  train->add_option("--seed", seed, "Overrides train.seed and network.init_seed");
  train->add_flag("--resume", resume, "Continue from --checkpoint (default <out>/checkpoint_final.bin)");
  train->add_option("--checkpoint", checkpoint, "Checkpoint to resume from");
  train->add_option("--format", format, "csv|bin (default: detect)");

  auto* denoise = app.add_subcommand("denoise", "Run a trained network over records");
  denoise->add_option("--checkpoint", checkpoint, "Trained checkpoint")->required();
  denoise->add_option("--data", data, "Record file or directory")->required();
  denoise->add_option("--out", out, "Output directory")->required();
  denoise->add_option("--format", format, "csv|bin (default: detect)");

  auto* eval = app.add_subcommand("eval", "HRV and similarity report for predictions");
  eval->add_option("--data", data, "Directory of prediction CSVs")->required();
  eval->add_option("--ref", ref, "Records supplying the reference (default: ref column)");
  eval->add_option("--out", out, "Output directory")->required();
  eval->add_option("--format", format, "csv|bin format of --ref (default: detect)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (synth->parsed()) {
      cecg::SynthArgs args{config, out, seed, cecg::data::Format::bin};
      if (!format.empty()) args.format = cecg::data::parse_format(format);
      const auto files = cecg::cmd_synth(args);
      std::cout << "wrote " << files.size() << " records to " << out << "\n";
    } else if (train->parsed()) {
      cecg::TrainArgs args{config, data, out, seed, resume, checkpoint, format_flag(format)};
      const auto summary = cecg::cmd_train(args, std::cerr);
      std::cout << "trained " << summary.log.epochs.size() << " epochs on " << summary.train_windows
                << " windows; checkpoint in " << out << "\n";
    } else if (denoise->parsed()) {
      cecg::DenoiseArgs args{checkpoint, data, out, format_flag(format)};
      const auto files = cecg::cmd_denoise(args, std::cerr);
      std::cout << "wrote " << files.size() << " denoised records to " << out << "\n";
    } else if (eval->parsed()) {
      cecg::EvalArgs args{data, std::nullopt, out, format_flag(format)};
      if (!ref.empty()) args.references = ref;
      std::cout << cecg::render_report(cecg::cmd_eval(args));
    }
  } catch (const cecg::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
