#include <iostream>

#include "CLI11.hpp"
#include "mtfatt/cli.hpp"

// mtfatt: music source separation driver.
//   train     fit one stem's model and save the best checkpoint
//   separate  apply a checkpoint to a mixture WAV
//   evaluate  score checkpoints on the test split (SDR)
//   selftest  numeric self-checks (gradients, shapes, oracles, STFT)
int main(int argc, char** argv) {
  using namespace mtfatt;

  CLI::App app{"music source separation with a multi-scale attention mask network"};
  app.require_subcommand(1);

  std::string config_path, stem, variant, out_dir, input_wav, checkpoint;
  int epochs = -1, threads = 0;
  int64_t seed = -1;
  bool inject_fault = false;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "configuration file (section.key = value)");
    sub->add_option("--stem", stem, "target stem: vocals/bass/drums/other or synthetic[-stem]");
    sub->add_option("--variant", variant, "separator variant: noAtt/TAtt/FAtt/TFAtt/MTFAtt");
    sub->add_option("--epochs", epochs, "training epochs");
    sub->add_option("--seed", seed, "training seed");
    sub->add_option("--threads", threads, "worker threads (or MTFATT_THREADS)");
    sub->add_option("--out", out_dir, "output directory");
  };

  auto* t = app.add_subcommand("train", "train one stem's separation model");
  add_common(t);
  auto* s = app.add_subcommand("separate", "separate a mixture WAV with a trained checkpoint");
  add_common(s);
  s->add_option("input", input_wav, "mixture WAV file")->required();
  s->add_option("--checkpoint", checkpoint, "checkpoint path (default: checkpoint dir + stem)");
  auto* e = app.add_subcommand("evaluate", "report SDR of trained checkpoints on the test split");
  add_common(e);
  auto* st = app.add_subcommand("selftest", "run numeric self-checks");
  add_common(st);
  st->add_flag("--inject-softmax-fault", inject_fault,
               "corrupt the attention scale to prove the oracle catches it");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : 2;  // usage problems exit 2, --help exits 0
  }

  try {
    RunConfig cfg;
    if (!config_path.empty()) cfg = parse_config_file(config_path);
    if (!stem.empty()) cfg.stem = stem;
    if (!variant.empty()) {
      try {
        cfg.model.variant = parse_variant(variant);
      } catch (const std::exception& ex) {
        std::cerr << "error: " << ex.what() << "\n";
        return 2;
      }
    }
    try {
      parse_stem_choice(cfg.stem);
    } catch (const std::exception& ex) {
      std::cerr << "error: " << ex.what() << "\n";
      return 2;
    }
    if (epochs >= 0) cfg.epochs = epochs;
    if (seed >= 0) cfg.seed = static_cast<uint64_t>(seed);
    if (threads > 0) cfg.threads = threads;
    if (!out_dir.empty()) cfg.out_dir = out_dir;

    if (t->parsed()) return cmd_train(cfg, std::cout, std::cerr);
    if (s->parsed()) return cmd_separate(cfg, input_wav, checkpoint, std::cout, std::cerr);
    if (e->parsed()) return cmd_evaluate(cfg, std::cout, std::cerr);
    if (st->parsed()) return cmd_selftest(cfg, inject_fault, std::cout, std::cerr);
    std::cerr << "no subcommand\n";
    return 2;
  } catch (const ConfigError& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 2;
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 1;
  }
}
