// mutatt: synthesize data, train, evaluate, verify and inspect attention.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "commands.hpp"
#include "mutatt/error.hpp"

namespace {

struct Flags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> ablation;
  std::optional<std::string> protocol;
  std::optional<std::string> out;
  std::optional<std::string> data;
  std::optional<std::string> resume;
  std::optional<std::string> checkpoint;
  std::optional<std::size_t> expression;
  std::vector<std::string> overrides;
  bool inject_fault = false;
};

// Defaults, then the config file, then --set, then the dedicated flags.
mutatt::RunConfig resolve(const Flags& flags, const std::string& command) {
  mutatt::RunConfig config;
  if (!flags.config_path.empty()) config.apply_file(flags.config_path);
  for (const std::string& item : flags.overrides) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw mutatt::ConfigError("--set expects KEY=VALUE, got '" + item + "'");
    config.set(item.substr(0, eq), item.substr(eq + 1));
  }
  if (flags.seed) config.set(command == "synth" ? "synth.seed" : "train.seed", std::to_string(*flags.seed));
  if (flags.ablation) config.set("ablation", *flags.ablation);
  if (flags.protocol) config.set("eval.protocol", *flags.protocol);
  if (flags.out) config.set("paths.out", *flags.out);
  if (flags.data) config.set("paths.data", *flags.data);
  config.validate();
  return config;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mutual-attention referring expression matcher"};
  app.require_subcommand(1);
  app.fallthrough();
  Flags flags;
  app.add_option("--config", flags.config_path, "Config file of 'key = value' lines");
  app.add_option("--seed", flags.seed, "Seed (synth.seed for synth, train.seed otherwise)");
  app.add_option("--ablation", flags.ablation, "MODULE=MODE[,...], modes none|vl|mutual");
  app.add_option("--protocol", flags.protocol, "Evaluation protocol: gt or det");
  app.add_option("--out", flags.out, "Output directory");
  app.add_option("--data", flags.data, "Dataset directory (defaults to --out)");
  app.add_option("--set", flags.overrides, "Override a config key, KEY=VALUE");

  auto* synth = app.add_subcommand("synth", "Generate the synthetic dataset");
  auto* train = app.add_subcommand("train", "Train and report held-out accuracy");
  train->add_option("--resume", flags.resume, "Checkpoint to continue from");
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval->add_option("--checkpoint", flags.checkpoint, "Checkpoint (default OUT/checkpoint.bin)");
  auto* verify = app.add_subcommand("verify", "Run the invariant suite");
  verify->add_flag("--inject-fault", flags.inject_fault, "Corrupt a gradient to exercise failure reporting");
  auto* dump = app.add_subcommand("dump-attn", "Dump attention maps for one expression");
  dump->add_option("--checkpoint", flags.checkpoint, "Checkpoint (default OUT/checkpoint.bin)");
  dump->add_option("--expression", flags.expression, "Expression index");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : mutatt::cli::kExitConfig;
  }

  mutatt::configure_logging();
  const std::string command = app.get_subcommands().front()->get_name();
  try {
    const mutatt::RunConfig config = resolve(flags, command);
    const auto checkpoint = flags.checkpoint
                                ? std::filesystem::path(*flags.checkpoint)
                                : config.out_dir / mutatt::cli::kCheckpointFile;
    if (synth->parsed()) return mutatt::cli::cmd_synth(config, std::cout);
    if (train->parsed()) {
      std::optional<std::filesystem::path> resume;
      if (flags.resume) resume = *flags.resume;
      return mutatt::cli::cmd_train(config, resume, std::cout);
    }
    if (eval->parsed()) return mutatt::cli::cmd_eval(config, checkpoint, flags.ablation, std::cout);
    if (verify->parsed()) return mutatt::cli::cmd_verify(config, flags.inject_fault, std::cout);
    if (dump->parsed()) {
      return mutatt::cli::cmd_dump_attention(config, checkpoint, flags.expression, std::cout);
    }
  } catch (const std::exception& e) {
    std::cout.flush();
    std::cerr << "error: " << e.what() << '\n';
    const int code = mutatt::cli::exit_code_for(e);
    std::cout << fmt::format("RESULT cmd={} status=error code={}\n", command, code);
    return code;
  }
  return mutatt::cli::kExitInternal;
}
