#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "fontcnn/cli.hpp"

namespace cli = fontcnn::cli;

int main(int argc, char** argv) {
  CLI::App app{"Patch-based font and script classification"};
  app.footer("Config file keys and defaults:\n" + cli::config_help());
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir = "runs";
  bool dump = false;
  app.add_option("--config", config_path, "config file (key = value with [section] headers)");
  app.add_option("--seed", seed, "override the config seed");
  app.add_option("--out-dir", out_dir, "parent of the run directory")->capture_default_str();
  app.add_flag("--dump-config", dump, "print the effective config and exit");
  for (const auto& name : cli::command_names()) app.add_subcommand(name, "run " + name);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }
  const std::string command = app.get_subcommands().front()->get_name();

  try {
    cli::RunConfig cfg = config_path.empty() ? cli::RunConfig{} : cli::parse_config(config_path);
    if (seed) cfg.seed = *seed;
    if (dump) {
      std::cout << cli::dump_config(cfg);
      return 0;
    }
    return cli::run_command(command, cfg, out_dir, std::cout);
  } catch (const fontcnn::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return cli::exit_code_for(e);
  }
}
