#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "imd/runner.hpp"

int main(int argc, char** argv) {
  CLI::App app{"inertial manifold decoupling experiment runner"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir = ".";
  int workers = 1;
  std::uint64_t seed = 0;

  const char* names[] = {"decouple", "manifold-point", "sweep", "trajectory",
                         "tbound"};
  for (const char* name : names) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("--config", config_path, "JSON run configuration")
        ->required();
    sub->add_option("--out", out_dir, "output directory");
    sub->add_option("--workers", workers, "parallel worker count");
    sub->add_option("--seed", seed, "seed for randomized defaults");
  }

  CLI11_PARSE(app, argc, argv);
  const std::string command = app.get_subcommands()[0]->get_name();

  imd::json config;
  {
    std::ifstream f(config_path);
    if (!f) {
      std::cerr << "error: cannot open config " << config_path << "\n";
      return imd::kExitConfig;
    }
    try {
      config = imd::json::parse(f);
    } catch (const std::exception& e) {
      std::cerr << "error: config parse failure: " << e.what() << "\n";
      return imd::kExitConfig;
    }
  }

  std::string message;
  const int code =
      imd::run_command(command, config, out_dir, workers, seed, message);
  if (code != imd::kExitOk && !message.empty())
    std::cerr << "error: " << message << "\n";
  return code;
}
