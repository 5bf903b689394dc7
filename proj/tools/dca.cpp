// dca: command-line runner for the counterfactual augmentation pipeline.
//
//   dca <subcommand> [--config FILE] [--out DIR] [--seed N] [--jobs N]
//       [--deterministic] [--paper-fidelity] [--force] [--section.key=value ...]

#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "dca/app/config.hpp"
#include "dca/app/pipeline.hpp"
#include "dca/core/error.hpp"

namespace {

void print_error(const std::string& sub, const std::string& code, const std::string& message, int exit_code) {
  std::cerr << nlohmann::json{{"status", "error"},
                              {"subcommand", sub},
                              {"error", code},
                              {"message", message},
                              {"exit_code", exit_code}}
                   .dump()
            << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Diffusion-based counterfactual augmentation on synthetic ordinal data"};
  app.require_subcommand(1, 1);
  app.allow_extras();

  std::string config_path, out_dir;
  long long seed = -1;
  int jobs = 1;
  bool deterministic = false, paper_fidelity = false, force = false;
  app.add_option("--config,-c", config_path, "configuration file (INI sections)");
  app.add_option("--out,-o", out_dir, "output directory (overrides run.out_dir)");
  app.add_option("--seed", seed, "master seed (overrides run.seed)");
  app.add_option("--jobs,-j", jobs, "worker threads")->check(CLI::PositiveNumber);
  app.add_flag("--deterministic", deterministic, "omit timestamps from SVG output");
  app.add_flag("--paper-fidelity", paper_fidelity, "100 barrier iterations instead of the configured count");
  app.add_flag("--force", force, "evaluate: accept artifacts produced under another config hash");

  for (const auto& name : dca::app::subcommands()) app.add_subcommand(name)->allow_extras()->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error("", "usage", e.what(), 1);
    return 1;
  }

  const std::string sub = app.get_subcommands().front()->get_name();
  try {
    std::vector<std::string> overrides;
    auto extras = app.remaining();
    for (const auto& s : app.get_subcommands().front()->remaining()) extras.push_back(s);
    for (const auto& e : extras) {
      if (e.rfind("--", 0) != 0 || e.find('=') == std::string::npos)
        dca::fail(dca::Errc::config_parse, "unrecognised argument '" + e + "' (expected --section.key=value)");
      overrides.push_back(e.substr(2));
    }
    if (seed >= 0) overrides.push_back("run.seed=" + std::to_string(seed));
    if (!out_dir.empty()) overrides.push_back("run.out_dir=" + out_dir);
    if (paper_fidelity) overrides.push_back("barrier.iterations=100");

    dca::app::ExperimentConfig cfg;
    if (config_path.empty()) {
      dca::app::apply_overrides(cfg, overrides);
      dca::app::validate(cfg);
    } else {
      cfg = dca::app::load_config(config_path, overrides);
    }
    dca::app::RunOptions opt;
    opt.deterministic = deterministic;
    opt.jobs = jobs;
    opt.force = force;
    std::cout << dca::app::run_subcommand(sub, cfg, opt).dump(2) << "\n";
    return 0;
  } catch (const dca::Error& e) {
    const int code = dca::app::exit_code_for(e.code());
    print_error(sub, dca::to_string(e.code()), e.message(), code);
    return code;
  } catch (const std::exception& e) {
    print_error(sub, "internal", e.what(), 1);
    return 1;
  }
}
