#include <cstdlib>
#include <iostream>

#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "nmcdr/cli/experiment.hpp"

using namespace nmcdr;

namespace {

void configure_logging() {
  const char* env = std::getenv("NMCDR_LOG");
  const std::string level = env ? env : "info";
  if (level == "error") spdlog::set_level(spdlog::level::err);
  else if (level == "warn") spdlog::set_level(spdlog::level::warn);
  else if (level == "info") spdlog::set_level(spdlog::level::info);
  else if (level == "debug") spdlog::set_level(spdlog::level::debug);
  else throw cli::ConfigError("NMCDR_LOG must be one of error, warn, info, debug (got '" + level + "')");
  spdlog::set_pattern("[%l] %v");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Neural node matching cross-domain recommender"};
  app.require_subcommand(1);
  std::optional<std::string> config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::size_t jobs = 1;
  app.add_option("--config", config_path, "TOML (or JSON) experiment config");
  app.add_option("--set", overrides, "Override a config key, e.g. --set train.epochs=20 (repeatable)");
  app.add_option("--seed", seed, "Root seed");
  app.add_option("--out", out, "Output directory");
  app.add_option("--jobs", jobs, "Parallel sweep processes")->check(CLI::PositiveNumber);
  app.fallthrough();

  auto* prepare = app.add_subcommand("prepare", "Index, filter and split the data; write stats.json");
  auto* synth = app.add_subcommand("synth", "Generate a synthetic two-domain dataset");
  auto* run = app.add_subcommand("run", "Train and evaluate one experiment");
  auto* sweep = app.add_subcommand("sweep", "Run the configured sweep over values and seeds");
  auto* stability = app.add_subcommand("stability", "Instability bound against perturbation ratios");
  auto* report = app.add_subcommand("report", "Summarize every report.json under the output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    configure_logging();
    std::optional<std::filesystem::path> path;
    if (config_path) path = *config_path;
    if (seed) overrides.push_back("seed=" + std::to_string(*seed));
    if (out) overrides.push_back("output=\"" + *out + "\"");
    const auto config = cli::load_config(path, overrides);
    const std::filesystem::path dir = config.output;

    if (prepare->parsed()) {
      cli::cmd_prepare(config, dir);
    } else if (synth->parsed()) {
      auto spec = config.synthetic;
      spec.seed = config.seed;
      cli::cmd_synth(spec, dir);
    } else if (run->parsed()) {
      const auto r = cli::cmd_run(config, dir);
      std::cout << r.report.to_json().dump(2) << "\n";
    } else if (sweep->parsed()) {
      for (const auto& p : cli::cmd_sweep(config, dir, jobs))
        std::cout << config.sweep.key << "=" << p.value.dump() << " ndcg_mean=" << p.mean << " ndcg_std=" << p.std
                  << " best=" << p.best << "\n";
    } else if (stability->parsed()) {
      const auto s = cli::cmd_stability(config, dir);
      std::cout << "all_within_bound=" << s["all_within_bound"] << " max_ratio_over_bound=" << s["max_ratio_over_bound"]
                << "\n";
    } else if (report->parsed()) {
      for (const auto& row : cli::cmd_report(dir)) std::cout << row.dump() << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
