// semtok: train codebooks and predictors, run loss simulations and sweeps.
#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "semtok/commands.hpp"
#include "semtok/config.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitRuntime = 2;

struct CommonOptions {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::string> output_dir;
  std::optional<std::uint64_t> seed;
  bool dump_config = false;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("-c,--config", o.config_path, "JSON run config; defaults apply to missing keys")
      ->check(CLI::ExistingFile);
  cmd->add_option("--set", o.overrides, "Override a config value, e.g. --set channel.p_target=0.2 (repeatable)");
  cmd->add_option("-o,--output-dir", o.output_dir, "Shorthand for --set run.output_dir=DIR");
  cmd->add_option("--seed", o.seed, "Shorthand for --set run.seed=N");
  cmd->add_flag("--dump-config", o.dump_config, "Print the resolved config as JSON and exit");
}

semtok::RunConfig resolve(const CommonOptions& o) {
  nlohmann::json doc = nlohmann::json::object();
  if (!o.config_path.empty()) {
    std::ifstream in(o.config_path);
    try {
      doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
      throw semtok::ConfigError("config " + o.config_path + " is not valid JSON: " + e.what());
    }
  }
  for (const auto& s : o.overrides) semtok::apply_override(doc, s);
  if (o.output_dir) doc["run"]["output_dir"] = *o.output_dir;
  if (o.seed) doc["run"]["seed"] = *o.seed;
  return semtok::config_from_json(doc);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Token-level semantic speech transport simulator"};
  app.require_subcommand(1);

  CommonOptions common;
  int jobs = 1;
  std::string report_path;
  std::optional<std::string> report_csv;

  auto* train_codec = app.add_subcommand("train-codec", "Train RVQ codebooks and write the token corpus");
  add_common(train_codec, common);
  auto* train_predictor = app.add_subcommand("train-predictor", "Fit the count-model predictor");
  add_common(train_predictor, common);
  auto* simulate = app.add_subcommand("simulate", "Run the end-to-end pipeline over the p grid");
  add_common(simulate, common);
  simulate->add_option("-j,--jobs", jobs, "Worker threads for grid cells")->check(CLI::PositiveNumber);
  auto* sweep = app.add_subcommand("sweep", "Run the Cartesian grid over p, L, predictor and UEP");
  add_common(sweep, common);
  sweep->add_option("-j,--jobs", jobs, "Worker threads for grid cells")->check(CLI::PositiveNumber);
  auto* report = app.add_subcommand("report", "Print a summary table of a report.json");
  report->add_option("report", report_path, "Path to report.json")->required()->check(CLI::ExistingFile);
  report->add_option("--csv", report_csv, "Also write the rows as CSV to this path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (report->parsed()) {
      semtok::cmd_report(report_path, std::cout, report_csv ? std::optional<std::filesystem::path>(*report_csv)
                                                            : std::nullopt);
      return kExitOk;
    }
    const auto cfg = resolve(common);
    if (common.dump_config) {
      std::cout << semtok::config_to_json(cfg).dump(2) << '\n';
      return kExitOk;
    }
    if (train_codec->parsed()) semtok::cmd_train_codec(cfg, std::cout);
    else if (train_predictor->parsed()) semtok::cmd_train_predictor(cfg, std::cout);
    else if (simulate->parsed()) semtok::cmd_simulate(cfg, std::cout, jobs);
    else if (sweep->parsed()) semtok::cmd_sweep(cfg, std::cout, jobs);
    return kExitOk;
  } catch (const semtok::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
}
