#include <cstdio>
#include <iostream>

#include "CLI11.hpp"

#include "alab/errors.hpp"
#include "alab/experiment.hpp"

int main(int argc, char** argv) {
  CLI::App app{"alab: controllable summarization experiments with low-rank adapters"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir = ".";
  std::string format = "csv";
  std::vector<std::string> overrides;
  std::string weights;

  for (const auto& name : alab::command_names()) {
    CLI::App* sub = app.add_subcommand(name);
    sub->add_option("-c,--config", config_path, "experiment config file (key = value)")->check(CLI::ExistingFile);
    sub->add_option("-o,--out-dir", out_dir, "directory all data paths are relative to");
    sub->add_option("-f,--format", format, "stdout format")->check(CLI::IsMember({"csv", "table"}));
    sub->add_option("-s,--set", overrides, "override a config entry, key=value");
    if (name == "fuse") sub->add_option("-w,--weights", weights, "fusion weights, e.g. 0.67,0.33");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    alab::CommandContext ctx;
    if (!config_path.empty()) {
      ctx.config = alab::Config::load(config_path);
      ctx.config_path = config_path;
    }
    for (const auto& kv : overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos || eq == 0) throw alab::UsageError("--set expects key=value, got \"" + kv + "\"");
      ctx.config.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (!weights.empty()) ctx.config.set("weights", weights);
    ctx.out_dir = out_dir;
    ctx.table_format = format == "table";
    std::cout << alab::run_command(app.get_subcommands().front()->get_name(), ctx);
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return alab::exit_code_for(e);
  }
}
