#pragma once

// Experiment driver shared by the command-line tool and the tests. Each
// command reads one key = value config file, resolves every data path against
// the output directory, and records input/output hashes in a manifest.

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace alab {

// Flat "key = value" file; '#' starts a comment. Every lookup marks the key
// as used so unknown keys can be rejected afterwards.
class Config {
 public:
  static Config parse(std::string_view text, const std::string& origin = "<config>");
  static Config load(const std::filesystem::path& path);

  // Later values win; used for --set overrides.
  void set(const std::string& key, const std::string& value);

  bool has(const std::string& key) const;
  std::string str(const std::string& key) const;
  std::string str(const std::string& key, const std::string& fallback) const;
  std::size_t size(const std::string& key, std::size_t fallback) const;
  std::size_t size(const std::string& key) const;
  double real(const std::string& key, double fallback) const;
  std::uint64_t u64(const std::string& key, std::uint64_t fallback) const;
  // Comma-separated, whitespace-trimmed, empty items dropped.
  std::vector<std::string> list(const std::string& key) const;
  std::vector<double> reals(const std::string& key) const;

  // Throws ConfigError naming the first key never looked up, except keys
  // under any of the given prefixes (they belong to other commands).
  void reject_unused(const std::vector<std::string>& foreign_prefixes) const;

  const std::string& origin() const { return origin_; }
  const std::map<std::string, std::string>& entries() const { return values_; }

 private:
  const std::string& raw(const std::string& key) const;

  std::string origin_;
  std::map<std::string, std::string> values_;
  mutable std::set<std::string> used_;
};

struct CommandContext {
  Config config;
  std::filesystem::path config_path;
  std::filesystem::path out_dir;
  bool table_format = false;  // --format table
};

// Each returns the text it prints on stdout.
std::string cmd_synth(CommandContext& ctx);
std::string cmd_build_prefs(CommandContext& ctx);
std::string cmd_train(CommandContext& ctx);
std::string cmd_fuse(CommandContext& ctx);
std::string cmd_eval(CommandContext& ctx);
std::string cmd_judge(CommandContext& ctx);
std::string cmd_report(CommandContext& ctx);

// Names of the subcommands, in help order.
const std::vector<std::string>& command_names();
std::string run_command(const std::string& name, CommandContext& ctx);

// Maps an exception to the documented process exit code.
int exit_code_for(const std::exception& e);

}  // namespace alab
