#pragma once

#include "adcm/config.hpp"

#include <string>
#include <utility>
#include <vector>

namespace adcm {

enum class Verb { train, schedule, sample, eval, oracle, export_plot };

struct Command {
  Verb verb = Verb::train;
  std::string config_path;
  std::vector<std::pair<std::string, std::string>> overrides;  // applied after the file
  std::string out_dir = ".";
  bool help = false;
};

// Exit codes: 0 success, 1 usage error, 2 config error, 3 runtime/numerical
// error, 4 I/O error.
struct ExitStatus {
  static constexpr int ok = 0;
  static constexpr int usage = 1;
  static constexpr int config = 2;
  static constexpr int runtime = 3;
  static constexpr int io = 4;
};

// Strict parsing of `<verb> [--config PATH] [--set K=V]... [--seed N]
// [--out DIR] [--help]`. Throws UsageError; never touches the filesystem.
Command parse_invocation(const std::vector<std::string>& args);

std::string usage_text();
std::string help_text();  // usage plus every config key with its default

// Executes the command, mapping errors onto ExitStatus codes. Partial
// outputs of a failed run are removed; the manifest survives for forensics.
int run_command(const Command& cmd);

}  // namespace adcm
