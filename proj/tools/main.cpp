#include "adcm/cli.hpp"

#include <cstdio>
#include <string>
#include <vector>

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  adcm::Command cmd;
  try {
    cmd = adcm::parse_invocation(args);
  } catch (const adcm::UsageError& e) {
    std::fprintf(stderr, "usage error: %s\n%s", e.what(), adcm::usage_text().c_str());
    return adcm::ExitStatus::usage;
  }
  if (cmd.help) {
    std::fputs(adcm::help_text().c_str(), stdout);
    return adcm::ExitStatus::ok;
  }
  return adcm::run_command(cmd);
}
