#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

namespace ntcp::cli {

enum ExitCode : int {
  kOk = 0,
  kValidation = 2,
  kCompute = 3,
  kPositivity = 4,
  kBootstrapFailure = 5,
};

// JSON schema of the config file, embedded at build time.
const std::string& config_schema();

std::uint64_t fnv1a64(std::string_view bytes);

// Entry point of the `ntcp` executable. args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace ntcp::cli
