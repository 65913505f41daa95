#pragma once

#include <filesystem>
#include <iosfwd>
#include <json.hpp>
#include <string>
#include <vector>

namespace vardecomp {

inline constexpr const char* kVersion = "0.1.0";

enum ExitCode : int { kExitOk = 0, kExitInput = 2, kExitNumerical = 3 };

/// Provenance written next to (and embedded in) every result file.
struct RunManifest {
  std::string command;
  nlohmann::json config = nlohmann::json::object();
  std::uint64_t seed = 0;
  std::string version = kVersion;
  std::string input_digest;  // "sha256:<hex>", empty when there is no input file
  nlohmann::json timings = nlohmann::json::object();  // seconds per stage

  /// Everything except timings, so result files stay byte-stable.
  nlohmann::json stable_json() const;
  nlohmann::json to_json() const;
};

std::string sha256_file(const std::filesystem::path& path);

/// Entry point shared by the executable and the tests. args excludes argv[0].
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace vardecomp
