#pragma once

// `rar` command line: collect, train, gradcheck, eval, retrieve, inspect and
// plot. Everything lives in a library so tests can drive commands in-process.

#include "rar/bench.hpp"

#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace rar::cli {

enum ExitCode : int {
  kOk = 0,
  kEpisodeFailures = 1,  // also used when a check command fails its threshold
  kOperationalError = 2,
  kDivergence = 3,
};

struct RunConfig {
  ExperimentConfig experiment;
  std::filesystem::path out = "runs";  // parent of generated run directories

  nlohmann::json to_json() const;
};

/// Relative paths in the document resolve against `base_dir`. Unknown keys
/// throw Error naming the field.
RunConfig run_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
RunConfig load_run_config(const std::filesystem::path& path);

/// The catalog shipped with the source tree.
std::filesystem::path default_catalog();

/// Git blob id: SHA-1 of "blob <size>\0" followed by the bytes, in hex.
std::string git_blob_hash(std::string_view bytes);
std::string file_hash(const std::filesystem::path& path);

/// Runs one command line (without the program name). Normal output goes to
/// `out`, diagnostics to `err`; the return value is the process exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace rar::cli
