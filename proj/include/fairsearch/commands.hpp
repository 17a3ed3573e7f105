#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <string_view>

#include "fairsearch/config.hpp"

namespace fairsearch {

inline constexpr int kExitOk = 0;
inline constexpr int kExitVerificationFailure = 1;
inline constexpr int kExitUsage = 2;

/// Bad arguments, missing inputs or inconsistent artifacts (exit code 2).
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CommandOptions {
  std::optional<std::filesystem::path> config_path;
  std::optional<std::uint64_t> seed;
  std::optional<SearchMode> mode;
  std::optional<int> epochs;
  std::optional<DiscretizeRule> discretize;
  std::optional<std::filesystem::path> out;
  std::optional<std::filesystem::path> data;
  std::optional<std::size_t> retrain_cells;
  std::optional<std::filesystem::path> genotype;
  std::optional<std::filesystem::path> checkpoint;
  std::string split = "test_balance";
  std::string scope = "primitive";
  int grad_seeds = 20;
  bool resume = false;
  bool force = false;
  /// Stops after this many completed epochs, leaving a resumable checkpoint.
  std::optional<int> stop_after;
};

/// File config (or defaults) with the command-line overrides applied.
/// `--epochs` sets search_epochs for "search" and retrain_epochs otherwise.
RunConfig resolve_config(std::string_view command, const CommandOptions& opts);

int cmd_make_lt(const RunConfig& cfg, std::ostream& out);
int cmd_search(const RunConfig& cfg, const CommandOptions& opts, std::ostream& out);
int cmd_retrain(const RunConfig& cfg, const CommandOptions& opts, std::ostream& out);
int cmd_eval(const RunConfig& cfg, const CommandOptions& opts, std::ostream& out);
int cmd_grad_check(const CommandOptions& opts, std::ostream& out);

/// Dispatches by name and maps input errors to exit code 2.
int run_command(std::string_view command, const CommandOptions& opts, std::ostream& out,
                std::ostream& err);

}  // namespace fairsearch
