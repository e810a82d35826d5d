#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "tmmoe/model.hpp"
#include "tmmoe/trainer.hpp"
#include "tmmoe/windows.hpp"

namespace tmmoe::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

/// Settings shared by every command: one key=value file plus overrides.
/// Every key has a default; unknown keys are rejected.
class RunConfig {
 public:
  RunConfig();

  static const std::map<std::string, std::string>& defaults();

  void load(const std::filesystem::path& path);
  /// Parses "key=value".
  void set(const std::string& assignment);
  void set(const std::string& key, const std::string& value);
  const std::string& get(const std::string& key) const;
  const std::map<std::string, std::string>& values() const { return values_; }

  double number(const std::string& key) const;
  std::size_t count(const std::string& key) const;
  bool enabled(const std::string& key) const;

  WindowOptions window_options() const;
  TrainConfig train_config() const;
  /// Layout fields (features, steps, horizon) come from the data set.
  ModelConfig model_config(const WindowSet& data) const;
  /// Feature groups switched off ("coupling_degree", "conflict_indicator").
  std::vector<std::string> dropped_groups() const;
  /// Throws std::invalid_argument naming the first bad value.
  void validate() const;

 private:
  std::map<std::string, std::string> values_;
};

/// Runs one command line (without the program name). Never throws.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace tmmoe::cli
