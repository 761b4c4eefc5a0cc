#pragma once

// Batch front end: key = value run configurations and the hsx subcommands.

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "hs/densities.hpp"
#include "hs/dynamics.hpp"
#include "json.hpp"

namespace hs {

class RunConfig {
 public:
  // All known keys with their default values.
  static const std::map<std::string, std::string>& defaults();

  RunConfig();
  // Reads "key = value" lines over the defaults. Blank lines and lines
  // starting with '#' are ignored. Unknown keys throw ConfigError.
  static RunConfig parse(std::istream& in);
  static RunConfig load(const std::string& path);

  void set(const std::string& key, const std::string& value);
  // Applies "key=value".
  void set_assignment(const std::string& assignment);
  const std::string& get(const std::string& key) const;

  double real(const std::string& key) const;
  int integer(const std::string& key) const;
  std::uint64_t count(const std::string& key) const;
  std::vector<double> reals(const std::string& key) const;

  BoxSpec box() const;
  MeasureSpec measure() const;
  std::optional<Tolerances> tolerances() const;
  // Explicit evaluation point, or nullopt for "sample-generic".
  std::optional<Configuration> point() const;

  const std::map<std::string, std::string>& values() const { return values_; }
  std::string to_text() const;
  nlohmann::ordered_json to_json() const;

 private:
  std::map<std::string, std::string> values_;
};

std::string version_string();

// Runs the hsx command line. Exit codes: 0 success, 1 failed verification,
// 2 configuration or runtime error.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace hs
