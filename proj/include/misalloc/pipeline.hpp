#pragma once

#include <string>
#include <vector>

#include "misalloc/common.hpp"
#include "misalloc/config.hpp"
#include "misalloc/report.hpp"

namespace misalloc {

class MissingArtifact : public std::runtime_error {
 public:
  explicit MissingArtifact(const std::string& name)
      : std::runtime_error("missing artifact: " + name), name_(name) {}
  const std::string& name() const { return name_; }

 private:
  std::string name_;
};

struct ManifestEntry {
  std::string name;  // file name inside the output directory
  std::string sha256;
  std::size_t bytes = 0;
};

struct RunResult {
  std::vector<ManifestEntry> artifacts;
  std::string manifest_path;
};

std::string sha256_hex(const std::string& data);

// Executes the enabled stages in dependency order and writes manifest.json.
RunResult run(const RunConfig& config);

// Loads the report blocks named in a manifest.
ReportData load_report_data(const std::string& manifest_path);
// Renders report.md next to the manifest and adds it to the manifest.
std::string write_report(const std::string& manifest_path);

}  // namespace misalloc
