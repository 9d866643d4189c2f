#pragma once

#include <cstdint>
#include <string>

#include <nlohmann/json.hpp>

#include "mtplab/config.hpp"

namespace mtplab {

// FNV-1a 64-bit over raw bytes; the manifest's content hash.
uint64_t fnv1a64(const void* data, size_t n);
std::string file_hash_hex(const std::string& path);

// Layout: config.ini (snapshot), manifest.json, lock while a command runs,
// corpus/, checkpoints/, metrics.jsonl, eval/, probes/, report.csv.
// Every artifact lands in the manifest with its content hash; writes go
// through a temp file + rename so a failed command leaves no partial
// manifested artifact behind.
class RunDirectory {
 public:
  // Opens (creating if needed) and takes the lock. `dir` may be relative to
  // the MTPLAB_RUN_ROOT environment variable when that is set and `dir` is
  // not absolute. Throws ConfigError if another command holds the lock.
  explicit RunDirectory(const std::string& dir);
  ~RunDirectory();
  RunDirectory(const RunDirectory&) = delete;
  RunDirectory& operator=(const RunDirectory&) = delete;

  const std::string& path() const { return dir_; }
  std::string subpath(const std::string& rel) const;

  // Writes the canonical config snapshot, or verifies it byte-equals an
  // existing one (mixing configs within one run directory is an error).
  void snapshot_config(const RunConfig& cfg);
  RunConfig load_snapshot() const;

  // Records an already-written artifact (path relative to the run dir).
  void record_artifact(const std::string& rel, const std::string& format);
  // Writes `bytes` to rel via temp+rename, then records it.
  void write_artifact(const std::string& rel, const std::string& bytes,
                      const std::string& format);
  bool has_artifact(const std::string& rel) const;
  // Throws ConfigError naming the artifact when it is missing.
  void require_artifact(const std::string& rel, const std::string& produced_by) const;

  // Appends one JSON line to metrics.jsonl and keeps its manifest hash fresh.
  void append_metrics(const nlohmann::json& record);
  void flush_metrics();

 private:
  void load_manifest();
  void save_manifest() const;

  std::string dir_;
  std::string lock_path_;
  nlohmann::json manifest_;
  bool metrics_dirty_ = false;
};

std::string resolve_run_dir(const std::string& dir);

}  // namespace mtplab
