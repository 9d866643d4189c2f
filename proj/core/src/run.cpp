#include "mtplab/run.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "mtplab/errors.hpp"

namespace fs = std::filesystem;

namespace mtplab {

uint64_t fnv1a64(const void* data, size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  uint64_t h = 0xcbf29ce484222325ULL;
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string file_hash_hex(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot hash missing file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  const std::string bytes = buf.str();
  char out[17];
  std::snprintf(out, sizeof(out), "%016llx",
                static_cast<unsigned long long>(fnv1a64(bytes.data(), bytes.size())));
  return out;
}

std::string resolve_run_dir(const std::string& dir) {
  fs::path p(dir);
  if (!p.is_absolute()) {
    if (const char* root = std::getenv("MTPLAB_RUN_ROOT")) p = fs::path(root) / p;
  }
  return p.string();
}

RunDirectory::RunDirectory(const std::string& dir) : dir_(resolve_run_dir(dir)) {
  fs::create_directories(dir_);
  lock_path_ = (fs::path(dir_) / "lock").string();
  // O_EXCL-style exclusion: creation fails if another command holds the lock.
  std::FILE* f = std::fopen(lock_path_.c_str(), "wx");
  if (!f) {
    throw ConfigError("run directory is locked by another command: " + dir_ +
                      " (remove '" + lock_path_ + "' if that command crashed)");
  }
  std::fclose(f);
  load_manifest();
  if (!fs::exists(subpath("manifest.json"))) save_manifest();
}

RunDirectory::~RunDirectory() {
  flush_metrics();
  std::error_code ec;
  fs::remove(lock_path_, ec);
}

std::string RunDirectory::subpath(const std::string& rel) const {
  return (fs::path(dir_) / rel).string();
}

void RunDirectory::load_manifest() {
  const std::string path = subpath("manifest.json");
  if (fs::exists(path)) {
    std::ifstream in(path, std::ios::binary);
    manifest_ = nlohmann::json::parse(in);
    if (manifest_.value("version", 0) != 1) {
      throw IoError("unsupported manifest version in " + path);
    }
  } else {
    manifest_ = {{"version", 1}, {"artifacts", nlohmann::json::object()}};
  }
}

void RunDirectory::save_manifest() const {
  const std::string path = subpath("manifest.json");
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    out << manifest_.dump(2) << "\n";
    if (!out) throw IoError("cannot write manifest: " + path);
  }
  fs::rename(tmp, path);
}

void RunDirectory::record_artifact(const std::string& rel, const std::string& format) {
  manifest_["artifacts"][rel] = {{"hash", file_hash_hex(subpath(rel))},
                                 {"format", format}};
  save_manifest();
}

void RunDirectory::write_artifact(const std::string& rel, const std::string& bytes,
                                  const std::string& format) {
  const std::string path = subpath(rel);
  fs::create_directories(fs::path(path).parent_path());
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("cannot write artifact: " + path);
  }
  fs::rename(tmp, path);
  record_artifact(rel, format);
}

bool RunDirectory::has_artifact(const std::string& rel) const {
  return manifest_.at("artifacts").contains(rel) && fs::exists(subpath(rel));
}

void RunDirectory::require_artifact(const std::string& rel,
                                    const std::string& produced_by) const {
  if (!has_artifact(rel)) {
    throw ConfigError("missing prerequisite artifact '" + rel + "' in " + dir_ +
                      " (run `" + produced_by + "` first)");
  }
}

void RunDirectory::snapshot_config(const RunConfig& cfg) {
  const std::string canonical = serialize_ini(run_config_to_ini(cfg));
  const std::string path = subpath("config.ini");
  if (fs::exists(path)) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream buf;
    buf << in.rdbuf();
    if (buf.str() != canonical) {
      throw ConfigError("run directory " + dir_ +
                        " was created with a different config; use a fresh directory");
    }
    return;
  }
  write_artifact("config.ini", canonical, "ini/v1");
}

RunConfig RunDirectory::load_snapshot() const {
  const std::string path = subpath("config.ini");
  if (!fs::exists(path)) {
    throw ConfigError("no config snapshot in " + dir_ + " yet");
  }
  return run_config_from_ini(read_ini_file(path));
}

void RunDirectory::append_metrics(const nlohmann::json& record) {
  std::ofstream out(subpath("metrics.jsonl"), std::ios::binary | std::ios::app);
  out << record.dump() << "\n";
  if (!out) throw IoError("cannot append metrics in " + dir_);
  metrics_dirty_ = true;
}

void RunDirectory::flush_metrics() {
  if (!metrics_dirty_) return;
  metrics_dirty_ = false;
  record_artifact("metrics.jsonl", "jsonl/v1");
}

}  // namespace mtplab
