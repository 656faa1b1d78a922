#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "nbreplay/checkpoint.hpp"
#include "nbreplay/executor.hpp"
#include "nbreplay/fingerprint.hpp"

namespace nbreplay {

inline constexpr int kBundleFormatVersion = 1;

struct BundlePaths {
  std::filesystem::path root;

  std::filesystem::path notebook() const { return root / "notebook.json"; }
  std::filesystem::path audit() const { return root / "audit.json"; }
  std::filesystem::path meta() const { return root / "meta.json"; }
  std::filesystem::path checkpoints() const { return root / "checkpoints"; }
  std::filesystem::path blobs() const { return root / "blobs"; }
  std::filesystem::path tasklog() const { return root / "tasklog.jsonl"; }
  std::filesystem::path taskcache() const { return root / "taskcache" / "blobs"; }
  std::filesystem::path lock() const { return root / ".lock"; }
};

struct RunConfig {
  ExecutorConfig executor;
  CanonicalizationConfig canonicalization;
  bool cache_enabled = true;
};

// Exclusive writer lock (a file created with O_EXCL, removed on destruction).
class BundleLock {
 public:
  explicit BundleLock(const BundlePaths& paths);
  ~BundleLock();
  BundleLock(const BundleLock&) = delete;
  BundleLock& operator=(const BundleLock&) = delete;

 private:
  std::filesystem::path path_;
};

struct AuditCell {
  std::string id;
  int seq = 0;
  std::string code_hash;
  std::string stdout_text;
  std::string manifest;  // relative to the bundle root
  std::int64_t wall_time_ms = 0;
  std::size_t entries = 0;
  std::uint64_t referenced_bytes = 0;
  std::vector<std::string> tasks_submitted;
};

struct AuditRecord {
  int format_version = kBundleFormatVersion;
  bool complete = false;
  std::optional<std::string> failed_cell;
  std::optional<std::string> error;
  std::int64_t wall_time_ms = 0;
  std::vector<AuditCell> cells;
  std::vector<std::string> fingerprints;  // every task resolved during the audit

  const AuditCell* find(const std::string& id) const;
};

nlohmann::json to_json(const AuditRecord& r);
AuditRecord audit_record_from_json(const nlohmann::json& j);

nlohmann::json make_meta(const RunConfig& config);

// Throws CorruptionError when a file is missing or malformed.
AuditRecord load_audit_record(const BundlePaths& paths);
nlohmann::json load_meta(const BundlePaths& paths);
std::vector<CheckpointManifest> load_manifests(const BundlePaths& paths, const AuditRecord& record);

void write_json_file(const std::filesystem::path& path, const nlohmann::json& j);
nlohmann::json read_json_file(const std::filesystem::path& path);

struct VerifyReport {
  std::vector<std::string> bad_blobs;  // digests whose bytes do not re-hash
  std::vector<std::string> problems;   // missing files and dangling references
  std::size_t blobs_checked = 0;

  bool ok() const { return bad_blobs.empty() && problems.empty(); }
};

VerifyReport verify_bundle(const BundlePaths& paths);

struct GcReport {
  std::size_t blobs_removed = 0;
  std::size_t cache_blobs_removed = 0;
  std::size_t manifests_removed = 0;
  std::size_t log_entries_removed = 0;
  std::uint64_t bytes_freed = 0;
};

GcReport gc_bundle(const BundlePaths& paths);

struct InspectEntry {
  std::string name;
  std::string kind;
  bool serializable = false;
  std::uint64_t size = 0;
  std::string blob;
};

struct InspectCell {
  std::string id;
  std::vector<InspectEntry> entries;
  std::vector<std::string> functions;
  std::uint64_t referenced_bytes = 0;
};

struct InspectReport {
  std::vector<InspectCell> cells;
  std::uint64_t pre_dedup_bytes = 0;   // sum of entry sizes across manifests
  std::uint64_t post_dedup_bytes = 0;  // bytes of distinct referenced blobs
  std::uint64_t stored_blob_bytes = 0;
  std::uint64_t intermediate_bytes = 0;  // task output cache
  std::size_t log_entries = 0;
  std::size_t log_fingerprints = 0;
  std::int64_t log_wall_time_ms = 0;

  double dedup_ratio() const {
    return pre_dedup_bytes == 0 ? 0.0 : static_cast<double>(post_dedup_bytes) / static_cast<double>(pre_dedup_bytes);
  }
  std::string to_text() const;
  nlohmann::json to_json() const;
};

InspectReport inspect_bundle(const BundlePaths& paths);

}  // namespace nbreplay
