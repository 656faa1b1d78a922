#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "nbreplay/blob_store.hpp"
#include "nbreplay/fingerprint.hpp"
#include "nbreplay/task.hpp"
#include "nbreplay/value.hpp"

namespace nbreplay {

struct OutputRecord {
  std::string path;
  std::string hash;
  std::uint64_t size = 0;
};

struct LogEntry {
  std::string fingerprint;
  std::string task_id;
  std::vector<OutputRecord> outputs;
  std::optional<std::string> result_blob;
  std::int64_t wall_time_ms = 0;
  std::string timestamp;
};

nlohmann::json to_json(const LogEntry& e);
LogEntry log_entry_from_json(const nlohmann::json& j);

// Append-only JSON-lines log with a fingerprint index (latest entry wins).
class TransactionLog {
 public:
  // Loads the file if present. A torn or unparsable final line is dropped and
  // the file truncated to the last complete entry; damage earlier in the file
  // raises CorruptionError. Readers pass repair=false to leave the file as is.
  explicit TransactionLog(std::filesystem::path file, bool repair = true);

  void append(const LogEntry& entry);
  const LogEntry* lookup(const std::string& fingerprint) const;
  const std::vector<LogEntry>& entries() const { return entries_; }
  const std::map<std::string, std::size_t>& index() const { return index_; }
  const std::filesystem::path& file() const { return file_; }

  // Bytes discarded from a torn tail when the log was opened.
  std::uint64_t truncated_bytes() const { return truncated_bytes_; }

  // Replaces the file contents (used by gc).
  void rewrite(std::vector<LogEntry> entries);

 private:
  std::filesystem::path file_;
  std::vector<LogEntry> entries_;
  std::map<std::string, std::size_t> index_;
  std::uint64_t truncated_bytes_ = 0;
  std::mutex mu_;
};

enum class OutcomeKind { Executed, Cached };

struct TaskOutcome {
  OutcomeKind kind = OutcomeKind::Executed;
  std::vector<std::string> outputs;
  Datum result;
  std::string fingerprint;
};

// What a worker hands back for an executed task.
struct TaskRun {
  Datum result;
  std::int64_t wall_time_ms = 0;
};

struct ManagerStats {
  std::size_t submitted = 0;
  std::size_t cached = 0;
  std::size_t executed = 0;
};

// Result value reported for a command task: its declared output paths.
Datum command_result(const TaskSpec& spec);

// Sits between task submission and the executor: answers submissions whose
// fingerprint is logged (materializing outputs from the cache) and records
// executed tasks.
class RewindManager {
 public:
  RewindManager(TransactionLog& log, BlobStore& cache, std::filesystem::path workspace, const Canonicalizer& canon,
                bool cache_enabled = true);

  struct Submission {
    std::string fingerprint;
    std::optional<TaskOutcome> cached;  // empty: forward to the executor
  };

  Submission submit(const TaskSpec& spec, const std::map<std::string, std::string>& parent_fps);

  // Called after the task's outputs were copied into the workspace.
  TaskOutcome complete(const TaskSpec& spec, const std::string& fingerprint, const TaskRun& run);

  const ManagerStats& stats() const { return stats_; }
  void reset_stats() { stats_ = {}; }
  const std::vector<std::string>& warnings() const { return warnings_; }
  bool cache_enabled() const { return cache_enabled_; }

 private:
  TransactionLog& log_;
  BlobStore& cache_;
  std::filesystem::path workspace_;
  const Canonicalizer& canon_;
  bool cache_enabled_;
  ManagerStats stats_;
  std::vector<std::string> warnings_;
};

}  // namespace nbreplay
