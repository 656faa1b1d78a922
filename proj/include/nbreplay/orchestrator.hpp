#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "nbreplay/bundle.hpp"
#include "nbreplay/checkpoint.hpp"
#include "nbreplay/executor.hpp"
#include "nbreplay/interpreter.hpp"
#include "nbreplay/notebook.hpp"
#include "nbreplay/rewind.hpp"

namespace nbreplay {

// The task sink used by cells: registers specs, and on compute() schedules the
// full ancestor closure through the rewind manager.
class TaskSession : public TaskSink {
 public:
  TaskSession(std::filesystem::path workspace, TransactionLog& log, BlobStore& cache, const RunConfig& config);

  std::string register_task(TaskSpec spec) override;
  std::vector<Datum> compute(const std::vector<std::string>& task_ids) override;

  // Re-submits the tasks a restored cell computed at audit time.
  void replay(const ComputeRecord& record);

  // compute() calls since the last take, for the cell's checkpoint.
  std::vector<ComputeRecord> take_computes();

  const TaskSpec* spec(const std::string& id) const;
  const std::vector<std::string>& registration_order() const { return order_; }
  const std::set<std::string>& fingerprints() const { return fingerprints_; }
  const std::set<std::string>& declared_outputs() const { return outputs_; }

  RewindManager& manager() { return manager_; }
  Executor& executor() { return executor_; }
  const Canonicalizer& canonicalizer() const { return canon_; }

 private:
  void run(const TaskDag& dag, std::map<std::string, TaskOutcome>* outcomes);

  std::filesystem::path workspace_;
  Canonicalizer canon_;
  RewindManager manager_;
  Executor executor_;
  std::map<std::string, TaskSpec> specs_;
  std::vector<std::string> order_;
  std::map<std::string, std::size_t> position_;
  std::map<std::string, std::string> producer_;
  std::size_t counter_ = 0;
  std::vector<ComputeRecord> computes_;
  std::set<std::string> fingerprints_;
  std::set<std::string> outputs_;
};

// Kernel state plus the bundle stores and task session it runs against.
class Runtime {
 public:
  Runtime(const std::filesystem::path& bundle, const std::filesystem::path& workspace, const RunConfig& config);

  const BundlePaths& paths() const { return paths_; }
  const std::filesystem::path& workspace() const { return workspace_; }
  BlobStore& blobs() { return blobs_; }
  BlobStore& task_cache() { return cache_; }
  TransactionLog& log() { return log_; }
  TaskSession& session() { return session_; }
  KernelState& state() { return state_; }

  ExecResult run_cell(const CellAST& ast, const std::string& cell_id, int seq);

 private:
  BundlePaths paths_;
  std::filesystem::path workspace_;
  BlobStore blobs_;
  BlobStore cache_;
  TransactionLog log_;
  TaskSession session_;
  KernelState state_;
};

struct AuditResult {
  bool ok = true;
  std::string error;
  AuditRecord record;
  std::vector<CheckpointManifest> manifests;
  ManagerStats stats;
  std::unique_ptr<Runtime> runtime;  // holds the end-of-audit state
};

// Runs every cell, checkpointing after each. A failing cell stops the audit;
// artifacts of the completed cells are kept and the result reports the failure.
AuditResult audit_run(const Notebook& notebook, const std::filesystem::path& workspace,
                      const std::filesystem::path& bundle, const RunConfig& config = {});

enum class CellStatus { Unchanged, Modified, Added, Removed };
const char* to_string(CellStatus s);

struct CellChange {
  std::string id;
  CellStatus status;
};

// Statuses for the new notebook's cells in order, then removed audit cells.
std::vector<CellChange> detect_changes(const Notebook& notebook, const AuditRecord& audit);

struct CellOutput {
  std::string cell_id;
  std::string stdout_text;
  bool executed = false;
};

struct RepeatReport {
  std::vector<std::string> cells_restored;
  std::vector<std::string> cells_executed;
  std::vector<std::string> cells_removed;
  std::size_t tasks_submitted = 0;
  std::size_t tasks_cached = 0;
  std::size_t tasks_executed = 0;
  std::vector<CellOutput> cells;
  std::vector<std::pair<std::string, std::string>> outputs;  // declared output path, sha256
  std::vector<std::string> warnings;
  bool ok = true;
  std::optional<std::string> failed_cell;
  std::optional<std::string> error;
  std::int64_t wall_time_ms = 0;

  double hit_rate() const {
    return tasks_submitted == 0 ? 0.0 : static_cast<double>(tasks_cached) / static_cast<double>(tasks_submitted);
  }
  std::string to_text() const;
  nlohmann::json to_json() const;
};

struct RepeatResult {
  RepeatReport report;
  std::unique_ptr<Runtime> runtime;
};

struct RepeatOptions {
  // Treat a re-executed cell's writes as clean when their serialized value
  // matches the audited checkpoint.
  bool prune_equal_writes = false;
};

// Throws CorruptionError when the bundle fails verification and RepeatError
// when the notebook cannot be matched against the audit.
RepeatResult repeat_run(const Notebook& notebook, const std::filesystem::path& bundle,
                        const std::filesystem::path& workspace, const RunConfig& config = {},
                        RepeatOptions options = {});

// State at the end of audited cell k, with the rest of the notebook ready to run.
class RollbackSession {
 public:
  RollbackSession(const std::filesystem::path& bundle, const std::filesystem::path& workspace, std::size_t k,
                  const RunConfig& config = {});

  Runtime& runtime() { return *runtime_; }
  KernelState& state() { return runtime_->state(); }
  std::size_t cell_index() const { return k_; }
  const Notebook& notebook() const { return notebook_; }

  // Cells after k in the audited notebook (or in `edited`, matched by position).
  std::vector<Cell> suffix(const Notebook* edited = nullptr) const;
  ExecResult execute(const Cell& cell);
  // Runs the suffix; returns per-cell stdout.
  std::vector<CellOutput> run_suffix(const Notebook* edited = nullptr);

 private:
  std::unique_ptr<BundleLock> lock_;
  std::unique_ptr<Runtime> runtime_;
  Notebook notebook_;
  std::size_t k_;
  int next_seq_;
};

// Canonical description of everything observable in a kernel state: values
// (with aliasing numbered by first visit), handles by uri, task references by
// their specification, and the function table.
nlohmann::json describe_state(const KernelState& state, const TaskSession* session = nullptr);

}  // namespace nbreplay
