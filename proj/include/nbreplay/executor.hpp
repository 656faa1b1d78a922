#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <string>
#include <vector>

#include "nbreplay/rewind.hpp"
#include "nbreplay/task.hpp"

namespace nbreplay {

struct ExecutorConfig {
  int workers = 2;
  int task_delay_ms = 0;             // test hook: sleep before each executed task
  std::filesystem::path sandbox_root;  // empty: a directory under the system temp dir
  bool sandbox = true;                 // false runs tasks directly in the workspace
};

struct TraceEvent {
  std::string task_id;
  std::int64_t start_us = 0;  // relative to the executor's creation
  std::int64_t finish_us = 0;
  OutcomeKind kind = OutcomeKind::Executed;
};

class Executor {
 public:
  Executor(ExecutorConfig config, std::filesystem::path workspace);
  ~Executor();

  // Runs every node of the DAG through the manager: cache hits resolve
  // immediately, misses run on up to W workers once their parents finished.
  // A failed task aborts its descendants; the first failure is rethrown after
  // the remaining independent tasks settle.
  std::map<std::string, TaskOutcome> schedule(const TaskDag& dag, RewindManager& manager);

  // Runs a command task in `dir` (a sandbox, or the workspace itself).
  void run_cmd_task(const TaskSpec& spec, const std::filesystem::path& dir) const;
  // Runs a function task; TaskRef arguments are replaced from parent_results.
  Datum run_fn_task(const TaskSpec& spec, const std::map<std::string, Datum>& parent_results,
                    const std::filesystem::path& dir) const;

  std::vector<TraceEvent> trace() const;
  std::size_t worker_invocations() const { return invocations_.load(); }
  const ExecutorConfig& config() const { return config_; }
  const std::filesystem::path& workspace() const { return workspace_; }

 private:
  std::filesystem::path make_sandbox(const TaskSpec& spec);
  std::int64_t now_us() const;

  ExecutorConfig config_;
  std::filesystem::path workspace_;
  std::filesystem::path sandbox_root_;
  bool owns_sandbox_root_ = false;
  std::chrono::steady_clock::time_point epoch_;
  std::atomic<std::size_t> invocations_{0};
  std::atomic<std::uint64_t> sandbox_counter_{0};
  mutable std::mutex trace_mu_;
  std::vector<TraceEvent> trace_;
};

}  // namespace nbreplay
