#pragma once

#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "nbreplay/analysis.hpp"
#include "nbreplay/ast.hpp"
#include "nbreplay/task.hpp"
#include "nbreplay/value.hpp"

namespace nbreplay {

// Where task_cmd/task_fn registrations and compute() calls go.
class TaskSink {
 public:
  virtual ~TaskSink() = default;
  // Assigns an id to the spec, records it, and returns the id.
  virtual std::string register_task(TaskSpec spec) = 0;
  // Executes every task needed for `task_ids`; returns one result per id.
  virtual std::vector<Datum> compute(const std::vector<std::string>& task_ids) = 0;
};

struct ExecResult {
  std::set<HeapId> mutated_heap_ids;
  NameSet writes_observed;
  std::string stdout_text;
  std::vector<std::string> tasks_submitted;
};

class Interpreter {
 public:
  // file_root anchors read_text/write_text paths. Without a sink the task
  // builtins raise EvalError (as inside function tasks).
  Interpreter(KernelState& state, std::filesystem::path file_root, TaskSink* sink = nullptr);

  ExecResult eval_cell(const CellAST& ast, const std::string& cell_id, int seq);

  // Runs a single statement; updates `result` with what it touched.
  void exec_statement(const Statement& st, const StmtRef& ref, ExecResult& result);

  // Calls a user function with already-evaluated arguments.
  Value call_function(const std::string& name, std::vector<Value> args);

  Value eval(const Expr& e);

 private:
  using Locals = std::map<std::string, Value>;

  Value eval(const Expr& e, const Locals* locals);
  Value call_function(const FnVal& fn, std::vector<Value> args);
  Value call_builtin(const std::string& name, std::vector<Value> args);
  Value call_named(const std::string& callee, NameClass cls, std::vector<Value> args, const Locals* locals);
  Value binary(BinaryOp op, const Value& a, const Value& b);
  Value index_read(const Value& target, const Value& key);
  bool equal(const Value& a, const Value& b, int depth = 0) const;
  int compare(const Value& a, const Value& b) const;
  std::filesystem::path resolve(const std::string& path) const;
  FnSources function_closure(const std::set<std::string>& roots) const;

  Value make_list(std::vector<Value> items);
  const ListObject& list_of(const Value& v, const char* who) const;
  const MapObject& map_of(const Value& v, const char* who) const;
  std::vector<std::string> string_list(const Value& v, const char* who) const;

  KernelState& state_;
  std::filesystem::path root_;
  TaskSink* sink_;
  const StmtRef* current_ = nullptr;
  ExecResult* result_ = nullptr;
  int depth_ = 0;
};

}  // namespace nbreplay
