#pragma once

#include <json.hpp>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "nbreplay/value.hpp"

namespace nbreplay {

enum class TaskKind { Command, Function };

using FnSources = std::map<std::string, std::string>;

struct TaskSpec {
  std::string id;
  TaskKind kind = TaskKind::Command;
  std::string command;             // Command tasks
  std::string fname;               // Function tasks
  std::vector<Datum> args;         // TaskRef placeholders name parent task ids
  std::vector<std::string> inputs;   // workspace-relative
  std::vector<std::string> outputs;  // workspace-relative
  std::set<std::string> parents;
  FnSources fn_sources;  // fname and every user function it reaches, captured at registration
};

nlohmann::json to_json(const TaskSpec& spec);
TaskSpec task_spec_from_json(const nlohmann::json& j);

// Task ids referenced by TaskRef placeholders anywhere inside the datum.
void collect_task_refs(const Datum& d, std::set<std::string>& out);

// Normalises a workspace-relative path; throws SpecError if it is absolute,
// empty, or escapes the workspace.
std::string normalize_workspace_path(std::string_view path);

struct TaskDag {
  std::map<std::string, TaskSpec> nodes;
  std::vector<std::string> order;  // topological, ties broken by submission order

  std::map<std::string, std::vector<std::string>> children() const;
};

// Parent edges come from TaskRef arguments and from inputs that name another
// submitted task's declared output. Throws DagError on a cycle (message lists
// it), an unknown parent, or two tasks declaring the same output.
TaskDag build_dag(std::vector<TaskSpec> submissions);

}  // namespace nbreplay
