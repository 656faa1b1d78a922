#include "nbreplay/task.hpp"

#include <algorithm>
#include <filesystem>
#include <queue>

#include "nbreplay/errors.hpp"
#include "nbreplay/hex.hpp"
#include "nbreplay/serialize.hpp"

namespace nbreplay {

using json = nlohmann::json;

json to_json(const TaskSpec& spec) {
  json j;
  j["id"] = spec.id;
  j["kind"] = spec.kind == TaskKind::Command ? "command" : "function";
  if (spec.kind == TaskKind::Command) {
    j["command"] = spec.command;
  } else {
    j["fname"] = spec.fname;
    j["args"] = to_hex(encode(Datum::list(spec.args)));
    j["fn_sources"] = spec.fn_sources;
  }
  j["inputs"] = spec.inputs;
  j["outputs"] = spec.outputs;
  j["parents"] = spec.parents;
  return j;
}

TaskSpec task_spec_from_json(const json& j) {
  try {
    TaskSpec spec;
    spec.id = j.at("id").get<std::string>();
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "command") {
      spec.kind = TaskKind::Command;
      spec.command = j.at("command").get<std::string>();
    } else if (kind == "function") {
      spec.kind = TaskKind::Function;
      spec.fname = j.at("fname").get<std::string>();
      Datum args = decode(from_hex(j.at("args").get<std::string>()));
      if (args.kind != Datum::Kind::List) throw CorruptionError("task args are not a list");
      spec.args = std::move(args.items);
      spec.fn_sources = j.at("fn_sources").get<FnSources>();
    } else {
      throw CorruptionError("unknown task kind '" + kind + "'");
    }
    spec.inputs = j.at("inputs").get<std::vector<std::string>>();
    spec.outputs = j.at("outputs").get<std::vector<std::string>>();
    spec.parents = j.at("parents").get<std::set<std::string>>();
    return spec;
  } catch (const json::exception& e) {
    throw CorruptionError(std::string("malformed task record: ") + e.what());
  }
}

void collect_task_refs(const Datum& d, std::set<std::string>& out) {
  if (d.kind == Datum::Kind::TaskRef) out.insert(d.s);
  for (const auto& item : d.items) collect_task_refs(item, out);
  for (const auto& [k, v] : d.entries) {
    collect_task_refs(k, out);
    collect_task_refs(v, out);
  }
}

std::string normalize_workspace_path(std::string_view path) {
  if (path.empty()) throw SpecError("empty workspace path");
  std::filesystem::path p{std::string(path)};
  if (p.is_absolute() || p.has_root_name() || p.has_root_directory()) {
    throw SpecError("path '" + std::string(path) + "' must be relative to the workspace");
  }
  std::filesystem::path norm = p.lexically_normal();
  if (norm.empty() || norm == ".") throw SpecError("path '" + std::string(path) + "' names the workspace itself");
  auto first = *norm.begin();
  if (first == "..") throw SpecError("path '" + std::string(path) + "' escapes the workspace");
  std::string s = norm.generic_string();
  if (!s.empty() && s.back() == '/') throw SpecError("path '" + std::string(path) + "' names a directory");
  return s;
}

std::map<std::string, std::vector<std::string>> TaskDag::children() const {
  std::map<std::string, std::vector<std::string>> out;
  for (const auto& id : order) {
    for (const auto& p : nodes.at(id).parents) out[p].push_back(id);
  }
  return out;
}

TaskDag build_dag(std::vector<TaskSpec> submissions) {
  TaskDag dag;
  std::map<std::string, std::size_t> position;
  std::map<std::string, std::string> producer;
  for (std::size_t i = 0; i < submissions.size(); ++i) {
    const TaskSpec& s = submissions[i];
    if (!position.emplace(s.id, i).second) throw DagError("duplicate task id '" + s.id + "'");
    for (const auto& out : s.outputs) {
      auto [it, inserted] = producer.emplace(out, s.id);
      if (!inserted) {
        throw DagError("tasks '" + it->second + "' and '" + s.id + "' both declare output '" + out + "'");
      }
    }
  }
  for (auto& s : submissions) {
    std::set<std::string> refs;
    for (const auto& a : s.args) collect_task_refs(a, refs);
    for (const auto& r : refs) s.parents.insert(r);
    for (const auto& in : s.inputs) {
      auto it = producer.find(in);
      if (it != producer.end() && it->second != s.id) s.parents.insert(it->second);
    }
    for (const auto& p : s.parents) {
      if (!position.count(p)) throw DagError("task '" + s.id + "' depends on unknown task '" + p + "'");
    }
  }

  std::map<std::string, std::size_t> indegree;
  std::map<std::string, std::vector<std::string>> kids;
  for (const auto& s : submissions) {
    indegree[s.id] = s.parents.size();
    for (const auto& p : s.parents) kids[p].push_back(s.id);
  }
  using Item = std::pair<std::size_t, std::string>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> ready;
  for (const auto& s : submissions) {
    if (indegree[s.id] == 0) ready.emplace(position[s.id], s.id);
  }
  while (!ready.empty()) {
    auto [_, id] = ready.top();
    ready.pop();
    dag.order.push_back(id);
    for (const auto& k : kids[id]) {
      if (--indegree[k] == 0) ready.emplace(position[k], k);
    }
  }
  if (dag.order.size() != submissions.size()) {
    // Walk parent edges among the unresolved nodes until one repeats.
    std::string start;
    for (const auto& s : submissions) {
      if (indegree[s.id] > 0) {
        start = s.id;
        break;
      }
    }
    std::map<std::string, const TaskSpec*> by_id;
    for (const auto& s : submissions) by_id[s.id] = &s;
    std::vector<std::string> path;
    std::map<std::string, std::size_t> seen_at;
    std::string cur = start;
    while (!seen_at.count(cur)) {
      seen_at[cur] = path.size();
      path.push_back(cur);
      for (const auto& p : by_id[cur]->parents) {
        if (indegree[p] > 0) {
          cur = p;
          break;
        }
      }
    }
    std::string cycle;
    for (std::size_t i = seen_at[cur]; i < path.size(); ++i) cycle += path[i] + " <- ";
    throw DagError("task dependency cycle: " + cycle + cur);
  }
  for (auto& s : submissions) {
    std::string id = s.id;
    dag.nodes.emplace(std::move(id), std::move(s));
  }
  return dag;
}

}  // namespace nbreplay
