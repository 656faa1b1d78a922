#include "nbreplay/orchestrator.hpp"

#include <chrono>
#include <deque>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "nbreplay/digest.hpp"
#include "nbreplay/errors.hpp"
#include "nbreplay/hex.hpp"
#include "nbreplay/parser.hpp"
#include "nbreplay/serialize.hpp"

namespace nbreplay {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::int64_t elapsed_ms(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace

// ---------------------------------------------------------------- TaskSession

TaskSession::TaskSession(fs::path workspace, TransactionLog& log, BlobStore& cache, const RunConfig& config)
    : workspace_(std::move(workspace)),
      canon_(config.canonicalization),
      manager_(log, cache, workspace_, canon_, config.cache_enabled),
      executor_(config.executor, workspace_) {}

std::string TaskSession::register_task(TaskSpec spec) {
  ++counter_;
  spec.id = (spec.kind == TaskKind::Command ? std::string("cmd") : spec.fname) + "-" + std::to_string(counter_);
  spec.parents.clear();
  std::set<std::string> refs;
  for (const auto& a : spec.args) collect_task_refs(a, refs);
  for (const auto& r : refs) {
    if (!specs_.count(r)) throw EvalError("task argument refers to unknown task '" + r + "'");
  }
  for (const auto& out : spec.outputs) producer_[out] = spec.id;
  std::string id = spec.id;
  position_[id] = order_.size();
  order_.push_back(id);
  specs_.emplace(id, std::move(spec));
  return id;
}

const TaskSpec* TaskSession::spec(const std::string& id) const {
  auto it = specs_.find(id);
  return it == specs_.end() ? nullptr : &it->second;
}

void TaskSession::run(const TaskDag& dag, std::map<std::string, TaskOutcome>* outcomes) {
  auto result = executor_.schedule(dag, manager_);
  for (const auto& [id, o] : result) {
    fingerprints_.insert(o.fingerprint);
    for (const auto& p : o.outputs) outputs_.insert(p);
  }
  if (outcomes) *outcomes = std::move(result);
}

std::vector<Datum> TaskSession::compute(const std::vector<std::string>& task_ids) {
  std::set<std::string> closure;
  std::deque<std::string> queue(task_ids.begin(), task_ids.end());
  while (!queue.empty()) {
    std::string id = queue.front();
    queue.pop_front();
    if (!closure.insert(id).second) continue;
    const TaskSpec* s = spec(id);
    if (!s) throw EvalError("compute: unknown task '" + id + "'");
    std::set<std::string> parents;
    for (const auto& a : s->args) collect_task_refs(a, parents);
    for (const auto& in : s->inputs) {
      auto it = producer_.find(in);
      if (it != producer_.end() && it->second != id && position_.at(it->second) < position_.at(id)) {
        parents.insert(it->second);
      }
    }
    for (const auto& p : parents) queue.push_back(p);
  }
  std::vector<TaskSpec> submissions;
  for (const auto& id : order_) {
    if (closure.count(id)) submissions.push_back(specs_.at(id));
  }
  TaskDag dag = build_dag(std::move(submissions));

  ComputeRecord record;
  record.targets = task_ids;
  for (const auto& id : dag.order) record.tasks.push_back(dag.nodes.at(id));

  std::map<std::string, TaskOutcome> outcomes;
  run(dag, &outcomes);
  computes_.push_back(std::move(record));

  std::vector<Datum> results;
  for (const auto& id : task_ids) results.push_back(outcomes.at(id).result);
  return results;
}

void TaskSession::replay(const ComputeRecord& record) {
  if (record.tasks.empty()) return;
  run(build_dag(record.tasks), nullptr);
}

std::vector<ComputeRecord> TaskSession::take_computes() {
  std::vector<ComputeRecord> out;
  out.swap(computes_);
  return out;
}

// -------------------------------------------------------------------- Runtime

Runtime::Runtime(const fs::path& bundle, const fs::path& workspace, const RunConfig& config)
    : paths_{bundle},
      workspace_(workspace),
      blobs_(paths_.blobs()),
      cache_(paths_.taskcache()),
      log_(paths_.tasklog()),
      session_(workspace_, log_, cache_, config) {}

ExecResult Runtime::run_cell(const CellAST& ast, const std::string& cell_id, int seq) {
  Interpreter interp(state_, workspace_, &session_);
  return interp.eval_cell(ast, cell_id, seq);
}

// ---------------------------------------------------------------------- audit

namespace {

void check_workspace(const fs::path& workspace) {
  std::error_code ec;
  if (!fs::is_directory(workspace, ec)) throw ArgumentError("workspace " + workspace.string() + " is not a directory");
}

std::string cell_error(const std::string& id, const std::exception& e) { return "cell " + id + ": " + e.what(); }

}  // namespace

AuditResult audit_run(const Notebook& notebook, const fs::path& workspace, const fs::path& bundle,
                      const RunConfig& config) {
  check_workspace(workspace);
  BundlePaths paths{bundle};
  fs::create_directories(paths.root);
  BundleLock lock(paths);
  auto start = std::chrono::steady_clock::now();

  std::error_code ec;
  fs::remove_all(paths.checkpoints(), ec);
  fs::create_directories(paths.checkpoints());
  fs::create_directories(paths.blobs());
  fs::create_directories(paths.taskcache());
  {
    std::ofstream out(paths.notebook(), std::ios::binary | std::ios::trunc);
    out << notebook_to_json(notebook);
  }
  write_json_file(paths.meta(), make_meta(config));

  AuditResult result;
  AuditRecord& record = result.record;
  auto finish = [&] {
    record.wall_time_ms = elapsed_ms(start);
    if (result.runtime) {
      const auto& fps = result.runtime->session().fingerprints();
      record.fingerprints.assign(fps.begin(), fps.end());
      result.stats = result.runtime->session().manager().stats();
    }
    write_json_file(paths.audit(), to_json(record));
  };

  std::vector<CellAST> asts;
  for (const auto& cell : notebook.cells) {
    try {
      asts.push_back(parse_cell(cell.code));
    } catch (const SyntaxError& e) {
      result.ok = false;
      result.error = cell_error(cell.id, e);
      record.failed_cell = cell.id;
      record.error = result.error;
      finish();
      return result;
    }
  }

  result.runtime = std::make_unique<Runtime>(paths.root, workspace, config);
  Runtime& rt = *result.runtime;
  for (std::size_t i = 0; i < notebook.cells.size(); ++i) {
    const Cell& cell = notebook.cells[i];
    const int seq = static_cast<int>(i);
    auto cell_start = std::chrono::steady_clock::now();
    try {
      RWInfo rw = analyze_rw(asts[i]);
      ExecResult exec = rt.run_cell(asts[i], cell.id, seq);
      CheckpointManifest m =
          make_checkpoint(rt.state(), cell, seq, rw, rt.blobs(), exec.stdout_text, rt.session().take_computes());
      AuditCell ac;
      ac.id = cell.id;
      ac.seq = seq;
      ac.code_hash = m.code_hash;
      ac.stdout_text = exec.stdout_text;
      ac.manifest = (fs::path("checkpoints") / manifest_file_name(seq, cell.id)).generic_string();
      ac.entries = m.entries.size();
      ac.referenced_bytes = m.referenced_bytes();
      ac.tasks_submitted = exec.tasks_submitted;
      write_json_file(paths.root / ac.manifest, to_json(m));
      ac.wall_time_ms = elapsed_ms(cell_start);
      record.cells.push_back(std::move(ac));
      result.manifests.push_back(std::move(m));
    } catch (const Error& e) {
      result.ok = false;
      result.error = cell_error(cell.id, e);
      record.failed_cell = cell.id;
      record.error = result.error;
      rt.session().take_computes();
      finish();
      return result;
    }
  }
  record.complete = true;
  finish();
  return result;
}

// --------------------------------------------------------------------- repeat

const char* to_string(CellStatus s) {
  switch (s) {
    case CellStatus::Unchanged: return "unchanged";
    case CellStatus::Modified: return "modified";
    case CellStatus::Added: return "added";
    case CellStatus::Removed: return "removed";
  }
  return "?";
}

std::vector<CellChange> detect_changes(const Notebook& notebook, const AuditRecord& audit) {
  std::vector<CellChange> out;
  std::set<std::string> seen;
  for (const auto& cell : notebook.cells) {
    seen.insert(cell.id);
    const AuditCell* ac = audit.find(cell.id);
    CellStatus status = !ac                                       ? CellStatus::Added
                        : ac->code_hash == cell_code_hash(cell.code) ? CellStatus::Unchanged
                                                                     : CellStatus::Modified;
    out.push_back(CellChange{cell.id, status});
  }
  for (const auto& ac : audit.cells) {
    if (!seen.count(ac.id)) out.push_back(CellChange{ac.id, CellStatus::Removed});
  }
  return out;
}

std::string RepeatReport::to_text() const {
  std::ostringstream out;
  for (const auto& c : cells) {
    out << "[" << (c.executed ? "executed" : "restored") << "] " << c.cell_id << "\n";
    out << c.stdout_text;
  }
  out << "cells restored: " << cells_restored.size() << ", executed: " << cells_executed.size();
  if (!cells_removed.empty()) out << ", removed: " << cells_removed.size();
  out << "\n";
  out << "tasks submitted: " << tasks_submitted << ", cached: " << tasks_cached << ", executed: " << tasks_executed;
  out << " (hit rate " << std::fixed << std::setprecision(1) << hit_rate() * 100.0 << "%)\n";
  for (const auto& w : warnings) out << w << "\n";
  if (!ok) out << "error: " << error.value_or("unknown failure") << "\n";
  return out.str();
}

json RepeatReport::to_json() const {
  json cj = json::array();
  for (const auto& c : cells) cj.push_back(json{{"id", c.cell_id}, {"stdout", c.stdout_text}, {"executed", c.executed}});
  json outs = json::object();
  for (const auto& [p, h] : outputs) outs[p] = h;
  return json{{"ok", ok},
              {"cells_restored", cells_restored},
              {"cells_executed", cells_executed},
              {"cells_removed", cells_removed},
              {"tasks_submitted", tasks_submitted},
              {"tasks_cached", tasks_cached},
              {"tasks_executed", tasks_executed},
              {"hit_rate", hit_rate()},
              {"cells", cj},
              {"outputs", outs},
              {"warnings", warnings},
              {"failed_cell", failed_cell ? json(*failed_cell) : json(nullptr)},
              {"error", error ? json(*error) : json(nullptr)},
              {"wall_time_ms", wall_time_ms}};
}

namespace {

void verify_checkpoint_blobs(const std::vector<CheckpointManifest>& manifests, const BlobStore& blobs) {
  std::vector<std::string> bad;
  std::set<std::string> checked;
  for (const auto& m : manifests) {
    for (const auto& e : m.entries) {
      if (!e.blob || !checked.insert(*e.blob).second) continue;
      if (!blobs.verify(*e.blob)) bad.push_back(*e.blob + " (" + m.cell_id + ":" + e.name + ")");
    }
  }
  if (!bad.empty()) {
    std::string msg = "checkpoint blobs failed verification:";
    for (const auto& b : bad) msg += "\n  " + b;
    throw CorruptionError(msg);
  }
}

// Names a cell depends on, widened through the bodies of the functions it calls.
NameSet expand_through_functions(const KernelState& state, const NameSet& names) {
  NameSet out;
  std::vector<std::string> stack(names.begin(), names.end());
  while (!stack.empty()) {
    std::string n = stack.back();
    stack.pop_back();
    if (!out.insert(n).second) continue;
    if (const Function* fn = state.function(n)) {
      for (const auto& r : function_refs(*fn->def)) stack.push_back(r);
    }
  }
  return out;
}

bool intersects(const NameSet& a, const std::set<std::string>& b) {
  for (const auto& n : a) {
    if (b.count(n)) return true;
  }
  return false;
}

}  // namespace

RepeatResult repeat_run(const Notebook& notebook, const fs::path& bundle, const fs::path& workspace,
                        const RunConfig& config, RepeatOptions options) {
  check_workspace(workspace);
  BundlePaths paths{bundle};
  std::error_code ec;
  if (!fs::is_directory(paths.root, ec)) throw ArgumentError("bundle " + paths.root.string() + " does not exist");
  BundleLock lock(paths);
  auto start = std::chrono::steady_clock::now();

  AuditRecord audit = load_audit_record(paths);
  json meta = load_meta(paths);
  std::vector<CheckpointManifest> manifests = load_manifests(paths, audit);

  RepeatResult result;
  RepeatReport& report = result.report;
  try {
    const auto& canon = meta.at("config").at("canonicalization");
    if (canon.at("suffix_pattern").get<std::string>() != config.canonicalization.suffix_pattern ||
        canon.at("canonicalize_commands").get<bool>() != config.canonicalization.canonicalize_commands) {
      report.warnings.push_back("warning: canonicalization settings differ from the audit; cached tasks may not match");
    }
  } catch (const json::exception& e) {
    throw CorruptionError(std::string("malformed meta.json: ") + e.what());
  }

  result.runtime = std::make_unique<Runtime>(paths.root, workspace, config);
  Runtime& rt = *result.runtime;
  verify_checkpoint_blobs(manifests, rt.blobs());

  std::map<std::string, std::size_t> audit_seq;
  for (std::size_t i = 0; i < audit.cells.size(); ++i) audit_seq[audit.cells[i].id] = i;

  auto changes = detect_changes(notebook, audit);
  int last_seq = -1;
  for (const auto& ch : changes) {
    if (ch.status == CellStatus::Removed) {
      report.cells_removed.push_back(ch.id);
      continue;
    }
    auto it = audit_seq.find(ch.id);
    if (it == audit_seq.end()) continue;
    if (static_cast<int>(it->second) < last_seq) {
      throw RepeatError("cell " + ch.id + " was moved relative to the audited notebook; re-audit instead");
    }
    last_seq = static_cast<int>(it->second);
  }

  auto finish = [&] {
    const auto& stats = rt.session().manager().stats();
    report.tasks_submitted = stats.submitted;
    report.tasks_cached = stats.cached;
    report.tasks_executed = stats.executed;
    for (const auto& w : rt.session().manager().warnings()) report.warnings.push_back(w);
    for (const auto& p : rt.session().declared_outputs()) {
      fs::path f = workspace / p;
      if (fs::is_regular_file(f, ec)) report.outputs.emplace_back(p, sha256_file_hex(f));
    }
    report.wall_time_ms = elapsed_ms(start);
  };

  std::vector<CellAST> asts;
  for (const auto& cell : notebook.cells) {
    try {
      asts.push_back(parse_cell(cell.code));
    } catch (const SyntaxError& e) {
      report.ok = false;
      report.failed_cell = cell.id;
      report.error = cell_error(cell.id, e);
      finish();
      return result;
    }
  }

  StateRestorer restorer(manifests, rt.blobs(), workspace, &rt.session());
  std::set<std::string> dirty;
  KernelState& state = rt.state();

  for (std::size_t i = 0; i < notebook.cells.size(); ++i) {
    const Cell& cell = notebook.cells[i];
    const CellStatus status = changes[i].status;
    RWInfo rw = analyze_rw(asts[i]);
    std::optional<std::size_t> seq;
    if (auto it = audit_seq.find(cell.id); it != audit_seq.end()) seq = it->second;
    const CheckpointManifest* m = seq ? &manifests[*seq] : nullptr;

    bool execute = status != CellStatus::Unchanged || !m;
    if (!execute) {
      NameSet deps = expand_through_functions(state, rw.external_reads);
      if (intersects(deps, dirty)) execute = true;
    }
    if (!execute) {
      for (const auto& n : rw.external_reads) {
        if (!state.has(n) && !state.function(n)) {
          execute = true;
          break;
        }
      }
    }

    try {
      if (execute) {
        int run_seq = seq ? static_cast<int>(*seq) : static_cast<int>(audit.cells.size() + i);
        ExecResult exec = rt.run_cell(asts[i], cell.id, run_seq);
        rt.session().take_computes();
        std::set<std::string> newly_dirty = rw.writes;
        newly_dirty.insert(rw.defs.begin(), rw.defs.end());
        newly_dirty.insert(exec.writes_observed.begin(), exec.writes_observed.end());
        if (!exec.mutated_heap_ids.empty()) {
          for (const auto& [name, v] : state.env()) {
            for (HeapId id : state.reachable(v)) {
              if (exec.mutated_heap_ids.count(id)) {
                newly_dirty.insert(name);
                break;
              }
            }
          }
        }
        if (options.prune_equal_writes && m) {
          for (auto it = newly_dirty.begin(); it != newly_dirty.end();) {
            const VarEntry* e = m->find(*it);
            const Value* v = state.lookup(*it);
            bool same = false;
            if (e && e->blob && v) {
              auto bytes = serialize_value(state, *v);
              if (auto* b = std::get_if<std::string>(&bytes)) same = sha256_hex(*b) == *e->blob;
            }
            it = same ? newly_dirty.erase(it) : std::next(it);
          }
        }
        dirty.insert(newly_dirty.begin(), newly_dirty.end());
        report.cells_executed.push_back(cell.id);
        report.cells.push_back(CellOutput{cell.id, exec.stdout_text, true});
      } else {
        std::set<std::string> own = rw.writes;
        own.insert(rw.defs.begin(), rw.defs.end());
        std::set<std::string> skip;
        for (const auto& n : dirty) {
          if (!own.count(n)) skip.insert(n);
        }
        restorer.restore_cell(state, *seq, skip);
        for (const auto& n : own) {
          if (m->find(n) || m->find_function(n)) dirty.erase(n);
        }
        for (const auto& rec : m->computes) rt.session().replay(rec);
        report.cells_restored.push_back(cell.id);
        report.cells.push_back(CellOutput{cell.id, m->stdout_text, false});
      }
    } catch (const CorruptionError&) {
      throw;
    } catch (const Error& e) {
      report.ok = false;
      report.failed_cell = cell.id;
      report.error = cell_error(cell.id, e);
      break;
    }
  }
  finish();
  return result;
}

// ------------------------------------------------------------------- rollback

RollbackSession::RollbackSession(const fs::path& bundle, const fs::path& workspace, std::size_t k,
                                 const RunConfig& config)
    : k_(k) {
  check_workspace(workspace);
  BundlePaths paths{bundle};
  AuditRecord audit = load_audit_record(paths);
  if (k >= audit.cells.size()) {
    throw ArgumentError("cell index " + std::to_string(k) + " out of range (bundle has " +
                        std::to_string(audit.cells.size()) + " checkpointed cells)");
  }
  std::vector<CheckpointManifest> manifests = load_manifests(paths, audit);
  {
    std::ifstream in(paths.notebook(), std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    notebook_ = parse_notebook(ss.str());
  }
  lock_ = std::make_unique<BundleLock>(paths);
  runtime_ = std::make_unique<Runtime>(paths.root, workspace, config);
  verify_checkpoint_blobs(manifests, runtime_->blobs());
  StateRestorer restorer(manifests, runtime_->blobs(), workspace, &runtime_->session());
  restorer.compose(runtime_->state(), k);
  next_seq_ = static_cast<int>(k) + 1;
}

std::vector<Cell> RollbackSession::suffix(const Notebook* edited) const {
  const Notebook& nb = edited ? *edited : notebook_;
  std::vector<Cell> out;
  for (std::size_t i = k_ + 1; i < nb.cells.size(); ++i) out.push_back(nb.cells[i]);
  return out;
}

ExecResult RollbackSession::execute(const Cell& cell) {
  CellAST ast = parse_cell(cell.code);
  ExecResult r = runtime_->run_cell(ast, cell.id, next_seq_++);
  runtime_->session().take_computes();
  return r;
}

std::vector<CellOutput> RollbackSession::run_suffix(const Notebook* edited) {
  std::vector<CellOutput> out;
  for (const auto& cell : suffix(edited)) {
    ExecResult r = execute(cell);
    out.push_back(CellOutput{cell.id, r.stdout_text, true});
  }
  return out;
}

// ------------------------------------------------------------ describe_state

namespace {

struct Describer {
  const KernelState& state;
  const TaskSession* session;
  std::map<HeapId, int> labels;

  json task(const std::string& id, int depth) {
    const TaskSpec* s = session ? session->spec(id) : nullptr;
    if (!s || depth > 64) return json{{"task", id}};
    json j;
    j["kind"] = s->kind == TaskKind::Command ? "command" : "function";
    j["command"] = s->command;
    j["fname"] = s->fname;
    j["inputs"] = s->inputs;
    j["outputs"] = s->outputs;
    j["fn_sources"] = s->fn_sources;
    json args = json::array();
    for (const auto& a : s->args) args.push_back(datum(a, depth + 1));
    j["args"] = std::move(args);
    return json{{"task", std::move(j)}};
  }

  json datum(const Datum& d, int depth) {
    switch (d.kind) {
      case Datum::Kind::TaskRef: return task(d.s, depth);
      case Datum::Kind::List: {
        json arr = json::array();
        for (const auto& i : d.items) arr.push_back(datum(i, depth));
        return json{{"list", std::move(arr)}};
      }
      case Datum::Kind::Map: {
        json arr = json::array();
        for (const auto& [k, v] : d.entries) arr.push_back(json::array({datum(k, depth), datum(v, depth)}));
        return json{{"map", std::move(arr)}};
      }
      default: return json{{"scalar", to_hex(encode(d))}};
    }
  }

  json value(const Value& v) {
    return std::visit(
        [&](const auto& x) -> json {
          using T = std::decay_t<decltype(x)>;
          if constexpr (std::is_same_v<T, ListRef> || std::is_same_v<T, MapRef>) {
            auto it = labels.find(x.id);
            if (it != labels.end()) return json{{"ref", it->second}};
            int label = static_cast<int>(labels.size());
            labels[x.id] = label;
            if constexpr (std::is_same_v<T, ListRef>) {
              json arr = json::array();
              for (const auto& item : std::get<ListObject>(state.object(x.id)).items) arr.push_back(value(item));
              return json{{"id", label}, {"list", std::move(arr)}};
            } else {
              json arr = json::array();
              for (const auto& [k, kv] : std::get<MapObject>(state.object(x.id)).entries) {
                arr.push_back(json::array({to_hex(k), value(kv.second)}));
              }
              return json{{"id", label}, {"map", std::move(arr)}};
            }
          } else if constexpr (std::is_same_v<T, Handle>) {
            return json{{"handle", x.uri}};
          } else if constexpr (std::is_same_v<T, TaskRef>) {
            return task(x.task_id, 0);
          } else if constexpr (std::is_same_v<T, FnVal>) {
            return json{{"fn", x.name}, {"source", x.source}};
          } else {
            Datum d = to_datum(state, v);
            return json{{"scalar", to_hex(encode(d))}};
          }
        },
        v);
  }
};

}  // namespace

json describe_state(const KernelState& state, const TaskSession* session) {
  Describer d{state, session, {}};
  json vars = json::object();
  for (const auto& [name, v] : state.env()) vars[name] = d.value(v);
  json fns = json::object();
  for (const auto& [name, f] : state.fns()) fns[name] = f.source;
  return json{{"vars", std::move(vars)}, {"fns", std::move(fns)}};
}

}  // namespace nbreplay
