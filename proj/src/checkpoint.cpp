#include "nbreplay/checkpoint.hpp"

#include <algorithm>

#include "nbreplay/errors.hpp"
#include "nbreplay/interpreter.hpp"
#include "nbreplay/notebook.hpp"
#include "nbreplay/parser.hpp"

namespace nbreplay {

using json = nlohmann::json;

namespace {

json stmt_to_json(const StmtRef& r) {
  return json{{"cell_id", r.cell_id}, {"seq", r.seq}, {"index", r.index}, {"source", r.source}, {"deps", r.deps}};
}

StmtRef stmt_from_json(const json& j) {
  StmtRef r;
  r.cell_id = j.at("cell_id").get<std::string>();
  r.seq = j.at("seq").get<int>();
  r.index = j.at("index").get<int>();
  r.source = j.at("source").get<std::string>();
  r.deps = j.at("deps").get<std::vector<std::string>>();
  return r;
}

}  // namespace

const VarEntry* CheckpointManifest::find(const std::string& name) const {
  for (const auto& e : entries) {
    if (e.name == name) return &e;
  }
  return nullptr;
}

const FnEntry* CheckpointManifest::find_function(const std::string& name) const {
  for (const auto& f : functions) {
    if (f.name == name) return &f;
  }
  return nullptr;
}

std::uint64_t CheckpointManifest::referenced_bytes() const {
  std::uint64_t total = 0;
  for (const auto& e : entries) total += e.size;
  return total;
}

json to_json(const CheckpointManifest& m) {
  json entries = json::array();
  for (const auto& e : m.entries) {
    entries.push_back(json{{"name", e.name},
                           {"blob", e.blob ? json(*e.blob) : json(nullptr)},
                           {"kind", e.kind},
                           {"serializable", e.serializable},
                           {"size", e.size},
                           {"heap_ids", e.heap_ids},
                           {"origin", stmt_to_json(e.origin)}});
  }
  json functions = json::array();
  for (const auto& f : m.functions) {
    functions.push_back(json{{"name", f.name}, {"source", f.source}, {"origin", stmt_to_json(f.origin)}});
  }
  json computes = json::array();
  for (const auto& c : m.computes) {
    json tasks = json::array();
    for (const auto& t : c.tasks) tasks.push_back(to_json(t));
    computes.push_back(json{{"targets", c.targets}, {"tasks", std::move(tasks)}});
  }
  return json{{"cell_id", m.cell_id},
              {"seq", m.seq},
              {"code_hash", m.code_hash},
              {"stdout", m.stdout_text},
              {"entries", std::move(entries)},
              {"functions", std::move(functions)},
              {"sharing_groups", m.sharing_groups},
              {"computes", std::move(computes)}};
}

CheckpointManifest manifest_from_json(const json& j) {
  try {
    CheckpointManifest m;
    m.cell_id = j.at("cell_id").get<std::string>();
    m.seq = j.at("seq").get<int>();
    m.code_hash = j.at("code_hash").get<std::string>();
    m.stdout_text = j.at("stdout").get<std::string>();
    for (const auto& e : j.at("entries")) {
      VarEntry v;
      v.name = e.at("name").get<std::string>();
      if (!e.at("blob").is_null()) v.blob = e.at("blob").get<std::string>();
      v.kind = e.at("kind").get<std::string>();
      v.serializable = e.at("serializable").get<bool>();
      v.size = e.at("size").get<std::uint64_t>();
      v.heap_ids = e.at("heap_ids").get<std::vector<HeapId>>();
      v.origin = stmt_from_json(e.at("origin"));
      if (v.serializable != v.blob.has_value()) {
        throw CorruptionError("manifest " + m.cell_id + ": entry '" + v.name + "' has inconsistent blob");
      }
      m.entries.push_back(std::move(v));
    }
    for (const auto& f : j.at("functions")) {
      m.functions.push_back(
          FnEntry{f.at("name").get<std::string>(), f.at("source").get<std::string>(), stmt_from_json(f.at("origin"))});
    }
    m.sharing_groups = j.at("sharing_groups").get<std::vector<std::vector<std::string>>>();
    for (const auto& c : j.at("computes")) {
      ComputeRecord rec;
      rec.targets = c.at("targets").get<std::vector<std::string>>();
      for (const auto& t : c.at("tasks")) rec.tasks.push_back(task_spec_from_json(t));
      m.computes.push_back(std::move(rec));
    }
    return m;
  } catch (const json::exception& e) {
    throw CorruptionError(std::string("malformed checkpoint manifest: ") + e.what());
  }
}

std::string manifest_file_name(int seq, const std::string& cell_id) {
  std::string safe;
  for (char c : cell_id) {
    bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '-' || c == '_';
    safe.push_back(ok ? c : '_');
  }
  char prefix[16];
  std::snprintf(prefix, sizeof prefix, "%04d-", seq);
  return prefix + safe + ".json";
}

CheckpointManifest make_checkpoint(const KernelState& state, const Cell& cell, int seq, const RWInfo& rw,
                                   BlobStore& store, std::string stdout_text, std::vector<ComputeRecord> computes) {
  CheckpointManifest m;
  m.cell_id = cell.id;
  m.seq = seq;
  m.code_hash = cell_code_hash(cell.code);
  m.stdout_text = std::move(stdout_text);
  m.computes = std::move(computes);

  std::set<std::string> touched = rw.reads;
  touched.insert(rw.writes.begin(), rw.writes.end());
  touched.insert(rw.defs.begin(), rw.defs.end());
  std::set<std::string> names = shared_closure(state, touched);

  for (const auto& name : names) {
    const Value* v = state.lookup(name);
    if (!v) continue;
    VarEntry e;
    e.name = name;
    e.kind = kind_name(*v);
    if (const StmtRef* p = state.provenance(name)) e.origin = *p;
    try {
      Datum d = to_datum(state, *v, &e.heap_ids);
      std::string bytes = encode(d);
      e.size = bytes.size();
      e.blob = store.put(bytes);
      e.serializable = true;
    } catch (const NonSerializableValue&) {
      e.heap_ids.clear();
      e.serializable = false;
    } catch (const SerializationError& err) {
      throw CheckpointError("cannot checkpoint '" + name + "' after cell " + cell.id + ": " + err.what());
    }
    m.entries.push_back(std::move(e));
  }

  for (const auto& name : touched) {
    if (rw.writes.count(name) && !rw.defs.count(name)) continue;
    const Function* fn = state.function(name);
    if (!fn) continue;
    FnEntry f{name, fn->source, {}};
    if (const StmtRef* p = state.fn_provenance(name)) f.origin = *p;
    m.functions.push_back(std::move(f));
  }
  m.sharing_groups = sharing_groups(state, names);
  return m;
}

StateRestorer::StateRestorer(const std::vector<CheckpointManifest>& manifests, const BlobStore& store,
                             std::filesystem::path workspace, TaskSink* sink)
    : manifests_(manifests), store_(store), workspace_(std::move(workspace)), sink_(sink) {}

const std::map<std::string, FnEntry>& StateRestorer::functions_upto(std::size_t seq) {
  auto it = fn_tables_.find(seq);
  if (it != fn_tables_.end()) return it->second;
  std::map<std::string, FnEntry> table;
  for (std::size_t i = 0; i <= seq && i < manifests_.size(); ++i) {
    for (const auto& f : manifests_[i].functions) table[f.name] = f;
  }
  return fn_tables_[seq] = std::move(table);
}

Value StateRestorer::recreate(const VarEntry& entry) {
  const StmtRef& origin = entry.origin;
  if (!origin.valid() || origin.seq < 0 || static_cast<std::size_t>(origin.seq) >= manifests_.size()) {
    throw ReconstructionError("cannot re-create '" + entry.name + "': no producing statement recorded");
  }
  auto key = std::make_pair(origin.cell_id, origin.index);
  if (auto it = memo_.find(key); it != memo_.end()) return it->second;
  if (!in_progress_.insert(key).second) {
    throw ReconstructionError("cannot re-create '" + entry.name + "': statement depends on its own result");
  }
  struct Done {
    std::set<std::pair<std::string, int>>& s;
    std::pair<std::string, int> k;
    ~Done() { s.erase(k); }
  } done{in_progress_, key};

  const CheckpointManifest& om = manifests_[static_cast<std::size_t>(origin.seq)];
  if (om.cell_id != origin.cell_id) {
    throw ReconstructionError("cannot re-create '" + entry.name + "': cell " + origin.cell_id + " not found");
  }
  try {
    CellAST ast = parse_cell(origin.source);
    if (ast.statements.size() != 1) throw ReconstructionError("producing code is not a single statement");
    KernelState scratch;
    for (const auto& [name, f] : functions_upto(static_cast<std::size_t>(origin.seq))) {
      scratch.define(name, f.source, f.origin);
    }
    for (const auto& dep : origin.deps) {
      const VarEntry* de = om.find(dep);
      if (!de) continue;
      Value v;
      if (de->serializable) {
        v = materialize(scratch, decode(store_.get(*de->blob)));
      } else {
        v = transfer(memo_state_, recreate(*de), scratch);
      }
      scratch.bind(dep, std::move(v), de->origin);
    }
    Interpreter interp(scratch, workspace_, sink_);
    ExecResult r;
    interp.exec_statement(ast.statements[0], origin, r);
    std::string target = entry.name;
    if (const auto* a = std::get_if<Assign>(&ast.statements[0].node)) target = a->target;
    const Value* produced = scratch.lookup(target);
    if (!produced) throw ReconstructionError("statement did not bind '" + target + "'");
    Value kept = transfer(scratch, *produced, memo_state_);
    memo_.emplace(key, kept);
    return kept;
  } catch (const ReconstructionError&) {
    throw;
  } catch (const Error& e) {
    throw ReconstructionError("cannot re-create '" + entry.name + "' by re-running `" + origin.source + "`: " +
                              e.what());
  }
}

void StateRestorer::load_entry(KernelState& state, const VarEntry& entry) {
  Value v;
  if (entry.serializable) {
    v = materialize(state, decode(store_.get(*entry.blob)), &entry.heap_ids, &id_map_);
  } else {
    v = transfer(memo_state_, recreate(entry), state);
  }
  state.bind(entry.name, std::move(v), entry.origin);
}

namespace {

bool origin_before(const VarEntry* a, const VarEntry* b) {
  return std::tie(a->origin.seq, a->origin.index, a->name) < std::tie(b->origin.seq, b->origin.index, b->name);
}

}  // namespace

void StateRestorer::restore_cell(KernelState& state, std::size_t seq, const std::set<std::string>& skip) {
  const CheckpointManifest& m = manifests_.at(seq);
  for (const auto& f : m.functions) {
    if (!skip.count(f.name)) state.define(f.name, f.source, f.origin);
  }
  std::vector<const VarEntry*> deferred;
  for (const auto& e : m.entries) {
    if (skip.count(e.name)) continue;
    if (e.serializable) {
      load_entry(state, e);
    } else {
      deferred.push_back(&e);
    }
  }
  std::sort(deferred.begin(), deferred.end(), origin_before);
  for (const VarEntry* e : deferred) load_entry(state, *e);
}

void StateRestorer::compose(KernelState& state, std::size_t k) {
  if (k >= manifests_.size()) {
    throw ArgumentError("cell index " + std::to_string(k) + " out of range (" + std::to_string(manifests_.size()) +
                        " checkpoints)");
  }
  std::map<std::string, const VarEntry*> latest;
  for (std::size_t i = 0; i <= k; ++i) {
    for (const auto& e : manifests_[i].entries) latest[e.name] = &e;
  }
  for (const auto& [name, f] : functions_upto(k)) state.define(name, f.source, f.origin);
  std::vector<const VarEntry*> deferred;
  for (const auto& [name, e] : latest) {
    if (e->serializable) {
      load_entry(state, *e);
    } else {
      deferred.push_back(e);
    }
  }
  std::sort(deferred.begin(), deferred.end(), origin_before);
  for (const VarEntry* e : deferred) load_entry(state, *e);
}

KernelState compose_state(const std::vector<CheckpointManifest>& manifests, std::size_t k, const BlobStore& store,
                          const std::filesystem::path& workspace, TaskSink* sink) {
  KernelState state;
  StateRestorer restorer(manifests, store, workspace, sink);
  restorer.compose(state, k);
  return state;
}

}  // namespace nbreplay
