#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "nbreplay/analysis.hpp"
#include "nbreplay/blob_store.hpp"
#include "nbreplay/notebook.hpp"
#include "nbreplay/serialize.hpp"
#include "nbreplay/task.hpp"
#include "nbreplay/value.hpp"

namespace nbreplay {

class TaskSink;

struct VarEntry {
  std::string name;
  std::optional<std::string> blob;  // present iff serializable
  std::string kind;
  StmtRef origin;  // statement that produced the binding, with its deps
  bool serializable = false;
  std::uint64_t size = 0;
  std::vector<HeapId> heap_ids;  // audit-time container ids, pre-order
};

struct FnEntry {
  std::string name;
  std::string source;
  StmtRef origin;
};

// Tasks scheduled by one compute() call, kept so a restored cell can replay them.
struct ComputeRecord {
  std::vector<std::string> targets;
  std::vector<TaskSpec> tasks;
};

struct CheckpointManifest {
  std::string cell_id;
  int seq = 0;
  std::string code_hash;
  std::string stdout_text;
  std::vector<VarEntry> entries;
  std::vector<FnEntry> functions;
  std::vector<std::vector<std::string>> sharing_groups;
  std::vector<ComputeRecord> computes;

  const VarEntry* find(const std::string& name) const;
  const FnEntry* find_function(const std::string& name) const;
  std::uint64_t referenced_bytes() const;
};

nlohmann::json to_json(const CheckpointManifest& m);
// Throws CorruptionError on a malformed manifest.
CheckpointManifest manifest_from_json(const nlohmann::json& j);

std::string manifest_file_name(int seq, const std::string& cell_id);

// Names checkpointed after a cell: shared_closure(reads ∪ writes ∪ defs) over
// bound variables, plus the functions among reads ∪ defs.
CheckpointManifest make_checkpoint(const KernelState& state, const Cell& cell, int seq, const RWInfo& rw,
                                   BlobStore& store, std::string stdout_text = {},
                                   std::vector<ComputeRecord> computes = {});

// Rebuilds kernel state from a prefix of manifests (indexed by audit seq).
// Serializable entries are decoded with their aliasing restored; handles and
// task references are re-created by re-running their producing statements.
class StateRestorer {
 public:
  StateRestorer(const std::vector<CheckpointManifest>& manifests, const BlobStore& store,
                std::filesystem::path workspace, TaskSink* sink = nullptr);

  // Loads manifest `seq` into state, leaving names in `skip` untouched.
  void restore_cell(KernelState& state, std::size_t seq, const std::set<std::string>& skip = {});

  // Later-wins composition of manifests 0..k.
  void compose(KernelState& state, std::size_t k);

 private:
  Value recreate(const VarEntry& entry);
  const std::map<std::string, FnEntry>& functions_upto(std::size_t seq);
  void load_entry(KernelState& state, const VarEntry& entry);

  const std::vector<CheckpointManifest>& manifests_;
  const BlobStore& store_;
  std::filesystem::path workspace_;
  TaskSink* sink_;
  HeapIdMap id_map_;
  KernelState memo_state_;
  std::map<std::pair<std::string, int>, Value> memo_;
  std::set<std::pair<std::string, int>> in_progress_;
  std::map<std::size_t, std::map<std::string, FnEntry>> fn_tables_;
};

KernelState compose_state(const std::vector<CheckpointManifest>& manifests, std::size_t k, const BlobStore& store,
                          const std::filesystem::path& workspace, TaskSink* sink = nullptr);

}  // namespace nbreplay
