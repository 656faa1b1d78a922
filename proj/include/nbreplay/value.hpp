#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "nbreplay/ast.hpp"

namespace nbreplay {

using HeapId = std::uint64_t;

// The statement that produced a binding, with the global names it read.
struct StmtRef {
  std::string cell_id;
  int seq = -1;
  int index = -1;
  std::string source;
  std::vector<std::string> deps;

  bool valid() const { return index >= 0; }
  std::string label() const { return cell_id + "#" + std::to_string(index); }
};

struct Unit {};
struct ListRef {
  HeapId id;
};
struct MapRef {
  HeapId id;
};
// A live, non-serialisable resource (e.g. a cluster connection).
struct Handle {
  std::string uri;
  StmtRef origin;
};
struct FnVal {
  std::string name;
  std::string source;
};
struct TaskRef {
  std::string task_id;
  StmtRef origin;
};

using Value = std::variant<Unit, std::int64_t, double, bool, std::string, ListRef, MapRef, Handle, FnVal, TaskRef>;

const char* kind_name(const Value& v);
std::optional<HeapId> heap_id_of(const Value& v);
bool is_scalar(const Value& v);

// Heap-free value tree: the unit of serialisation, task arguments and results.
struct Datum {
  enum class Kind : std::uint8_t { Unit, Int, Float, Bool, String, List, Map, Fn, TaskRef };

  Kind kind = Kind::Unit;
  std::int64_t i = 0;
  double f = 0.0;
  bool b = false;
  std::string s;    // String payload, Fn name, TaskRef id/fingerprint
  std::string aux;  // Fn source
  std::vector<Datum> items;                    // List
  std::vector<std::pair<Datum, Datum>> entries;  // Map (any order; encoding sorts)

  static Datum unit() { return Datum{}; }
  static Datum integer(std::int64_t v);
  static Datum floating(double v);
  static Datum boolean(bool v);
  static Datum string(std::string v);
  static Datum list(std::vector<Datum> v);
  static Datum map(std::vector<std::pair<Datum, Datum>> v);
  static Datum function(std::string name, std::string source);
  static Datum task_ref(std::string id);
};

bool operator==(const Datum& a, const Datum& b);  // structural (via canonical encoding)

struct Function {
  std::string source;
  std::shared_ptr<const FnDef> def;
};

struct ListObject {
  std::vector<Value> items;
};
// Keys are scalars; entries are ordered by the canonical encoding of the key.
struct MapObject {
  std::map<std::string, std::pair<Value, Value>> entries;
};
using HeapObject = std::variant<ListObject, MapObject>;

// heap-id -> names bound directly to that object.
using ReverseIndex = std::map<HeapId, std::set<std::string>>;

class KernelState {
 public:
  const std::map<std::string, Value>& env() const { return env_; }
  const Value* lookup(const std::string& name) const;
  bool has(const std::string& name) const { return env_.count(name) > 0; }

  void bind(const std::string& name, Value v, StmtRef provenance = {});
  void unbind(const std::string& name);
  const StmtRef* provenance(const std::string& name) const;
  void set_provenance(const std::string& name, StmtRef ref);

  HeapId alloc(HeapObject obj);
  HeapObject& object(HeapId id);
  const HeapObject& object(HeapId id) const;
  bool has_object(HeapId id) const { return heap_.count(id) > 0; }
  const std::map<HeapId, HeapObject>& heap() const { return heap_; }

  const std::map<std::string, Function>& fns() const { return fns_; }
  const Function* function(const std::string& name) const;
  void define(const std::string& name, std::string source, StmtRef provenance = {});
  void define(const std::string& name, Function fn, StmtRef provenance = {});
  const StmtRef* fn_provenance(const std::string& name) const;

  const ReverseIndex& reverse_index() const { return rindex_; }
  // Recomputes the index from the environment; used to check the maintained one.
  ReverseIndex rebuild_reverse_index() const;

  // Heap ids reachable from a value, through nested containers.
  std::set<HeapId> reachable(const Value& v) const;

  std::string& stdout_buffer() { return stdout_; }
  const std::string& stdout_buffer() const { return stdout_; }

 private:
  std::map<std::string, Value> env_;
  std::map<std::string, StmtRef> provenance_;
  std::map<HeapId, HeapObject> heap_;
  std::map<std::string, Function> fns_;
  std::map<std::string, StmtRef> fn_provenance_;
  ReverseIndex rindex_;
  HeapId next_id_ = 1;
  std::string stdout_;
};

// Names plus every variable sharing a heap object (directly or through nested
// containment) with any of them, closed to a fixpoint. Unbound names are dropped.
std::set<std::string> shared_closure(const KernelState& state, const std::set<std::string>& names);

// Groups of two or more names bound directly to one heap object.
std::vector<std::vector<std::string>> sharing_groups(const KernelState& state, const std::set<std::string>& names);

std::string format_float(double v);
std::string quote_string(const std::string& s);

// Display form used by show() and str(); strings are unquoted at top level.
std::string render(const KernelState& state, const Value& v, bool top_level = true);
std::string render(const Datum& d, bool top_level = true);

}  // namespace nbreplay
