#include "nbreplay/value.hpp"

#include <charconv>
#include <cmath>

#include "nbreplay/errors.hpp"
#include "nbreplay/parser.hpp"

namespace nbreplay {

const char* kind_name(const Value& v) {
  switch (v.index()) {
    case 0: return "unit";
    case 1: return "int";
    case 2: return "float";
    case 3: return "bool";
    case 4: return "string";
    case 5: return "list";
    case 6: return "map";
    case 7: return "handle";
    case 8: return "fnval";
    case 9: return "taskref";
  }
  return "?";
}

std::optional<HeapId> heap_id_of(const Value& v) {
  if (const auto* l = std::get_if<ListRef>(&v)) return l->id;
  if (const auto* m = std::get_if<MapRef>(&v)) return m->id;
  return std::nullopt;
}

bool is_scalar(const Value& v) {
  return std::holds_alternative<std::int64_t>(v) || std::holds_alternative<double>(v) ||
         std::holds_alternative<bool>(v) || std::holds_alternative<std::string>(v);
}

Datum Datum::integer(std::int64_t v) {
  Datum d;
  d.kind = Kind::Int;
  d.i = v;
  return d;
}
Datum Datum::floating(double v) {
  Datum d;
  d.kind = Kind::Float;
  d.f = v;
  return d;
}
Datum Datum::boolean(bool v) {
  Datum d;
  d.kind = Kind::Bool;
  d.b = v;
  return d;
}
Datum Datum::string(std::string v) {
  Datum d;
  d.kind = Kind::String;
  d.s = std::move(v);
  return d;
}
Datum Datum::list(std::vector<Datum> v) {
  Datum d;
  d.kind = Kind::List;
  d.items = std::move(v);
  return d;
}
Datum Datum::map(std::vector<std::pair<Datum, Datum>> v) {
  Datum d;
  d.kind = Kind::Map;
  d.entries = std::move(v);
  return d;
}
Datum Datum::function(std::string name, std::string source) {
  Datum d;
  d.kind = Kind::Fn;
  d.s = std::move(name);
  d.aux = std::move(source);
  return d;
}
Datum Datum::task_ref(std::string id) {
  Datum d;
  d.kind = Kind::TaskRef;
  d.s = std::move(id);
  return d;
}

const Value* KernelState::lookup(const std::string& name) const {
  auto it = env_.find(name);
  return it == env_.end() ? nullptr : &it->second;
}

void KernelState::bind(const std::string& name, Value v, StmtRef provenance) {
  auto it = env_.find(name);
  if (it != env_.end()) {
    if (auto old = heap_id_of(it->second)) {
      auto rit = rindex_.find(*old);
      if (rit != rindex_.end()) {
        rit->second.erase(name);
        if (rit->second.empty()) rindex_.erase(rit);
      }
    }
  }
  if (auto id = heap_id_of(v)) {
    if (!heap_.count(*id)) throw EvalError("internal: binding '" + name + "' to a dangling heap object");
    rindex_[*id].insert(name);
  }
  env_[name] = std::move(v);
  if (provenance.valid()) {
    provenance_[name] = std::move(provenance);
  }
}

void KernelState::unbind(const std::string& name) {
  auto it = env_.find(name);
  if (it == env_.end()) return;
  if (auto old = heap_id_of(it->second)) {
    auto rit = rindex_.find(*old);
    if (rit != rindex_.end()) {
      rit->second.erase(name);
      if (rit->second.empty()) rindex_.erase(rit);
    }
  }
  env_.erase(it);
  provenance_.erase(name);
}

const StmtRef* KernelState::provenance(const std::string& name) const {
  auto it = provenance_.find(name);
  return it == provenance_.end() ? nullptr : &it->second;
}

void KernelState::set_provenance(const std::string& name, StmtRef ref) { provenance_[name] = std::move(ref); }

HeapId KernelState::alloc(HeapObject obj) {
  HeapId id = next_id_++;
  heap_.emplace(id, std::move(obj));
  return id;
}

HeapObject& KernelState::object(HeapId id) {
  auto it = heap_.find(id);
  if (it == heap_.end()) throw EvalError("internal: dangling heap id " + std::to_string(id));
  return it->second;
}

const HeapObject& KernelState::object(HeapId id) const {
  auto it = heap_.find(id);
  if (it == heap_.end()) throw EvalError("internal: dangling heap id " + std::to_string(id));
  return it->second;
}

const Function* KernelState::function(const std::string& name) const {
  auto it = fns_.find(name);
  return it == fns_.end() ? nullptr : &it->second;
}

void KernelState::define(const std::string& name, std::string source, StmtRef provenance) {
  auto def = std::make_shared<const FnDef>(parse_function_source(source));
  define(name, Function{std::move(source), std::move(def)}, std::move(provenance));
}

void KernelState::define(const std::string& name, Function fn, StmtRef provenance) {
  fns_[name] = std::move(fn);
  if (provenance.valid()) fn_provenance_[name] = std::move(provenance);
}

const StmtRef* KernelState::fn_provenance(const std::string& name) const {
  auto it = fn_provenance_.find(name);
  return it == fn_provenance_.end() ? nullptr : &it->second;
}

ReverseIndex KernelState::rebuild_reverse_index() const {
  ReverseIndex out;
  for (const auto& [name, v] : env_) {
    if (auto id = heap_id_of(v)) out[*id].insert(name);
  }
  return out;
}

std::set<HeapId> KernelState::reachable(const Value& v) const {
  std::set<HeapId> seen;
  std::vector<HeapId> stack;
  if (auto id = heap_id_of(v)) stack.push_back(*id);
  while (!stack.empty()) {
    HeapId id = stack.back();
    stack.pop_back();
    if (!seen.insert(id).second) continue;
    const HeapObject& obj = object(id);
    if (const auto* l = std::get_if<ListObject>(&obj)) {
      for (const auto& item : l->items) {
        if (auto child = heap_id_of(item)) stack.push_back(*child);
      }
    } else {
      for (const auto& [_, kv] : std::get<MapObject>(obj).entries) {
        if (auto child = heap_id_of(kv.second)) stack.push_back(*child);
      }
    }
  }
  return seen;
}

std::set<std::string> shared_closure(const KernelState& state, const std::set<std::string>& names) {
  std::set<std::string> result;
  std::set<HeapId> frontier;
  std::map<std::string, std::set<HeapId>> reach;
  for (const auto& [name, v] : state.env()) {
    if (heap_id_of(v)) reach.emplace(name, state.reachable(v));
  }
  for (const auto& n : names) {
    if (state.has(n) || state.function(n)) result.insert(n);
    auto it = reach.find(n);
    if (it != reach.end()) frontier.insert(it->second.begin(), it->second.end());
  }
  bool changed = true;
  while (changed) {
    changed = false;
    for (const auto& [name, ids] : reach) {
      if (result.count(name)) continue;
      bool overlaps = false;
      for (HeapId id : ids) {
        if (frontier.count(id)) {
          overlaps = true;
          break;
        }
      }
      if (overlaps) {
        result.insert(name);
        frontier.insert(ids.begin(), ids.end());
        changed = true;
      }
    }
  }
  return result;
}

std::vector<std::vector<std::string>> sharing_groups(const KernelState& state, const std::set<std::string>& names) {
  std::vector<std::vector<std::string>> groups;
  for (const auto& [id, bound] : state.reverse_index()) {
    std::vector<std::string> g;
    for (const auto& n : bound) {
      if (names.count(n)) g.push_back(n);
    }
    if (g.size() >= 2) groups.push_back(std::move(g));
  }
  return groups;
}

std::string format_float(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  std::string out(buf, ptr);
  if (out.find_first_of(".eE") == std::string::npos) out += ".0";
  return out;
}

std::string quote_string(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    switch (c) {
      case '"': out += "\\\""; break;
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\t': out += "\\t"; break;
      default: out.push_back(c);
    }
  }
  return out + "\"";
}

namespace {

void render_into(const KernelState& state, const Value& v, bool top, std::set<HeapId>& active, std::string& out) {
  std::visit(
      [&](const auto& x) {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, Unit>) {
          out += "()";
        } else if constexpr (std::is_same_v<T, std::int64_t>) {
          out += std::to_string(x);
        } else if constexpr (std::is_same_v<T, double>) {
          out += format_float(x);
        } else if constexpr (std::is_same_v<T, bool>) {
          out += x ? "true" : "false";
        } else if constexpr (std::is_same_v<T, std::string>) {
          out += top ? x : quote_string(x);
        } else if constexpr (std::is_same_v<T, ListRef> || std::is_same_v<T, MapRef>) {
          if (!active.insert(x.id).second) {
            out += "...";
            return;
          }
          const HeapObject& obj = state.object(x.id);
          if (const auto* l = std::get_if<ListObject>(&obj)) {
            out += "[";
            for (std::size_t i = 0; i < l->items.size(); ++i) {
              if (i) out += ", ";
              render_into(state, l->items[i], false, active, out);
            }
            out += "]";
          } else {
            out += "{";
            bool first = true;
            for (const auto& [_, kv] : std::get<MapObject>(obj).entries) {
              if (!first) out += ", ";
              first = false;
              render_into(state, kv.first, false, active, out);
              out += ": ";
              render_into(state, kv.second, false, active, out);
            }
            out += "}";
          }
          active.erase(x.id);
        } else if constexpr (std::is_same_v<T, Handle>) {
          out += "<handle " + x.uri + ">";
        } else if constexpr (std::is_same_v<T, FnVal>) {
          out += "<fn " + x.name + ">";
        } else if constexpr (std::is_same_v<T, TaskRef>) {
          out += "<task " + x.task_id + ">";
        }
      },
      v);
}

}  // namespace

std::string render(const KernelState& state, const Value& v, bool top_level) {
  std::string out;
  std::set<HeapId> active;
  render_into(state, v, top_level, active, out);
  return out;
}

std::string render(const Datum& d, bool top_level) {
  switch (d.kind) {
    case Datum::Kind::Unit: return "()";
    case Datum::Kind::Int: return std::to_string(d.i);
    case Datum::Kind::Float: return format_float(d.f);
    case Datum::Kind::Bool: return d.b ? "true" : "false";
    case Datum::Kind::String: return top_level ? d.s : quote_string(d.s);
    case Datum::Kind::List: {
      std::string out = "[";
      for (std::size_t i = 0; i < d.items.size(); ++i) out += (i ? ", " : "") + render(d.items[i], false);
      return out + "]";
    }
    case Datum::Kind::Map: {
      std::string out = "{";
      for (std::size_t i = 0; i < d.entries.size(); ++i) {
        out += (i ? ", " : "") + render(d.entries[i].first, false) + ": " + render(d.entries[i].second, false);
      }
      return out + "}";
    }
    case Datum::Kind::Fn: return "<fn " + d.s + ">";
    case Datum::Kind::TaskRef: return "<task " + d.s + ">";
  }
  return "?";
}

}  // namespace nbreplay
