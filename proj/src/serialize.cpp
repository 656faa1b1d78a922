#include "nbreplay/serialize.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <set>

namespace nbreplay {

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int shift = 24; shift >= 0; shift -= 8) out.push_back(static_cast<char>((v >> shift) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int shift = 56; shift >= 0; shift -= 8) out.push_back(static_cast<char>((v >> shift) & 0xff));
}

void frame(std::string& out, std::uint8_t t, std::string_view payload) {
  if (payload.size() > 0xffffffffu) throw SerializationError("value too large to encode");
  out.push_back(static_cast<char>(t));
  put_u32(out, static_cast<std::uint32_t>(payload.size()));
  out.append(payload);
}

void encode_into(const Datum& d, std::string& out) {
  std::string payload;
  switch (d.kind) {
    case Datum::Kind::Unit:
      frame(out, tag::kUnit, {});
      return;
    case Datum::Kind::Int:
      put_u64(payload, static_cast<std::uint64_t>(d.i));
      frame(out, tag::kInt, payload);
      return;
    case Datum::Kind::Float:
      put_u64(payload, std::bit_cast<std::uint64_t>(d.f));
      frame(out, tag::kFloat, payload);
      return;
    case Datum::Kind::Bool:
      payload.push_back(d.b ? 1 : 0);
      frame(out, tag::kBool, payload);
      return;
    case Datum::Kind::String:
      frame(out, tag::kString, d.s);
      return;
    case Datum::Kind::List:
      for (const auto& item : d.items) encode_into(item, payload);
      frame(out, tag::kList, payload);
      return;
    case Datum::Kind::Map: {
      std::vector<std::pair<std::string, std::string>> pairs;
      pairs.reserve(d.entries.size());
      for (const auto& [k, v] : d.entries) {
        std::string ek, ev;
        encode_into(k, ek);
        encode_into(v, ev);
        pairs.emplace_back(std::move(ek), std::move(ev));
      }
      std::sort(pairs.begin(), pairs.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
      for (const auto& [k, v] : pairs) {
        payload += k;
        payload += v;
      }
      frame(out, tag::kMap, payload);
      return;
    }
    case Datum::Kind::Fn:
      frame(payload, tag::kString, d.s);
      frame(payload, tag::kString, d.aux);
      frame(out, tag::kFn, payload);
      return;
    case Datum::Kind::TaskRef:
      frame(out, tag::kTaskRef, d.s);
      return;
  }
}

class Decoder {
 public:
  explicit Decoder(std::string_view in) : in_(in) {}

  Datum one() {
    if (in_.size() - pos_ < 5) bad("truncated header");
    auto t = static_cast<std::uint8_t>(in_[pos_]);
    std::uint32_t len = 0;
    for (int i = 1; i <= 4; ++i) len = (len << 8) | static_cast<std::uint8_t>(in_[pos_ + i]);
    pos_ += 5;
    if (in_.size() - pos_ < len) bad("truncated payload");
    std::string_view payload = in_.substr(pos_, len);
    pos_ += len;
    switch (t) {
      case tag::kUnit:
        if (len != 0) bad("unit with payload");
        return Datum::unit();
      case tag::kInt:
        if (len != 8) bad("int payload size");
        return Datum::integer(static_cast<std::int64_t>(u64(payload)));
      case tag::kFloat:
        if (len != 8) bad("float payload size");
        return Datum::floating(std::bit_cast<double>(u64(payload)));
      case tag::kBool:
        if (len != 1 || static_cast<std::uint8_t>(payload[0]) > 1) bad("bool payload");
        return Datum::boolean(payload[0] == 1);
      case tag::kString:
        return Datum::string(std::string(payload));
      case tag::kList: {
        Decoder sub(payload);
        std::vector<Datum> items;
        while (!sub.done()) items.push_back(sub.one());
        return Datum::list(std::move(items));
      }
      case tag::kMap: {
        Decoder sub(payload);
        std::vector<std::pair<Datum, Datum>> entries;
        std::string prev;
        bool first = true;
        while (!sub.done()) {
          std::size_t kstart = sub.pos_;
          Datum k = sub.one();
          std::string kbytes(payload.substr(kstart, sub.pos_ - kstart));
          if (!first && !(prev < kbytes)) bad("map keys not in canonical order");
          first = false;
          prev = std::move(kbytes);
          if (sub.done()) bad("map key without value");
          Datum v = sub.one();
          entries.emplace_back(std::move(k), std::move(v));
        }
        return Datum::map(std::move(entries));
      }
      case tag::kFn: {
        Decoder sub(payload);
        Datum name = sub.one();
        Datum source = sub.one();
        if (!sub.done() || name.kind != Datum::Kind::String || source.kind != Datum::Kind::String) {
          bad("function payload");
        }
        return Datum::function(std::move(name.s), std::move(source.s));
      }
      case tag::kTaskRef:
        return Datum::task_ref(std::string(payload));
      default:
        bad("unknown tag " + std::to_string(t));
    }
  }

  bool done() const { return pos_ == in_.size(); }

 private:
  static std::uint64_t u64(std::string_view p) {
    std::uint64_t v = 0;
    for (char c : p) v = (v << 8) | static_cast<std::uint8_t>(c);
    return v;
  }
  [[noreturn]] static void bad(const std::string& what) { throw CorruptionError("canonical decoding: " + what); }

  std::string_view in_;
  std::size_t pos_ = 0;
};

Datum scalar_datum(const Value& v) {
  if (const auto* i = std::get_if<std::int64_t>(&v)) return Datum::integer(*i);
  if (const auto* f = std::get_if<double>(&v)) return Datum::floating(*f);
  if (const auto* b = std::get_if<bool>(&v)) return Datum::boolean(*b);
  if (const auto* s = std::get_if<std::string>(&v)) return Datum::string(*s);
  throw EvalError(std::string("map keys must be scalars, got ") + kind_name(v));
}

struct DatumBuilder {
  const KernelState& state;
  std::vector<HeapId>* ids;
  ToDatumOptions opts;
  std::set<HeapId> active;

  Datum run(const Value& v) {
    return std::visit(
        [&](const auto& x) -> Datum {
          using T = std::decay_t<decltype(x)>;
          if constexpr (std::is_same_v<T, Unit>) {
            return Datum::unit();
          } else if constexpr (std::is_same_v<T, std::int64_t> || std::is_same_v<T, double> ||
                               std::is_same_v<T, bool> || std::is_same_v<T, std::string>) {
            return scalar_datum(v);
          } else if constexpr (std::is_same_v<T, FnVal>) {
            return Datum::function(x.name, x.source);
          } else if constexpr (std::is_same_v<T, Handle>) {
            throw NonSerializableValue("handle '" + x.uri + "' cannot be serialized", x.origin);
          } else if constexpr (std::is_same_v<T, TaskRef>) {
            if (opts.allow_task_refs) return Datum::task_ref(x.task_id);
            throw NonSerializableValue("task reference '" + x.task_id + "' cannot be serialized", x.origin);
          } else {
            if (!active.insert(x.id).second) throw SerializationError("cyclic value cannot be serialized");
            if (ids) ids->push_back(x.id);
            Datum out;
            const HeapObject& obj = state.object(x.id);
            if (const auto* l = std::get_if<ListObject>(&obj)) {
              std::vector<Datum> items;
              items.reserve(l->items.size());
              for (const auto& item : l->items) items.push_back(run(item));
              out = Datum::list(std::move(items));
            } else {
              std::vector<std::pair<Datum, Datum>> entries;
              for (const auto& [_, kv] : std::get<MapObject>(obj).entries) {
                entries.emplace_back(scalar_datum(kv.first), run(kv.second));
              }
              out = Datum::map(std::move(entries));
            }
            active.erase(x.id);
            return out;
          }
        },
        v);
  }
};

std::size_t count_containers(const Datum& d) {
  std::size_t n = 0;
  for (const auto& item : d.items) n += (item.kind == Datum::Kind::List || item.kind == Datum::Kind::Map) + count_containers(item);
  for (const auto& [k, v] : d.entries) n += (v.kind == Datum::Kind::List || v.kind == Datum::Kind::Map) + count_containers(v);
  return n;
}

struct Materializer {
  KernelState& state;
  const std::vector<HeapId>* ids;
  HeapIdMap* map;
  std::size_t cursor = 0;

  Value scalar(const Datum& d) {
    switch (d.kind) {
      case Datum::Kind::Int: return d.i;
      case Datum::Kind::Float: return d.f;
      case Datum::Kind::Bool: return d.b;
      case Datum::Kind::String: return d.s;
      default: throw EvalError("map keys must be scalars");
    }
  }

  Value run(const Datum& d) {
    switch (d.kind) {
      case Datum::Kind::Unit: return Unit{};
      case Datum::Kind::Int:
      case Datum::Kind::Float:
      case Datum::Kind::Bool:
      case Datum::Kind::String: return scalar(d);
      case Datum::Kind::Fn: return FnVal{d.s, d.aux};
      case Datum::Kind::TaskRef: throw EvalError("unresolved task reference '" + d.s + "'");
      case Datum::Kind::List:
      case Datum::Kind::Map: break;
    }
    std::optional<HeapId> recorded;
    if (ids && cursor < ids->size()) recorded = (*ids)[cursor];
    ++cursor;
    if (recorded && map) {
      auto it = map->find(*recorded);
      if (it != map->end() && state.has_object(it->second)) {
        Value existing = d.kind == Datum::Kind::List ? Value{ListRef{it->second}} : Value{MapRef{it->second}};
        bool same = false;
        try {
          same = encode(to_datum(state, existing)) == encode(d);
        } catch (const SerializationError&) {
          same = false;
        }
        if (same) {
          cursor += count_containers(d);
          return existing;
        }
      }
    }
    HeapId id;
    if (d.kind == Datum::Kind::List) {
      ListObject l;
      l.items.reserve(d.items.size());
      for (const auto& item : d.items) l.items.push_back(run(item));
      id = state.alloc(std::move(l));
    } else {
      MapObject m;
      for (const auto& [k, v] : d.entries) {
        Value key = scalar(k);
        std::string ek = encode_key(key);
        Value val = run(v);
        m.entries[ek] = {std::move(key), std::move(val)};
      }
      id = state.alloc(std::move(m));
    }
    if (recorded && map) map->emplace(*recorded, id);
    return d.kind == Datum::Kind::List ? Value{ListRef{id}} : Value{MapRef{id}};
  }
};

}  // namespace

std::string encode(const Datum& d) {
  std::string out;
  encode_into(d, out);
  return out;
}

Datum decode(std::string_view bytes) {
  Decoder dec(bytes);
  Datum d = dec.one();
  if (!dec.done()) throw CorruptionError("canonical decoding: trailing bytes");
  return d;
}

bool operator==(const Datum& a, const Datum& b) { return encode(a) == encode(b); }

std::string encode_key(const Value& key) { return encode(scalar_datum(key)); }

Datum to_datum(const KernelState& state, const Value& v, std::vector<HeapId>* heap_ids, ToDatumOptions opts) {
  DatumBuilder b{state, heap_ids, opts, {}};
  return b.run(v);
}

std::variant<std::string, NonSerializable> serialize_value(const KernelState& state, const Value& v) {
  try {
    return encode(to_datum(state, v));
  } catch (const NonSerializableValue& e) {
    return NonSerializable{e.origin(), e.what()};
  }
}

Value materialize(KernelState& state, const Datum& d, const std::vector<HeapId>* heap_ids, HeapIdMap* id_map) {
  Materializer m{state, heap_ids, id_map};
  return m.run(d);
}

namespace {

Value transfer_rec(const KernelState& from, const Value& v, KernelState& to, std::map<HeapId, HeapId>& seen) {
  auto id = heap_id_of(v);
  if (!id) return v;
  if (auto it = seen.find(*id); it != seen.end()) {
    return std::holds_alternative<ListRef>(v) ? Value{ListRef{it->second}} : Value{MapRef{it->second}};
  }
  const HeapObject& obj = from.object(*id);
  if (const auto* l = std::get_if<ListObject>(&obj)) {
    HeapId nid = to.alloc(ListObject{});
    seen[*id] = nid;
    std::vector<Value> items;
    for (const auto& item : l->items) items.push_back(transfer_rec(from, item, to, seen));
    std::get<ListObject>(to.object(nid)).items = std::move(items);
    return ListRef{nid};
  }
  HeapId nid = to.alloc(MapObject{});
  seen[*id] = nid;
  MapObject m;
  for (const auto& [k, kv] : std::get<MapObject>(obj).entries) {
    m.entries[k] = {kv.first, transfer_rec(from, kv.second, to, seen)};
  }
  std::get<MapObject>(to.object(nid)) = std::move(m);
  return MapRef{nid};
}

}  // namespace

Value transfer(const KernelState& from, const Value& v, KernelState& to) {
  std::map<HeapId, HeapId> seen;
  return transfer_rec(from, v, to, seen);
}

}  // namespace nbreplay
