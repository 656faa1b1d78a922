#include "nbreplay/interpreter.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "nbreplay/errors.hpp"
#include "nbreplay/parser.hpp"
#include "nbreplay/serialize.hpp"

namespace nbreplay {

namespace {

constexpr int kMaxCallDepth = 256;
constexpr std::int64_t kMaxRange = 10'000'000;

bool is_number(const Value& v) { return std::holds_alternative<std::int64_t>(v) || std::holds_alternative<double>(v); }

double as_double(const Value& v) {
  if (const auto* i = std::get_if<std::int64_t>(&v)) return static_cast<double>(*i);
  return std::get<double>(v);
}

[[noreturn]] void type_error(const std::string& who, const std::string& expected, const Value& got) {
  throw EvalError(who + ": expected " + expected + ", got " + kind_name(got));
}

const std::string& as_string(const Value& v, const std::string& who) {
  if (const auto* s = std::get_if<std::string>(&v)) return *s;
  type_error(who, "string", v);
}

std::int64_t as_int(const Value& v, const std::string& who) {
  if (const auto* i = std::get_if<std::int64_t>(&v)) return *i;
  type_error(who, "int", v);
}

void arity(const std::string& name, const std::vector<Value>& args, std::size_t lo, std::size_t hi) {
  if (args.size() < lo || args.size() > hi) {
    std::string want = lo == hi ? std::to_string(lo) : std::to_string(lo) + ".." + std::to_string(hi);
    throw EvalError(name + ": expected " + want + " argument(s), got " + std::to_string(args.size()));
  }
}

std::int64_t checked(bool overflow, std::int64_t v) {
  if (overflow) throw EvalError("integer overflow");
  return v;
}

}  // namespace

Interpreter::Interpreter(KernelState& state, std::filesystem::path file_root, TaskSink* sink)
    : state_(state), root_(std::move(file_root)), sink_(sink) {}

ExecResult Interpreter::eval_cell(const CellAST& ast, const std::string& cell_id, int seq) {
  ExecResult result;
  state_.stdout_buffer().clear();
  for (std::size_t i = 0; i < ast.statements.size(); ++i) {
    const Statement& st = ast.statements[i];
    NameSet deps = statement_reads(st);
    StmtRef ref{cell_id, seq, static_cast<int>(i), st.source, {deps.begin(), deps.end()}};
    exec_statement(st, ref, result);
  }
  result.stdout_text = state_.stdout_buffer();
  return result;
}

void Interpreter::exec_statement(const Statement& st, const StmtRef& ref, ExecResult& result) {
  current_ = &ref;
  result_ = &result;
  struct Reset {
    Interpreter* self;
    ~Reset() {
      self->current_ = nullptr;
      self->result_ = nullptr;
    }
  } reset{this};

  std::visit(
      [&](const auto& n) {
        using T = std::decay_t<decltype(n)>;
        if constexpr (std::is_same_v<T, Assign>) {
          Value v = eval(*n.value, nullptr);
          state_.bind(n.target, std::move(v), ref);
          result.writes_observed.insert(n.target);
        } else if constexpr (std::is_same_v<T, IndexSet>) {
          const Value* target = state_.lookup(n.target);
          if (!target) throw EvalError("unbound variable '" + n.target + "'");
          Value key = eval(*n.key, nullptr);
          Value v = eval(*n.value, nullptr);
          target = state_.lookup(n.target);
          if (const auto* l = std::get_if<ListRef>(target)) {
            auto& items = std::get<ListObject>(state_.object(l->id)).items;
            std::int64_t i = as_int(key, "index assignment");
            if (i < 0 || static_cast<std::size_t>(i) >= items.size()) {
              throw EvalError("index " + std::to_string(i) + " out of range for '" + n.target + "'");
            }
            items[static_cast<std::size_t>(i)] = std::move(v);
            result.mutated_heap_ids.insert(l->id);
          } else if (const auto* m = std::get_if<MapRef>(target)) {
            auto& entries = std::get<MapObject>(state_.object(m->id)).entries;
            std::string ek = encode_key(key);
            entries[ek] = {std::move(key), std::move(v)};
            result.mutated_heap_ids.insert(m->id);
          } else {
            type_error("index assignment to '" + n.target + "'", "list or map", *target);
          }
          result.writes_observed.insert(n.target);
        } else if constexpr (std::is_same_v<T, Push>) {
          const Value* target = state_.lookup(n.target);
          if (!target) throw EvalError("unbound variable '" + n.target + "'");
          Value v = eval(*n.value, nullptr);
          target = state_.lookup(n.target);
          const auto* l = std::get_if<ListRef>(target);
          if (!l) type_error("push to '" + n.target + "'", "list", *target);
          std::get<ListObject>(state_.object(l->id)).items.push_back(std::move(v));
          result.mutated_heap_ids.insert(l->id);
          result.writes_observed.insert(n.target);
        } else if constexpr (std::is_same_v<T, FnDef>) {
          state_.define(n.name, Function{st.source, std::make_shared<const FnDef>(n)}, ref);
        } else if constexpr (std::is_same_v<T, ExprStmt>) {
          eval(*n.expr, nullptr);
        }
      },
      st.node);
}

Value Interpreter::eval(const Expr& e) { return eval(e, nullptr); }

Value Interpreter::make_list(std::vector<Value> items) {
  return ListRef{state_.alloc(ListObject{std::move(items)})};
}

const ListObject& Interpreter::list_of(const Value& v, const char* who) const {
  const auto* l = std::get_if<ListRef>(&v);
  if (!l) type_error(who, "list", v);
  return std::get<ListObject>(state_.object(l->id));
}

const MapObject& Interpreter::map_of(const Value& v, const char* who) const {
  const auto* m = std::get_if<MapRef>(&v);
  if (!m) type_error(who, "map", v);
  return std::get<MapObject>(state_.object(m->id));
}

std::vector<std::string> Interpreter::string_list(const Value& v, const char* who) const {
  std::vector<std::string> out;
  for (const auto& item : list_of(v, who).items) out.push_back(as_string(item, who));
  return out;
}

Value Interpreter::eval(const Expr& e, const Locals* locals) {
  return std::visit(
      [&](const auto& n) -> Value {
        using T = std::decay_t<decltype(n)>;
        if constexpr (std::is_same_v<T, IntLit>) {
          return n.value;
        } else if constexpr (std::is_same_v<T, FloatLit>) {
          return n.value;
        } else if constexpr (std::is_same_v<T, StringLit>) {
          return n.value;
        } else if constexpr (std::is_same_v<T, BoolLit>) {
          return n.value;
        } else if constexpr (std::is_same_v<T, NameRef>) {
          if (n.cls == NameClass::Param) {
            if (locals) {
              auto it = locals->find(n.name);
              if (it != locals->end()) return it->second;
            }
            throw EvalError("unbound parameter '" + n.name + "'");
          }
          if (n.cls == NameClass::Builtin) throw EvalError("builtin '" + n.name + "' cannot be used as a value");
          if (!locals) {
            if (const Value* v = state_.lookup(n.name)) return *v;
          }
          if (const Function* fn = state_.function(n.name)) return FnVal{n.name, fn->source};
          if (locals) {
            throw EvalError("function body refers to '" + n.name + "', which is neither a parameter nor a function");
          }
          throw EvalError("unbound variable '" + n.name + "'");
        } else if constexpr (std::is_same_v<T, ListLit>) {
          std::vector<Value> items;
          items.reserve(n.items.size());
          for (const auto& item : n.items) items.push_back(eval(*item, locals));
          return make_list(std::move(items));
        } else if constexpr (std::is_same_v<T, MapLit>) {
          MapObject m;
          for (const auto& [ke, ve] : n.entries) {
            Value k = eval(*ke, locals);
            Value v = eval(*ve, locals);
            std::string ek = encode_key(k);
            m.entries[ek] = {std::move(k), std::move(v)};
          }
          return MapRef{state_.alloc(std::move(m))};
        } else if constexpr (std::is_same_v<T, Binary>) {
          Value a = eval(*n.lhs, locals);
          Value b = eval(*n.rhs, locals);
          return binary(n.op, a, b);
        } else if constexpr (std::is_same_v<T, Negate>) {
          Value v = eval(*n.operand, locals);
          if (const auto* i = std::get_if<std::int64_t>(&v)) {
            std::int64_t r;
            return checked(__builtin_sub_overflow(std::int64_t{0}, *i, &r), r);
          }
          if (const auto* f = std::get_if<double>(&v)) return -*f;
          type_error("negation", "number", v);
        } else if constexpr (std::is_same_v<T, Call>) {
          std::vector<Value> args;
          args.reserve(n.args.size());
          for (const auto& a : n.args) args.push_back(eval(*a, locals));
          return call_named(n.callee, n.cls, std::move(args), locals);
        } else if constexpr (std::is_same_v<T, Index>) {
          Value target = eval(*n.target, locals);
          Value key = eval(*n.key, locals);
          return index_read(target, key);
        }
      },
      e.node);
}

Value Interpreter::call_named(const std::string& callee, NameClass cls, std::vector<Value> args, const Locals* locals) {
  if (cls == NameClass::Builtin) return call_builtin(callee, std::move(args));
  if (cls == NameClass::Param) {
    auto it = locals ? locals->find(callee) : Locals::const_iterator{};
    if (!locals || it == locals->end()) throw EvalError("unbound parameter '" + callee + "'");
    const auto* fn = std::get_if<FnVal>(&it->second);
    if (!fn) type_error("call of parameter '" + callee + "'", "function", it->second);
    return call_function(*fn, std::move(args));
  }
  if (!locals) {
    if (const Value* v = state_.lookup(callee)) {
      if (const auto* fn = std::get_if<FnVal>(v)) return call_function(*fn, std::move(args));
      if (!state_.function(callee)) type_error("call of '" + callee + "'", "function", *v);
    }
  }
  return call_function(callee, std::move(args));
}

Value Interpreter::call_function(const std::string& name, std::vector<Value> args) {
  const Function* fn = state_.function(name);
  if (!fn) throw EvalError("unknown function '" + name + "'");
  return call_function(FnVal{name, fn->source}, std::move(args));
}

Value Interpreter::call_function(const FnVal& fnval, std::vector<Value> args) {
  std::shared_ptr<const FnDef> def;
  if (const Function* fn = state_.function(fnval.name); fn && fn->source == fnval.source) {
    def = fn->def;
  } else {
    def = std::make_shared<const FnDef>(parse_function_source(fnval.source));
  }
  if (args.size() != def->params.size()) {
    throw EvalError("function '" + fnval.name + "' expects " + std::to_string(def->params.size()) +
                    " argument(s), got " + std::to_string(args.size()));
  }
  if (depth_ >= kMaxCallDepth) throw EvalError("maximum call depth exceeded in '" + fnval.name + "'");
  Locals locals;
  for (std::size_t i = 0; i < args.size(); ++i) locals[def->params[i]] = std::move(args[i]);
  ++depth_;
  struct Depth {
    int& d;
    ~Depth() { --d; }
  } guard{depth_};
  return eval(*def->body, &locals);
}

std::filesystem::path Interpreter::resolve(const std::string& path) const {
  try {
    return root_ / normalize_workspace_path(path);
  } catch (const SpecError& e) {
    throw EvalError(e.what());
  }
}

FnSources Interpreter::function_closure(const std::set<std::string>& roots) const {
  FnSources out;
  std::vector<std::string> queue(roots.begin(), roots.end());
  while (!queue.empty()) {
    std::string name = queue.back();
    queue.pop_back();
    if (out.count(name)) continue;
    const Function* fn = state_.function(name);
    if (!fn) continue;
    out[name] = fn->source;
    for (const auto& r : function_refs(*fn->def)) queue.push_back(r);
  }
  return out;
}

Value Interpreter::index_read(const Value& target, const Value& key) {
  if (const auto* l = std::get_if<ListRef>(&target)) {
    const auto& items = std::get<ListObject>(state_.object(l->id)).items;
    std::int64_t i = as_int(key, "index");
    if (i < 0 || static_cast<std::size_t>(i) >= items.size()) {
      throw EvalError("index " + std::to_string(i) + " out of range (length " + std::to_string(items.size()) + ")");
    }
    return items[static_cast<std::size_t>(i)];
  }
  if (const auto* m = std::get_if<MapRef>(&target)) {
    const auto& entries = std::get<MapObject>(state_.object(m->id)).entries;
    auto it = entries.find(encode_key(key));
    if (it == entries.end()) throw EvalError("key " + render(state_, key, false) + " not found");
    return it->second.second;
  }
  if (const auto* s = std::get_if<std::string>(&target)) {
    std::int64_t i = as_int(key, "index");
    if (i < 0 || static_cast<std::size_t>(i) >= s->size()) throw EvalError("string index out of range");
    return std::string(1, (*s)[static_cast<std::size_t>(i)]);
  }
  type_error("index", "list, map or string", target);
}

bool Interpreter::equal(const Value& a, const Value& b, int depth) const {
  if (depth > kMaxCallDepth) throw EvalError("comparison of cyclic values");
  if (is_number(a) && is_number(b)) {
    if (std::holds_alternative<std::int64_t>(a) && std::holds_alternative<std::int64_t>(b)) {
      return std::get<std::int64_t>(a) == std::get<std::int64_t>(b);
    }
    return as_double(a) == as_double(b);
  }
  if (a.index() != b.index()) return false;
  return std::visit(
      [&](const auto& x) -> bool {
        using T = std::decay_t<decltype(x)>;
        const T& y = std::get<T>(b);
        if constexpr (std::is_same_v<T, Unit>) {
          return true;
        } else if constexpr (std::is_same_v<T, bool> || std::is_same_v<T, std::string>) {
          return x == y;
        } else if constexpr (std::is_same_v<T, std::int64_t> || std::is_same_v<T, double>) {
          return x == y;
        } else if constexpr (std::is_same_v<T, ListRef>) {
          if (x.id == y.id) return true;
          const auto& la = std::get<ListObject>(state_.object(x.id)).items;
          const auto& lb = std::get<ListObject>(state_.object(y.id)).items;
          if (la.size() != lb.size()) return false;
          for (std::size_t i = 0; i < la.size(); ++i) {
            if (!equal(la[i], lb[i], depth + 1)) return false;
          }
          return true;
        } else if constexpr (std::is_same_v<T, MapRef>) {
          if (x.id == y.id) return true;
          const auto& ma = std::get<MapObject>(state_.object(x.id)).entries;
          const auto& mb = std::get<MapObject>(state_.object(y.id)).entries;
          if (ma.size() != mb.size()) return false;
          for (auto ia = ma.begin(), ib = mb.begin(); ia != ma.end(); ++ia, ++ib) {
            if (ia->first != ib->first || !equal(ia->second.second, ib->second.second, depth + 1)) return false;
          }
          return true;
        } else if constexpr (std::is_same_v<T, Handle>) {
          return x.uri == y.uri;
        } else if constexpr (std::is_same_v<T, FnVal>) {
          return x.name == y.name && x.source == y.source;
        } else if constexpr (std::is_same_v<T, TaskRef>) {
          return x.task_id == y.task_id;
        }
      },
      a);
}

int Interpreter::compare(const Value& a, const Value& b) const {
  if (is_number(a) && is_number(b)) {
    if (std::holds_alternative<std::int64_t>(a) && std::holds_alternative<std::int64_t>(b)) {
      auto x = std::get<std::int64_t>(a), y = std::get<std::int64_t>(b);
      return x < y ? -1 : (x > y ? 1 : 0);
    }
    double x = as_double(a), y = as_double(b);
    return x < y ? -1 : (x > y ? 1 : 0);
  }
  if (std::holds_alternative<std::string>(a) && std::holds_alternative<std::string>(b)) {
    int c = std::get<std::string>(a).compare(std::get<std::string>(b));
    return c < 0 ? -1 : (c > 0 ? 1 : 0);
  }
  throw EvalError(std::string("cannot order ") + kind_name(a) + " and " + kind_name(b));
}

Value Interpreter::binary(BinaryOp op, const Value& a, const Value& b) {
  switch (op) {
    case BinaryOp::Add:
    case BinaryOp::Sub:
    case BinaryOp::Mul: {
      if (!is_number(a) || !is_number(b)) {
        throw EvalError(std::string("operator ") + to_string(op) + ": expected numbers, got " + kind_name(a) + " and " +
                        kind_name(b));
      }
      if (std::holds_alternative<std::int64_t>(a) && std::holds_alternative<std::int64_t>(b)) {
        std::int64_t x = std::get<std::int64_t>(a), y = std::get<std::int64_t>(b), r = 0;
        bool of = op == BinaryOp::Add   ? __builtin_add_overflow(x, y, &r)
                  : op == BinaryOp::Sub ? __builtin_sub_overflow(x, y, &r)
                                        : __builtin_mul_overflow(x, y, &r);
        return checked(of, r);
      }
      double x = as_double(a), y = as_double(b);
      return op == BinaryOp::Add ? x + y : op == BinaryOp::Sub ? x - y : x * y;
    }
    case BinaryOp::Div: {
      if (!is_number(a) || !is_number(b)) {
        throw EvalError(std::string("operator Div: expected numbers, got ") + kind_name(a) + " and " + kind_name(b));
      }
      if (std::holds_alternative<std::int64_t>(a) && std::holds_alternative<std::int64_t>(b)) {
        std::int64_t x = std::get<std::int64_t>(a), y = std::get<std::int64_t>(b);
        if (y == 0) throw EvalError("division by zero");
        if (x == INT64_MIN && y == -1) throw EvalError("integer overflow");
        return x / y;
      }
      double y = as_double(b);
      if (y == 0.0) throw EvalError("division by zero");
      return as_double(a) / y;
    }
    case BinaryOp::Mod: {
      std::int64_t x = as_int(a, "operator Mod"), y = as_int(b, "operator Mod");
      if (y == 0) throw EvalError("division by zero");
      if (x == INT64_MIN && y == -1) return std::int64_t{0};
      return x % y;
    }
    case BinaryOp::Concat: {
      if (std::holds_alternative<std::string>(a) && std::holds_alternative<std::string>(b)) {
        return std::get<std::string>(a) + std::get<std::string>(b);
      }
      if (std::holds_alternative<ListRef>(a) && std::holds_alternative<ListRef>(b)) {
        std::vector<Value> items = list_of(a, "++").items;
        const auto& tail = list_of(b, "++").items;
        items.insert(items.end(), tail.begin(), tail.end());
        return make_list(std::move(items));
      }
      throw EvalError(std::string("operator ++: expected two strings or two lists, got ") + kind_name(a) + " and " +
                      kind_name(b));
    }
    case BinaryOp::Eq: return equal(a, b);
    case BinaryOp::Ne: return !equal(a, b);
    case BinaryOp::Lt: return compare(a, b) < 0;
    case BinaryOp::Gt: return compare(a, b) > 0;
    case BinaryOp::Le: return compare(a, b) <= 0;
    case BinaryOp::Ge: return compare(a, b) >= 0;
  }
  throw EvalError("unknown operator");
}

Value Interpreter::call_builtin(const std::string& name, std::vector<Value> args) {
  if (name == "read_text") {
    arity(name, args, 1, 1);
    auto path = resolve(as_string(args[0], name));
    std::ifstream in(path, std::ios::binary);
    if (!in) throw EvalError("read_text: cannot read '" + as_string(args[0], name) + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }
  if (name == "write_text") {
    arity(name, args, 2, 2);
    const std::string& rel = as_string(args[0], name);
    auto path = resolve(rel);
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    const std::string& text = as_string(args[1], name);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw EvalError("write_text: cannot write '" + rel + "'");
    return normalize_workspace_path(rel);
  }
  if (name == "lines") {
    arity(name, args, 1, 1);
    const std::string& s = as_string(args[0], name);
    std::vector<Value> out;
    std::size_t start = 0;
    while (start < s.size()) {
      std::size_t nl = s.find('\n', start);
      if (nl == std::string::npos) nl = s.size();
      std::string line = s.substr(start, nl - start);
      if (!line.empty() && line.back() == '\r') line.pop_back();
      out.emplace_back(std::move(line));
      start = nl + 1;
    }
    return make_list(std::move(out));
  }
  if (name == "split") {
    arity(name, args, 2, 2);
    const std::string& s = as_string(args[0], name);
    const std::string& sep = as_string(args[1], name);
    if (sep.empty()) throw EvalError("split: empty separator");
    std::vector<Value> out;
    std::size_t start = 0;
    while (true) {
      std::size_t at = s.find(sep, start);
      if (at == std::string::npos) {
        out.emplace_back(s.substr(start));
        break;
      }
      out.emplace_back(s.substr(start, at - start));
      start = at + sep.size();
    }
    return make_list(std::move(out));
  }
  if (name == "words") {
    arity(name, args, 1, 1);
    std::istringstream in(as_string(args[0], name));
    std::vector<Value> out;
    std::string w;
    while (in >> w) out.emplace_back(w);
    return make_list(std::move(out));
  }
  if (name == "len") {
    arity(name, args, 1, 1);
    if (const auto* s = std::get_if<std::string>(&args[0])) return static_cast<std::int64_t>(s->size());
    if (std::holds_alternative<ListRef>(args[0])) return static_cast<std::int64_t>(list_of(args[0], "len").items.size());
    if (std::holds_alternative<MapRef>(args[0])) return static_cast<std::int64_t>(map_of(args[0], "len").entries.size());
    type_error(name, "string, list or map", args[0]);
  }
  if (name == "sum") {
    arity(name, args, 1, 1);
    Value acc = std::int64_t{0};
    for (const auto& item : list_of(args[0], "sum").items) {
      if (!is_number(item)) type_error(name, "list of numbers", item);
      acc = binary(BinaryOp::Add, acc, item);
    }
    return acc;
  }
  if (name == "upper") {
    arity(name, args, 1, 1);
    std::string s = as_string(args[0], name);
    for (auto& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    return s;
  }
  if (name == "show") {
    arity(name, args, 1, 1);
    state_.stdout_buffer() += render(state_, args[0]) + "\n";
    return Unit{};
  }
  if (name == "str") {
    arity(name, args, 1, 1);
    return render(state_, args[0]);
  }
  if (name == "connect") {
    arity(name, args, 1, 1);
    return Handle{as_string(args[0], name), current_ ? *current_ : StmtRef{}};
  }
  if (name == "task_cmd" || name == "task_fn") {
    if (!sink_) throw EvalError(name + ": task submission is not available in this context");
    TaskSpec spec;
    if (name == "task_cmd") {
      arity(name, args, 3, 3);
      spec.kind = TaskKind::Command;
      spec.command = as_string(args[0], name);
      spec.inputs = string_list(args[1], "task_cmd inputs");
      spec.outputs = string_list(args[2], "task_cmd outputs");
      if (spec.outputs.empty()) throw EvalError("task_cmd: a command task must declare at least one output");
    } else {
      arity(name, args, 4, 4);
      spec.kind = TaskKind::Function;
      spec.fname = as_string(args[0], name);
      if (!state_.function(spec.fname)) throw EvalError("task_fn: unknown function '" + spec.fname + "'");
      Datum argd;
      try {
        argd = to_datum(state_, args[1], nullptr, ToDatumOptions{true});
      } catch (const SerializationError& e) {
        throw EvalError(std::string("task_fn: arguments must be serializable: ") + e.what());
      }
      if (argd.kind != Datum::Kind::List) type_error("task_fn arguments", "list", args[1]);
      spec.args = std::move(argd.items);
      spec.inputs = string_list(args[2], "task_fn inputs");
      spec.outputs = string_list(args[3], "task_fn outputs");
      std::set<std::string> roots{spec.fname};
      std::vector<const Datum*> stack;
      for (const auto& a : spec.args) stack.push_back(&a);
      while (!stack.empty()) {
        const Datum* d = stack.back();
        stack.pop_back();
        if (d->kind == Datum::Kind::Fn) roots.insert(d->s);
        for (const auto& i : d->items) stack.push_back(&i);
        for (const auto& [k, v] : d->entries) stack.push_back(&v);
      }
      spec.fn_sources = function_closure(roots);
    }
    try {
      for (auto& p : spec.inputs) p = normalize_workspace_path(p);
      for (auto& p : spec.outputs) p = normalize_workspace_path(p);
    } catch (const SpecError& e) {
      throw EvalError(name + ": " + e.what());
    }
    std::string id = sink_->register_task(std::move(spec));
    if (result_) result_->tasks_submitted.push_back(id);
    return TaskRef{id, current_ ? *current_ : StmtRef{}};
  }
  if (name == "compute") {
    arity(name, args, 1, 1);
    if (!sink_) throw EvalError("compute: task execution is not available in this context");
    std::vector<std::string> ids;
    bool single = false;
    if (const auto* t = std::get_if<TaskRef>(&args[0])) {
      ids.push_back(t->task_id);
      single = true;
    } else if (std::holds_alternative<ListRef>(args[0])) {
      for (const auto& item : list_of(args[0], "compute").items) {
        const auto* t = std::get_if<TaskRef>(&item);
        if (!t) type_error(name, "task reference or list of task references", item);
        ids.push_back(t->task_id);
      }
    } else {
      type_error(name, "task reference or list of task references", args[0]);
    }
    std::vector<Datum> results = sink_->compute(ids);
    if (single) return materialize(state_, results.at(0));
    std::vector<Value> out;
    out.reserve(results.size());
    for (const auto& r : results) out.push_back(materialize(state_, r));
    return make_list(std::move(out));
  }
  if (name == "join") {
    arity(name, args, 2, 2);
    const std::string& sep = as_string(args[1], name);
    std::string out;
    bool first = true;
    for (const auto& s : string_list(args[0], "join")) {
      if (!first) out += sep;
      first = false;
      out += s;
    }
    return out;
  }
  if (name == "keys" || name == "values") {
    arity(name, args, 1, 1);
    std::vector<Value> out;
    for (const auto& [_, kv] : map_of(args[0], name.c_str()).entries) out.push_back(name == "keys" ? kv.first : kv.second);
    return make_list(std::move(out));
  }
  if (name == "get") {
    arity(name, args, 2, 3);
    if (args.size() == 3) {
      if (const auto* m = std::get_if<MapRef>(&args[0])) {
        const auto& entries = std::get<MapObject>(state_.object(m->id)).entries;
        auto it = entries.find(encode_key(args[1]));
        return it == entries.end() ? args[2] : it->second.second;
      }
      if (const auto* l = std::get_if<ListRef>(&args[0])) {
        const auto& items = std::get<ListObject>(state_.object(l->id)).items;
        std::int64_t i = as_int(args[1], name);
        return (i < 0 || static_cast<std::size_t>(i) >= items.size()) ? args[2] : items[static_cast<std::size_t>(i)];
      }
    }
    return index_read(args[0], args[1]);
  }
  if (name == "range") {
    arity(name, args, 1, 2);
    std::int64_t lo = args.size() == 2 ? as_int(args[0], name) : 0;
    std::int64_t hi = as_int(args.back(), name);
    if (hi > lo && hi - lo > kMaxRange) throw EvalError("range: too many elements");
    std::vector<Value> out;
    for (std::int64_t i = lo; i < hi; ++i) out.emplace_back(i);
    return make_list(std::move(out));
  }
  if (name == "map" || name == "filter") {
    arity(name, args, 2, SIZE_MAX);
    const auto* fn = std::get_if<FnVal>(&args[0]);
    if (!fn) type_error(name, "function", args[0]);
    FnVal f = *fn;
    std::vector<Value> items = list_of(args[1], name.c_str()).items;
    std::vector<Value> out;
    for (auto& item : items) {
      std::vector<Value> call_args{item};
      for (std::size_t i = 2; i < args.size(); ++i) call_args.push_back(args[i]);
      Value r = call_function(f, std::move(call_args));
      if (name == "map") {
        out.push_back(std::move(r));
      } else {
        const auto* keep = std::get_if<bool>(&r);
        if (!keep) type_error("filter predicate", "bool", r);
        if (*keep) out.push_back(item);
      }
    }
    return make_list(std::move(out));
  }
  if (name == "fold") {
    arity(name, args, 3, 3);
    const auto* fn = std::get_if<FnVal>(&args[0]);
    if (!fn) type_error(name, "function", args[0]);
    FnVal f = *fn;
    Value acc = args[1];
    std::vector<Value> items = list_of(args[2], "fold").items;
    for (auto& item : items) acc = call_function(f, {acc, item});
    return acc;
  }
  if (name == "tally") {
    arity(name, args, 1, 1);
    MapObject m;
    for (const auto& item : list_of(args[0], "tally").items) {
      std::string ek = encode_key(item);
      auto it = m.entries.find(ek);
      if (it == m.entries.end()) {
        m.entries.emplace(ek, std::pair<Value, Value>{item, std::int64_t{1}});
      } else {
        it->second.second = std::get<std::int64_t>(it->second.second) + 1;
      }
    }
    return MapRef{state_.alloc(std::move(m))};
  }
  if (name == "merge_sum") {
    arity(name, args, 1, 1);
    MapObject m;
    for (const auto& part : list_of(args[0], "merge_sum").items) {
      for (const auto& [ek, kv] : map_of(part, "merge_sum").entries) {
        if (!is_number(kv.second)) type_error(name, "maps of numbers", kv.second);
        auto it = m.entries.find(ek);
        if (it == m.entries.end()) {
          m.entries.emplace(ek, kv);
        } else {
          it->second.second = binary(BinaryOp::Add, it->second.second, kv.second);
        }
      }
    }
    return MapRef{state_.alloc(std::move(m))};
  }
  if (name == "float") {
    arity(name, args, 1, 1);
    if (is_number(args[0])) return as_double(args[0]);
    const std::string& s = as_string(args[0], name);
    double v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) {
      throw EvalError("float: cannot parse '" + s + "'");
    }
    return v;
  }
  if (name == "int") {
    arity(name, args, 1, 1);
    if (const auto* i = std::get_if<std::int64_t>(&args[0])) return *i;
    if (const auto* f = std::get_if<double>(&args[0])) {
      if (!std::isfinite(*f) || std::fabs(*f) >= 9.2e18) throw EvalError("int: value out of range");
      return static_cast<std::int64_t>(*f);
    }
    const std::string& s = as_string(args[0], name);
    std::int64_t v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) {
      throw EvalError("int: cannot parse '" + s + "'");
    }
    return v;
  }
  if (name == "min" || name == "max") {
    arity(name, args, 1, 1);
    const auto& items = list_of(args[0], name.c_str()).items;
    if (items.empty()) throw EvalError(name + ": empty list");
    Value best = items[0];
    for (std::size_t i = 1; i < items.size(); ++i) {
      int c = compare(items[i], best);
      if ((name == "min" && c < 0) || (name == "max" && c > 0)) best = items[i];
    }
    return best;
  }
  if (name == "sort") {
    arity(name, args, 1, 1);
    std::vector<Value> items = list_of(args[0], "sort").items;
    std::stable_sort(items.begin(), items.end(), [&](const Value& a, const Value& b) { return compare(a, b) < 0; });
    return make_list(std::move(items));
  }
  if (name == "slice") {
    arity(name, args, 3, 3);
    std::int64_t lo = as_int(args[1], name), hi = as_int(args[2], name);
    auto clamp = [](std::int64_t v, std::size_t n) {
      return static_cast<std::size_t>(std::clamp<std::int64_t>(v, 0, static_cast<std::int64_t>(n)));
    };
    if (const auto* s = std::get_if<std::string>(&args[0])) {
      std::size_t a = clamp(lo, s->size()), b = clamp(hi, s->size());
      return b > a ? s->substr(a, b - a) : std::string{};
    }
    const auto& items = list_of(args[0], "slice").items;
    std::size_t a = clamp(lo, items.size()), b = clamp(hi, items.size());
    return make_list(b > a ? std::vector<Value>(items.begin() + a, items.begin() + b) : std::vector<Value>{});
  }
  if (name == "abs") {
    arity(name, args, 1, 1);
    if (const auto* i = std::get_if<std::int64_t>(&args[0])) {
      if (*i == INT64_MIN) throw EvalError("integer overflow");
      return *i < 0 ? -*i : *i;
    }
    if (const auto* f = std::get_if<double>(&args[0])) return std::fabs(*f);
    type_error(name, "number", args[0]);
  }
  throw EvalError("unknown builtin '" + name + "'");
}

}  // namespace nbreplay
