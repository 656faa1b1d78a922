#include "nbreplay/analysis.hpp"

#include <vector>

namespace nbreplay {

namespace {

// Appends global references in evaluation order.
void collect(const Expr& e, std::vector<std::string>& out) {
  std::visit(
      [&](const auto& n) {
        using T = std::decay_t<decltype(n)>;
        if constexpr (std::is_same_v<T, NameRef>) {
          if (n.cls == NameClass::Global) out.push_back(n.name);
        } else if constexpr (std::is_same_v<T, ListLit>) {
          for (const auto& item : n.items) collect(*item, out);
        } else if constexpr (std::is_same_v<T, MapLit>) {
          for (const auto& [k, v] : n.entries) {
            collect(*k, out);
            collect(*v, out);
          }
        } else if constexpr (std::is_same_v<T, Binary>) {
          collect(*n.lhs, out);
          collect(*n.rhs, out);
        } else if constexpr (std::is_same_v<T, Negate>) {
          collect(*n.operand, out);
        } else if constexpr (std::is_same_v<T, Index>) {
          collect(*n.target, out);
          collect(*n.key, out);
        } else if constexpr (std::is_same_v<T, Call>) {
          if (n.cls == NameClass::Global) out.push_back(n.callee);
          // task_fn("name", ...) names a user function by string.
          if (n.cls == NameClass::Builtin && n.callee == "task_fn" && !n.args.empty()) {
            if (const auto* lit = std::get_if<StringLit>(&n.args[0]->node)) out.push_back(lit->value);
          }
          for (const auto& a : n.args) collect(*a, out);
        }
      },
      e.node);
}

}  // namespace

RWInfo analyze_rw(const CellAST& ast) {
  RWInfo info;
  NameSet bound_here;
  auto read = [&](const std::string& name) {
    info.reads.insert(name);
    if (!bound_here.count(name)) info.external_reads.insert(name);
  };
  for (const auto& st : ast.statements) {
    std::vector<std::string> refs;
    std::visit(
        [&](const auto& n) {
          using T = std::decay_t<decltype(n)>;
          if constexpr (std::is_same_v<T, Assign>) {
            collect(*n.value, refs);
            for (const auto& r : refs) read(r);
            info.writes.insert(n.target);
            bound_here.insert(n.target);
          } else if constexpr (std::is_same_v<T, IndexSet>) {
            collect(*n.key, refs);
            collect(*n.value, refs);
            read(n.target);
            for (const auto& r : refs) read(r);
            info.writes.insert(n.target);
          } else if constexpr (std::is_same_v<T, Push>) {
            collect(*n.value, refs);
            read(n.target);
            for (const auto& r : refs) read(r);
            info.writes.insert(n.target);
          } else if constexpr (std::is_same_v<T, FnDef>) {
            info.defs.insert(n.name);
            bound_here.insert(n.name);
          } else if constexpr (std::is_same_v<T, ExprStmt>) {
            collect(*n.expr, refs);
            for (const auto& r : refs) read(r);
          }
        },
        st.node);
  }
  return info;
}

NameSet statement_reads(const Statement& st) {
  std::vector<std::string> refs;
  std::visit(
      [&](const auto& n) {
        using T = std::decay_t<decltype(n)>;
        if constexpr (std::is_same_v<T, Assign>) {
          collect(*n.value, refs);
        } else if constexpr (std::is_same_v<T, IndexSet>) {
          refs.push_back(n.target);
          collect(*n.key, refs);
          collect(*n.value, refs);
        } else if constexpr (std::is_same_v<T, Push>) {
          refs.push_back(n.target);
          collect(*n.value, refs);
        } else if constexpr (std::is_same_v<T, ExprStmt>) {
          collect(*n.expr, refs);
        }
      },
      st.node);
  return NameSet(refs.begin(), refs.end());
}

NameSet function_refs(const FnDef& def) {
  std::vector<std::string> refs;
  collect(*def.body, refs);
  return NameSet(refs.begin(), refs.end());
}

}  // namespace nbreplay
