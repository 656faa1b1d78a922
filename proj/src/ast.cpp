#include "nbreplay/ast.hpp"

#include "nbreplay/value.hpp"

namespace nbreplay {

const char* to_string(BinaryOp op) {
  switch (op) {
    case BinaryOp::Add: return "Add";
    case BinaryOp::Sub: return "Sub";
    case BinaryOp::Mul: return "Mul";
    case BinaryOp::Div: return "Div";
    case BinaryOp::Mod: return "Mod";
    case BinaryOp::Eq: return "Eq";
    case BinaryOp::Ne: return "Ne";
    case BinaryOp::Lt: return "Lt";
    case BinaryOp::Gt: return "Gt";
    case BinaryOp::Le: return "Le";
    case BinaryOp::Ge: return "Ge";
    case BinaryOp::Concat: return "Concat";
  }
  return "?";
}

namespace {

std::string join_exprs(const std::vector<ExprPtr>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += ", ";
    out += to_string(*items[i]);
  }
  return out;
}

struct ExprPrinter {
  std::string operator()(const IntLit& n) const { return std::to_string(n.value); }
  std::string operator()(const FloatLit& n) const { return format_float(n.value); }
  std::string operator()(const StringLit& n) const { return quote_string(n.value); }
  std::string operator()(const BoolLit& n) const { return n.value ? "true" : "false"; }
  std::string operator()(const NameRef& n) const { return n.name; }
  std::string operator()(const ListLit& n) const { return "List(" + join_exprs(n.items) + ")"; }
  std::string operator()(const MapLit& n) const {
    std::string out = "Map(";
    for (std::size_t i = 0; i < n.entries.size(); ++i) {
      if (i) out += ", ";
      out += to_string(*n.entries[i].first) + ": " + to_string(*n.entries[i].second);
    }
    return out + ")";
  }
  std::string operator()(const Binary& n) const {
    return std::string(to_string(n.op)) + "(" + to_string(*n.lhs) + ", " + to_string(*n.rhs) + ")";
  }
  std::string operator()(const Negate& n) const { return "Neg(" + to_string(*n.operand) + ")"; }
  std::string operator()(const Call& n) const { return "Call(" + n.callee + (n.args.empty() ? "" : ", ") + join_exprs(n.args) + ")"; }
  std::string operator()(const Index& n) const { return "Index(" + to_string(*n.target) + ", " + to_string(*n.key) + ")"; }
};

struct StmtPrinter {
  std::string operator()(const Assign& s) const { return "Assign(" + s.target + ", " + to_string(*s.value) + ")"; }
  std::string operator()(const IndexSet& s) const {
    return "IndexSet(" + s.target + ", " + to_string(*s.key) + ", " + to_string(*s.value) + ")";
  }
  std::string operator()(const Push& s) const { return "Push(" + s.target + ", " + to_string(*s.value) + ")"; }
  std::string operator()(const FnDef& s) const {
    std::string params;
    for (std::size_t i = 0; i < s.params.size(); ++i) params += (i ? ", " : "") + s.params[i];
    return "FnDef(" + s.name + ", [" + params + "], " + to_string(*s.body) + ")";
  }
  std::string operator()(const ExprStmt& s) const { return "Expr(" + to_string(*s.expr) + ")"; }
};

}  // namespace

std::string to_string(const Expr& e) { return std::visit(ExprPrinter{}, e.node); }
std::string to_string(const Statement& s) { return std::visit(StmtPrinter{}, s.node); }

}  // namespace nbreplay
