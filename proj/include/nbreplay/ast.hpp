#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace nbreplay {

struct Span {
  int line = 1;
  int column = 1;
  std::size_t offset = 0;
  std::size_t length = 0;
};

enum class NameClass { Builtin, Param, Global };

enum class BinaryOp { Add, Sub, Mul, Div, Mod, Eq, Ne, Lt, Gt, Le, Ge, Concat };

const char* to_string(BinaryOp op);

struct Expr;
using ExprPtr = std::shared_ptr<const Expr>;

struct IntLit {
  std::int64_t value;
};
struct FloatLit {
  double value;
};
struct StringLit {
  std::string value;
};
struct BoolLit {
  bool value;
};
struct NameRef {
  std::string name;
  NameClass cls;
};
struct ListLit {
  std::vector<ExprPtr> items;
};
struct MapLit {
  std::vector<std::pair<ExprPtr, ExprPtr>> entries;
};
struct Binary {
  BinaryOp op;
  ExprPtr lhs;
  ExprPtr rhs;
};
struct Negate {
  ExprPtr operand;
};
struct Call {
  std::string callee;
  NameClass cls;
  std::vector<ExprPtr> args;
};
struct Index {
  ExprPtr target;
  ExprPtr key;
};

struct Expr {
  std::variant<IntLit, FloatLit, StringLit, BoolLit, NameRef, ListLit, MapLit, Binary, Negate, Call, Index> node;
  Span span;
};

struct Assign {
  std::string target;
  ExprPtr value;
};
struct IndexSet {
  std::string target;
  ExprPtr key;
  ExprPtr value;
};
struct Push {
  std::string target;
  ExprPtr value;
};
struct FnDef {
  std::string name;
  std::vector<std::string> params;
  ExprPtr body;
};
struct ExprStmt {
  ExprPtr expr;
};

struct Statement {
  std::variant<Assign, IndexSet, Push, FnDef, ExprStmt> node;
  Span span;
  std::string source;
};

struct CellAST {
  std::vector<Statement> statements;
};

// Compact s-expression rendering, used by tests and diagnostics.
std::string to_string(const Expr& e);
std::string to_string(const Statement& s);

}  // namespace nbreplay
