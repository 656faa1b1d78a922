#pragma once

#include <set>
#include <string>

#include "nbreplay/ast.hpp"

namespace nbreplay {

using NameSet = std::set<std::string>;

// Static read/write sets of a cell.
//
// `reads` holds every global name the cell references (including mutation
// targets and function names), so a name that is written and later read shows
// up in both sets. `external_reads` is the read-before-write subset: the names
// whose values flow in from earlier cells. Builtins never appear.
struct RWInfo {
  NameSet reads;
  NameSet writes;
  NameSet defs;
  NameSet external_reads;
};

RWInfo analyze_rw(const CellAST& ast);

// Global names read by one statement (the dependencies of the value it binds).
NameSet statement_reads(const Statement& st);

// Global names a function body refers to: non-parameter names and calls, plus
// function names passed as string literals to task_fn.
NameSet function_refs(const FnDef& def);

}  // namespace nbreplay
