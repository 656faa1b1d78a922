#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "nbreplay/ast.hpp"

namespace nbreplay {

// Names reserved by the cell language's builtin library.
const std::vector<std::string>& builtin_names();
bool is_builtin(std::string_view name);

// Parses a cell. Throws SyntaxError carrying the 1-based line/column of the problem.
CellAST parse_cell(std::string_view code);

// Parses the source of a single `fn` definition (as stored in function tables).
FnDef parse_function_source(std::string_view source);

}  // namespace nbreplay
