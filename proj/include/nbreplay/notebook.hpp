#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace nbreplay {

struct Cell {
  std::string id;
  std::string code;
};

struct Notebook {
  int version = 1;
  std::vector<Cell> cells;

  const Cell* find(std::string_view id) const;
};

// Parses `{"version":1,"cells":[{"id":..,"code":..},...]}`.
// Throws FormatError for a malformed document and ValidationError for duplicate ids.
Notebook parse_notebook(std::string_view bytes);
Notebook load_notebook(const std::string& path);
std::string notebook_to_json(const Notebook& nb);

// Right-trims every line, joins with '\n' and drops trailing blank lines.
std::string normalize_code(std::string_view code);

// SHA-256 hex of normalize_code(code).
std::string cell_code_hash(std::string_view code);

}  // namespace nbreplay
