#include "nbreplay/notebook.hpp"

#include <fstream>
#include <json.hpp>
#include <set>
#include <sstream>

#include "nbreplay/digest.hpp"
#include "nbreplay/errors.hpp"

namespace nbreplay {

using json = nlohmann::json;

const Cell* Notebook::find(std::string_view id) const {
  for (const auto& c : cells) {
    if (c.id == id) return &c;
  }
  return nullptr;
}

Notebook parse_notebook(std::string_view bytes) {
  json doc;
  try {
    doc = json::parse(bytes);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("notebook is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw FormatError("notebook: top level must be an object");
  if (!doc.contains("version") || !doc["version"].is_number_integer()) {
    throw FormatError("notebook: field 'version' missing or not an integer");
  }
  Notebook nb;
  nb.version = doc["version"].get<int>();
  if (nb.version != 1) throw FormatError("notebook: unsupported version " + std::to_string(nb.version));
  if (!doc.contains("cells") || !doc["cells"].is_array()) {
    throw FormatError("notebook: field 'cells' missing or not an array");
  }
  std::set<std::string> seen;
  std::size_t index = 0;
  for (const auto& c : doc["cells"]) {
    const std::string where = "notebook: cells[" + std::to_string(index) + "]";
    if (!c.is_object()) throw FormatError(where + " is not an object");
    if (!c.contains("id") || !c["id"].is_string()) throw FormatError(where + ": field 'id' missing or not a string");
    if (!c.contains("code") || !c["code"].is_string()) {
      throw FormatError(where + ": field 'code' missing or not a string");
    }
    Cell cell{c["id"].get<std::string>(), c["code"].get<std::string>()};
    if (cell.id.empty()) throw ValidationError(where + ": empty cell id");
    if (!seen.insert(cell.id).second) throw ValidationError("notebook: duplicate cell id '" + cell.id + "'");
    nb.cells.push_back(std::move(cell));
    ++index;
  }
  return nb;
}

Notebook load_notebook(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read notebook '" + path + "'", path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_notebook(ss.str());
}

std::string notebook_to_json(const Notebook& nb) {
  json cells = json::array();
  for (const auto& c : nb.cells) cells.push_back({{"id", c.id}, {"code", c.code}});
  json doc = {{"version", nb.version}, {"cells", std::move(cells)}};
  return doc.dump(1);
}

std::string normalize_code(std::string_view code) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (true) {
    std::size_t nl = code.find('\n', start);
    std::string_view line = code.substr(start, nl == std::string_view::npos ? std::string_view::npos : nl - start);
    std::size_t end = line.find_last_not_of(" \t\r\f\v");
    lines.push_back(end == std::string_view::npos ? std::string_view{} : line.substr(0, end + 1));
    if (nl == std::string_view::npos) break;
    start = nl + 1;
  }
  while (!lines.empty() && lines.back().empty()) lines.pop_back();
  std::string out;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (i) out.push_back('\n');
    out.append(lines[i]);
  }
  return out;
}

std::string cell_code_hash(std::string_view code) { return sha256_hex(normalize_code(code)); }

}  // namespace nbreplay
