#include "doctest.h"
#include "helpers.hpp"
#include "nbreplay/analysis.hpp"
#include "nbreplay/digest.hpp"
#include "nbreplay/errors.hpp"
#include "nbreplay/notebook.hpp"

using namespace nbreplay;

TEST_CASE("sha256 golden digests") {
  CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(sha256_hex("x = 1") == "8ff436def1451285599a1b1ad70800493b8dcafde2912e1a38345633054e4c26");
  CHECK(cell_code_hash("x = 1  \n\n") == "8ff436def1451285599a1b1ad70800493b8dcafde2912e1a38345633054e4c26");
}

TEST_CASE("streamed file digest matches golden for a 1 MiB file") {
  test::TempDir dir;
  std::string data(1 << 20, '\0');
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = static_cast<char>((i * 31 + 7) % 251);
  test::write_file(dir / "big.bin", data);
  CHECK(sha256_file_hex(dir / "big.bin") == "1c59b8670027384143781a8a8bff2f3b44bd8818d0f53b13b064c2375a1afe38");
  Sha256 h;
  h.update(data.substr(0, 1000)).update(data.substr(1000));
  CHECK(h.hex_digest() == sha256_hex(data));
  CHECK_THROWS_AS(sha256_file_hex(dir / "missing"), InputError);
}

TEST_CASE("notebook parsing") {
  std::string doc = R"({"version":1,"cells":[)";
  for (int i = 0; i < 11; ++i) doc += std::string(i ? "," : "") + R"({"id":"c)" + std::to_string(i) + R"(","code":"x = 1"})";
  doc += "]}";
  Notebook nb = parse_notebook(doc);
  REQUIRE(nb.cells.size() == 11);
  for (int i = 0; i < 11; ++i) CHECK(nb.cells[i].id == "c" + std::to_string(i));
  CHECK(parse_notebook(notebook_to_json(nb)).cells.size() == 11);

  CHECK(parse_notebook(R"({"version":1,"cells":[]})").cells.empty());
  CHECK_THROWS_AS(parse_notebook(R"({"version":1,"cells":[{"id":"a","code":""},{"id":"a","code":""}]})"),
                  ValidationError);
  CHECK_THROWS_AS(parse_notebook(R"({"cells":[]})"), FormatError);
  CHECK_THROWS_AS(parse_notebook("not json"), FormatError);
  CHECK_THROWS_AS(parse_notebook(R"({"version":1,"cells":[{"id":"a"}]})"), FormatError);
}

TEST_CASE("code normalization ignores trailing whitespace only") {
  CHECK(normalize_code("a = 1   \nb = 2\t\n\n\n") == "a = 1\nb = 2");
  CHECK(cell_code_hash("a = 1") != cell_code_hash("a  = 1"));
}

TEST_CASE("parser reports positions") {
  try {
    parse_cell("x = 1\ny = (2 +\n");
    FAIL("expected SyntaxError");
  } catch (const SyntaxError& e) {
    CHECK(e.line() >= 2);
  }
  CHECK_THROWS_AS(parse_cell("len = 3"), SyntaxError);
  CHECK_THROWS_AS(parse_cell("x = \"unterminated"), SyntaxError);
  CHECK_NOTHROW(parse_cell("# comment only\n"));
}

namespace {
RWInfo rw(const std::string& code) { return analyze_rw(parse_cell(code)); }
}  // namespace

TEST_CASE("read/write sets of the connect example") {
  RWInfo r = rw("client = connect(\"local\")\nddf = read_text(\"d.csv\")\ndf = lines(ddf)\nraw_df = df");
  CHECK(r.writes == NameSet{"client", "ddf", "df", "raw_df"});
  CHECK(r.reads == NameSet{"ddf", "df"});
  CHECK(r.external_reads.empty());
}

TEST_CASE("read/write truth table over statement kinds") {
  struct Row {
    const char* code;
    NameSet reads, writes, defs, external;
  };
  const Row rows[] = {
      {"x = 1", {}, {"x"}, {}, {}},
      {"x = y + 1", {"y"}, {"x"}, {}, {"y"}},
      {"push(acc, v)", {"acc", "v"}, {"acc"}, {}, {"acc", "v"}},
      {"m[k] = v", {"m", "k", "v"}, {"m"}, {}, {"m", "k", "v"}},
      {"show(a)", {"a"}, {}, {}, {"a"}},
      {"fn f(p) = p + g(q)", {}, {}, {"f"}, {}},
      {"y = f(x)", {"f", "x"}, {"y"}, {}, {"f", "x"}},
      {"x = 1\ny = x", {"x"}, {"x", "y"}, {}, {}},
      {"y = x\nx = 2", {"x"}, {"x", "y"}, {}, {"x"}},
      {"t = task_fn(\"work\", [a], [], [])", {"a", "work"}, {"t"}, {}, {"a", "work"}},
      {"x = x + 1", {"x"}, {"x"}, {}, {"x"}},
  };
  for (const auto& row : rows) {
    CAPTURE(row.code);
    RWInfo r = rw(row.code);
    CHECK(r.reads == row.reads);
    CHECK(r.writes == row.writes);
    CHECK(r.defs == row.defs);
    CHECK(r.external_reads == row.external);
  }
}

TEST_CASE("function references include task_fn literals") {
  CellAST ast = parse_cell("fn submit(p) = task_fn(\"count\", [p, other], [p], [])");
  const auto* def = std::get_if<FnDef>(&ast.statements.at(0).node);
  REQUIRE(def);
  CHECK(function_refs(*def) == NameSet{"count", "other"});
}

// Random straight-line programs: running a cell in a state that only binds its
// external reads gives the same result as running it in the full state.
TEST_CASE("external reads are a sound over-approximation of the values a cell needs") {
  std::mt19937 rng(7);
  const char* names[] = {"a", "b", "c", "d", "e"};
  for (int trial = 0; trial < 300; ++trial) {
    std::string prelude = "a = 1\nb = [2]\nc = 3\nd = [4, 5]\ne = 6";
    std::string cell;
    int n = 1 + static_cast<int>(rng() % 5);
    for (int i = 0; i < n; ++i) {
      const char* dst = names[rng() % 5];
      const char* src = names[rng() % 5];
      const char* src2 = names[rng() % 5];
      switch (rng() % 4) {
        case 0: cell += std::string(dst) + " = " + src + "\n"; break;
        case 1: cell += std::string(dst) + " = [" + src + ", " + src2 + "]\n"; break;
        case 2: cell += std::string("show(") + src + ")\n"; break;
        default: cell += std::string(dst) + " = len(str(" + src + "))\n"; break;
      }
    }
    CAPTURE(cell);
    RWInfo r = rw(cell);
    test::Kernel full;
    full.run(prelude);
    auto full_res = full.run(cell);

    test::Kernel minimal;
    minimal.run(prelude);
    for (const char* name : names) {
      if (!r.external_reads.count(name)) minimal.state.unbind(name);
    }
    ExecResult min_res;
    CHECK_NOTHROW(min_res = minimal.run(cell));
    CHECK(min_res.stdout_text == full_res.stdout_text);
    for (const auto& w : r.writes) CHECK(minimal.show(w) == full.show(w));
    for (const auto& w : full_res.writes_observed) CHECK(r.writes.count(w));
  }
}
