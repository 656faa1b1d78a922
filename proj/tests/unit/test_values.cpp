#include <algorithm>

#include "doctest.h"
#include "helpers.hpp"
#include "nbreplay/errors.hpp"
#include "nbreplay/hex.hpp"
#include "nbreplay/serialize.hpp"

using namespace nbreplay;

namespace {

HeapId id_of(const test::Kernel& k, const std::string& name) { return *heap_id_of(k.get(name)); }

std::string hex(const std::string& bytes) { return to_hex(bytes); }

}  // namespace

TEST_CASE("assignment aliases and rebinding breaks the alias") {
  test::Kernel k;
  k.run("a = [1]\nb = a");
  CHECK(id_of(k, "a") == id_of(k, "b"));
  k.run("push(a, 2)");
  CHECK(k.show("b") == "[1, 2]");
  k.run("a = [2]");
  CHECK(id_of(k, "a") != id_of(k, "b"));
  CHECK(k.show("b") == "[1, 2]");
}

TEST_CASE("shared closure follows direct and nested sharing") {
  test::Kernel k;
  k.run("ddf = \"x\\ny\"\ndf = lines(ddf)\nraw_df = df");
  CHECK(shared_closure(k.state, {"raw_df"}) == std::set<std::string>{"raw_df", "df"});
  test::Kernel k2;
  k2.run("a = [1]\nb = a\nc = [a]\nd = c\ne = [9]");
  CHECK(shared_closure(k2.state, {"d"}) == std::set<std::string>{"a", "b", "c", "d"});
  CHECK(shared_closure(k2.state, {"e"}) == std::set<std::string>{"e"});
  CHECK(shared_closure(k2.state, {"nope"}).empty());
}

// Naive oracle: two names are related when their reachable heap sets intersect.
TEST_CASE("reverse index and shared closure agree with brute force on random programs") {
  std::mt19937 rng(11);
  const char* names[] = {"a", "b", "c", "d", "e", "f"};
  for (int trial = 0; trial < 200; ++trial) {
    test::Kernel k;
    std::string code = "a = [0]\nb = 1\nc = [a]\nd = {\"k\": 1}\ne = [2]\nf = 3\n";
    for (int i = 0; i < 8; ++i) {
      const char* x = names[rng() % 6];
      const char* y = names[rng() % 6];
      switch (rng() % 5) {
        case 0: code += std::string(x) + " = " + y + "\n"; break;
        case 1: code += std::string(x) + " = [" + y + "]\n"; break;
        case 2: code += std::string(x) + " = [7]\n"; break;
        case 3: code += std::string("g = [") + x + "]\n" + x + " = g\n"; break;
        default: code += std::string(x) + " = {\"v\": " + y + "}\n"; break;
      }
    }
    CAPTURE(code);
    k.run(code);
    CHECK(k.state.reverse_index() == k.state.rebuild_reverse_index());

    std::map<std::string, std::set<HeapId>> reach;
    for (const auto& [n, v] : k.state.env()) reach[n] = k.state.reachable(v);
    for (const char* start : names) {
      std::set<std::string> expect{start};
      bool grew = true;
      while (grew) {
        grew = false;
        for (const auto& [n, r] : reach) {
          if (expect.count(n)) continue;
          for (const auto& m : expect) {
            const auto& rm = reach[m];
            if (std::any_of(r.begin(), r.end(), [&](HeapId h) { return rm.count(h) > 0; })) {
              expect.insert(n);
              grew = true;
              break;
            }
          }
        }
      }
      CHECK(shared_closure(k.state, {start}) == expect);
    }
  }
}

TEST_CASE("canonical encoding goldens") {
  CHECK(hex(encode(Datum::integer(1))) == "01000000080000000000000001");
  CHECK(hex(encode(Datum::floating(1.5))) == "02000000083ff8000000000000");
  CHECK(hex(encode(Datum::list({Datum::integer(1), Datum::string("x"), Datum::boolean(true)}))) ==
        "050000001901000000080000000000000001040000000178030000000101");
  Datum m = Datum::map({{Datum::string("b"), Datum::integer(2)}, {Datum::string("a"), Datum::integer(1)}});
  CHECK(hex(encode(m)) ==
        "06000000260400000001610100000008000000000000000104000000016201000000080000000000000002");
}

TEST_CASE("map encoding is independent of insertion order") {
  std::vector<std::pair<Datum, Datum>> kv{{Datum::string("x"), Datum::integer(1)},
                                          {Datum::integer(5), Datum::string("y")},
                                          {Datum::string("z"), Datum::list({Datum::boolean(false)})}};
  std::vector<int> perm{0, 1, 2};
  std::set<std::string> encodings;
  do {
    std::vector<std::pair<Datum, Datum>> entries;
    for (int i : perm) entries.push_back(kv[i]);
    encodings.insert(encode(Datum::map(entries)));
  } while (std::next_permutation(perm.begin(), perm.end()));
  CHECK(encodings.size() == 1);

  test::Kernel k;
  k.run("m1 = {\"a\": 1, \"b\": 2}\nm2 = {\"b\": 2}\nm2[\"a\"] = 1");
  CHECK(std::get<std::string>(serialize_value(k.state, k.get("m1"))) ==
        std::get<std::string>(serialize_value(k.state, k.get("m2"))));
}

TEST_CASE("encoding is injective over distinct values and round-trips") {
  std::vector<Datum> values{Datum::unit(),
                            Datum::integer(0),
                            Datum::integer(-1),
                            Datum::floating(0.0),
                            Datum::floating(-0.0),
                            Datum::boolean(false),
                            Datum::string(""),
                            Datum::string("0"),
                            Datum::list({}),
                            Datum::list({Datum::list({})}),
                            Datum::map({}),
                            Datum::map({{Datum::string("a"), Datum::unit()}}),
                            Datum::function("f", "fn f(x) = x"),
                            Datum::task_ref("abc")};
  std::set<std::string> seen;
  for (const auto& v : values) {
    std::string e = encode(v);
    CHECK(seen.insert(e).second);
    CHECK(encode(decode(e)) == e);
  }
  CHECK_THROWS_AS(decode("\x01\x00\x00"), CorruptionError);
  CHECK_THROWS_AS(decode(encode(Datum::integer(1)) + "x"), CorruptionError);
}

TEST_CASE("handles are not serializable and carry their origin") {
  test::Kernel k;
  k.run("client = connect(\"local\")");
  auto r = serialize_value(k.state, k.get("client"));
  REQUIRE(std::holds_alternative<NonSerializable>(r));
  CHECK(std::get<NonSerializable>(r).origin.label() == "c0#0");
  CHECK(std::get<NonSerializable>(r).origin.source == "client = connect(\"local\")");
}

TEST_CASE("materialize restores aliasing through heap ids") {
  test::Kernel k;
  k.run("a = [1, [2]]\nb = a\nc = a[1]");
  std::vector<HeapId> ida, idb, idc;
  Datum da = to_datum(k.state, k.get("a"), &ida);
  Datum db = to_datum(k.state, k.get("b"), &idb);
  Datum dc = to_datum(k.state, k.get("c"), &idc);
  KernelState fresh;
  HeapIdMap map;
  Value va = materialize(fresh, da, &ida, &map);
  Value vb = materialize(fresh, db, &idb, &map);
  Value vc = materialize(fresh, dc, &idc, &map);
  CHECK(*heap_id_of(va) == *heap_id_of(vb));
  const auto& la = std::get<ListObject>(fresh.object(*heap_id_of(va)));
  CHECK(*heap_id_of(la.items[1]) == *heap_id_of(vc));
  KernelState plain;
  CHECK(*heap_id_of(materialize(plain, da)) != *heap_id_of(materialize(plain, db)));
}

TEST_CASE("interpreter builtins") {
  test::TempDir dir;
  test::write_file(dir / "d.txt", "one two\r\nthree\n");
  test::Kernel k(dir.path());
  k.run(
      "t = read_text(\"d.txt\")\n"
      "ls = lines(t)\n"
      "ws = words(t)\n"
      "n = len(ws)\n"
      "m = tally([\"a\", \"b\", \"a\"])\n"
      "s = merge_sum([m, {\"c\": 2}])\n"
      "ks = sort(keys(s))\n"
      "j = join(ks, \"-\")\n"
      "q = 7 / 2\n"
      "r = -7 / 2\n"
      "f = 7.0 / 2\n"
      "g = get(m, \"z\", 0)\n"
      "u = upper(\"ab\")\n"
      "sp = split(\"a,b\", \",\")\n"
      "sl = slice([1, 2, 3, 4], 1, 3)\n"
      "rg = range(2, 5)\n"
      "fn sq(x) = x * x\n"
      "sq4 = map(sq, rg)\n"
      "fn big(x, lim) = x > lim\n"
      "fl = filter(big, sq4, 5)\n"
      "fn add(a, b) = a + b\n"
      "tot = fold(add, 0, sq4)\n"
      "mx = max([3, 9])\n"
      "st = str(1.0)\n"
      "w = write_text(\"o/x.txt\", \"hi\")");
  CHECK(k.show("ls") == "[\"one two\", \"three\"]");
  CHECK(k.show("n") == "3");
  CHECK(k.show("s") == "{\"a\": 2, \"b\": 1, \"c\": 2}");
  CHECK(k.show("j") == "\"a-b-c\"");
  CHECK(k.show("q") == "3");
  CHECK(k.show("r") == "-3");
  CHECK(k.show("f") == "3.5");
  CHECK(k.show("g") == "0");
  CHECK(k.show("u") == "\"AB\"");
  CHECK(k.show("sp") == "[\"a\", \"b\"]");
  CHECK(k.show("sl") == "[2, 3]");
  CHECK(k.show("sq4") == "[4, 9, 16]");
  CHECK(k.show("fl") == "[9, 16]");
  CHECK(k.show("tot") == "29");
  CHECK(k.show("mx") == "9");
  CHECK(k.show("st") == "\"1.0\"");
  CHECK(test::read_file(dir / "o/x.txt") == "hi");
}

TEST_CASE("interpreter errors") {
  test::Kernel k;
  CHECK_THROWS_AS(k.run("x = y"), EvalError);
  CHECK_THROWS_AS(k.run("x = 1 / 0"), EvalError);
  CHECK_THROWS_AS(k.run("x = 9223372036854775807 + 1"), EvalError);
  CHECK_THROWS_AS(k.run("x = [1][5]"), EvalError);
  CHECK_THROWS_AS(k.run("fn loop(x) = loop(x)\ny = loop(1)"), EvalError);
  CHECK_THROWS_AS(k.run("x = task_cmd(\"true\", [], [\"o\"])"), EvalError);
  CHECK_THROWS_AS(k.run("x = read_text(\"../etc/passwd\")"), Error);
}

TEST_CASE("show output is captured per cell") {
  test::Kernel k;
  auto r1 = k.run("show(1)\nshow(\"a\")\nshow([\"a\"])");
  CHECK(r1.stdout_text == "1\na\n[\"a\"]\n");
  auto r2 = k.run("x = 1");
  CHECK(r2.stdout_text.empty());
}
