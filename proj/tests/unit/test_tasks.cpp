#include <thread>

#include "doctest.h"
#include "helpers.hpp"
#include "nbreplay/blob_store.hpp"
#include "nbreplay/digest.hpp"
#include "nbreplay/errors.hpp"
#include "nbreplay/executor.hpp"
#include "nbreplay/fingerprint.hpp"
#include "nbreplay/rewind.hpp"
#include "nbreplay/task.hpp"

using namespace nbreplay;
namespace fs = std::filesystem;

namespace {

TaskSpec cmd(std::string id, std::string command, std::vector<std::string> in, std::vector<std::string> out) {
  TaskSpec s;
  s.id = std::move(id);
  s.kind = TaskKind::Command;
  s.command = std::move(command);
  s.inputs = std::move(in);
  s.outputs = std::move(out);
  return s;
}

TaskSpec fn(std::string id, std::string fname, std::string source, std::vector<Datum> args,
            std::vector<std::string> in = {}, std::vector<std::string> out = {}) {
  TaskSpec s;
  s.id = std::move(id);
  s.kind = TaskKind::Function;
  s.fname = fname;
  s.args = std::move(args);
  s.inputs = std::move(in);
  s.outputs = std::move(out);
  s.fn_sources[fname] = std::move(source);
  return s;
}

}  // namespace

TEST_CASE("canonicalization strips generated suffixes") {
  CHECK(canonicalize_token("subgraphcallable-a1b2c3d4") == "subgraphcallable");
  CHECK(canonicalize_token("finalize-abc123def0") == "finalize");
  CHECK(canonicalize_token("task-a1b2c3d4-0-1") == "task");
  CHECK(canonicalize_token("shard-12") == "shard-12");
  CHECK(canonicalize_token("-a1b2c3d4") == "-a1b2c3d4");
  CHECK(canonicalize_token("part-abcdefg1") == "part-abcdefg1");
  Canonicalizer c;
  CHECK(c.text("run x-deadbeef01 > y-cafebabe02.txt") == "run x > y-cafebabe02.txt");
  Canonicalizer custom(CanonicalizationConfig{"_v[0-9]+", true});
  CHECK(custom.token("model_v12") == "model");
  CHECK(custom.token("model-a1b2c3d4") == "model-a1b2c3d4");
}

TEST_CASE("command fingerprint golden") {
  test::TempDir ws;
  test::write_file(ws / "a.txt", "hello world\n");
  Canonicalizer canon;
  TaskSpec s = cmd("cmd-1", "wc -w a.txt", {"a.txt"}, {});
  CHECK(cmd_fingerprint_record(s, ws.path(), canon) ==
        R"({"command":"wc -w a.txt","inputs":{"a.txt":"a948904f2f0f479b8f8197694b30184b0d2ed1c1cd2a1ec0fb85d299a192a447"}})");
  CHECK(fingerprint_cmd(s, ws.path(), canon) == "6056217ec8fec538a17b900b33ae33307e62a0703a140e6eb9c14b7097b00c45");
  TaskSpec s2 = cmd("cmd-2", "wc -w a.txt > out.txt", {"a.txt"}, {"out.txt"});
  CHECK(fingerprint_cmd(s2, ws.path(), canon) == "ff9533c897b6fbffd2cf93ad3e40e4696eb35eb205a8d924a73511187876ac1b");
}

TEST_CASE("function fingerprints track source, arguments and parents") {
  test::TempDir ws;
  Canonicalizer canon;
  TaskSpec a = fn("f-1", "f", "fn f(x) = x", {Datum::string("subgraphcallable-deadbeef01")});
  TaskSpec b = fn("f-2", "f", "fn f(x) = x", {Datum::string("subgraphcallable-cafebabe02")});
  CHECK(fingerprint_task(a, {}, ws.path(), canon) == fingerprint_task(b, {}, ws.path(), canon));
  TaskSpec c = fn("f-3", "f", "fn f(x) = x + 0", {Datum::string("subgraphcallable-deadbeef01")});
  CHECK(fingerprint_task(a, {}, ws.path(), canon) != fingerprint_task(c, {}, ws.path(), canon));

  TaskSpec risk1 = fn("apply-1", "apply", "fn apply(f, x) = f(x)",
                      {Datum::function("risk_score", "fn risk_score(x) = x * 2"), Datum::integer(1)});
  risk1.fn_sources["risk_score"] = "fn risk_score(x) = x * 2";
  TaskSpec risk2 = risk1;
  risk2.args[0] = Datum::function("risk_score", "fn risk_score(x) = x * 3");
  risk2.fn_sources["risk_score"] = "fn risk_score(x) = x * 3";
  CHECK(fingerprint_task(risk1, {}, ws.path(), canon) != fingerprint_task(risk2, {}, ws.path(), canon));

  TaskSpec child = fn("g-1", "g", "fn g(x) = x", {Datum::task_ref("f-1")});
  child.parents = {"f-1"};
  std::string p1 = fingerprint_task(child, {{"f-1", std::string(64, 'a')}}, ws.path(), canon);
  std::string p2 = fingerprint_task(child, {{"f-1", std::string(64, 'b')}}, ws.path(), canon);
  CHECK(p1 != p2);
  CHECK_THROWS_AS(fingerprint_task(child, {}, ws.path(), canon), SpecError);
}

TEST_CASE("input order and missing inputs") {
  test::TempDir ws;
  test::write_file(ws / "x/a.txt", "1");
  test::write_file(ws / "y/b.txt", "2");
  Canonicalizer canon;
  TaskSpec s1 = cmd("c-1", "cat x/a.txt y/b.txt", {"x/a.txt", "y/b.txt"}, {});
  TaskSpec s2 = cmd("c-2", "cat x/a.txt y/b.txt", {"y/b.txt", "x/a.txt"}, {});
  CHECK(fingerprint_cmd(s1, ws.path(), canon) == fingerprint_cmd(s2, ws.path(), canon));
  TaskSpec missing = cmd("c-3", "cat z", {"z"}, {});
  CHECK_THROWS_AS(fingerprint_cmd(missing, ws.path(), canon), InputError);
  CHECK_THROWS_AS(normalize_workspace_path("../x"), SpecError);
  CHECK_THROWS_AS(normalize_workspace_path("/abs"), SpecError);
  CHECK(normalize_workspace_path("./a//b/../c") == "a/c");
}

TEST_CASE("dag construction") {
  std::vector<TaskSpec> subs;
  for (int i = 0; i < 12; ++i) {
    std::string out = "m" + std::to_string(i) + ".txt";
    subs.push_back(cmd("map-" + std::to_string(i), "echo " + std::to_string(i) + " > " + out, {}, {out}));
  }
  std::vector<std::string> ins;
  for (int i = 0; i < 12; ++i) ins.push_back("m" + std::to_string(i) + ".txt");
  subs.push_back(cmd("reduce", "cat m*.txt > r.txt", ins, {"r.txt"}));
  TaskDag dag = build_dag(subs);
  CHECK(dag.nodes.at("reduce").parents.size() == 12);
  CHECK(dag.order.back() == "reduce");

  std::vector<TaskSpec> dup{cmd("a", "x", {}, {"o"}), cmd("b", "y", {}, {"o"})};
  CHECK_THROWS_AS(build_dag(dup), DagError);
  std::vector<TaskSpec> cyc{cmd("a", "x", {"q"}, {"p"}), cmd("b", "y", {"p"}, {"q"})};
  CHECK_THROWS_AS(build_dag(cyc), DagError);
  TaskSpec orphan = fn("o-1", "o", "fn o(x) = x", {Datum::task_ref("ghost")});
  CHECK_THROWS_AS(build_dag({orphan}), DagError);
}

TEST_CASE("blob store deduplicates and verifies") {
  test::TempDir dir;
  BlobStore store(dir / "blobs");
  std::mt19937 rng(3);
  std::set<std::string> hashes;
  for (int i = 0; i < 200; ++i) {
    std::string data = std::to_string(rng() % 50);
    std::string h = store.put(data);
    CHECK(h == sha256_hex(data));
    hashes.insert(h);
  }
  CHECK(store.list().size() == hashes.size());
  std::string h = *hashes.begin();
  CHECK(store.verify(h));
  {
    std::fstream f(store.path_for(h), std::ios::in | std::ios::out | std::ios::binary);
    char ch;
    f.read(&ch, 1);
    f.seekp(0);
    ch ^= 1;
    f.write(&ch, 1);
  }
  CHECK_FALSE(store.verify(h));
  CHECK(store.verify_all() == std::vector<std::string>{h});
  CHECK_THROWS_AS(store.get(std::string(64, '0')), CorruptionError);
}

TEST_CASE("transaction log replay, latest-wins index and torn tails") {
  test::TempDir dir;
  fs::path file = dir / "log.jsonl";
  std::vector<LogEntry> written;
  {
    TransactionLog log(file);
    for (int i = 0; i < 20; ++i) {
      LogEntry e;
      e.fingerprint = sha256_hex(std::to_string(i % 7));
      e.task_id = "t-" + std::to_string(i);
      e.outputs.push_back(OutputRecord{"o" + std::to_string(i), sha256_hex("x"), 1});
      e.wall_time_ms = i;
      e.timestamp = "2026-01-01T00:00:00Z";
      log.append(e);
      written.push_back(e);
    }
  }
  TransactionLog again(file);
  REQUIRE(again.entries().size() == 20);
  std::map<std::string, std::size_t> fold;
  for (std::size_t i = 0; i < written.size(); ++i) fold[written[i].fingerprint] = i;
  CHECK(again.index() == fold);
  CHECK(again.lookup(sha256_hex("3"))->task_id == "t-17");
  CHECK(again.lookup("missing") == nullptr);

  std::string bytes = test::read_file(file);
  std::vector<std::size_t> line_ends;
  for (std::size_t i = 0; i < bytes.size(); ++i)
    if (bytes[i] == '\n') line_ends.push_back(i + 1);
  std::mt19937 rng(5);
  for (int trial = 0; trial < 40; ++trial) {
    std::size_t cut = rng() % (bytes.size() + 1);
    test::write_file(file, bytes.substr(0, cut));
    std::size_t complete = std::count_if(line_ends.begin(), line_ends.end(), [&](std::size_t e) { return e <= cut; });
    TransactionLog reader(file, false);
    CHECK(reader.entries().size() == complete);
    CHECK(test::read_file(file).size() == cut);
    TransactionLog repaired(file);
    CHECK(repaired.entries().size() == complete);
    CHECK(test::read_file(file).size() == (complete ? line_ends[complete - 1] : 0));
  }
  test::write_file(file, bytes.substr(0, line_ends[2]) + "garbage\n" + bytes.substr(line_ends[2]));
  CHECK_THROWS_AS(TransactionLog{file}, CorruptionError);
}

namespace {

struct Harness {
  test::TempDir dir;
  fs::path ws;
  BlobStore cache;
  std::unique_ptr<TransactionLog> log;
  Canonicalizer canon;
  std::unique_ptr<RewindManager> manager;
  Harness() : ws(dir / "ws"), cache(dir / "cache") {
    fs::create_directories(ws);
    log = std::make_unique<TransactionLog>(dir / "log.jsonl");
    manager = std::make_unique<RewindManager>(*log, cache, ws, canon);
  }
};

// Diamond: a -> (b, c) -> d, plus an independent chain e -> f.
std::vector<TaskSpec> diamond() {
  return {cmd("a", "echo a > a.txt", {}, {"a.txt"}),
          cmd("b", "cat a.txt > b.txt; echo b >> b.txt", {"a.txt"}, {"b.txt"}),
          cmd("c", "cat a.txt > c.txt; echo c >> c.txt", {"a.txt"}, {"c.txt"}),
          cmd("d", "cat b.txt c.txt > d.txt", {"b.txt", "c.txt"}, {"d.txt"}),
          cmd("e", "echo e > e.txt", {}, {"e.txt"}),
          cmd("f", "cat e.txt e.txt > f.txt", {"e.txt"}, {"f.txt"})};
}

}  // namespace

TEST_CASE("executor respects dependencies and is deterministic across worker counts") {
  std::string reference;
  for (int workers : {1, 2, 4}) {
    CAPTURE(workers);
    Harness h;
    Executor ex(ExecutorConfig{workers, 5, {}, true}, h.ws);
    auto outcomes = ex.schedule(build_dag(diamond()), *h.manager);
    CHECK(outcomes.size() == 6);
    std::map<std::string, TraceEvent> ev;
    for (const auto& e : ex.trace()) ev[e.task_id] = e;
    CHECK(ev.at("b").start_us >= ev.at("a").finish_us);
    CHECK(ev.at("c").start_us >= ev.at("a").finish_us);
    CHECK(ev.at("d").start_us >= ev.at("b").finish_us);
    CHECK(ev.at("d").start_us >= ev.at("c").finish_us);
    CHECK(ev.at("f").start_us >= ev.at("e").finish_us);
    std::string d = test::read_file(h.ws / "d.txt") + test::read_file(h.ws / "f.txt");
    CHECK(d == "a\nb\na\nc\ne\ne\n");
    if (reference.empty()) reference = d;
    CHECK(d == reference);
    CHECK(ex.worker_invocations() == 6);

    Executor again(ExecutorConfig{workers, 0, {}, true}, h.ws);
    h.manager->reset_stats();
    auto second = again.schedule(build_dag(diamond()), *h.manager);
    CHECK(again.worker_invocations() == 0);
    CHECK(h.manager->stats().cached == 6);
    for (const auto& [id, o] : second) CHECK(o.kind == OutcomeKind::Cached);
  }
}

TEST_CASE("executor runs independent tasks in parallel") {
  Harness h;
  std::vector<TaskSpec> subs;
  for (int i = 0; i < 4; ++i) subs.push_back(cmd("p" + std::to_string(i), "echo " + std::to_string(i) + " > p" + std::to_string(i), {}, {"p" + std::to_string(i)}));
  Executor ex(ExecutorConfig{4, 100, {}, true}, h.ws);
  auto t0 = std::chrono::steady_clock::now();
  ex.schedule(build_dag(subs), *h.manager);
  auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - t0).count();
  CHECK(ms < 350);
}

TEST_CASE("command tasks see only declared inputs") {
  Harness h;
  test::write_file(h.ws / "a.txt", "hello world\n");
  test::write_file(h.ws / "secret.txt", "s");
  Executor ex(ExecutorConfig{1, 0, {}, true}, h.ws);
  ex.schedule(build_dag({cmd("w", "wc -w a.txt > out.txt", {"a.txt"}, {"out.txt"})}), *h.manager);
  CHECK(test::read_file(h.ws / "out.txt").find('2') != std::string::npos);
  CHECK_THROWS_AS(ex.schedule(build_dag({cmd("s", "cat secret.txt > o2.txt", {}, {"o2.txt"})}), *h.manager),
                  TaskFailure);
  CHECK_THROWS_AS(ex.schedule(build_dag({cmd("n", "true", {}, {"never.txt"})}), *h.manager), TaskFailure);
}

TEST_CASE("a failed task aborts its descendants but not independent tasks") {
  Harness h;
  std::vector<TaskSpec> subs{cmd("bad", "exit 3", {}, {"bad.txt"}),
                             cmd("child", "cat bad.txt > child.txt", {"bad.txt"}, {"child.txt"}),
                             cmd("ok", "echo ok > ok.txt", {}, {"ok.txt"})};
  Executor ex(ExecutorConfig{2, 0, {}, true}, h.ws);
  CHECK_THROWS_AS(ex.schedule(build_dag(subs), *h.manager), TaskFailure);
  CHECK(fs::exists(h.ws / "ok.txt"));
  CHECK_FALSE(fs::exists(h.ws / "child.txt"));
  CHECK(h.log->lookup(fingerprint_cmd(subs[2], h.ws, h.canon)) != nullptr);
}

TEST_CASE("function tasks receive parent results and read staged inputs") {
  Harness h;
  test::write_file(h.ws / "shard.txt", "a b a c a");
  TaskSpec count = fn("count-1", "count", "fn count(p) = tally(words(read_text(p)))", {Datum::string("shard.txt")},
                      {"shard.txt"});
  TaskSpec total = fn("total-1", "total", "fn total(m) = sum(values(m))", {Datum::task_ref("count-1")});
  Executor ex(ExecutorConfig{2, 0, {}, true}, h.ws);
  auto out = ex.schedule(build_dag({count, total}), *h.manager);
  CHECK(render(out.at("count-1").result) == "{\"a\": 3, \"b\": 1, \"c\": 1}");
  CHECK(render(out.at("total-1").result) == "5");
}

TEST_CASE("rewind manager downgrades damaged cache entries to misses") {
  Harness h;
  TaskSpec t = cmd("w", "echo hi > o.txt", {}, {"o.txt"});
  {
    Executor ex(ExecutorConfig{1, 0, {}, true}, h.ws);
    ex.schedule(build_dag({t}), *h.manager);
  }
  auto hit = h.manager->submit(t, {});
  REQUIRE(hit.cached);
  fs::remove(h.ws / "o.txt");
  hit = h.manager->submit(t, {});
  REQUIRE(hit.cached);
  CHECK(test::read_file(h.ws / "o.txt") == "hi\n");
  for (const auto& b : h.cache.list()) h.cache.remove(b);
  auto miss = h.manager->submit(t, {});
  CHECK_FALSE(miss.cached);
  CHECK_FALSE(h.manager->warnings().empty());
  RewindManager disabled(*h.log, h.cache, h.ws, h.canon, false);
  CHECK_FALSE(disabled.submit(t, {}).cached);
}
