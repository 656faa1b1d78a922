#include "doctest.h"
#include "helpers.hpp"
#include "nbreplay/analysis.hpp"
#include "nbreplay/blob_store.hpp"
#include "nbreplay/bundle.hpp"
#include "nbreplay/checkpoint.hpp"
#include "nbreplay/errors.hpp"
#include "nbreplay/orchestrator.hpp"

using namespace nbreplay;
namespace fs = std::filesystem;

namespace {

Notebook make_nb(std::vector<std::pair<std::string, std::string>> cells) {
  Notebook nb;
  for (auto& [id, code] : cells) nb.cells.push_back({id, code});
  return nb;
}

// Audits cells in a scratch kernel, checkpointing each, without tasks.
struct Checkpointed {
  test::TempDir dir;
  BlobStore store;
  test::Kernel kernel;
  std::vector<CheckpointManifest> manifests;
  Checkpointed() : store(dir / "blobs"), kernel(dir.path()) {}
  void run(const std::string& code) {
    Cell cell{"c" + std::to_string(manifests.size()), code};
    CellAST ast = parse_cell(code);
    auto res = kernel.run(code);
    manifests.push_back(make_checkpoint(kernel.state, cell, static_cast<int>(manifests.size()), analyze_rw(ast), store,
                                        res.stdout_text));
  }
};

std::set<std::string> entry_names(const CheckpointManifest& m) {
  std::set<std::string> out;
  for (const auto& e : m.entries) out.insert(e.name);
  return out;
}

}  // namespace

TEST_CASE("incremental checkpoints include aliases and record handles by origin") {
  Checkpointed cp;
  test::write_file(cp.dir / "d.csv", "1,2\n3,4\n");
  cp.run("client = connect(\"local\")\nddf = read_text(\"d.csv\")\ndf = lines(ddf)\nraw_df = df");
  cp.run("daily_stats = len(raw_df)");
  cp.run("other = 5");
  CHECK(entry_names(cp.manifests[0]) == std::set<std::string>{"client", "ddf", "df", "raw_df"});
  CHECK(entry_names(cp.manifests[1]) == std::set<std::string>{"daily_stats", "df", "raw_df"});
  CHECK(entry_names(cp.manifests[2]) == std::set<std::string>{"other"});
  const VarEntry* client = cp.manifests[0].find("client");
  REQUIRE(client);
  CHECK_FALSE(client->serializable);
  CHECK_FALSE(client->blob);
  CHECK(client->origin.source == "client = connect(\"local\")");
  CHECK(*cp.manifests[0].find("df")->blob == *cp.manifests[1].find("df")->blob);
}

TEST_CASE("composed state equals fresh sequential execution") {
  Checkpointed cp;
  cp.run("a = [1]\nb = a");
  cp.run("a = [2]");
  KernelState composed = compose_state(cp.manifests, 1, cp.store, cp.dir.path());
  test::Kernel fresh;
  fresh.run("a = [1]\nb = a");
  fresh.run("a = [2]");
  CHECK(describe_state(composed) == describe_state(fresh.state));
  CHECK(render(composed, *composed.lookup("b"), false) == "[1]");
  CHECK(*heap_id_of(*composed.lookup("a")) != *heap_id_of(*composed.lookup("b")));

  KernelState first = compose_state(cp.manifests, 0, cp.store, cp.dir.path());
  CHECK(*heap_id_of(*first.lookup("a")) == *heap_id_of(*first.lookup("b")));
  CHECK_THROWS_AS(compose_state(cp.manifests, 5, cp.store, cp.dir.path()), ArgumentError);
}

TEST_CASE("restoring a connect cell re-creates the handle") {
  Checkpointed cp;
  test::write_file(cp.dir / "d.csv", "x\n");
  cp.run("client = connect(\"tcp://h:1\")\nddf = read_text(\"d.csv\")\ndf = lines(ddf)\nraw_df = df");
  KernelState s = compose_state(cp.manifests, 0, cp.store, cp.dir.path());
  const auto* h = std::get_if<Handle>(s.lookup("client"));
  REQUIRE(h);
  CHECK(h->uri == "tcp://h:1");
  CHECK(*heap_id_of(*s.lookup("df")) == *heap_id_of(*s.lookup("raw_df")));
  CHECK(describe_state(s) == describe_state(cp.kernel.state));
}

namespace {

struct Project {
  test::TempDir dir;
  fs::path ws, bundle;
  Project() : ws(dir / "ws"), bundle(dir / "bundle") {
    fs::create_directories(ws);
    test::write_file(ws / "a.txt", "hello world\n");
  }
  AuditResult audit(const Notebook& nb, RunConfig cfg = {}) { return audit_run(nb, ws, bundle, cfg); }
  RepeatReport repeat(const Notebook& nb, RunConfig cfg = {}, RepeatOptions opt = {}) {
    return repeat_run(nb, bundle, ws, cfg, opt).report;
  }
};

const Notebook kPipeline = make_nb({
    {"load", "client = connect(\"local\")\nraw = read_text(\"a.txt\")"},
    {"fns", "fn count(p) = len(words(read_text(p)))"},
    {"tasks", "t = task_fn(\"count\", [\"a.txt\"], [\"a.txt\"], [])\nc = task_cmd(\"wc -w a.txt > out.txt\", [\"a.txt\"], [\"out.txt\"])"},
    {"run", "res = compute([t, c])\nshow(res)"},
    {"tail", "n = len(raw)\nshow(n)"},
});

}  // namespace

TEST_CASE("audit writes a bundle and unchanged repeat executes nothing") {
  Project p;
  auto a = p.audit(kPipeline);
  REQUIRE(a.ok);
  BundlePaths paths{p.bundle};
  CHECK(fs::exists(paths.audit()));
  CHECK(fs::exists(paths.meta()));
  CHECK(a.record.cells.size() == 5);
  CHECK(TransactionLog(paths.tasklog()).entries().size() == 2);
  CHECK(verify_bundle(paths).ok());

  fs::remove(p.ws / "out.txt");
  auto r = p.repeat(kPipeline);
  CHECK(r.ok);
  CHECK(r.cells_executed.empty());
  CHECK(r.cells_restored.size() == 5);
  CHECK(r.tasks_executed == 0);
  CHECK(r.tasks_cached == 2);
  CHECK(test::read_file(p.ws / "out.txt").find('2') != std::string::npos);
  for (std::size_t i = 0; i < r.cells.size(); ++i) CHECK(r.cells[i].stdout_text == a.record.cells[i].stdout_text);
}

TEST_CASE("dirtiness propagates through data flow and function references") {
  Project p;
  REQUIRE(p.audit(kPipeline).ok);
  Notebook edited = kPipeline;
  edited.cells[1].code = "fn count(p) = len(words(read_text(p))) + 0";
  auto r = p.repeat(edited);
  CHECK(r.cells_executed == std::vector<std::string>{"fns", "tasks", "run"});
  CHECK(r.cells_restored == std::vector<std::string>{"load", "tail"});
  CHECK(r.tasks_cached == 1);
  CHECK(r.tasks_executed == 1);

  Notebook added = kPipeline;
  added.cells.push_back({"extra", "show(n + 1)"});
  auto r2 = p.repeat(added);
  CHECK(r2.cells_executed == std::vector<std::string>{"extra"});
  CHECK(r2.cells.back().stdout_text == "13\n");

  Notebook removed = kPipeline;
  removed.cells.pop_back();
  auto r3 = p.repeat(removed);
  CHECK(r3.cells_removed == std::vector<std::string>{"tail"});
  CHECK(r3.cells_executed.empty());

  Notebook reordered = kPipeline;
  std::swap(reordered.cells[0], reordered.cells[1]);
  CHECK_THROWS_AS(p.repeat(reordered), RepeatError);
}

TEST_CASE("a cell reading a name nobody restored is re-executed") {
  Project p;
  REQUIRE(p.audit(make_nb({{"a", "x = 1"}, {"b", "y = x + 1\nshow(y)"}})).ok);
  auto r = p.repeat(make_nb({{"a", "z = 1"}, {"b", "y = x + 1\nshow(y)"}}));
  CHECK_FALSE(r.ok);
  CHECK(r.failed_cell == std::string("b"));
}

TEST_CASE("prune_equal_writes stops propagation when values are unchanged") {
  Project p;
  Notebook nb = make_nb({{"a", "x = 1 + 1"}, {"b", "y = x * 10\nshow(y)"}});
  REQUIRE(p.audit(nb).ok);
  Notebook edited = make_nb({{"a", "x = 2"}, {"b", "y = x * 10\nshow(y)"}});
  CHECK(p.repeat(edited).cells_executed == std::vector<std::string>{"a", "b"});
  RepeatOptions opt;
  opt.prune_equal_writes = true;
  CHECK(p.repeat(edited, {}, opt).cells_executed == std::vector<std::string>{"a"});
}

TEST_CASE("mutation through an alias dirties every alias") {
  Project p;
  Notebook nb = make_nb({{"a", "xs = [1]\nys = xs"}, {"b", "push(xs, 2)"}, {"c", "show(ys)"}});
  REQUIRE(p.audit(nb).ok);
  Notebook edited = nb;
  edited.cells[1].code = "push(xs, 3)";
  auto r = p.repeat(edited);
  CHECK(r.cells_executed == std::vector<std::string>{"b", "c"});
  CHECK(r.cells.back().stdout_text == "[1, 3]\n");
}

TEST_CASE("failed audit keeps completed cells") {
  Project p;
  auto a = p.audit(make_nb({{"a", "x = 1"}, {"b", "y = 1 / 0"}, {"c", "z = 2"}}));
  CHECK_FALSE(a.ok);
  CHECK(a.record.failed_cell == std::string("b"));
  CHECK(a.record.cells.size() == 1);
  auto r = p.repeat(make_nb({{"a", "x = 1"}, {"b", "y = 1 / 1"}, {"c", "z = 2"}}));
  CHECK(r.ok);
  CHECK(r.cells_restored == std::vector<std::string>{"a"});
}

TEST_CASE("rollback restores a prefix and runs an edited suffix") {
  Project p;
  REQUIRE(p.audit(kPipeline).ok);
  for (std::size_t k = 0; k < kPipeline.cells.size(); ++k) {
    CAPTURE(k);
    test::TempDir other;
    fs::create_directories(other / "ws");
    test::write_file(other / "ws/a.txt", "hello world\n");
    Runtime fresh(other / "b", other / "ws", {});
    for (std::size_t i = 0; i <= k; ++i) fresh.run_cell(parse_cell(kPipeline.cells[i].code), kPipeline.cells[i].id, i);
    RollbackSession rb(p.bundle, p.ws, k);
    CHECK(describe_state(rb.state(), &rb.runtime().session()) ==
          describe_state(fresh.state(), &fresh.session()));
  }
  Notebook edited = kPipeline;
  edited.cells[4].code = "show(len(raw) * 2)";
  RollbackSession rb(p.bundle, p.ws, 3);
  auto outs = rb.run_suffix(&edited);
  REQUIRE(outs.size() == 1);
  CHECK(outs[0].stdout_text == "24\n");
  CHECK_THROWS_AS(RollbackSession(p.bundle, p.ws, 9), ArgumentError);
}

TEST_CASE("verify, inspect and gc") {
  Project p;
  std::string big = "[";
  for (int i = 0; i < 2000; ++i) big += (i ? ", " : "") + std::to_string(i * 7919);
  big += "]";
  Notebook nb = make_nb({{"a", "xs = " + big}, {"b", "n = len(xs)"}, {"c", "m = max([xs[0], xs[1]])"}});
  auto first = p.audit(nb);
  INFO(first.error);
  REQUIRE(first.ok);
  BundlePaths paths{p.bundle};
  InspectReport rep = inspect_bundle(paths);
  std::uint64_t xs_size = 0;
  for (const auto& c : rep.cells)
    for (const auto& e : c.entries)
      if (e.name == "xs") xs_size = e.size;
  CHECK(rep.pre_dedup_bytes > 3 * xs_size);
  CHECK(rep.post_dedup_bytes < xs_size + 100);
  CHECK(rep.dedup_ratio() < 0.40);

  Notebook edited = nb;
  edited.cells[0].code = "xs = [1, 2]";
  std::size_t before = BlobStore(paths.blobs()).list().size();
  REQUIRE(p.audit(edited).ok);
  CHECK(BlobStore(paths.blobs()).list().size() > before);
  std::set<std::string> reachable;
  for (const auto& m : load_manifests(paths, load_audit_record(paths)))
    for (const auto& e : m.entries)
      if (e.blob) reachable.insert(*e.blob);
  auto listed = BlobStore(paths.blobs()).list();
  std::size_t orphans = listed.size() - reachable.size();
  CHECK(orphans == 3);
  GcReport g = gc_bundle(paths);
  CHECK(g.blobs_removed == orphans);
  auto kept = BlobStore(paths.blobs()).list();
  CHECK(std::set<std::string>(kept.begin(), kept.end()) == reachable);
  CHECK(verify_bundle(paths).ok());

  std::string victim = BlobStore(paths.blobs()).list().front();
  {
    fs::path f = BlobStore(paths.blobs()).path_for(victim);
    std::string bytes = test::read_file(f);
    bytes[0] ^= 0x20;
    test::write_file(f, bytes);
  }
  VerifyReport v = verify_bundle(paths);
  CHECK(v.bad_blobs == std::vector<std::string>{victim});
  CHECK_THROWS_AS(p.repeat(edited), CorruptionError);
}

TEST_CASE("bundle lock excludes a second writer") {
  Project p;
  REQUIRE(p.audit(make_nb({{"a", "x = 1"}})).ok);
  BundleLock lock{BundlePaths{p.bundle}};
  CHECK_THROWS_AS(p.audit(make_nb({{"a", "x = 1"}})), LockError);
}

TEST_CASE("an empty bundle inspects to zeros") {
  Project p;
  REQUIRE(p.audit(make_nb({})).ok);
  InspectReport rep = inspect_bundle(BundlePaths{p.bundle});
  CHECK(rep.pre_dedup_bytes == 0);
  CHECK(rep.post_dedup_bytes == 0);
  CHECK(rep.log_entries == 0);
  CHECK(rep.dedup_ratio() == 0.0);
}
