#include <CLI11.hpp>

#include <chrono>
#include <fstream>
#include <iostream>

#include "nbreplay/bundle.hpp"
#include "nbreplay/errors.hpp"
#include "nbreplay/notebook.hpp"
#include "nbreplay/orchestrator.hpp"

namespace fs = std::filesystem;
using namespace nbreplay;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;
constexpr int kExitCorrupt = 3;

struct Options {
  std::string workspace = ".";
  std::string bundle;
  int workers = 2;
  int task_delay_ms = 0;
  std::string report_json;
  bool strict_canon = false;
  bool no_sandbox = false;
  bool no_cache = false;
  std::string sandbox_root;
  std::string notebook;
  std::size_t cell = 0;
  bool run_suffix = false;
  bool json_out = false;
  bool prune_equal_writes = false;
};

RunConfig make_config(const Options& o) {
  RunConfig c;
  c.executor.workers = o.workers;
  c.executor.task_delay_ms = o.task_delay_ms;
  c.executor.sandbox = !o.no_sandbox;
  c.executor.sandbox_root = o.sandbox_root;
  c.canonicalization.canonicalize_commands = !o.strict_canon;
  c.cache_enabled = !o.no_cache;
  return c;
}

void require_bundle(const Options& o) {
  if (o.bundle.empty()) throw ArgumentError("--bundle is required");
}

int cmd_audit(const Options& o) {
  require_bundle(o);
  Notebook nb = load_notebook(o.notebook);
  AuditResult r = audit_run(nb, o.workspace, o.bundle, make_config(o));
  for (std::size_t i = 0; i < r.record.cells.size(); ++i) {
    const AuditCell& c = r.record.cells[i];
    std::cout << "cell " << c.id << ": " << c.wall_time_ms << " ms, " << c.entries << " checkpoint entries, "
              << c.referenced_bytes << " bytes";
    if (!c.tasks_submitted.empty()) std::cout << ", " << c.tasks_submitted.size() << " tasks registered";
    std::cout << "\n" << c.stdout_text;
  }
  std::cout << "tasks submitted: " << r.stats.submitted << ", cached: " << r.stats.cached
            << ", executed: " << r.stats.executed << "\n";
  std::cout << "audit wall time: " << r.record.wall_time_ms << " ms\n";
  if (!r.ok) {
    std::cerr << "audit failed: " << r.error << "\n";
    return kExitFailure;
  }
  std::cout << "bundle written to " << o.bundle << "\n";
  return kExitOk;
}

int cmd_repeat(const Options& o) {
  require_bundle(o);
  Notebook nb = load_notebook(o.notebook);
  RepeatOptions ro;
  ro.prune_equal_writes = o.prune_equal_writes;
  RepeatResult r = repeat_run(nb, o.bundle, o.workspace, make_config(o), ro);
  std::cout << r.report.to_text();
  if (!o.report_json.empty()) {
    std::ofstream out(o.report_json);
    out << r.report.to_json().dump(2) << "\n";
    if (!out) throw StoreError("cannot write " + o.report_json);
  }
  return r.report.ok ? kExitOk : kExitFailure;
}

int cmd_rollback(const Options& o) {
  require_bundle(o);
  RollbackSession session(o.bundle, o.workspace, o.cell, make_config(o));
  std::cout << "state after cell " << session.notebook().cells.at(o.cell).id << ":\n";
  for (const auto& [name, v] : session.state().env()) {
    std::cout << "  " << name << " = " << render(session.state(), v, false) << "\n";
  }
  for (const auto& [name, f] : session.state().fns()) std::cout << "  " << f.source << "\n";
  if (o.run_suffix) {
    std::optional<Notebook> edited;
    if (!o.notebook.empty()) edited = load_notebook(o.notebook);
    for (const auto& c : session.run_suffix(edited ? &*edited : nullptr)) {
      std::cout << "[executed] " << c.cell_id << "\n" << c.stdout_text;
    }
  } else {
    auto rest = session.suffix();
    if (!rest.empty()) std::cout << rest.size() << " cell(s) remain; pass --run-suffix to execute them\n";
  }
  return kExitOk;
}

int cmd_inspect(const Options& o) {
  require_bundle(o);
  VerifyReport v = verify_bundle(BundlePaths{o.bundle});
  if (!v.ok()) {
    for (const auto& b : v.bad_blobs) std::cerr << "bad blob: " << b << "\n";
    for (const auto& p : v.problems) std::cerr << "problem: " << p << "\n";
    return kExitCorrupt;
  }
  InspectReport r = inspect_bundle(BundlePaths{o.bundle});
  if (o.json_out) {
    std::cout << r.to_json().dump(2) << "\n";
  } else {
    std::cout << r.to_text();
  }
  return kExitOk;
}

int cmd_verify(const Options& o) {
  require_bundle(o);
  VerifyReport v = verify_bundle(BundlePaths{o.bundle});
  for (const auto& b : v.bad_blobs) std::cout << "bad blob: " << b << "\n";
  for (const auto& p : v.problems) std::cout << "problem: " << p << "\n";
  std::cout << (v.ok() ? "ok" : "FAILED") << " (" << v.blobs_checked << " blobs checked)\n";
  return v.ok() ? kExitOk : kExitCorrupt;
}

int cmd_gc(const Options& o) {
  require_bundle(o);
  GcReport r = gc_bundle(BundlePaths{o.bundle});
  std::cout << "removed " << r.blobs_removed << " checkpoint blobs, " << r.cache_blobs_removed << " cache blobs, "
            << r.manifests_removed << " manifests, " << r.log_entries_removed << " log entries (" << r.bytes_freed
            << " bytes)\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Audit and repeat cell notebooks with incremental checkpoints and a task cache"};
  app.require_subcommand(1);
  Options o;

  app.add_option("--workspace", o.workspace, "Directory holding the notebook's input and output files")
      ->capture_default_str();
  app.add_option("--bundle", o.bundle, "Bundle directory");
  app.add_option("--workers", o.workers, "Concurrent task workers")
      ->envname("NBREPLAY_WORKERS")
      ->check(CLI::Range(1, 256))
      ->capture_default_str();
  app.add_option("--task-delay-ms", o.task_delay_ms, "Artificial delay before each executed task")
      ->envname("NBREPLAY_TASK_DELAY_MS")
      ->check(CLI::NonNegativeNumber);
  app.add_option("--sandbox-root", o.sandbox_root, "Where task sandboxes are created")
      ->envname("NBREPLAY_SANDBOX_ROOT");
  app.add_option("--report-json", o.report_json, "Write the repeat report as JSON");
  app.add_flag("--strict-paper-canonicalization", o.strict_canon,
               "Hash command strings verbatim (canonicalize function arguments only)");
  app.add_flag("--no-sandbox", o.no_sandbox, "Run tasks directly in the workspace");
  app.add_flag("--no-cache", o.no_cache, "Never answer tasks from the cache");

  auto* audit = app.add_subcommand("audit", "Run a notebook, writing checkpoints and the task log");
  audit->add_option("notebook", o.notebook, "Notebook JSON file")->required()->check(CLI::ExistingFile);
  audit->fallthrough();

  auto* repeat = app.add_subcommand("repeat", "Re-run a notebook against an audited bundle");
  repeat->add_option("notebook", o.notebook, "Notebook JSON file")->required()->check(CLI::ExistingFile);
  repeat->add_flag("--prune-equal-writes", o.prune_equal_writes,
                   "Do not dirty variables whose re-executed value matches the audit");
  repeat->fallthrough();

  auto* rollback = app.add_subcommand("rollback", "Restore the state at the end of a cell");
  rollback->add_option("--cell", o.cell, "0-based cell index")->required();
  rollback->add_flag("--run-suffix", o.run_suffix, "Execute the remaining cells after restoring");
  rollback->add_option("notebook", o.notebook, "Edited notebook whose suffix to run")->check(CLI::ExistingFile);
  rollback->fallthrough();

  auto* inspect = app.add_subcommand("inspect", "Show checkpoint contents and storage totals");
  inspect->add_flag("--json", o.json_out, "Print JSON");
  inspect->fallthrough();
  auto* verify = app.add_subcommand("verify", "Re-hash every blob and check references");
  verify->fallthrough();
  auto* gc = app.add_subcommand("gc", "Drop blobs and log entries unreachable from the latest audit");
  gc->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*audit) return cmd_audit(o);
    if (*repeat) return cmd_repeat(o);
    if (*rollback) return cmd_rollback(o);
    if (*inspect) return cmd_inspect(o);
    if (*verify) return cmd_verify(o);
    if (*gc) return cmd_gc(o);
  } catch (const CorruptionError& e) {
    std::cerr << "corrupt bundle: " << e.what() << "\n";
    return kExitCorrupt;
  } catch (const ArgumentError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}
