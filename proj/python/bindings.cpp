#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "nbreplay/analysis.hpp"
#include "nbreplay/bundle.hpp"
#include "nbreplay/digest.hpp"
#include "nbreplay/errors.hpp"
#include "nbreplay/fingerprint.hpp"
#include "nbreplay/notebook.hpp"
#include "nbreplay/orchestrator.hpp"
#include "nbreplay/parser.hpp"

namespace py = pybind11;
namespace fs = std::filesystem;
using namespace nbreplay;

namespace {

py::object to_py(const nlohmann::json& j) {
  switch (j.type()) {
    case nlohmann::json::value_t::null: return py::none();
    case nlohmann::json::value_t::boolean: return py::bool_(j.get<bool>());
    case nlohmann::json::value_t::number_integer: return py::int_(j.get<std::int64_t>());
    case nlohmann::json::value_t::number_unsigned: return py::int_(j.get<std::uint64_t>());
    case nlohmann::json::value_t::number_float: return py::float_(j.get<double>());
    case nlohmann::json::value_t::string: return py::str(j.get<std::string>());
    case nlohmann::json::value_t::array: {
      py::list out;
      for (const auto& item : j) out.append(to_py(item));
      return std::move(out);
    }
    case nlohmann::json::value_t::object: {
      py::dict out;
      for (const auto& [k, v] : j.items()) out[py::str(k)] = to_py(v);
      return std::move(out);
    }
    default: return py::none();
  }
}

RunConfig make_config(int workers, int task_delay_ms, bool cache, bool strict_canonicalization) {
  RunConfig cfg;
  cfg.executor.workers = workers;
  cfg.executor.task_delay_ms = task_delay_ms;
  cfg.cache_enabled = cache;
  cfg.canonicalization.canonicalize_commands = !strict_canonicalization;
  return cfg;
}

py::dict audit(const std::string& notebook, const fs::path& workspace, const fs::path& bundle, int workers,
               int task_delay_ms, bool cache, bool strict_canonicalization) {
  Notebook nb = load_notebook(notebook);
  AuditResult a;
  {
    py::gil_scoped_release release;
    a = audit_run(nb, workspace, bundle, make_config(workers, task_delay_ms, cache, strict_canonicalization));
  }
  py::dict out;
  out["ok"] = a.ok;
  out["error"] = a.error;
  out["record"] = to_py(to_json(a.record));
  out["tasks_submitted"] = a.stats.submitted;
  out["tasks_cached"] = a.stats.cached;
  out["tasks_executed"] = a.stats.executed;
  return out;
}

py::object repeat(const std::string& notebook, const fs::path& bundle, const fs::path& workspace, int workers,
                  int task_delay_ms, bool cache, bool strict_canonicalization, bool prune_equal_writes) {
  Notebook nb = load_notebook(notebook);
  RepeatOptions opt;
  opt.prune_equal_writes = prune_equal_writes;
  nlohmann::json report;
  {
    py::gil_scoped_release release;
    report = repeat_run(nb, bundle, workspace, make_config(workers, task_delay_ms, cache, strict_canonicalization), opt)
                 .report.to_json();
  }
  return to_py(report);
}

py::object rollback(const fs::path& bundle, const fs::path& workspace, std::size_t cell) {
  RollbackSession rb(bundle, workspace, cell);
  return to_py(describe_state(rb.state(), &rb.runtime().session()));
}

py::dict verify(const fs::path& bundle) {
  VerifyReport v = verify_bundle(BundlePaths{bundle});
  py::dict out;
  out["ok"] = v.ok();
  out["bad_blobs"] = v.bad_blobs;
  out["problems"] = v.problems;
  out["blobs_checked"] = v.blobs_checked;
  return out;
}

py::dict gc(const fs::path& bundle) {
  GcReport g = gc_bundle(BundlePaths{bundle});
  py::dict out;
  out["blobs_removed"] = g.blobs_removed;
  out["cache_blobs_removed"] = g.cache_blobs_removed;
  out["manifests_removed"] = g.manifests_removed;
  out["log_entries_removed"] = g.log_entries_removed;
  out["bytes_freed"] = g.bytes_freed;
  return out;
}

py::dict analyze(const std::string& code) {
  RWInfo rw = analyze_rw(parse_cell(code));
  py::dict out;
  out["reads"] = rw.reads;
  out["writes"] = rw.writes;
  out["defs"] = rw.defs;
  out["external_reads"] = rw.external_reads;
  return out;
}

std::string command_fingerprint(const std::string& command, const std::vector<std::string>& inputs,
                                const fs::path& workspace) {
  TaskSpec spec;
  spec.kind = TaskKind::Command;
  spec.command = command;
  spec.inputs = inputs;
  Canonicalizer canon;
  return fingerprint_cmd(spec, workspace, canon);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Notebook audit and repeat runtime";

  // Translators run newest first, so the base class is registered before its subclasses.
  auto& base = py::register_exception<Error>(m, "Error");
  py::register_exception<CorruptionError>(m, "CorruptionError", base.ptr());
  py::register_exception<RepeatError>(m, "RepeatError", base.ptr());

  m.def("audit", &audit, py::arg("notebook"), py::arg("workspace"), py::arg("bundle"), py::arg("workers") = 2,
        py::arg("task_delay_ms") = 0, py::arg("cache") = true, py::arg("strict_canonicalization") = false);
  m.def("repeat", &repeat, py::arg("notebook"), py::arg("bundle"), py::arg("workspace"), py::arg("workers") = 2,
        py::arg("task_delay_ms") = 0, py::arg("cache") = true, py::arg("strict_canonicalization") = false,
        py::arg("prune_equal_writes") = false);
  m.def("rollback", &rollback, py::arg("bundle"), py::arg("workspace"), py::arg("cell"));
  m.def("inspect", [](const fs::path& bundle) { return to_py(inspect_bundle(BundlePaths{bundle}).to_json()); },
        py::arg("bundle"));
  m.def("verify", &verify, py::arg("bundle"));
  m.def("gc", &gc, py::arg("bundle"));
  m.def("analyze", &analyze, py::arg("code"));
  m.def("sha256_hex", [](py::bytes data) { return sha256_hex(std::string(data)); }, py::arg("data"));
  m.def("cell_code_hash", &cell_code_hash, py::arg("code"));
  m.def("canonicalize_token", &canonicalize_token, py::arg("token"));
  m.def("command_fingerprint", &command_fingerprint, py::arg("command"), py::arg("inputs"), py::arg("workspace"));
}
