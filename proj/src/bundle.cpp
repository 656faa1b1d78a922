#include "nbreplay/bundle.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "nbreplay/digest.hpp"
#include "nbreplay/errors.hpp"
#include "nbreplay/rewind.hpp"

namespace nbreplay {

namespace fs = std::filesystem;
using json = nlohmann::json;

BundleLock::BundleLock(const BundlePaths& paths) : path_(paths.lock()) {
  fs::create_directories(paths.root);
  int fd = ::open(path_.c_str(), O_WRONLY | O_CREAT | O_EXCL, 0644);
  if (fd < 0) {
    if (errno == EEXIST) {
      throw LockError("bundle " + paths.root.string() + " is locked by another writer (remove " + path_.string() +
                      " if no other process is running)");
    }
    throw LockError("cannot lock bundle " + paths.root.string() + ": " + std::strerror(errno));
  }
  std::string pid = std::to_string(::getpid()) + "\n";
  (void)!::write(fd, pid.data(), pid.size());
  ::close(fd);
}

BundleLock::~BundleLock() {
  std::error_code ec;
  fs::remove(path_, ec);
}

const AuditCell* AuditRecord::find(const std::string& id) const {
  for (const auto& c : cells) {
    if (c.id == id) return &c;
  }
  return nullptr;
}

json to_json(const AuditRecord& r) {
  json cells = json::array();
  for (const auto& c : r.cells) {
    cells.push_back(json{{"id", c.id},
                         {"seq", c.seq},
                         {"code_hash", c.code_hash},
                         {"stdout", c.stdout_text},
                         {"manifest", c.manifest},
                         {"wall_time_ms", c.wall_time_ms},
                         {"entries", c.entries},
                         {"referenced_bytes", c.referenced_bytes},
                         {"tasks_submitted", c.tasks_submitted}});
  }
  return json{{"format_version", r.format_version},
              {"complete", r.complete},
              {"failed_cell", r.failed_cell ? json(*r.failed_cell) : json(nullptr)},
              {"error", r.error ? json(*r.error) : json(nullptr)},
              {"wall_time_ms", r.wall_time_ms},
              {"notebook", "notebook.json"},
              {"task_log", "tasklog.jsonl"},
              {"fingerprints", r.fingerprints},
              {"cells", std::move(cells)}};
}

AuditRecord audit_record_from_json(const json& j) {
  try {
    AuditRecord r;
    r.format_version = j.at("format_version").get<int>();
    if (r.format_version != kBundleFormatVersion) {
      throw CorruptionError("unsupported bundle format version " + std::to_string(r.format_version));
    }
    r.complete = j.at("complete").get<bool>();
    if (!j.at("failed_cell").is_null()) r.failed_cell = j.at("failed_cell").get<std::string>();
    if (!j.at("error").is_null()) r.error = j.at("error").get<std::string>();
    r.wall_time_ms = j.at("wall_time_ms").get<std::int64_t>();
    r.fingerprints = j.at("fingerprints").get<std::vector<std::string>>();
    for (const auto& c : j.at("cells")) {
      AuditCell cell;
      cell.id = c.at("id").get<std::string>();
      cell.seq = c.at("seq").get<int>();
      cell.code_hash = c.at("code_hash").get<std::string>();
      cell.stdout_text = c.at("stdout").get<std::string>();
      cell.manifest = c.at("manifest").get<std::string>();
      cell.wall_time_ms = c.at("wall_time_ms").get<std::int64_t>();
      cell.entries = c.at("entries").get<std::size_t>();
      cell.referenced_bytes = c.at("referenced_bytes").get<std::uint64_t>();
      cell.tasks_submitted = c.at("tasks_submitted").get<std::vector<std::string>>();
      r.cells.push_back(std::move(cell));
    }
    return r;
  } catch (const json::exception& e) {
    throw CorruptionError(std::string("malformed audit record: ") + e.what());
  }
}

namespace {

std::string hostname() {
  char buf[256] = {};
  if (::gethostname(buf, sizeof buf - 1) != 0) return "unknown";
  return buf;
}

std::string now_utc() {
  std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

json make_meta(const RunConfig& config) {
  return json{{"format_version", kBundleFormatVersion},
              {"host", hostname()},
              {"created", now_utc()},
              {"config",
               {{"workers", config.executor.workers},
                {"task_delay_ms", config.executor.task_delay_ms},
                {"sandbox", config.executor.sandbox},
                {"cache_enabled", config.cache_enabled},
                {"canonicalization",
                 {{"suffix_pattern", config.canonicalization.suffix_pattern},
                  {"canonicalize_commands", config.canonicalization.canonicalize_commands}}}}},
              {"backpack", nullptr}};
}

void write_json_file(const fs::path& path, const json& j) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out << j.dump(2) << "\n";
    if (!out) throw StoreError("cannot write " + path.string());
  }
  fs::rename(tmp, path);
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CorruptionError("missing " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw CorruptionError("malformed " + path.string() + ": " + e.what());
  }
}

AuditRecord load_audit_record(const BundlePaths& paths) {
  return audit_record_from_json(read_json_file(paths.audit()));
}

json load_meta(const BundlePaths& paths) { return read_json_file(paths.meta()); }

std::vector<CheckpointManifest> load_manifests(const BundlePaths& paths, const AuditRecord& record) {
  std::vector<CheckpointManifest> out;
  for (const auto& c : record.cells) {
    CheckpointManifest m = manifest_from_json(read_json_file(paths.root / c.manifest));
    if (m.cell_id != c.id || m.seq != static_cast<int>(out.size())) {
      throw CorruptionError("manifest " + c.manifest + " does not match audit cell " + c.id);
    }
    out.push_back(std::move(m));
  }
  return out;
}

VerifyReport verify_bundle(const BundlePaths& paths) {
  VerifyReport report;
  BlobStore blobs(paths.blobs());
  BlobStore cache(paths.taskcache());
  for (const auto* store : {&blobs, &cache}) {
    for (const auto& d : store->list()) {
      ++report.blobs_checked;
      if (!store->verify(d)) report.bad_blobs.push_back(d);
    }
  }
  AuditRecord record;
  try {
    record = load_audit_record(paths);
  } catch (const Error& e) {
    report.problems.push_back(e.what());
    return report;
  }
  std::error_code ec;
  if (!fs::is_regular_file(paths.notebook(), ec)) report.problems.push_back("missing notebook.json");
  if (!fs::is_regular_file(paths.meta(), ec)) report.problems.push_back("missing meta.json");
  for (const auto& c : record.cells) {
    try {
      CheckpointManifest m = manifest_from_json(read_json_file(paths.root / c.manifest));
      for (const auto& e : m.entries) {
        if (e.blob && !blobs.contains(*e.blob)) {
          report.problems.push_back("manifest " + c.manifest + ": entry '" + e.name + "' references missing blob " +
                                    *e.blob);
        }
      }
    } catch (const Error& e) {
      report.problems.push_back(e.what());
    }
  }
  try {
    TransactionLog log(paths.tasklog(), false);
    for (const auto& e : log.entries()) {
      for (const auto& o : e.outputs) {
        if (!cache.contains(o.hash)) {
          report.problems.push_back("log entry " + e.fingerprint.substr(0, 12) + " (" + e.task_id +
                                    "): missing cached output " + o.path + " " + o.hash);
        }
      }
      if (e.result_blob && !cache.contains(*e.result_blob)) {
        report.problems.push_back("log entry " + e.fingerprint.substr(0, 12) + " (" + e.task_id +
                                  "): missing result blob " + *e.result_blob);
      }
    }
  } catch (const Error& e) {
    report.problems.push_back(e.what());
  }
  return report;
}

GcReport gc_bundle(const BundlePaths& paths) {
  BundleLock lock(paths);
  GcReport report;
  AuditRecord record = load_audit_record(paths);
  std::vector<CheckpointManifest> manifests = load_manifests(paths, record);

  std::set<std::string> live_manifests;
  std::set<std::string> live_blobs;
  for (const auto& c : record.cells) live_manifests.insert(fs::path(c.manifest).filename().string());
  for (const auto& m : manifests) {
    for (const auto& e : m.entries) {
      if (e.blob) live_blobs.insert(*e.blob);
    }
  }
  std::error_code ec;
  if (fs::is_directory(paths.checkpoints(), ec)) {
    for (const auto& f : fs::directory_iterator(paths.checkpoints())) {
      if (!live_manifests.count(f.path().filename().string())) {
        report.bytes_freed += f.file_size(ec);
        fs::remove(f.path(), ec);
        ++report.manifests_removed;
      }
    }
  }
  BlobStore blobs(paths.blobs());
  for (const auto& d : blobs.list()) {
    if (!live_blobs.count(d)) {
      report.bytes_freed += blobs.size_of(d);
      blobs.remove(d);
      ++report.blobs_removed;
    }
  }

  TransactionLog log(paths.tasklog());
  std::set<std::string> live_fps(record.fingerprints.begin(), record.fingerprints.end());
  std::vector<LogEntry> kept;
  for (std::size_t i = 0; i < log.entries().size(); ++i) {
    const LogEntry& e = log.entries()[i];
    // Keep the latest entry of each fingerprint the audit resolved.
    if (live_fps.count(e.fingerprint) && log.index().at(e.fingerprint) == i) kept.push_back(e);
  }
  report.log_entries_removed = log.entries().size() - kept.size();
  std::set<std::string> live_cache;
  for (const auto& e : kept) {
    for (const auto& o : e.outputs) live_cache.insert(o.hash);
    if (e.result_blob) live_cache.insert(*e.result_blob);
  }
  log.rewrite(std::move(kept));
  BlobStore cache(paths.taskcache());
  for (const auto& d : cache.list()) {
    if (!live_cache.count(d)) {
      report.bytes_freed += cache.size_of(d);
      cache.remove(d);
      ++report.cache_blobs_removed;
    }
  }
  return report;
}

InspectReport inspect_bundle(const BundlePaths& paths) {
  InspectReport report;
  AuditRecord record = load_audit_record(paths);
  std::vector<CheckpointManifest> manifests = load_manifests(paths, record);
  BlobStore blobs(paths.blobs());
  std::set<std::string> distinct;
  for (const auto& m : manifests) {
    InspectCell cell;
    cell.id = m.cell_id;
    for (const auto& e : m.entries) {
      cell.entries.push_back(InspectEntry{e.name, e.kind, e.serializable, e.size, e.blob.value_or("")});
      cell.referenced_bytes += e.size;
      if (e.blob && distinct.insert(*e.blob).second) report.post_dedup_bytes += blobs.size_of(*e.blob);
    }
    for (const auto& f : m.functions) cell.functions.push_back(f.name);
    report.pre_dedup_bytes += cell.referenced_bytes;
    report.cells.push_back(std::move(cell));
  }
  report.stored_blob_bytes = blobs.total_bytes();
  report.intermediate_bytes = BlobStore(paths.taskcache()).total_bytes();
  TransactionLog log(paths.tasklog(), false);
  report.log_entries = log.entries().size();
  report.log_fingerprints = log.index().size();
  for (const auto& e : log.entries()) report.log_wall_time_ms += e.wall_time_ms;
  return report;
}

std::string InspectReport::to_text() const {
  std::ostringstream out;
  for (const auto& c : cells) {
    out << "cell " << c.id << ": " << c.entries.size() << " entries, " << c.referenced_bytes << " bytes\n";
    for (const auto& e : c.entries) {
      out << "  " << std::left << std::setw(20) << e.name << " " << std::setw(6) << e.kind << " ";
      if (e.serializable) {
        out << std::right << std::setw(10) << e.size << "  " << e.blob.substr(0, 12);
      } else {
        out << std::right << std::setw(10) << "-" << "  (re-created on restore)";
      }
      out << "\n";
    }
    for (const auto& f : c.functions) out << "  fn " << f << "\n";
  }
  out << "checkpoint bytes (pre-dedup):  " << pre_dedup_bytes << "\n";
  out << "checkpoint bytes (post-dedup): " << post_dedup_bytes << "\n";
  out << "stored blob bytes:             " << stored_blob_bytes << "\n";
  out << "intermediate file bytes:       " << intermediate_bytes << "\n";
  out << "dedup ratio:                   " << std::fixed << std::setprecision(3) << dedup_ratio() << "\n";
  out << "task log: " << log_entries << " entries, " << log_fingerprints << " fingerprints, " << log_wall_time_ms
      << " ms recorded\n";
  return out.str();
}

json InspectReport::to_json() const {
  json cj = json::array();
  for (const auto& c : cells) {
    json entries = json::array();
    for (const auto& e : c.entries) {
      entries.push_back(
          json{{"name", e.name}, {"kind", e.kind}, {"serializable", e.serializable}, {"size", e.size}, {"blob", e.blob}});
    }
    cj.push_back(json{{"id", c.id}, {"entries", entries}, {"functions", c.functions}, {"bytes", c.referenced_bytes}});
  }
  return json{{"cells", cj},
              {"pre_dedup_bytes", pre_dedup_bytes},
              {"post_dedup_bytes", post_dedup_bytes},
              {"stored_blob_bytes", stored_blob_bytes},
              {"intermediate_bytes", intermediate_bytes},
              {"dedup_ratio", dedup_ratio()},
              {"log_entries", log_entries},
              {"log_fingerprints", log_fingerprints},
              {"log_wall_time_ms", log_wall_time_ms}};
}

}  // namespace nbreplay
