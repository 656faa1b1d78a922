#include "nbreplay/rewind.hpp"

#include <chrono>
#include <ctime>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "nbreplay/errors.hpp"
#include "nbreplay/serialize.hpp"

namespace nbreplay {

namespace fs = std::filesystem;
using json = nlohmann::json;

json to_json(const LogEntry& e) {
  json outputs = json::array();
  for (const auto& o : e.outputs) outputs.push_back(json{{"path", o.path}, {"hash", o.hash}, {"size", o.size}});
  return json{{"fingerprint", e.fingerprint},
              {"task_id", e.task_id},
              {"outputs", std::move(outputs)},
              {"result_blob", e.result_blob ? json(*e.result_blob) : json(nullptr)},
              {"wall_time_ms", e.wall_time_ms},
              {"timestamp", e.timestamp}};
}

LogEntry log_entry_from_json(const json& j) {
  try {
    LogEntry e;
    e.fingerprint = j.at("fingerprint").get<std::string>();
    e.task_id = j.at("task_id").get<std::string>();
    for (const auto& o : j.at("outputs")) {
      e.outputs.push_back(
          OutputRecord{o.at("path").get<std::string>(), o.at("hash").get<std::string>(), o.at("size").get<std::uint64_t>()});
    }
    if (!j.at("result_blob").is_null()) e.result_blob = j.at("result_blob").get<std::string>();
    e.wall_time_ms = j.at("wall_time_ms").get<std::int64_t>();
    e.timestamp = j.at("timestamp").get<std::string>();
    return e;
  } catch (const json::exception& ex) {
    throw CorruptionError(std::string("malformed log entry: ") + ex.what());
  }
}

TransactionLog::TransactionLog(fs::path file, bool repair) : file_(std::move(file)) {
  std::ifstream in(file_, std::ios::binary);
  if (!in) return;
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string data = ss.str();
  in.close();

  std::size_t pos = 0;
  std::size_t good_end = 0;
  while (pos < data.size()) {
    std::size_t nl = data.find('\n', pos);
    bool last = nl == std::string::npos;
    std::string_view line(data.data() + pos, (last ? data.size() : nl) - pos);
    std::optional<LogEntry> entry;
    if (!last) {
      try {
        entry = log_entry_from_json(json::parse(line));
      } catch (const std::exception&) {
      }
    }
    if (!entry) {
      // Only the final line may be damaged (an interrupted append).
      std::size_t next = last ? data.size() : nl + 1;
      if (next < data.size()) {
        throw CorruptionError(file_.string() + ": unreadable entry at byte " + std::to_string(pos));
      }
      break;
    }
    index_[entry->fingerprint] = entries_.size();
    entries_.push_back(std::move(*entry));
    pos = nl + 1;
    good_end = pos;
  }
  if (good_end < data.size()) {
    truncated_bytes_ = data.size() - good_end;
    if (!repair) return;
    std::error_code ec;
    fs::resize_file(file_, good_end, ec);
    if (ec) throw StoreError("cannot truncate " + file_.string() + ": " + ec.message());
  }
}

void TransactionLog::append(const LogEntry& entry) {
  std::lock_guard lock(mu_);
  std::string line = to_json(entry).dump() + "\n";
  {
    std::ofstream out(file_, std::ios::binary | std::ios::app);
    out.write(line.data(), static_cast<std::streamsize>(line.size()));
    out.flush();
    if (!out) throw StoreError("cannot append to " + file_.string());
  }
  index_[entry.fingerprint] = entries_.size();
  entries_.push_back(entry);
}

const LogEntry* TransactionLog::lookup(const std::string& fingerprint) const {
  auto it = index_.find(fingerprint);
  return it == index_.end() ? nullptr : &entries_[it->second];
}

void TransactionLog::rewrite(std::vector<LogEntry> entries) {
  std::lock_guard lock(mu_);
  fs::path tmp = file_;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    for (const auto& e : entries) out << to_json(e).dump() << "\n";
    if (!out) throw StoreError("cannot write " + tmp.string());
  }
  fs::rename(tmp, file_);
  entries_ = std::move(entries);
  index_.clear();
  for (std::size_t i = 0; i < entries_.size(); ++i) index_[entries_[i].fingerprint] = i;
}

Datum command_result(const TaskSpec& spec) {
  std::vector<Datum> paths;
  for (const auto& o : spec.outputs) paths.push_back(Datum::string(o));
  return Datum::list(std::move(paths));
}

namespace {

std::string utc_timestamp() {
  auto now = std::chrono::system_clock::now();
  std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

RewindManager::RewindManager(TransactionLog& log, BlobStore& cache, fs::path workspace, const Canonicalizer& canon,
                             bool cache_enabled)
    : log_(log), cache_(cache), workspace_(std::move(workspace)), canon_(canon), cache_enabled_(cache_enabled) {}

RewindManager::Submission RewindManager::submit(const TaskSpec& spec,
                                                const std::map<std::string, std::string>& parent_fps) {
  ++stats_.submitted;
  Submission sub;
  sub.fingerprint = fingerprint_task(spec, parent_fps, workspace_, canon_);
  if (!cache_enabled_) return sub;
  const LogEntry* entry = log_.lookup(sub.fingerprint);
  if (!entry) return sub;

  std::set<std::string> logged, declared(spec.outputs.begin(), spec.outputs.end());
  for (const auto& o : entry->outputs) logged.insert(o.path);
  if (logged != declared) return sub;

  std::vector<std::string> missing;
  for (const auto& o : entry->outputs) {
    if (!cache_.contains(o.hash) || !cache_.verify(o.hash)) missing.push_back(o.hash);
  }
  if (spec.kind == TaskKind::Function) {
    if (!entry->result_blob) return sub;
    if (!cache_.contains(*entry->result_blob)) missing.push_back(*entry->result_blob);
  }
  if (!missing.empty()) {
    std::string msg = "warning: cache entry for task " + spec.id + " (" + sub.fingerprint.substr(0, 12) +
                      ") has a missing or damaged blob " + missing.front() + "; re-executing";
    warnings_.push_back(msg);
    std::cerr << msg << "\n";
    return sub;
  }

  TaskOutcome outcome;
  outcome.kind = OutcomeKind::Cached;
  outcome.fingerprint = sub.fingerprint;
  try {
    for (const auto& o : entry->outputs) {
      cache_.copy_to(o.hash, workspace_ / o.path);
      outcome.outputs.push_back(o.path);
    }
    outcome.result = spec.kind == TaskKind::Function ? decode(cache_.get(*entry->result_blob)) : command_result(spec);
  } catch (const Error& e) {
    std::string msg = "warning: cache entry for task " + spec.id + " is unusable (" + e.what() + "); re-executing";
    warnings_.push_back(msg);
    std::cerr << msg << "\n";
    return sub;
  }
  ++stats_.cached;
  sub.cached = std::move(outcome);
  return sub;
}

TaskOutcome RewindManager::complete(const TaskSpec& spec, const std::string& fingerprint, const TaskRun& run) {
  LogEntry entry;
  entry.fingerprint = fingerprint;
  entry.task_id = spec.id;
  entry.wall_time_ms = run.wall_time_ms;
  entry.timestamp = utc_timestamp();
  TaskOutcome outcome;
  outcome.kind = OutcomeKind::Executed;
  outcome.fingerprint = fingerprint;
  for (const auto& path : spec.outputs) {
    fs::path p = workspace_ / path;
    std::error_code ec;
    if (!fs::is_regular_file(p, ec)) throw TaskFailure(spec.id, "declared output '" + path + "' was not produced");
    std::string hash = cache_.put_file(p);
    entry.outputs.push_back(OutputRecord{path, hash, cache_.size_of(hash)});
    outcome.outputs.push_back(path);
  }
  if (spec.kind == TaskKind::Function) {
    entry.result_blob = cache_.put(encode(run.result));
    outcome.result = run.result;
  } else {
    outcome.result = command_result(spec);
  }
  log_.append(entry);
  ++stats_.executed;
  return outcome;
}

}  // namespace nbreplay
