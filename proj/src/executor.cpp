#include "nbreplay/executor.hpp"

#include <fcntl.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <condition_variable>
#include <cstring>
#include <deque>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <thread>

#include "nbreplay/errors.hpp"
#include "nbreplay/interpreter.hpp"
#include "nbreplay/serialize.hpp"

extern char** environ;

namespace nbreplay {

namespace fs = std::filesystem;

Executor::Executor(ExecutorConfig config, fs::path workspace)
    : config_(std::move(config)), workspace_(std::move(workspace)), epoch_(std::chrono::steady_clock::now()) {
  if (config_.workers < 1) throw ArgumentError("worker count must be at least 1");
  if (config_.task_delay_ms < 0) throw ArgumentError("task delay must not be negative");
  if (config_.sandbox_root.empty()) {
    std::string tmpl = (fs::temp_directory_path() / "nbreplay-XXXXXX").string();
    if (!::mkdtemp(tmpl.data())) throw StoreError("cannot create sandbox directory");
    sandbox_root_ = tmpl;
    owns_sandbox_root_ = true;
  } else {
    sandbox_root_ = config_.sandbox_root;
    fs::create_directories(sandbox_root_);
  }
}

Executor::~Executor() {
  if (owns_sandbox_root_) {
    std::error_code ec;
    fs::remove_all(sandbox_root_, ec);
  }
}

std::int64_t Executor::now_us() const {
  return std::chrono::duration_cast<std::chrono::microseconds>(std::chrono::steady_clock::now() - epoch_).count();
}

std::vector<TraceEvent> Executor::trace() const {
  std::lock_guard lock(trace_mu_);
  return trace_;
}

fs::path Executor::make_sandbox(const TaskSpec& spec) {
  fs::path dir = sandbox_root_ / (spec.id + "." + std::to_string(sandbox_counter_.fetch_add(1)));
  fs::remove_all(dir);
  fs::create_directories(dir);
  for (const auto& in : spec.inputs) {
    fs::path src = workspace_ / in;
    std::error_code ec;
    if (!fs::is_regular_file(src, ec)) throw InputError("declared input '" + in + "' does not exist", in);
    fs::path dst = dir / in;
    fs::create_directories(dst.parent_path());
    fs::copy_file(src, dst, fs::copy_options::overwrite_existing);
  }
  for (const auto& out : spec.outputs) fs::create_directories((dir / out).parent_path());
  return dir;
}

void Executor::run_cmd_task(const TaskSpec& spec, const fs::path& dir) const {
  fs::path log_base = sandbox_root_ / (spec.id + "." + std::to_string(::getpid()) + "." +
                                       std::to_string(std::hash<std::thread::id>{}(std::this_thread::get_id())));
  std::string err_path = log_base.string() + ".stderr";
  std::string dir_str = dir.string();

  posix_spawn_file_actions_t actions;
  posix_spawn_file_actions_init(&actions);
  posix_spawn_file_actions_addopen(&actions, 0, "/dev/null", O_RDONLY, 0);
  posix_spawn_file_actions_addopen(&actions, 1, "/dev/null", O_WRONLY, 0);
  posix_spawn_file_actions_addopen(&actions, 2, err_path.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
  posix_spawn_file_actions_addchdir_np(&actions, dir_str.c_str());

  std::string cmd = spec.command;
  char sh[] = "/bin/sh";
  char dash_c[] = "-c";
  char* argv[] = {sh, dash_c, cmd.data(), nullptr};
  pid_t pid = 0;
  int rc = posix_spawn(&pid, "/bin/sh", &actions, nullptr, argv, environ);
  posix_spawn_file_actions_destroy(&actions);
  if (rc != 0) throw TaskFailure(spec.id, std::string("cannot start shell: ") + std::strerror(rc));

  int status = 0;
  while (::waitpid(pid, &status, 0) < 0) {
    if (errno != EINTR) throw TaskFailure(spec.id, "waitpid failed");
  }
  std::string stderr_text;
  {
    std::ifstream in(err_path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    stderr_text = ss.str();
  }
  std::error_code ec;
  fs::remove(err_path, ec);
  int exit_status = WIFEXITED(status) ? WEXITSTATUS(status) : 128 + WTERMSIG(status);
  if (exit_status != 0) {
    throw TaskFailure(spec.id, "command exited with status " + std::to_string(exit_status), stderr_text, exit_status);
  }
  for (const auto& out : spec.outputs) {
    if (!fs::is_regular_file(dir / out, ec)) {
      throw TaskFailure(spec.id, "declared output '" + out + "' was not produced", stderr_text, exit_status);
    }
  }
}

namespace {

Datum resolve_refs(const Datum& d, const std::map<std::string, Datum>& parent_results, const std::string& task_id) {
  if (d.kind == Datum::Kind::TaskRef) {
    auto it = parent_results.find(d.s);
    if (it == parent_results.end()) throw TaskFailure(task_id, "result of parent task '" + d.s + "' is unavailable");
    return it->second;
  }
  Datum out = d;
  for (auto& item : out.items) item = resolve_refs(item, parent_results, task_id);
  for (auto& [k, v] : out.entries) v = resolve_refs(v, parent_results, task_id);
  return out;
}

}  // namespace

Datum Executor::run_fn_task(const TaskSpec& spec, const std::map<std::string, Datum>& parent_results,
                            const fs::path& dir) const {
  try {
    KernelState state;
    for (const auto& [name, source] : spec.fn_sources) state.define(name, source);
    std::vector<Value> args;
    for (const auto& a : spec.args) args.push_back(materialize(state, resolve_refs(a, parent_results, spec.id)));
    Interpreter interp(state, dir);
    Value result = interp.call_function(spec.fname, std::move(args));
    Datum out = to_datum(state, result);
    std::error_code ec;
    for (const auto& o : spec.outputs) {
      if (!fs::is_regular_file(dir / o, ec)) throw TaskFailure(spec.id, "declared output '" + o + "' was not produced");
    }
    return out;
  } catch (const TaskFailure&) {
    throw;
  } catch (const Error& e) {
    throw TaskFailure(spec.id, e.what());
  }
}

namespace {

struct Job {
  std::string id;
  std::string fingerprint;
};

struct Completion {
  std::string id;
  std::string fingerprint;
  fs::path dir;
  Datum result;
  std::int64_t wall_ms = 0;
  std::exception_ptr error;
};

}  // namespace

std::map<std::string, TaskOutcome> Executor::schedule(const TaskDag& dag, RewindManager& manager) {
  std::map<std::string, TaskOutcome> outcomes;
  std::map<std::string, std::size_t> waiting;  // unresolved parent count
  auto children = dag.children();
  std::map<std::string, std::string> fps;
  std::set<std::string> aborted;
  std::exception_ptr first_error;

  std::deque<std::string> ready;
  for (const auto& id : dag.order) {
    waiting[id] = dag.nodes.at(id).parents.size();
    if (waiting[id] == 0) ready.push_back(id);
  }

  std::mutex mu;
  std::condition_variable job_cv, done_cv;
  std::deque<Job> jobs;
  std::deque<Completion> done;
  bool stopping = false;
  std::map<std::string, Datum> results_snapshot;  // parent results visible to workers

  auto worker = [&]() {
    for (;;) {
      Job job;
      std::map<std::string, Datum> parent_results;
      {
        std::unique_lock lock(mu);
        job_cv.wait(lock, [&] { return stopping || !jobs.empty(); });
        if (jobs.empty()) return;
        job = std::move(jobs.front());
        jobs.pop_front();
        for (const auto& p : dag.nodes.at(job.id).parents) parent_results[p] = results_snapshot.at(p);
      }
      const TaskSpec& spec = dag.nodes.at(job.id);
      Completion c;
      c.id = job.id;
      c.fingerprint = job.fingerprint;
      ++invocations_;
      auto start = now_us();
      try {
        if (config_.task_delay_ms > 0) std::this_thread::sleep_for(std::chrono::milliseconds(config_.task_delay_ms));
        c.dir = config_.sandbox ? make_sandbox(spec) : workspace_;
        if (spec.kind == TaskKind::Command) {
          run_cmd_task(spec, c.dir);
          c.result = command_result(spec);
        } else {
          c.result = run_fn_task(spec, parent_results, c.dir);
        }
      } catch (...) {
        c.error = std::current_exception();
      }
      auto finish = now_us();
      c.wall_ms = (finish - start) / 1000;
      {
        std::lock_guard lock(trace_mu_);
        trace_.push_back(TraceEvent{job.id, start, finish, OutcomeKind::Executed});
      }
      {
        std::lock_guard lock(mu);
        done.push_back(std::move(c));
      }
      done_cv.notify_one();
    }
  };

  std::vector<std::thread> threads;
  std::size_t in_flight = 0;
  auto ensure_threads = [&] {
    if (threads.empty()) {
      for (int i = 0; i < config_.workers; ++i) threads.emplace_back(worker);
    }
  };

  auto abort_descendants = [&](const std::string& id) {
    std::vector<std::string> stack{id};
    while (!stack.empty()) {
      std::string cur = stack.back();
      stack.pop_back();
      for (const auto& k : children[cur]) {
        if (aborted.insert(k).second) stack.push_back(k);
      }
    }
  };

  auto resolve = [&](const std::string& id, TaskOutcome outcome) {
    fps[id] = outcome.fingerprint;
    {
      std::lock_guard lock(mu);
      results_snapshot[id] = outcome.result;
    }
    outcomes[id] = std::move(outcome);
    for (const auto& k : children[id]) {
      if (--waiting[k] == 0) ready.push_back(k);
    }
  };

  auto fail = [&](const std::string& id, std::exception_ptr e) {
    if (!first_error) first_error = e;
    aborted.insert(id);
    abort_descendants(id);
  };

  std::size_t settled = 0;
  const std::size_t total = dag.order.size();
  try {
    while (settled + aborted.size() < total || in_flight > 0) {
      // Submit every ready task; hits resolve synchronously and may free children.
      while (!ready.empty()) {
        std::string id = ready.front();
        ready.pop_front();
        if (aborted.count(id)) continue;
        const TaskSpec& spec = dag.nodes.at(id);
        std::map<std::string, std::string> parent_fps;
        for (const auto& p : spec.parents) parent_fps[p] = fps.at(p);
        RewindManager::Submission sub;
        try {
          sub = manager.submit(spec, parent_fps);
        } catch (...) {
          fail(id, std::current_exception());
          continue;
        }
        if (sub.cached) {
          auto t = now_us();
          {
            std::lock_guard lock(trace_mu_);
            trace_.push_back(TraceEvent{id, t, t, OutcomeKind::Cached});
          }
          ++settled;
          resolve(id, std::move(*sub.cached));
          continue;
        }
        ensure_threads();
        {
          std::lock_guard lock(mu);
          jobs.push_back(Job{id, sub.fingerprint});
        }
        ++in_flight;
        job_cv.notify_one();
      }
      if (in_flight == 0) break;

      Completion c;
      {
        std::unique_lock lock(mu);
        done_cv.wait(lock, [&] { return !done.empty(); });
        c = std::move(done.front());
        done.pop_front();
      }
      --in_flight;
      const TaskSpec& spec = dag.nodes.at(c.id);
      if (!c.error) {
        try {
          if (config_.sandbox) {
            for (const auto& out : spec.outputs) {
              fs::path dst = workspace_ / out;
              fs::create_directories(dst.parent_path());
              fs::copy_file(c.dir / out, dst, fs::copy_options::overwrite_existing);
            }
          }
          TaskOutcome outcome = manager.complete(spec, c.fingerprint, TaskRun{c.result, c.wall_ms});
          ++settled;
          resolve(c.id, std::move(outcome));
        } catch (...) {
          c.error = std::current_exception();
        }
      }
      if (config_.sandbox && !c.dir.empty()) {
        std::error_code ec;
        fs::remove_all(c.dir, ec);
      }
      if (c.error) fail(c.id, c.error);
    }
  } catch (...) {
    {
      std::lock_guard lock(mu);
      stopping = true;
      jobs.clear();
    }
    job_cv.notify_all();
    for (auto& t : threads) t.join();
    throw;
  }
  {
    std::lock_guard lock(mu);
    stopping = true;
  }
  job_cv.notify_all();
  for (auto& t : threads) t.join();
  if (first_error) std::rethrow_exception(first_error);
  return outcomes;
}

}  // namespace nbreplay
