#include "nbreplay/fingerprint.hpp"

#include <regex>
#include <set>
#include <vector>

#include <json.hpp>

#include "nbreplay/digest.hpp"
#include "nbreplay/errors.hpp"
#include "nbreplay/serialize.hpp"

namespace nbreplay {

namespace {

bool is_lower_hex(char c) { return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'f'); }

// Linear matcher for the default pattern. Returns the start of the leftmost
// suffix "-" hex{8,} ("-" hex+)* that leaves a non-empty prefix, or npos.
std::size_t default_suffix_start(std::string_view s) {
  const std::size_t n = s.size();
  if (n < 2 || s.back() == '-') return std::string_view::npos;
  std::size_t lo = n;
  while (lo > 0 && (is_lower_hex(s[lo - 1]) || s[lo - 1] == '-')) --lo;
  for (std::size_t i = lo; i + 1 < n; ++i) {
    if (s[i] == '-' && s[i + 1] == '-') lo = i + 1;
  }
  lo = std::max<std::size_t>(lo, 1);
  for (std::size_t p = lo; p < n; ++p) {
    if (s[p] != '-') continue;
    std::size_t end = s.find('-', p + 1);
    if (end == std::string_view::npos) end = n;
    if (end - (p + 1) >= 8) return p;
  }
  return std::string_view::npos;
}

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

}  // namespace

struct Canonicalizer::Regex {
  std::regex re;
};

Canonicalizer::Canonicalizer(CanonicalizationConfig config) : config_(std::move(config)) {
  if (config_.suffix_pattern != kDefaultSuffixPattern) {
    try {
      regex_ = std::make_unique<Regex>(Regex{std::regex("^([\\s\\S]+?)(" + config_.suffix_pattern + ")$")});
    } catch (const std::regex_error& e) {
      throw ArgumentError("invalid canonicalization pattern '" + config_.suffix_pattern + "': " + e.what());
    }
  }
}

Canonicalizer::~Canonicalizer() = default;

std::string Canonicalizer::token(std::string_view s) const {
  if (regex_) {
    std::match_results<std::string_view::const_iterator> m;
    if (std::regex_match(s.begin(), s.end(), m, regex_->re)) return m[1].str();
    return std::string(s);
  }
  std::size_t p = default_suffix_start(s);
  return std::string(p == std::string_view::npos ? s : s.substr(0, p));
}

std::string Canonicalizer::text(std::string_view s) const {
  std::string out;
  out.reserve(s.size());
  std::size_t i = 0;
  while (i < s.size()) {
    if (is_space(s[i])) {
      out.push_back(s[i++]);
      continue;
    }
    std::size_t j = i;
    while (j < s.size() && !is_space(s[j])) ++j;
    out += token(s.substr(i, j - i));
    i = j;
  }
  return out;
}

Datum Canonicalizer::datum(const Datum& d) const {
  Datum out = d;
  if (out.kind == Datum::Kind::String) out.s = text(out.s);
  for (auto& item : out.items) item = datum(item);
  for (auto& [k, v] : out.entries) {
    k = datum(k);
    v = datum(v);
  }
  return out;
}

std::string canonicalize_token(std::string_view s) {
  static const Canonicalizer canon;
  return canon.token(s);
}

std::string hash_file(const std::filesystem::path& path) { return sha256_file_hex(path); }

std::string cmd_fingerprint_record(const TaskSpec& spec, const std::filesystem::path& workspace,
                                   const Canonicalizer& canon) {
  std::map<std::string, int> basename_count;
  for (const auto& in : spec.inputs) basename_count[std::filesystem::path(in).filename().string()]++;
  nlohmann::json inputs = nlohmann::json::object();
  for (const auto& in : spec.inputs) {
    std::string base = std::filesystem::path(in).filename().string();
    // Colliding basenames fall back to the workspace-relative path.
    inputs[basename_count[base] > 1 ? in : base] = hash_file(workspace / in);
  }
  nlohmann::json record;
  record["command"] = canon.config().canonicalize_commands ? canon.text(spec.command) : spec.command;
  record["inputs"] = std::move(inputs);
  try {
    return record.dump();
  } catch (const nlohmann::json::type_error& e) {
    throw SpecError("task " + spec.id + ": command is not valid UTF-8");
  }
}

std::string fingerprint_cmd(const TaskSpec& spec, const std::filesystem::path& workspace, const Canonicalizer& canon) {
  return sha256_hex(cmd_fingerprint_record(spec, workspace, canon));
}

namespace {

Datum substitute_refs(const Datum& d, const std::map<std::string, std::string>& parent_fps) {
  if (d.kind == Datum::Kind::TaskRef) {
    auto it = parent_fps.find(d.s);
    if (it == parent_fps.end()) throw SpecError("no fingerprint for parent task '" + d.s + "'");
    return Datum::task_ref(it->second);
  }
  Datum out = d;
  for (auto& item : out.items) item = substitute_refs(item, parent_fps);
  for (auto& [k, v] : out.entries) v = substitute_refs(v, parent_fps);
  return out;
}

void collect_fn_names(const Datum& d, std::set<std::string>& out) {
  if (d.kind == Datum::Kind::Fn) out.insert(d.s);
  for (const auto& item : d.items) collect_fn_names(item, out);
  for (const auto& [k, v] : d.entries) collect_fn_names(v, out);
}

}  // namespace

std::string fingerprint_fn(const TaskSpec& spec, const FnSources& fn_sources,
                           const std::map<std::string, std::string>& parent_fps,
                           const std::filesystem::path& workspace, const Canonicalizer& canon) {
  if (!fn_sources.count(spec.fname)) throw SpecError("task " + spec.id + ": unknown function '" + spec.fname + "'");

  std::vector<Datum> args;
  args.reserve(spec.args.size());
  for (const auto& a : spec.args) args.push_back(canon.datum(substitute_refs(a, parent_fps)));

  std::set<std::string> roots{spec.fname};
  for (const auto& a : spec.args) collect_fn_names(a, roots);
  // Every function reachable from the roots was captured in fn_sources at
  // registration; hash all of them.
  std::vector<std::string> source_digests;
  for (const auto& [name, source] : fn_sources) source_digests.push_back(sha256_hex(source));
  for (const auto& r : roots) {
    if (!fn_sources.count(r)) throw SpecError("task " + spec.id + ": unknown function '" + r + "'");
  }
  std::sort(source_digests.begin(), source_digests.end());

  Sha256 core;
  core.update(encode(Datum::string(spec.fname)));
  core.update(encode(Datum::list(std::move(args))));
  for (const auto& d : source_digests) core.update(d);
  std::string core_hex = core.hex_digest();

  std::vector<std::string> input_digests;
  for (const auto& in : spec.inputs) input_digests.push_back(hash_file(workspace / in));
  std::sort(input_digests.begin(), input_digests.end());

  Sha256 final_hash;
  final_hash.update(core_hex);
  for (const auto& d : input_digests) final_hash.update(d);
  return final_hash.hex_digest();
}

std::string fingerprint_task(const TaskSpec& spec, const std::map<std::string, std::string>& parent_fps,
                             const std::filesystem::path& workspace, const Canonicalizer& canon) {
  if (spec.kind == TaskKind::Command) return fingerprint_cmd(spec, workspace, canon);
  return fingerprint_fn(spec, spec.fn_sources, parent_fps, workspace, canon);
}

}  // namespace nbreplay
