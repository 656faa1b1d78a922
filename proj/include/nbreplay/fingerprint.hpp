#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <string_view>

#include "nbreplay/task.hpp"
#include "nbreplay/value.hpp"

namespace nbreplay {

inline constexpr const char* kDefaultSuffixPattern = "-[0-9a-f]{8,}(?:-[0-9a-f]+)*";

struct CanonicalizationConfig {
  // ECMAScript regex matched against the end of each token.
  std::string suffix_pattern = kDefaultSuffixPattern;
  // When false, command strings are hashed verbatim and only function
  // arguments are canonicalized.
  bool canonicalize_commands = true;
};

class Canonicalizer {
 public:
  explicit Canonicalizer(CanonicalizationConfig config = {});
  ~Canonicalizer();
  Canonicalizer(const Canonicalizer&) = delete;
  Canonicalizer& operator=(const Canonicalizer&) = delete;

  const CanonicalizationConfig& config() const { return config_; }

  // Strips one trailing suffix match (the prefix must be non-empty).
  std::string token(std::string_view s) const;
  // Applies token() to every whitespace-delimited token, keeping the whitespace.
  std::string text(std::string_view s) const;
  // Applies text() to every string inside the datum.
  Datum datum(const Datum& d) const;

 private:
  CanonicalizationConfig config_;
  struct Regex;
  std::unique_ptr<Regex> regex_;  // only for non-default patterns
};

std::string canonicalize_token(std::string_view s);

// SHA-256 of the file bytes; InputError naming the path when unreadable.
std::string hash_file(const std::filesystem::path& path);

// The exact JSON bytes hashed for a command task.
std::string cmd_fingerprint_record(const TaskSpec& spec, const std::filesystem::path& workspace,
                                   const Canonicalizer& canon);
std::string fingerprint_cmd(const TaskSpec& spec, const std::filesystem::path& workspace, const Canonicalizer& canon);

// parent_fps maps task ids named by TaskRef arguments to their fingerprints.
std::string fingerprint_fn(const TaskSpec& spec, const FnSources& fn_sources,
                           const std::map<std::string, std::string>& parent_fps,
                           const std::filesystem::path& workspace, const Canonicalizer& canon);

std::string fingerprint_task(const TaskSpec& spec, const std::map<std::string, std::string>& parent_fps,
                             const std::filesystem::path& workspace, const Canonicalizer& canon);

}  // namespace nbreplay
