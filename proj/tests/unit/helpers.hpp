#pragma once

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include "nbreplay/interpreter.hpp"
#include "nbreplay/parser.hpp"
#include "nbreplay/value.hpp"

namespace test {

namespace fs = std::filesystem;

class TempDir {
 public:
  TempDir() {
    std::string tmpl = (fs::temp_directory_path() / "nbreplay-test-XXXXXX").string();
    if (!mkdtemp(tmpl.data())) throw std::runtime_error("mkdtemp failed");
    path_ = tmpl;
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  fs::path path_;
};

inline void write_file(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  out << text;
}

inline std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// Runs cells one after another in a fresh interpreter.
struct Kernel {
  nbreplay::KernelState state;
  nbreplay::Interpreter interp;
  int seq = 0;
  explicit Kernel(const fs::path& root = fs::temp_directory_path(), nbreplay::TaskSink* sink = nullptr)
      : interp(state, root, sink) {}
  nbreplay::ExecResult run(const std::string& code) {
    int s = seq++;
    return interp.eval_cell(nbreplay::parse_cell(code), "c" + std::to_string(s), s);
  }
  const nbreplay::Value& get(const std::string& name) const { return *state.lookup(name); }
  std::string show(const std::string& name) const { return nbreplay::render(state, get(name), false); }
};

}  // namespace test
