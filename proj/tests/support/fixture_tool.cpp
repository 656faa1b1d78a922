#include <filesystem>
#include <iostream>

#include "fixture_data.hpp"

// Usage: fixture_data <name> <dir>. Writes the fixture's input data plus
// notebook.json and modified.json into <dir>.
int main(int argc, char** argv) {
  namespace fs = std::filesystem;
  if (argc != 3) {
    std::cerr << "usage: fixture_data <name> <dir>\nfixtures:";
    for (const auto& n : nbreplay::testing::fixture_names()) std::cerr << ' ' << n;
    std::cerr << '\n';
    return 2;
  }
  try {
    fs::path dir = argv[2];
    nbreplay::testing::write_fixture_data(argv[1], dir);
    for (const char* f : {"notebook.json", "modified.json"}) {
      fs::copy_file(nbreplay::testing::fixture_dir(argv[1]) / f, dir / f, fs::copy_options::overwrite_existing);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
