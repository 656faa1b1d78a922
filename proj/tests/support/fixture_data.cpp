#include "fixture_data.hpp"

#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

#ifndef NBREPLAY_FIXTURE_DIR
#error "NBREPLAY_FIXTURE_DIR must be defined"
#endif

namespace fs = std::filesystem;

namespace nbreplay::testing {

namespace {

void put(const fs::path& ws, const std::string& rel, const std::string& text) {
  fs::path p = ws / rel;
  fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + p.string());
}

const char* kWords[] = {"river", "stone", "lantern", "harbor", "whale", "sea",   "ship",  "anchor",
                        "storm", "gull",  "tide",    "salt",   "rope",  "deck",  "mast",  "wave",
                        "north", "south", "island",  "reef",   "coral", "shell", "sand",  "cliff",
                        "light", "fog",   "sail",    "oar",    "net",   "fish",  "kelp",  "crab"};
constexpr std::size_t kWordCount = sizeof(kWords) / sizeof(kWords[0]);

std::string prose(std::mt19937& rng, int n_words, int per_line) {
  std::ostringstream s;
  for (int i = 0; i < n_words; ++i) {
    s << kWords[rng() % kWordCount];
    s << (((i + 1) % per_line == 0) ? '\n' : ' ');
  }
  s << '\n';
  return s.str();
}

std::string series(std::mt19937& rng, int n, int base, bool with_na) {
  std::ostringstream s;
  for (int i = 0; i < n; ++i) {
    if (with_na && rng() % 7 == 0) {
      s << "NA\n";
      continue;
    }
    int tenths = static_cast<int>(rng() % 200);
    s << base + tenths / 10 << '.' << tenths % 10 << '\n';
  }
  return s.str();
}

const char* kConvAwk =
    "BEGIN { n = split(w, k, \" \") }\n"
    "{\n"
    "  out = \"\"\n"
    "  for (i = 1; i <= NF; i++) {\n"
    "    s = 0\n"
    "    for (j = 1; j <= n; j++) {\n"
    "      idx = i + j - 1 - int((n + 1) / 2)\n"
    "      if (idx < 1) idx = 1\n"
    "      if (idx > NF) idx = NF\n"
    "      s += k[j] * $idx\n"
    "    }\n"
    "    out = out (i > 1 ? \" \" : \"\") s\n"
    "  }\n"
    "  print out\n"
    "}\n";

}  // namespace

const std::vector<std::string>& fixture_names() {
  static const std::vector<std::string> names{"mapreduce", "dconv", "ctrend", "climate", "dv5", "rag", "dedup"};
  return names;
}

fs::path fixture_dir(const std::string& name) { return fs::path(NBREPLAY_FIXTURE_DIR) / name; }

void write_fixture_data(const std::string& name, const fs::path& ws) {
  fs::create_directories(ws);
  std::mt19937 rng(20240611u);
  if (name == "mapreduce") {
    for (int i = 0; i < 12; ++i) put(ws, "shards/part-" + std::to_string(i) + ".txt", prose(rng, 240, 12));
  } else if (name == "dconv") {
    put(ws, "conv.awk", kConvAwk);
    for (int t = 0; t < 16; ++t) {
      std::ostringstream s;
      for (int r = 0; r < 8; ++r) {
        for (int c = 0; c < 8; ++c) s << (c ? " " : "") << rng() % 256;
        s << '\n';
      }
      put(ws, "tiles/tile" + std::to_string(t) + ".txt", s.str());
    }
  } else if (name == "ctrend") {
    for (int i = 1; i <= 12; ++i) put(ws, "stations/st" + std::to_string(i) + ".csv", series(rng, 30, 10, true));
  } else if (name == "climate") {
    for (const char* r : {"north", "central", "south"}) put(ws, std::string("regions/") + r + ".csv", series(rng, 24, 5, true));
  } else if (name == "dv5") {
    for (int f = 1; f <= 4; ++f) {
      std::ostringstream s;
      for (int i = 0; i < 60; ++i) s << f * 1000 + i << ',' << rng() % 100 << '\n';
      put(ws, "events/run" + std::to_string(f) + ".csv", s.str());
    }
  } else if (name == "rag") {
    for (const char* b : {"alpha", "beta", "gamma", "delta"}) put(ws, std::string("books/") + b + ".txt", prose(rng, 400, 10));
  } else if (name == "dedup") {
    std::string big;
    big.reserve(1 << 20);
    while (big.size() < (1u << 20)) {
      std::size_t line = 63;
      for (std::size_t i = 0; i < line && big.size() < (1u << 20) - 1; ++i) big.push_back(static_cast<char>('a' + rng() % 26));
      big.push_back('\n');
    }
    put(ws, "big.txt", big);
  } else {
    throw std::invalid_argument("unknown fixture '" + name + "'");
  }
}

}  // namespace nbreplay::testing
