#include "nbreplay/blob_store.hpp"

#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <fstream>
#include <sstream>
#include <thread>

#include "nbreplay/digest.hpp"
#include "nbreplay/errors.hpp"

namespace nbreplay {

namespace fs = std::filesystem;

namespace {

std::atomic<std::uint64_t> g_temp_counter{0};

fs::path temp_name(const fs::path& dir) {
  std::ostringstream name;
  name << ".tmp-" << ::getpid() << "-" << std::hash<std::thread::id>{}(std::this_thread::get_id()) << "-"
       << g_temp_counter.fetch_add(1);
  return dir / name.str();
}

void check_digest(std::string_view digest) {
  if (!is_hex_digest(digest)) throw CorruptionError("invalid blob digest '" + std::string(digest) + "'");
}

}  // namespace

BlobStore::BlobStore(fs::path root) : root_(std::move(root)) {}

fs::path BlobStore::path_for(std::string_view digest) const {
  check_digest(digest);
  return root_ / std::string(digest.substr(0, 2)) / std::string(digest.substr(2));
}

std::string BlobStore::put(std::string_view bytes) {
  std::string digest = sha256_hex(bytes);
  fs::path dest = path_for(digest);
  std::error_code ec;
  if (fs::exists(dest, ec)) return digest;
  fs::create_directories(dest.parent_path(), ec);
  if (ec) throw StoreError("cannot create " + dest.parent_path().string() + ": " + ec.message());
  fs::path tmp = temp_name(dest.parent_path());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) {
      fs::remove(tmp, ec);
      throw StoreError("cannot write blob " + digest);
    }
  }
  fs::rename(tmp, dest, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw StoreError("cannot store blob " + digest + ": " + ec.message());
  }
  return digest;
}

std::string BlobStore::put_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw StoreError("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return put(ss.str());
}

std::string BlobStore::get(std::string_view digest) const {
  fs::path p = path_for(digest);
  std::ifstream in(p, std::ios::binary);
  if (!in) throw CorruptionError("missing blob " + std::string(digest));
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void BlobStore::copy_to(std::string_view digest, const fs::path& dest) const {
  fs::path src = path_for(digest);
  std::error_code ec;
  if (!fs::exists(src, ec)) throw CorruptionError("missing blob " + std::string(digest));
  if (dest.has_parent_path()) fs::create_directories(dest.parent_path(), ec);
  fs::copy_file(src, dest, fs::copy_options::overwrite_existing, ec);
  if (ec) throw StoreError("cannot copy blob to " + dest.string() + ": " + ec.message());
}

bool BlobStore::contains(std::string_view digest) const {
  if (!is_hex_digest(digest)) return false;
  std::error_code ec;
  return fs::is_regular_file(path_for(digest), ec);
}

std::uint64_t BlobStore::size_of(std::string_view digest) const {
  std::error_code ec;
  auto n = fs::file_size(path_for(digest), ec);
  return ec ? 0 : n;
}

std::vector<std::string> BlobStore::list() const {
  std::vector<std::string> out;
  std::error_code ec;
  if (!fs::is_directory(root_, ec)) return out;
  for (const auto& dir : fs::directory_iterator(root_)) {
    if (!dir.is_directory()) continue;
    std::string hh = dir.path().filename().string();
    for (const auto& f : fs::directory_iterator(dir.path())) {
      std::string name = hh + f.path().filename().string();
      if (f.is_regular_file() && is_hex_digest(name)) out.push_back(name);
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::uint64_t BlobStore::total_bytes() const {
  std::uint64_t total = 0;
  for (const auto& d : list()) total += size_of(d);
  return total;
}

bool BlobStore::verify(std::string_view digest) const {
  try {
    return sha256_file_hex(path_for(digest)) == digest;
  } catch (const Error&) {
    return false;
  }
}

std::vector<std::string> BlobStore::verify_all() const {
  std::vector<std::string> bad;
  for (const auto& d : list()) {
    if (!verify(d)) bad.push_back(d);
  }
  return bad;
}

void BlobStore::remove(std::string_view digest) {
  std::error_code ec;
  fs::remove(path_for(digest), ec);
}

}  // namespace nbreplay
