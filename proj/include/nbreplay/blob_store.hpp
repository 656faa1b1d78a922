#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace nbreplay {

// Content-addressed store: blobs live at <root>/<hh>/<remaining 62 hex chars>.
class BlobStore {
 public:
  explicit BlobStore(std::filesystem::path root);

  const std::filesystem::path& root() const { return root_; }

  // Stores bytes under their SHA-256 and returns the digest. Writes only when
  // absent (temp file + rename), so concurrent identical puts are safe.
  std::string put(std::string_view bytes);
  std::string put_file(const std::filesystem::path& path);

  // Throws CorruptionError when the blob is missing.
  std::string get(std::string_view digest) const;
  void copy_to(std::string_view digest, const std::filesystem::path& dest) const;

  bool contains(std::string_view digest) const;
  std::filesystem::path path_for(std::string_view digest) const;
  std::uint64_t size_of(std::string_view digest) const;

  std::vector<std::string> list() const;
  std::uint64_t total_bytes() const;
  // Digests whose stored bytes no longer hash to their name.
  std::vector<std::string> verify_all() const;
  bool verify(std::string_view digest) const;
  void remove(std::string_view digest);

 private:
  std::filesystem::path root_;
};

}  // namespace nbreplay
