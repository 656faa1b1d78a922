#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <string_view>

namespace nbreplay {

// Incremental SHA-256. Digests are reported as 64 lowercase hex characters.
class Sha256 {
 public:
  Sha256();
  ~Sha256();
  Sha256(Sha256&&) noexcept;
  Sha256& operator=(Sha256&&) noexcept;

  Sha256& update(std::string_view bytes);
  Sha256& update(const void* data, std::size_t size);
  std::string hex_digest();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

std::string sha256_hex(std::string_view bytes);

// Streams the file; throws InputError naming the path when it cannot be read.
std::string sha256_file_hex(const std::filesystem::path& path);

bool is_hex_digest(std::string_view s);

}  // namespace nbreplay
