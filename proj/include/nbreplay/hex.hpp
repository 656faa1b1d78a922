#pragma once

#include <string>
#include <string_view>

namespace nbreplay {

std::string to_hex(std::string_view bytes);
// Throws CorruptionError on odd length or non-hex characters.
std::string from_hex(std::string_view hex);

}  // namespace nbreplay
