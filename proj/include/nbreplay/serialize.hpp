#pragma once

#include <map>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "nbreplay/errors.hpp"
#include "nbreplay/value.hpp"

namespace nbreplay {

// Canonical encoding: one tag byte, a 4-byte big-endian payload length, then
// the payload. Integers are 8-byte big-endian two's complement, floats the
// big-endian IEEE-754 binary64 bit pattern, strings raw UTF-8. List payloads
// concatenate their encoded items; map payloads concatenate encoded key/value
// pairs sorted bytewise by encoded key.
namespace tag {
inline constexpr std::uint8_t kUnit = 0x00;
inline constexpr std::uint8_t kInt = 0x01;
inline constexpr std::uint8_t kFloat = 0x02;
inline constexpr std::uint8_t kBool = 0x03;
inline constexpr std::uint8_t kString = 0x04;
inline constexpr std::uint8_t kList = 0x05;
inline constexpr std::uint8_t kMap = 0x06;
inline constexpr std::uint8_t kFn = 0x07;
inline constexpr std::uint8_t kTaskRef = 0x08;
}  // namespace tag

std::string encode(const Datum& d);
// Throws CorruptionError on malformed or non-canonical input.
Datum decode(std::string_view bytes);

// Encoding of a scalar map key; throws EvalError for non-scalars.
std::string encode_key(const Value& key);

// A value that cannot be checkpointed; carries the statement that created it.
class NonSerializableValue : public SerializationError {
 public:
  NonSerializableValue(const std::string& message, StmtRef origin)
      : SerializationError(message), origin_(std::move(origin)) {}
  const StmtRef& origin() const { return origin_; }

 private:
  StmtRef origin_;
};

struct ToDatumOptions {
  bool allow_task_refs = false;  // task arguments keep TaskRef placeholders
};

// Deep-copies a value out of the heap. When heap_ids is given it receives the
// id of every container in pre-order, aligned with the datum's containers.
// Throws SerializationError for cycles, NonSerializableValue for handles/task refs.
Datum to_datum(const KernelState& state, const Value& v, std::vector<HeapId>* heap_ids = nullptr,
               ToDatumOptions opts = {});

struct NonSerializable {
  StmtRef origin;
  std::string reason;
};

std::variant<std::string, NonSerializable> serialize_value(const KernelState& state, const Value& v);

// audit heap id -> live heap id, shared across the entries of one restore.
using HeapIdMap = std::map<HeapId, HeapId>;

// Builds a value in `state`. With heap_ids/map, containers whose recorded id was
// already materialised (and whose contents match) are reused, restoring aliasing.
Value materialize(KernelState& state, const Datum& d, const std::vector<HeapId>* heap_ids = nullptr,
                  HeapIdMap* id_map = nullptr);

// Copies a value between states (deep for containers).
Value transfer(const KernelState& from, const Value& v, KernelState& to);

}  // namespace nbreplay
