#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace semtok {

using Token = std::int32_t;

// Marker for a slot that was transmitted but not received.
inline constexpr Token kErased = -1;
// Text-stream filler; the text slot never carries a real token here.
inline constexpr Token kPad = -2;

// One frame's RVQ token indices, depth 1 (semantic) first.
struct TokenColumn {
  std::uint32_t frame_index = 0;
  std::vector<Token> tokens;

  bool operator==(const TokenColumn&) const = default;
};

enum class SlotState : std::uint8_t { kAbsent = 0, kPresent = 1, kErased = 2 };

// A depth position as it travels on the wire. `level` is the transmission
// level (0 dropped, 1 once, 2 primary plus redundant copy).
struct TokenSlot {
  Token token = 0;
  std::uint8_t level = 0;
  SlotState state = SlotState::kAbsent;

  bool operator==(const TokenSlot&) const = default;
};

struct TransmitSet {
  std::uint32_t frame_index = 0;
  std::vector<TokenSlot> slots;

  std::size_t present_count() const {
    std::size_t n = 0;
    for (const auto& s : slots) n += s.state == SlotState::kPresent;
    return n;
  }
  std::size_t redundant_count() const {
    std::size_t n = 0;
    for (const auto& s : slots) n += s.state == SlotState::kPresent && s.level == 2;
    return n;
  }
  std::size_t erased_count() const {
    std::size_t n = 0;
    for (const auto& s : slots) n += s.state == SlotState::kErased;
    return n;
  }

  bool operator==(const TransmitSet&) const = default;
};

}  // namespace semtok
