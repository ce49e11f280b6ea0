#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "semtok/types.hpp"

namespace semtok {

struct FramingConfig {
  int n_q = 8;
  int bits_per_token = 11;
  int frames_per_packet = 2;
  bool interleave = true;
  // 0: swap 0-based even depth positions (0,2,4,...); 1: swap 1-based even positions.
  int interleave_base = 0;

  void validate() const;
  bool swaps_depth(int depth0) const { return (depth0 + interleave_base) % 2 == 0; }
  std::size_t packet_count(std::size_t n_frames) const {
    return (n_frames + frames_per_packet - 1) / frames_per_packet;
  }
};

// Exchanges the swapped depth slots (absence markers included) between adjacent frames.
std::pair<TransmitSet, TransmitSet> interleave(const TransmitSet& a, const TransmitSet& b,
                                               const FramingConfig& cfg);
std::pair<TransmitSet, TransmitSet> deinterleave(const TransmitSet& a, const TransmitSet& b,
                                                 const FramingConfig& cfg);

// Frame paired with `frame` for interleaving, chosen so the two land in different packets.
std::optional<std::size_t> interleave_partner(std::size_t frame, std::size_t n_frames,
                                              const FramingConfig& cfg);
void interleave_stream(std::vector<TransmitSet>& frames, const FramingConfig& cfg);
void deinterleave_stream(std::vector<TransmitSet>& frames, const FramingConfig& cfg);

// Logical packet. `frames` is the primary section; `piggyback` mirrors the previous
// packet's frames, with tokens present only for level-2 slots.
struct Packet {
  std::uint16_t seq_no = 0;
  std::uint32_t first_frame_index = 0;
  std::vector<TransmitSet> frames;
  std::vector<TransmitSet> piggyback;

  bool operator==(const Packet&) const = default;
};

inline constexpr std::size_t kPacketHeaderBytes = 8;

struct PacketBits {
  std::size_t header = 0;      // fixed in-band header
  std::size_t descriptor = 0;  // primary + piggyback mask descriptors
  std::size_t payload = 0;     // primary token bits
  std::size_t piggyback = 0;   // redundant token bits
  std::size_t padding = 0;

  std::size_t total() const { return header + descriptor + payload + piggyback + padding; }
};

PacketBits packet_bits(const Packet& packet, const FramingConfig& cfg);

std::vector<std::uint8_t> serialize_packet(const Packet& packet, const FramingConfig& cfg);
// Throws FormatError on any header/descriptor/payload inconsistency.
Packet parse_packet(std::span<const std::uint8_t> bytes, const FramingConfig& cfg);

// Groups frames (already interleaved, if enabled) into packets and places level-2
// copies of packet k in packet k+1. The last packet's redundancy is dropped.
std::vector<Packet> packetize(std::span<const TransmitSet> frames, const FramingConfig& cfg);

struct DepacketizeStats {
  std::size_t packets = 0;
  std::size_t lost = 0;
  std::size_t corrupt = 0;
  std::size_t recovered_from_piggyback = 0;  // primary slots restored from the next packet
};

// `received[k]` holds packet k's bytes, or nullopt when lost. Returns one TransmitSet per
// frame in original order (deinterleaved), with unrecoverable slots marked erased.
std::vector<TransmitSet> depacketize(std::span<const std::optional<std::vector<std::uint8_t>>> received,
                                     std::size_t n_frames, const FramingConfig& cfg,
                                     DepacketizeStats* stats = nullptr);

struct OverheadProfile {
  double r_payload = 0.0;  // bps
  double n_pkt = 0.0;      // packets per second
  double r_header = 0.0;   // bits per packet
  double r_ctrl = 0.0;     // bps

  void validate() const;
};

double overhead_estimate(const OverheadProfile& profile);

struct FeedbackMessage {
  double time_ms = 0.0;
  std::uint8_t p_hat = 0;  // round(255 p)

  double loss() const { return p_hat / 255.0; }
};

std::uint8_t quantize_loss(double p);
// One feedback byte every period_ms.
double feedback_rate_bps(double period_ms, int bits_per_message = 8);

struct PacketTraceRow {
  std::uint16_t seq_no = 0;
  std::uint32_t first_frame = 0;
  std::uint32_t last_frame = 0;
  std::size_t payload_bits = 0;
  std::size_t piggyback_bits = 0;
  bool lost = false;
};

std::string packet_trace_csv(std::span<const PacketTraceRow> rows);

}  // namespace semtok
