#include "semtok/framing.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "semtok/binary_io.hpp"
#include "semtok/log.hpp"

namespace semtok {

void FramingConfig::validate() const {
  if (n_q < 1 || n_q > 64) throw std::invalid_argument("framing n_q must be in [1, 64]");
  if (bits_per_token < 1 || bits_per_token > 16)
    throw std::invalid_argument("bits_per_token must be in [1, 16]");
  if (frames_per_packet < 1 || frames_per_packet > 255)
    throw std::invalid_argument("frames_per_packet must be in [1, 255]");
  if (interleave_base != 0 && interleave_base != 1)
    throw std::invalid_argument("interleave_base must be 0 or 1");
}

std::pair<TransmitSet, TransmitSet> interleave(const TransmitSet& a, const TransmitSet& b,
                                               const FramingConfig& cfg) {
  if (b.frame_index != a.frame_index + 1 && a.frame_index != b.frame_index + 1)
    throw std::invalid_argument("interleaving needs adjacent frames");
  if (a.slots.size() != b.slots.size()) throw std::invalid_argument("frame depth mismatch");
  auto out = std::make_pair(a, b);
  for (std::size_t d = 0; d < a.slots.size(); ++d)
    if (cfg.swaps_depth(static_cast<int>(d))) std::swap(out.first.slots[d], out.second.slots[d]);
  return out;
}

std::pair<TransmitSet, TransmitSet> deinterleave(const TransmitSet& a, const TransmitSet& b,
                                                 const FramingConfig& cfg) {
  return interleave(a, b, cfg);
}

std::optional<std::size_t> interleave_partner(std::size_t frame, std::size_t n_frames,
                                              const FramingConfig& cfg) {
  const auto fpp = static_cast<std::size_t>(cfg.frames_per_packet);
  std::size_t partner;
  if (fpp == 1) {
    partner = frame % 2 == 0 ? frame + 1 : frame - 1;
  } else if (frame % fpp == fpp - 1) {
    partner = frame + 1;
  } else if (frame % fpp == 0 && frame > 0) {
    partner = frame - 1;
  } else {
    return std::nullopt;
  }
  if (partner >= n_frames) return std::nullopt;
  return partner;
}

namespace {

void swap_pairs(std::vector<TransmitSet>& frames, const FramingConfig& cfg) {
  for (std::size_t f = 0; f < frames.size(); ++f) {
    const auto partner = interleave_partner(f, frames.size(), cfg);
    if (!partner || *partner < f) continue;
    auto [a, b] = interleave(frames[f], frames[*partner], cfg);
    frames[f] = std::move(a);
    frames[*partner] = std::move(b);
  }
}

class BitWriter {
 public:
  void put(std::uint32_t value, int bits) {
    for (int i = 0; i < bits; ++i) {
      if (bit_ % 8 == 0) bytes_.push_back(0);
      if ((value >> i) & 1u) bytes_.back() |= static_cast<std::uint8_t>(1u << (bit_ % 8));
      ++bit_;
    }
  }
  std::size_t bits() const { return bit_; }
  std::vector<std::uint8_t> take() { return std::move(bytes_); }

 private:
  std::vector<std::uint8_t> bytes_;
  std::size_t bit_ = 0;
};

class BitReader {
 public:
  explicit BitReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}
  std::uint32_t get(int bits) {
    if (bit_ + static_cast<std::size_t>(bits) > bytes_.size() * 8)
      throw FormatError("packet payload shorter than its descriptors imply");
    std::uint32_t v = 0;
    for (int i = 0; i < bits; ++i, ++bit_)
      v |= static_cast<std::uint32_t>((bytes_[bit_ / 8] >> (bit_ % 8)) & 1u) << i;
    return v;
  }
  std::size_t position() const { return bit_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t bit_ = 0;
};

void check_frame(const TransmitSet& f, const FramingConfig& cfg) {
  if (static_cast<int>(f.slots.size()) != cfg.n_q) throw std::invalid_argument("frame depth != n_q");
}

void check_token(Token t, const FramingConfig& cfg) {
  if (t < 0 || t >= (1 << cfg.bits_per_token))
    throw std::invalid_argument("token index " + std::to_string(t) + " exceeds " +
                                std::to_string(cfg.bits_per_token) + "-bit capacity");
}

}  // namespace

void interleave_stream(std::vector<TransmitSet>& frames, const FramingConfig& cfg) {
  if (cfg.interleave) swap_pairs(frames, cfg);
}

void deinterleave_stream(std::vector<TransmitSet>& frames, const FramingConfig& cfg) {
  if (cfg.interleave) swap_pairs(frames, cfg);
}

PacketBits packet_bits(const Packet& packet, const FramingConfig& cfg) {
  PacketBits b;
  b.header = kPacketHeaderBytes * 8;
  b.descriptor = 2u * cfg.n_q * (packet.frames.size() + packet.piggyback.size());
  for (const auto& f : packet.frames)
    for (const auto& s : f.slots) b.payload += s.level > 0 ? cfg.bits_per_token : 0;
  for (const auto& f : packet.piggyback)
    for (const auto& s : f.slots) b.piggyback += s.level == 2 ? cfg.bits_per_token : 0;
  const std::size_t body = b.descriptor + b.payload + b.piggyback;
  b.padding = (8 - body % 8) % 8;
  return b;
}

std::vector<std::uint8_t> serialize_packet(const Packet& packet, const FramingConfig& cfg) {
  cfg.validate();
  if (packet.frames.empty() || packet.frames.size() > 255 || packet.piggyback.size() > 255)
    throw std::invalid_argument("packet must carry 1..255 frames");
  ByteWriter header;
  header.u16(packet.seq_no);
  header.u32(packet.first_frame_index);
  header.u8(static_cast<std::uint8_t>(packet.frames.size()));
  header.u8(static_cast<std::uint8_t>(packet.piggyback.size()));

  BitWriter body;
  for (const auto* section : {&packet.frames, &packet.piggyback})
    for (const auto& f : *section) {
      check_frame(f, cfg);
      for (const auto& s : f.slots) {
        if (s.level > 2) throw std::invalid_argument("mask level out of range");
        body.put(s.level, 2);
      }
    }
  for (const auto& f : packet.frames)
    for (const auto& s : f.slots)
      if (s.level > 0) {
        check_token(s.token, cfg);
        body.put(static_cast<std::uint32_t>(s.token), cfg.bits_per_token);
      }
  for (const auto& f : packet.piggyback)
    for (const auto& s : f.slots)
      if (s.level == 2) {
        check_token(s.token, cfg);
        body.put(static_cast<std::uint32_t>(s.token), cfg.bits_per_token);
      }

  auto out = header.take();
  const auto bits = body.take();
  out.insert(out.end(), bits.begin(), bits.end());
  return out;
}

Packet parse_packet(std::span<const std::uint8_t> bytes, const FramingConfig& cfg) {
  cfg.validate();
  ByteReader header(bytes.first(std::min(bytes.size(), kPacketHeaderBytes)));
  Packet p;
  p.seq_no = header.u16();
  p.first_frame_index = header.u32();
  const int n_frames = header.u8();
  const int n_piggy = header.u8();
  if (n_frames == 0) throw FormatError("packet carries no frames");

  BitReader body(bytes.subspan(kPacketHeaderBytes));
  auto read_descriptors = [&](int count, std::uint32_t first) {
    std::vector<TransmitSet> frames(static_cast<std::size_t>(count));
    for (int f = 0; f < count; ++f) {
      frames[f].frame_index = first + static_cast<std::uint32_t>(f);
      frames[f].slots.resize(static_cast<std::size_t>(cfg.n_q));
      for (auto& s : frames[f].slots) {
        s.level = static_cast<std::uint8_t>(body.get(2));
        if (s.level > 2) throw FormatError("invalid mask descriptor value 3");
      }
    }
    return frames;
  };
  if (n_piggy > 0 && p.first_frame_index < static_cast<std::uint32_t>(n_piggy))
    throw FormatError("piggyback section precedes frame 0");
  p.frames = read_descriptors(n_frames, p.first_frame_index);
  p.piggyback = read_descriptors(n_piggy, p.first_frame_index - static_cast<std::uint32_t>(n_piggy));
  for (auto& f : p.frames)
    for (auto& s : f.slots)
      if (s.level > 0) {
        s.token = static_cast<Token>(body.get(cfg.bits_per_token));
        s.state = SlotState::kPresent;
      }
  for (auto& f : p.piggyback)
    for (auto& s : f.slots)
      if (s.level == 2) {
        s.token = static_cast<Token>(body.get(cfg.bits_per_token));
        s.state = SlotState::kPresent;
      }
  const std::size_t used = body.position();
  const std::size_t available = (bytes.size() - kPacketHeaderBytes) * 8;
  if (available - used >= 8) throw FormatError("packet longer than its descriptors imply");
  for (std::size_t bit = used; bit < available; ++bit)
    if ((bytes[kPacketHeaderBytes + bit / 8] >> (bit % 8)) & 1u) throw FormatError("non-zero padding");
  return p;
}

std::vector<Packet> packetize(std::span<const TransmitSet> frames, const FramingConfig& cfg) {
  cfg.validate();
  std::vector<Packet> packets;
  const auto fpp = static_cast<std::size_t>(cfg.frames_per_packet);
  for (std::size_t start = 0; start < frames.size(); start += fpp) {
    Packet p;
    p.seq_no = static_cast<std::uint16_t>(packets.size() & 0xFFFF);
    p.first_frame_index = static_cast<std::uint32_t>(start);
    for (std::size_t f = start; f < std::min(frames.size(), start + fpp); ++f) {
      check_frame(frames[f], cfg);
      TransmitSet t = frames[f];
      t.frame_index = static_cast<std::uint32_t>(f);
      for (auto& s : t.slots) {
        if (s.level > 2) throw std::invalid_argument("mask level out of range");
        if (s.level > 0) check_token(s.token, cfg);
      }
      p.frames.push_back(std::move(t));
    }
    if (!packets.empty()) {
      for (const auto& prev : packets.back().frames) {
        TransmitSet copy = prev;
        for (auto& s : copy.slots) {
          if (s.level != 2) {
            s.token = 0;
            s.state = SlotState::kAbsent;
          }
        }
        p.piggyback.push_back(std::move(copy));
      }
    }
    packets.push_back(std::move(p));
  }
  if (!packets.empty()) {
    std::size_t dropped = 0;
    for (const auto& f : packets.back().frames) dropped += f.redundant_count();
    if (dropped > 0)
      warn("final packet has no successor; dropping " + std::to_string(dropped) + " redundant copies");
  }
  return packets;
}

std::vector<TransmitSet> depacketize(std::span<const std::optional<std::vector<std::uint8_t>>> received,
                                     std::size_t n_frames, const FramingConfig& cfg,
                                     DepacketizeStats* stats) {
  cfg.validate();
  const std::size_t n_packets = cfg.packet_count(n_frames);
  if (received.size() != n_packets)
    throw std::invalid_argument("received packet count does not match frame count");
  const auto fpp = static_cast<std::size_t>(cfg.frames_per_packet);
  DepacketizeStats local;
  local.packets = n_packets;

  std::vector<std::optional<Packet>> parsed(n_packets);
  for (std::size_t k = 0; k < n_packets; ++k) {
    if (!received[k]) {
      ++local.lost;
      continue;
    }
    try {
      Packet p = parse_packet(*received[k], cfg);
      const std::size_t expect_frames = std::min(fpp, n_frames - k * fpp);
      if (p.seq_no != static_cast<std::uint16_t>(k & 0xFFFF) || p.first_frame_index != k * fpp ||
          p.frames.size() != expect_frames || (k > 0 && p.piggyback.size() != fpp) ||
          (k == 0 && !p.piggyback.empty()))
        throw FormatError("packet header inconsistent with stream position");
      parsed[k] = std::move(p);
    } catch (const FormatError&) {
      ++local.corrupt;
      ++local.lost;
    }
  }

  std::vector<TransmitSet> out(n_frames);
  for (std::size_t k = 0; k < n_packets; ++k) {
    const std::size_t first = k * fpp;
    const std::size_t count = std::min(fpp, n_frames - first);
    if (parsed[k]) {
      for (std::size_t i = 0; i < count; ++i) out[first + i] = parsed[k]->frames[i];
      continue;
    }
    const bool have_copy = k + 1 < n_packets && parsed[k + 1];
    for (std::size_t i = 0; i < count; ++i) {
      TransmitSet t;
      t.frame_index = static_cast<std::uint32_t>(first + i);
      t.slots.resize(static_cast<std::size_t>(cfg.n_q));
      if (have_copy) {
        const auto& mirror = parsed[k + 1]->piggyback[i];
        for (std::size_t d = 0; d < t.slots.size(); ++d) {
          auto& s = t.slots[d];
          s.level = mirror.slots[d].level;
          if (s.level == 2) {
            s.token = mirror.slots[d].token;
            s.state = SlotState::kPresent;
            ++local.recovered_from_piggyback;
          } else {
            s.state = s.level == 1 ? SlotState::kErased : SlotState::kAbsent;
          }
        }
      } else {
        // Nothing known about this frame: every depth is a candidate for concealment.
        for (auto& s : t.slots) s.state = SlotState::kErased;
      }
      out[first + i] = std::move(t);
    }
  }
  deinterleave_stream(out, cfg);
  if (stats) *stats = local;
  return out;
}

void OverheadProfile::validate() const {
  if (r_payload < 0 || n_pkt < 0 || r_header < 0 || r_ctrl < 0)
    throw std::invalid_argument("overhead profile entries must be non-negative");
}

double overhead_estimate(const OverheadProfile& profile) {
  profile.validate();
  return profile.r_payload + profile.n_pkt * profile.r_header + profile.r_ctrl;
}

std::uint8_t quantize_loss(double p) {
  if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("loss probability must be in [0, 1]");
  return static_cast<std::uint8_t>(std::lround(255.0 * p));
}

double feedback_rate_bps(double period_ms, int bits_per_message) {
  if (!(period_ms > 0.0)) throw std::invalid_argument("feedback period must be > 0");
  return bits_per_message * 1000.0 / period_ms;
}

std::string packet_trace_csv(std::span<const PacketTraceRow> rows) {
  std::ostringstream os;
  os << "seq_no,first_frame,last_frame,payload_bits,piggyback_bits,lost\n";
  for (const auto& r : rows)
    os << r.seq_no << ',' << r.first_frame << ',' << r.last_frame << ',' << r.payload_bits << ','
       << r.piggyback_bits << ',' << (r.lost ? 1 : 0) << '\n';
  return os.str();
}

}  // namespace semtok
