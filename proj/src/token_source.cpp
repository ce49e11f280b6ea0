#include "semtok/token_source.hpp"

#include <stdexcept>

#include "semtok/binary_io.hpp"
#include "semtok/rng.hpp"

namespace semtok {

std::vector<TokenColumn> hmm_token_source(int n_frames, int n_q, int codebook_size, std::uint64_t seed,
                                          const HmmSourceOptions& opts) {
  if (n_frames < 1 || n_q < 1 || codebook_size < 2 || opts.states < 1)
    throw std::invalid_argument("invalid HMM source shape");
  if (opts.advance < 0 || opts.stay < 0 || opts.advance + opts.stay > 1.0 || opts.fidelity < 0 ||
      opts.fidelity > 1.0)
    throw std::invalid_argument("invalid HMM source probabilities");

  CounterRng structure(opts.structure_seed);
  std::vector<Token> codeword(static_cast<std::size_t>(opts.states) * n_q);
  for (auto& c : codeword) c = static_cast<Token>(structure.below(static_cast<std::uint64_t>(codebook_size)));

  CounterRng rng(derive_seed(seed, "hmm"));
  int state = static_cast<int>(rng.below(static_cast<std::uint64_t>(opts.states)));
  std::vector<TokenColumn> out;
  out.reserve(static_cast<std::size_t>(n_frames));
  for (int n = 0; n < n_frames; ++n) {
    if (n > 0) {
      const double u = rng.uniform();
      if (u < opts.advance)
        state = (state + 1) % opts.states;
      else if (u >= opts.advance + opts.stay)
        state = static_cast<int>(rng.below(static_cast<std::uint64_t>(opts.states)));
    }
    TokenColumn c{static_cast<std::uint32_t>(n), std::vector<Token>(static_cast<std::size_t>(n_q))};
    for (int d = 0; d < n_q; ++d) {
      c.tokens[d] = rng.uniform() < opts.fidelity
                        ? codeword[static_cast<std::size_t>(state) * n_q + d]
                        : static_cast<Token>(rng.below(static_cast<std::uint64_t>(codebook_size)));
    }
    out.push_back(std::move(c));
  }
  return out;
}

std::vector<std::uint8_t> serialize_tokens(const std::vector<TokenColumn>& columns, int n_q) {
  ByteWriter w;
  w.magic("TOK1");
  w.u32(static_cast<std::uint32_t>(n_q));
  for (const auto& c : columns) {
    if (static_cast<int>(c.tokens.size()) != n_q) throw std::invalid_argument("column depth != n_q");
    for (Token t : c.tokens) {
      if (t < 0 || t > 0xFFFF) throw std::invalid_argument("token does not fit 16 bits");
      w.u16(static_cast<std::uint16_t>(t));
    }
  }
  return w.take();
}

std::vector<TokenColumn> parse_tokens(const std::vector<std::uint8_t>& bytes, int* n_q_out) {
  ByteReader r(bytes);
  r.expect_magic("TOK1");
  const auto n_q = static_cast<int>(r.u32());
  if (n_q < 1) throw FormatError("token corpus n_q must be >= 1");
  if (r.remaining() % (2u * n_q) != 0) throw FormatError("token corpus size is not a whole frame count");
  const std::size_t frames = r.remaining() / (2u * n_q);
  std::vector<TokenColumn> out(frames);
  for (std::size_t f = 0; f < frames; ++f) {
    out[f].frame_index = static_cast<std::uint32_t>(f);
    out[f].tokens.resize(static_cast<std::size_t>(n_q));
    for (auto& t : out[f].tokens) t = r.u16();
  }
  if (n_q_out) *n_q_out = n_q;
  return out;
}

}  // namespace semtok
