#pragma once

#include <cstdint>
#include <vector>

#include "semtok/types.hpp"

namespace semtok {

// Hidden-Markov token source. The hidden state mostly advances around a cycle, so the
// previous token carries information about the next one that copying cannot exploit.
// Each (state, depth) pair owns a codeword drawn from the structure seed; emissions
// hit it with probability `fidelity` and are uniform otherwise.
struct HmmSourceOptions {
  int states = 8;
  double advance = 0.6;  // s -> s+1
  double stay = 0.3;     // s -> s; the remainder jumps uniformly
  double fidelity = 0.85;
  std::uint64_t structure_seed = 7;
};

std::vector<TokenColumn> hmm_token_source(int n_frames, int n_q, int codebook_size, std::uint64_t seed,
                                          const HmmSourceOptions& opts = {});

// TOK1 corpus: magic, n_q (u32), then u16 tokens frame-major, depth-minor.
std::vector<std::uint8_t> serialize_tokens(const std::vector<TokenColumn>& columns, int n_q);
std::vector<TokenColumn> parse_tokens(const std::vector<std::uint8_t>& bytes, int* n_q_out = nullptr);

}  // namespace semtok
