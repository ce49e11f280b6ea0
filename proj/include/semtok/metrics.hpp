#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "semtok/concealment.hpp"
#include "semtok/controller.hpp"
#include "semtok/rvq.hpp"
#include "semtok/types.hpp"

namespace semtok {

struct ReconLoss {
  double value = 0.0;
  std::size_t capped = 0;  // truth tokens whose probability fell below exp(-cap)
};

// Distributions for one step, indexed by stream; an empty entry is not scored.
using StepDistributions = std::vector<std::vector<double>>;

// Weighted cross-entropy of the true tokens. `lambdas[k-1]` weighs stream k (the
// n_q token streams); the text stream is padding and contributes 0. Each step
// averages over the streams it scores, then steps are averaged.
ReconLoss recon_loss(std::span<const StepDistributions> predictions, std::span<const ModelInputs> truth,
                     std::span<const double> lambdas, double ce_cap = 30.0);

// Same reduction from per-position truth probabilities ([step][stream], NaN = skip).
ReconLoss recon_loss_from_probabilities(std::span<const std::vector<double>> probabilities,
                                        std::span<const double> lambdas, double ce_cap = 30.0);

std::vector<double> default_lambdas(int n_q, double semantic_weight = 100.0);

// recon + gamma * mean(mask sums); an empty stream contributes no penalty.
double total_loss(double recon, std::span<const int> mask_sums, double gamma);

struct LatencyProfile {
  double t_context = 0.0;
  double t_coder = 0.0;
  double t_ra = 0.0;
  double t_token = 0.0;
  double expected_tokens = 0.0;
  double t_transmit = 0.0;

  void validate() const;
};

double latency_estimate(const LatencyProfile& profile);

// mean(sum of levels) * bits_per_token * frame_rate
double payload_bitrate(std::span<const int> mask_sums, const CodecConfig& cfg);
double payload_bitrate(std::span<const Mask> masks, const CodecConfig& cfg);

struct RecoveryStats {
  std::size_t frames = 0;  // frames with at least one transmitted slot
  std::size_t transmitted_slots = 0;
  std::size_t erased_slots = 0;
  std::size_t concealment_errors = 0;
  std::size_t erased_frames = 0;
  std::vector<std::size_t> transmitted_by_depth;
  std::vector<std::size_t> erased_by_depth;
  std::vector<std::size_t> errors_by_depth;

  double erasure_rate() const;
  double post_error_rate() const;
  double frame_erasure_rate() const;
  double erasure_rate_at(std::size_t depth0) const;
  double post_error_rate_at(std::size_t depth0) const;
};

// `sent` carries the sender's levels and true tokens; `received` the post-depacketize
// view; `concealed` the reconstructed columns.
RecoveryStats recovery_stats(std::span<const TransmitSet> sent, std::span<const TransmitSet> received,
                             std::span<const TokenColumn> concealed);

}  // namespace semtok
