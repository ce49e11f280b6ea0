#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "semtok/framing.hpp"
#include "semtok/rng.hpp"

namespace semtok {

struct GEParams {
  double p_gb = 0.0;  // Good -> Bad per step
  double p_bg = 1.0;  // Bad -> Good per step
  double loss_good = 0.0;
  double loss_bad = 1.0;

  void validate() const;
  double stationary_bad() const { return p_gb / (p_gb + p_bg); }
  double mean_burst() const { return 1.0 / p_bg; }
  double average_loss() const {
    const double pi_b = stationary_bad();
    return (1.0 - pi_b) * loss_good + pi_b * loss_bad;
  }
};

// Pure-erasure Gilbert parameters with stationary loss p_target and mean burst length.
GEParams ge_params_from_target(double p_target, double mean_burst);

enum class GEState : std::uint8_t { kGood = 0, kBad = 1 };

// Loss marks for a stream of units; `state` is filled for the GE channel.
struct LossTrace {
  std::vector<std::uint8_t> lost;
  std::vector<GEState> state;

  double loss_rate() const;
  // Mean length of maximal runs of consecutive losses.
  double mean_burst_length() const;
};

LossTrace uniform_loss(std::size_t n_units, double p, std::uint64_t seed);

class GilbertElliottChannel {
 public:
  enum class Start { kStationary, kGood, kBad };

  GilbertElliottChannel(const GEParams& params, std::uint64_t seed, Start start = Start::kStationary);

  // Draws this unit's loss from the current state, then steps the chain.
  bool next();
  GEState state() const { return state_; }
  std::uint64_t steps() const { return step_; }

 private:
  GEParams params_;
  CounterRng rng_;
  GEState state_ = GEState::kGood;
  std::uint64_t step_ = 0;
};

LossTrace ge_loss(std::size_t n_units, const GEParams& params, std::uint64_t seed,
                  GilbertElliottChannel::Start start = GilbertElliottChannel::Start::kStationary);

struct EstimatorConfig {
  double window_ms = 2000.0;
  double feedback_period_ms = 100.0;
  double packet_period_ms = 160.0;
};

// Receiver-side estimate: packet k arrives at (k+1) * packet_period; every feedback
// period the fraction of missing packets among those arrived in the trailing window is
// quantised to one byte. An empty window repeats the previous estimate (initially 0).
std::vector<FeedbackMessage> estimate_loss(std::span<const std::uint8_t> packet_lost,
                                           double duration_ms, const EstimatorConfig& cfg);

// Latest feedback value available at time_ms when messages take one period to act.
double delayed_feedback(std::span<const FeedbackMessage> messages, double time_ms, double delay_ms);

std::string loss_trace_csv(const LossTrace& trace);

}  // namespace semtok
