#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "semtok/rvq.hpp"
#include "semtok/types.hpp"

namespace semtok {

struct ImportancePair {
  double i_s = 0.0;  // semantic importance
  double i_c = 0.0;  // channel (redundancy) importance

  bool operator==(const ImportancePair&) const = default;
  void validate() const;
};

// Per-depth transmission levels in {0,1,2}, m = m_s + m_c.
struct Mask {
  std::vector<std::uint8_t> levels;
  std::vector<std::uint8_t> semantic;  // m_s
  std::vector<std::uint8_t> channel;   // m_c
  ImportancePair source;
  int l_budget = 0;

  int sum() const;
  bool operator==(const Mask&) const = default;
};

enum class ControllerMode { kHeuristic, kLearned, kFixed };

struct HeuristicParams {
  double kappa = 2.0;
  double theta = 0.0;
  double c0 = 0.1;
  double c1 = 2.0;
};

struct ControllerConfig {
  int l_budget = 16;
  double tau = 20.0;
  double gamma = 0.0;
  ControllerMode mode = ControllerMode::kHeuristic;
  HeuristicParams heuristic;

  void validate() const;
};

// H^j(i): 1 if j <= i. Depths are 1-based.
int step(int j, double i);

// Smooth surrogate (1/2tau) log(cosh(tau(i-j)) / cosh(tau(j+1-i))) + 1/2, evaluated
// without forming cosh so large tau*|i-j| cannot overflow.
double soft_step(int j, double i, double tau);

Mask importance_to_mask(const ImportancePair& importance, int l_budget, int n_q);

struct SteMask {
  std::vector<double> soft_semantic;  // H_soft^j(L * i_s)
  std::vector<double> soft_channel;   // H_soft^j(L * i_c)
  Mask forward;                       // hard mask, the forward value of the straight-through composition
};

SteMask ste_mask(const ImportancePair& importance, int l_budget, double tau, int n_q);

// Redistributes a mask's slot budget into single copies on the shallowest depths, so a
// stream without redundancy can be compared at the same payload rate.
Mask without_redundancy(const Mask& mask);

// Mask from explicit levels (fixed controller mode).
Mask fixed_mask(std::span<const std::uint8_t> levels);

TransmitSet apply_mask(const TokenColumn& column, const Mask& mask);

double bitrate_penalty(const Mask& mask, double gamma);

// 1-D convolution layer, weights indexed [out][in][tap].
struct ConvLayer {
  int out_channels = 0;
  int in_channels = 0;
  int kernel = 1;
  std::vector<float> weights;
  std::vector<float> bias;

  float w(int o, int i, int k) const {
    return weights[(static_cast<std::size_t>(o) * in_channels + i) * kernel + k];
  }
};

// Semantic branch (four kernel-3 convs with Snake between them) followed by the
// channel branch (two kernel-1 convs over [I_sem, p]) and a sigmoid.
struct ControllerWeights {
  std::vector<ConvLayer> semantic;
  std::vector<ConvLayer> channel;
  double snake_alpha = 1.0;

  void validate(int feature_dim) const;

  static ControllerWeights zeros(int feature_dim, std::span<const int> semantic_dims = kSemanticDims,
                                 int channel_hidden = 16);
  static ControllerWeights random(int feature_dim, std::uint64_t seed,
                                  std::span<const int> semantic_dims = kSemanticDims,
                                  int channel_hidden = 16);

  static constexpr int kSemanticDimsArr[4] = {256, 128, 64, 1};
  static constexpr std::span<const int> kSemanticDims{kSemanticDimsArr};
};

double snake(double x, double alpha);

ImportancePair heuristic_importance(const LatentFeature& z, double p, const HeuristicParams& params);

// Forward pass over a sequence of frames (time axis, same zero padding); one pair per frame.
std::vector<ImportancePair> learned_importance(std::span<const LatentFeature> frames, double p,
                                               const ControllerWeights& weights);

// Per-frame importance. Learned mode sees the frame as a length-1 sequence.
ImportancePair compute_importance(const LatentFeature& z, double p, const ControllerWeights* weights,
                                  const ControllerConfig& cfg);

std::vector<std::uint8_t> serialize_controller_weights(const ControllerWeights& weights);
ControllerWeights parse_controller_weights(std::span<const std::uint8_t> bytes);
void save_controller_weights(const std::filesystem::path& path, const ControllerWeights& weights);
ControllerWeights load_controller_weights(const std::filesystem::path& path);

}  // namespace semtok
