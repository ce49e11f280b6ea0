#include "semtok/controller.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "semtok/binary_io.hpp"
#include "semtok/rng.hpp"

namespace semtok {

void ImportancePair::validate() const {
  if (!(i_s >= 0.0 && i_s <= 1.0) || !(i_c >= 0.0 && i_c <= 1.0))
    throw std::invalid_argument("importance values must lie in [0, 1]");
}

int Mask::sum() const { return std::accumulate(levels.begin(), levels.end(), 0); }

void ControllerConfig::validate() const {
  if (l_budget < 1 || l_budget > 16) throw std::invalid_argument("controller.L must be in [1, 16]");
  if (!(tau > 0.0)) throw std::invalid_argument("controller.tau must be > 0");
  if (!(gamma >= 0.0)) throw std::invalid_argument("controller.gamma must be >= 0");
}

int step(int j, double i) { return static_cast<double>(j) <= i ? 1 : 0; }

namespace {

// Lower half of the ramp, x = i - j - 1/2 <= 0. Below the ramp the value is written as
// log1p(y) - log1p(y e^{-2 tau}) so it never cancels against the 1/2 offset.
double soft_step_lower(double x, double tau) {
  const double a = tau * (x + 0.5);
  const double b = tau * (0.5 - x);
  if (a <= 0.0) {
    const double y = std::exp(2.0 * a);
    return (std::log1p(y) - std::log1p(y * std::exp(-2.0 * tau))) / (2.0 * tau);
  }
  return 0.5 + x + (std::log1p(std::exp(-2.0 * a)) - std::log1p(std::exp(-2.0 * b))) / (2.0 * tau);
}

}  // namespace

double soft_step(int j, double i, double tau) {
  if (!(tau > 0.0)) throw std::invalid_argument("tau must be > 0");
  const double x = i - j - 0.5;
  // The ramp is point-symmetric about (j + 1/2, 1/2).
  return x > 0.0 ? 1.0 - soft_step_lower(-x, tau) : soft_step_lower(x, tau);
}

Mask importance_to_mask(const ImportancePair& importance, int l_budget, int n_q) {
  importance.validate();
  if (l_budget < 1 || l_budget > 16) throw std::invalid_argument("L must be in [1, 16]");
  Mask m;
  m.source = importance;
  m.l_budget = l_budget;
  const double s = l_budget * importance.i_s;
  const double c = l_budget * importance.i_c;
  for (int j = 1; j <= n_q; ++j) {
    m.semantic.push_back(static_cast<std::uint8_t>(step(j, s)));
    m.channel.push_back(static_cast<std::uint8_t>(step(j, c)));
    m.levels.push_back(static_cast<std::uint8_t>(m.semantic.back() + m.channel.back()));
  }
  return m;
}

SteMask ste_mask(const ImportancePair& importance, int l_budget, double tau, int n_q) {
  SteMask out;
  out.forward = importance_to_mask(importance, l_budget, n_q);
  for (int j = 1; j <= n_q; ++j) {
    out.soft_semantic.push_back(soft_step(j, l_budget * importance.i_s, tau));
    out.soft_channel.push_back(soft_step(j, l_budget * importance.i_c, tau));
  }
  return out;
}

Mask without_redundancy(const Mask& mask) {
  Mask out = mask;
  const int n_q = static_cast<int>(mask.levels.size());
  const int budget = std::min(mask.sum(), n_q);
  for (int d = 0; d < n_q; ++d) {
    out.levels[d] = d < budget ? 1 : 0;
    out.semantic[d] = out.levels[d];
    out.channel[d] = 0;
  }
  return out;
}

Mask fixed_mask(std::span<const std::uint8_t> levels) {
  Mask m;
  for (std::size_t d = 0; d < levels.size(); ++d) {
    if (levels[d] > 2) throw std::invalid_argument("mask levels must be in {0,1,2}");
    if (d > 0 && levels[d] > levels[d - 1])
      throw std::invalid_argument("mask levels must be non-increasing along depth");
    m.levels.push_back(levels[d]);
    m.semantic.push_back(levels[d] >= 1);
    m.channel.push_back(levels[d] == 2);
  }
  return m;
}

TransmitSet apply_mask(const TokenColumn& column, const Mask& mask) {
  if (column.tokens.size() != mask.levels.size())
    throw std::invalid_argument("mask length does not match token column");
  TransmitSet out{column.frame_index, {}};
  out.slots.reserve(column.tokens.size());
  for (std::size_t d = 0; d < column.tokens.size(); ++d) {
    TokenSlot s;
    s.level = mask.levels[d];
    if (s.level > 0) {
      s.token = column.tokens[d];
      s.state = SlotState::kPresent;
    }
    out.slots.push_back(s);
  }
  return out;
}

double bitrate_penalty(const Mask& mask, double gamma) {
  if (!(gamma >= 0.0)) throw std::invalid_argument("gamma must be >= 0");
  return gamma * mask.sum();
}

double snake(double x, double alpha) {
  const double s = std::sin(alpha * x);
  return x + s * s / alpha;
}

namespace {

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

ConvLayer make_layer(int out, int in, int kernel) {
  ConvLayer l;
  l.out_channels = out;
  l.in_channels = in;
  l.kernel = kernel;
  l.weights.assign(static_cast<std::size_t>(out) * in * kernel, 0.0f);
  l.bias.assign(static_cast<std::size_t>(out), 0.0f);
  return l;
}

void check_layer(const ConvLayer& l, int in, int kernel, const char* what) {
  if (l.in_channels != in || l.kernel != kernel || l.out_channels < 1)
    throw std::invalid_argument(std::string("controller ") + what + " layer shape mismatch");
  if (l.weights.size() != static_cast<std::size_t>(l.out_channels) * l.in_channels * l.kernel ||
      l.bias.size() != static_cast<std::size_t>(l.out_channels))
    throw std::invalid_argument(std::string("controller ") + what + " layer buffer size mismatch");
  for (float v : l.weights)
    if (!std::isfinite(v)) throw std::invalid_argument("controller weights must be finite");
  for (float v : l.bias)
    if (!std::isfinite(v)) throw std::invalid_argument("controller weights must be finite");
}

// x is [channel][time]; zero "same" padding along time.
std::vector<std::vector<double>> conv1d(const ConvLayer& l, const std::vector<std::vector<double>>& x) {
  const std::size_t t_len = x.empty() ? 0 : x[0].size();
  const int half = (l.kernel - 1) / 2;
  std::vector<std::vector<double>> y(static_cast<std::size_t>(l.out_channels),
                                     std::vector<double>(t_len));
  for (int o = 0; o < l.out_channels; ++o) {
    for (std::size_t t = 0; t < t_len; ++t) {
      double acc = l.bias[o];
      for (int i = 0; i < l.in_channels; ++i) {
        for (int k = 0; k < l.kernel; ++k) {
          const auto src = static_cast<std::ptrdiff_t>(t) + k - half;
          if (src < 0 || src >= static_cast<std::ptrdiff_t>(t_len)) continue;
          acc += l.w(o, i, k) * x[i][static_cast<std::size_t>(src)];
        }
      }
      y[o][t] = acc;
    }
  }
  return y;
}

void apply_snake(std::vector<std::vector<double>>& x, double alpha) {
  for (auto& ch : x)
    for (auto& v : ch) v = snake(v, alpha);
}

}  // namespace

void ControllerWeights::validate(int feature_dim) const {
  if (semantic.size() != 4) throw std::invalid_argument("controller needs four semantic layers");
  if (channel.size() != 2) throw std::invalid_argument("controller needs two channel layers");
  if (!(snake_alpha > 0.0)) throw std::invalid_argument("snake alpha must be > 0");
  int in = feature_dim;
  for (const auto& l : semantic) {
    check_layer(l, in, 3, "semantic");
    in = l.out_channels;
  }
  if (in != 1) throw std::invalid_argument("semantic branch must end in one channel");
  check_layer(channel[0], 2, 1, "channel");
  check_layer(channel[1], channel[0].out_channels, 1, "channel");
  if (channel[1].out_channels != 2) throw std::invalid_argument("channel branch must emit two channels");
}

ControllerWeights ControllerWeights::zeros(int feature_dim, std::span<const int> semantic_dims,
                                           int channel_hidden) {
  ControllerWeights w;
  int in = feature_dim;
  for (int d : semantic_dims) {
    w.semantic.push_back(make_layer(d, in, 3));
    in = d;
  }
  w.channel.push_back(make_layer(channel_hidden, 2, 1));
  w.channel.push_back(make_layer(2, channel_hidden, 1));
  return w;
}

ControllerWeights ControllerWeights::random(int feature_dim, std::uint64_t seed,
                                            std::span<const int> semantic_dims, int channel_hidden) {
  auto w = zeros(feature_dim, semantic_dims, channel_hidden);
  CounterRng rng(seed);
  auto fill = [&](ConvLayer& l) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(l.in_channels * l.kernel));
    for (auto& v : l.weights) v = static_cast<float>(scale * rng.normal());
    for (auto& v : l.bias) v = static_cast<float>(0.1 * rng.normal());
  };
  for (auto& l : w.semantic) fill(l);
  for (auto& l : w.channel) fill(l);
  return w;
}

ImportancePair heuristic_importance(const LatentFeature& z, double p, const HeuristicParams& params) {
  if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("loss probability must be in [0, 1]");
  double energy = 0.0;
  for (float v : z.values) energy += static_cast<double>(v) * v;
  energy /= static_cast<double>(std::max<std::size_t>(z.values.size(), 1));
  const double log_energy = std::log(energy + 1e-12);
  ImportancePair out;
  out.i_s = sigmoid(params.kappa * (log_energy - params.theta));
  out.i_c = std::clamp(params.c0 + params.c1 * p, 0.0, 1.0);
  return out;
}

std::vector<ImportancePair> learned_importance(std::span<const LatentFeature> frames, double p,
                                               const ControllerWeights& weights) {
  if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("loss probability must be in [0, 1]");
  if (frames.empty()) return {};
  const auto dim = frames[0].values.size();
  weights.validate(static_cast<int>(dim));
  std::vector<std::vector<double>> x(dim, std::vector<double>(frames.size()));
  for (std::size_t t = 0; t < frames.size(); ++t) {
    if (frames[t].values.size() != dim) throw std::invalid_argument("feature dimension mismatch");
    for (std::size_t c = 0; c < dim; ++c) x[c][t] = frames[t].values[c];
  }
  for (std::size_t l = 0; l < weights.semantic.size(); ++l) {
    x = conv1d(weights.semantic[l], x);
    if (l + 1 < weights.semantic.size()) apply_snake(x, weights.snake_alpha);
  }
  // Concatenate the importance score with the loss rate.
  x.push_back(std::vector<double>(frames.size(), p));
  x = conv1d(weights.channel[0], x);
  apply_snake(x, weights.snake_alpha);
  x = conv1d(weights.channel[1], x);

  std::vector<ImportancePair> out(frames.size());
  for (std::size_t t = 0; t < frames.size(); ++t) {
    out[t].i_s = sigmoid(x[0][t]);
    out[t].i_c = sigmoid(x[1][t]);
  }
  return out;
}

ImportancePair compute_importance(const LatentFeature& z, double p, const ControllerWeights* weights,
                                  const ControllerConfig& cfg) {
  switch (cfg.mode) {
    case ControllerMode::kHeuristic:
      return heuristic_importance(z, p, cfg.heuristic);
    case ControllerMode::kLearned:
      if (!weights) throw std::invalid_argument("learned controller mode needs weights");
      if (weights->semantic.empty() || weights->semantic[0].in_channels != static_cast<int>(z.values.size()))
        throw std::invalid_argument("feature dimension does not match controller weights");
      return learned_importance(std::span(&z, 1), p, *weights).front();
    case ControllerMode::kFixed:
      break;
  }
  throw std::invalid_argument("fixed controller mode has no importance model");
}

std::vector<std::uint8_t> serialize_controller_weights(const ControllerWeights& weights) {
  ByteWriter w;
  w.magic("CTL1");
  w.u32(static_cast<std::uint32_t>(weights.semantic.size() + weights.channel.size()));
  w.f32(static_cast<float>(weights.snake_alpha));
  auto put = [&](const ConvLayer& l) {
    w.u32(static_cast<std::uint32_t>(l.out_channels));
    w.u32(static_cast<std::uint32_t>(l.in_channels));
    w.u32(static_cast<std::uint32_t>(l.kernel));
    for (float v : l.weights) w.f32(v);
    for (float v : l.bias) w.f32(v);
  };
  for (const auto& l : weights.semantic) put(l);
  for (const auto& l : weights.channel) put(l);
  return w.take();
}

ControllerWeights parse_controller_weights(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  r.expect_magic("CTL1");
  const auto count = r.u32();
  if (count != 6) throw FormatError("controller file must hold six layers");
  ControllerWeights w;
  w.snake_alpha = r.f32();
  for (std::uint32_t i = 0; i < count; ++i) {
    ConvLayer l;
    l.out_channels = static_cast<int>(r.u32());
    l.in_channels = static_cast<int>(r.u32());
    l.kernel = static_cast<int>(r.u32());
    const auto n = static_cast<std::size_t>(l.out_channels) * l.in_channels * l.kernel;
    if (n * 4 > r.remaining()) throw FormatError("controller layer exceeds file size");
    l.weights.resize(n);
    for (auto& v : l.weights) v = r.f32();
    l.bias.resize(static_cast<std::size_t>(l.out_channels));
    for (auto& v : l.bias) v = r.f32();
    (i < 4 ? w.semantic : w.channel).push_back(std::move(l));
  }
  if (!r.done()) throw FormatError("trailing bytes in controller file");
  w.validate(w.semantic[0].in_channels);
  return w;
}

void save_controller_weights(const std::filesystem::path& path, const ControllerWeights& weights) {
  write_file(path, serialize_controller_weights(weights));
}

ControllerWeights load_controller_weights(const std::filesystem::path& path) {
  return parse_controller_weights(read_file(path));
}

}  // namespace semtok
