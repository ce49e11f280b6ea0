#include "semtok/channel.hpp"

#include <algorithm>
#include <cmath>
#include <iterator>
#include <sstream>
#include <stdexcept>

namespace semtok {

namespace {
bool is_prob(double v) { return v >= 0.0 && v <= 1.0; }
}  // namespace

void GEParams::validate() const {
  if (!is_prob(p_gb) || !is_prob(p_bg) || !is_prob(loss_good) || !is_prob(loss_bad))
    throw std::invalid_argument("GE probabilities must lie in [0, 1]");
  if (!(p_gb + p_bg > 0.0)) throw std::invalid_argument("GE chain needs p_gb + p_bg > 0");
}

GEParams ge_params_from_target(double p_target, double mean_burst) {
  if (!(p_target >= 0.0 && p_target < 1.0))
    throw std::invalid_argument("p_target must be in [0, 1) for a Gilbert channel");
  if (!(mean_burst >= 1.0)) throw std::invalid_argument("mean_burst must be >= 1");
  GEParams g;
  g.p_bg = 1.0 / mean_burst;
  g.p_gb = p_target * g.p_bg / (1.0 - p_target);
  if (g.p_gb > 1.0)
    throw std::invalid_argument("p_target and mean_burst are infeasible (p_gb > 1)");
  return g;
}

double LossTrace::loss_rate() const {
  if (lost.empty()) return 0.0;
  std::size_t n = 0;
  for (auto l : lost) n += l;
  return static_cast<double>(n) / static_cast<double>(lost.size());
}

double LossTrace::mean_burst_length() const {
  std::size_t bursts = 0, losses = 0;
  for (std::size_t i = 0; i < lost.size(); ++i) {
    if (!lost[i]) continue;
    ++losses;
    if (i == 0 || !lost[i - 1]) ++bursts;
  }
  return bursts ? static_cast<double>(losses) / static_cast<double>(bursts) : 0.0;
}

LossTrace uniform_loss(std::size_t n_units, double p, std::uint64_t seed) {
  if (!is_prob(p)) throw std::invalid_argument("loss probability must be in [0, 1]");
  const CounterRng rng(seed);
  LossTrace t;
  t.lost.resize(n_units);
  for (std::size_t i = 0; i < n_units; ++i) t.lost[i] = rng.uniform_at(i) < p;
  return t;
}

GilbertElliottChannel::GilbertElliottChannel(const GEParams& params, std::uint64_t seed, Start start)
    : params_(params), rng_(seed) {
  params_.validate();
  switch (start) {
    case Start::kGood: state_ = GEState::kGood; break;
    case Start::kBad: state_ = GEState::kBad; break;
    case Start::kStationary:
      state_ = CounterRng(derive_seed(seed, "ge.start")).uniform() < params_.stationary_bad()
                   ? GEState::kBad
                   : GEState::kGood;
      break;
  }
}

bool GilbertElliottChannel::next() {
  // Two draws per unit at fixed counters: loss, then transition.
  const double u_loss = rng_.uniform_at(2 * step_);
  const double u_move = rng_.uniform_at(2 * step_ + 1);
  const bool bad = state_ == GEState::kBad;
  const bool lost = u_loss < (bad ? params_.loss_bad : params_.loss_good);
  if (bad ? u_move < params_.p_bg : u_move < params_.p_gb)
    state_ = bad ? GEState::kGood : GEState::kBad;
  ++step_;
  return lost;
}

LossTrace ge_loss(std::size_t n_units, const GEParams& params, std::uint64_t seed,
                  GilbertElliottChannel::Start start) {
  GilbertElliottChannel ch(params, seed, start);
  LossTrace t;
  t.lost.resize(n_units);
  t.state.resize(n_units);
  for (std::size_t i = 0; i < n_units; ++i) {
    t.state[i] = ch.state();
    t.lost[i] = ch.next();
  }
  return t;
}

std::vector<FeedbackMessage> estimate_loss(std::span<const std::uint8_t> packet_lost,
                                           double duration_ms, const EstimatorConfig& cfg) {
  if (!(cfg.window_ms > 0.0)) throw std::invalid_argument("estimator window must be > 0");
  if (!(cfg.feedback_period_ms > 0.0) || !(cfg.packet_period_ms > 0.0))
    throw std::invalid_argument("estimator periods must be > 0");
  std::vector<FeedbackMessage> out;
  double last = 0.0;
  const auto n = packet_lost.size();
  // Arrivals are sorted by construction, so the window is a sliding index range.
  std::size_t lo = 0, hi = 0, missing = 0;
  for (int m = 1;; ++m) {
    const double t = m * cfg.feedback_period_ms;
    if (t > duration_ms + 1e-9) break;
    while (hi < n && (hi + 1) * cfg.packet_period_ms <= t + 1e-9) missing += packet_lost[hi++];
    while (lo < hi && (lo + 1) * cfg.packet_period_ms <= t - cfg.window_ms + 1e-9) missing -= packet_lost[lo++];
    const std::size_t expected = hi - lo;
    if (expected > 0) last = static_cast<double>(missing) / static_cast<double>(expected);
    out.push_back({t, quantize_loss(last)});
  }
  return out;
}

double delayed_feedback(std::span<const FeedbackMessage> messages, double time_ms, double delay_ms) {
  const double cutoff = time_ms - delay_ms + 1e-9;
  const auto it = std::upper_bound(messages.begin(), messages.end(), cutoff,
                                   [](double t, const FeedbackMessage& m) { return t < m.time_ms; });
  return it == messages.begin() ? 0.0 : std::prev(it)->loss();
}

std::string loss_trace_csv(const LossTrace& trace) {
  std::ostringstream os;
  os << "unit,state,lost\n";
  for (std::size_t i = 0; i < trace.lost.size(); ++i) {
    const char* st = trace.state.empty() ? "-" : (trace.state[i] == GEState::kBad ? "bad" : "good");
    os << i << ',' << st << ',' << static_cast<int>(trace.lost[i]) << '\n';
  }
  return os.str();
}

}  // namespace semtok
