#include "semtok/metrics.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

namespace semtok {

namespace {

double capped_ce(double prob, double cap, std::size_t& capped) {
  if (!(prob >= 0.0) || prob > 1.0 + 1e-9) throw std::invalid_argument("invalid probability");
  if (prob <= std::exp(-cap)) {
    ++capped;
    return cap;
  }
  return -std::log(prob);
}

ReconLoss reduce(std::span<const std::vector<double>> probs, std::span<const double> lambdas,
                 double cap) {
  for (double l : lambdas)
    if (!(l > 0.0)) throw std::invalid_argument("lambda weights must be > 0");
  ReconLoss out;
  std::size_t steps = 0;
  double acc = 0.0;
  for (const auto& row : probs) {
    double num = 0.0, den = 0.0;
    for (std::size_t k = 1; k < row.size(); ++k) {
      if (std::isnan(row[k])) continue;
      if (k - 1 >= lambdas.size()) throw std::invalid_argument("missing lambda weight");
      num += lambdas[k - 1] * capped_ce(row[k], cap, out.capped);
      den += lambdas[k - 1];
    }
    if (den == 0.0) continue;
    acc += num / den;  // text stream term is 0 for padding
    ++steps;
  }
  out.value = steps ? acc / static_cast<double>(steps) : 0.0;
  return out;
}

}  // namespace

ReconLoss recon_loss(std::span<const StepDistributions> predictions, std::span<const ModelInputs> truth,
                     std::span<const double> lambdas, double ce_cap) {
  if (predictions.size() != truth.size()) throw std::invalid_argument("prediction/truth length mismatch");
  std::vector<std::vector<double>> probs;
  probs.reserve(truth.size());
  for (std::size_t n = 0; n < truth.size(); ++n) {
    const auto& v = truth[n];
    std::vector<double> row(v.streams.size(), std::nan(""));
    for (std::size_t k = 1; k < v.streams.size() && k < predictions[n].size(); ++k) {
      const auto& dist = predictions[n][k];
      if (dist.empty()) continue;
      const double sum = std::accumulate(dist.begin(), dist.end(), 0.0);
      if (std::fabs(sum - 1.0) > 1e-6) throw std::invalid_argument("distribution does not sum to 1");
      const Token t = v.streams[k];
      if (t < 0 || static_cast<std::size_t>(t) >= dist.size())
        throw std::invalid_argument("truth token outside distribution support");
      row[k] = dist[static_cast<std::size_t>(t)];
    }
    probs.push_back(std::move(row));
  }
  return reduce(probs, lambdas, ce_cap);
}

ReconLoss recon_loss_from_probabilities(std::span<const std::vector<double>> probabilities,
                                        std::span<const double> lambdas, double ce_cap) {
  return reduce(probabilities, lambdas, ce_cap);
}

std::vector<double> default_lambdas(int n_q, double semantic_weight) {
  std::vector<double> l(static_cast<std::size_t>(n_q), 1.0);
  if (!l.empty()) l[0] = semantic_weight;
  return l;
}

double total_loss(double recon, std::span<const int> mask_sums, double gamma) {
  if (!(gamma >= 0.0)) throw std::invalid_argument("gamma must be >= 0");
  if (mask_sums.empty()) return recon;
  const double mean = std::accumulate(mask_sums.begin(), mask_sums.end(), 0.0) /
                      static_cast<double>(mask_sums.size());
  return recon + gamma * mean;
}

void LatencyProfile::validate() const {
  if (t_context < 0 || t_coder < 0 || t_ra < 0 || t_token < 0 || expected_tokens < 0 || t_transmit < 0)
    throw std::invalid_argument("latency components must be non-negative");
}

double latency_estimate(const LatencyProfile& p) {
  p.validate();
  return p.t_context + p.t_coder + p.t_ra + p.expected_tokens * p.t_token + p.t_transmit;
}

double payload_bitrate(std::span<const int> mask_sums, const CodecConfig& cfg) {
  if (mask_sums.empty()) return 0.0;
  const double mean = std::accumulate(mask_sums.begin(), mask_sums.end(), 0.0) /
                      static_cast<double>(mask_sums.size());
  return mean * cfg.bits_per_token() * cfg.frame_rate_hz;
}

double payload_bitrate(std::span<const Mask> masks, const CodecConfig& cfg) {
  std::vector<int> sums;
  sums.reserve(masks.size());
  for (const auto& m : masks) sums.push_back(m.sum());
  return payload_bitrate(sums, cfg);
}

namespace {
double ratio(std::size_t a, std::size_t b) { return b ? static_cast<double>(a) / static_cast<double>(b) : 0.0; }
}  // namespace

double RecoveryStats::erasure_rate() const { return ratio(erased_slots, transmitted_slots); }
double RecoveryStats::post_error_rate() const { return ratio(concealment_errors, erased_slots); }
double RecoveryStats::erasure_rate_at(std::size_t d) const {
  return ratio(erased_by_depth.at(d), transmitted_by_depth.at(d));
}
double RecoveryStats::post_error_rate_at(std::size_t d) const {
  return ratio(errors_by_depth.at(d), erased_by_depth.at(d));
}
double RecoveryStats::frame_erasure_rate() const { return ratio(erased_frames, frames); }

RecoveryStats recovery_stats(std::span<const TransmitSet> sent, std::span<const TransmitSet> received,
                             std::span<const TokenColumn> concealed) {
  if (sent.size() != received.size() || sent.size() != concealed.size())
    throw std::invalid_argument("recovery_stats inputs must be aligned");
  RecoveryStats st;
  const std::size_t n_q = sent.empty() ? 0 : sent[0].slots.size();
  st.transmitted_by_depth.assign(n_q, 0);
  st.erased_by_depth.assign(n_q, 0);
  st.errors_by_depth.assign(n_q, 0);
  std::size_t frames_with_tokens = 0;
  for (std::size_t f = 0; f < sent.size(); ++f) {
    if (sent[f].slots.size() != n_q || received[f].slots.size() != n_q || concealed[f].tokens.size() != n_q)
      throw std::invalid_argument("recovery_stats depth mismatch");
    std::size_t sent_here = 0, erased_here = 0;
    for (std::size_t d = 0; d < n_q; ++d) {
      const auto& s = sent[f].slots[d];
      if (s.state != SlotState::kPresent) continue;
      ++sent_here;
      ++st.transmitted_by_depth[d];
      if (received[f].slots[d].state == SlotState::kPresent) continue;
      ++erased_here;
      ++st.erased_by_depth[d];
      if (concealed[f].tokens[d] != s.token) ++st.errors_by_depth[d];
    }
    st.transmitted_slots += sent_here;
    st.erased_slots += erased_here;
    if (sent_here > 0) {
      ++frames_with_tokens;
      if (erased_here == sent_here) ++st.erased_frames;
    }
  }
  st.frames = frames_with_tokens;
  st.concealment_errors = std::accumulate(st.errors_by_depth.begin(), st.errors_by_depth.end(), std::size_t{0});
  return st;
}

}  // namespace semtok
