#include "semtok/rvq.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>

#include "semtok/binary_io.hpp"
#include "semtok/log.hpp"
#include "semtok/rng.hpp"

namespace semtok {

void CodecConfig::validate() const {
  if (n_q < 1 || n_q > 64) throw std::invalid_argument("codec.n_q must be in [1, 64]");
  if (codebook_size < 2 || codebook_size > 65536)
    throw std::invalid_argument("codec.codebook_size must be in [2, 65536]");
  if (feature_dim < 1) throw std::invalid_argument("codec.feature_dim must be >= 1");
  if (!(frame_rate_hz > 0.0) || !std::isfinite(frame_rate_hz))
    throw std::invalid_argument("codec.frame_rate_hz must be positive");
}

Codebook::Codebook(int depth, int size, int dim, std::vector<float> data)
    : depth_(depth), size_(size), dim_(dim), data_(std::move(data)) {
  if (size < 2) throw std::invalid_argument("codebook needs at least 2 codewords");
  if (dim < 1) throw std::invalid_argument("codebook dimension must be >= 1");
  if (data_.size() != static_cast<std::size_t>(size) * dim)
    throw std::invalid_argument("codebook data size does not match size x dim");
  for (float v : data_)
    if (!std::isfinite(v)) throw std::invalid_argument("codebook contains non-finite values");
}

Codebook::Codebook(int depth, int size, int dim)
    : Codebook(depth, size, dim, std::vector<float>(static_cast<std::size_t>(size) * dim, 0.0f)) {}

int Codebook::nearest(std::span<const double> v) const {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (int i = 0; i < size_; ++i) {
    const auto c = row(i);
    double d = 0.0;
    for (int k = 0; k < dim_; ++k) {
      const double diff = v[k] - c[k];
      d += diff * diff;
    }
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  return best;
}

namespace {

void check_codebooks(std::span<const Codebook> codebooks, std::size_t dim) {
  if (codebooks.empty()) throw std::invalid_argument("empty codebook list");
  for (std::size_t i = 0; i < codebooks.size(); ++i) {
    if (codebooks[i].depth() != static_cast<int>(i) + 1)
      throw std::invalid_argument("codebooks must be sorted by depth 1..N_Q");
    if (static_cast<std::size_t>(codebooks[i].dim()) != dim)
      throw std::invalid_argument("feature dimension " + std::to_string(dim) +
                                  " does not match codebook dimension " +
                                  std::to_string(codebooks[i].dim()));
  }
}

}  // namespace

TokenColumn rvq_encode(const LatentFeature& z, std::span<const Codebook> codebooks) {
  if (codebooks.empty()) throw std::invalid_argument("empty codebook list");
  check_codebooks(codebooks, z.values.size());
  std::vector<double> residual(z.values.begin(), z.values.end());
  TokenColumn out{z.frame_index, {}};
  out.tokens.reserve(codebooks.size());
  for (const auto& cb : codebooks) {
    const int idx = cb.nearest(residual);
    const auto c = cb.row(idx);
    for (std::size_t k = 0; k < residual.size(); ++k) residual[k] -= c[k];
    out.tokens.push_back(idx);
  }
  return out;
}

LatentFeature rvq_decode(const TokenColumn& tokens, std::span<const Codebook> codebooks,
                         int depth_limit) {
  if (codebooks.empty()) throw std::invalid_argument("empty codebook list");
  const int n_q = static_cast<int>(codebooks.size());
  if (depth_limit < 1 || depth_limit > n_q)
    throw std::out_of_range("depth_limit must be in [1, " + std::to_string(n_q) + "]");
  if (static_cast<int>(tokens.tokens.size()) < depth_limit)
    throw std::invalid_argument("token column shorter than depth_limit");
  check_codebooks(codebooks, static_cast<std::size_t>(codebooks[0].dim()));
  const auto dim = static_cast<std::size_t>(codebooks[0].dim());
  std::vector<double> acc(dim, 0.0);
  for (int d = 0; d < depth_limit; ++d) {
    const Token t = tokens.tokens[d];
    if (t < 0 || t >= codebooks[d].size())
      throw std::out_of_range("token index " + std::to_string(t) + " outside codebook at depth " +
                              std::to_string(d + 1));
    const auto c = codebooks[d].row(t);
    for (std::size_t k = 0; k < dim; ++k) acc[k] += c[k];
  }
  LatentFeature out{tokens.frame_index, std::vector<float>(dim)};
  for (std::size_t k = 0; k < dim; ++k) out.values[k] = static_cast<float>(acc[k]);
  return out;
}

std::vector<double> residual_energies(const LatentFeature& z, const TokenColumn& tokens,
                                      std::span<const Codebook> codebooks) {
  check_codebooks(codebooks, z.values.size());
  std::vector<double> residual(z.values.begin(), z.values.end());
  std::vector<double> out;
  for (std::size_t d = 0; d < codebooks.size(); ++d) {
    const auto c = codebooks[d].row(tokens.tokens.at(d));
    double e = 0.0;
    for (std::size_t k = 0; k < residual.size(); ++k) {
      residual[k] -= c[k];
      e += residual[k] * residual[k];
    }
    out.push_back(e);
  }
  return out;
}

namespace {

// Lloyd's algorithm on `points` (n x dim, row-major). Returns the k x dim centroids
// and leaves the final assignment in `assign`. With `pin_zero`, centroid 0 is held at
// the origin so no point can end up farther from its codeword than from zero.
std::vector<double> lloyd(const std::vector<double>& points, std::size_t n, int dim, int k,
                          CounterRng& rng, const TrainOptions& opts, std::vector<int>& assign,
                          bool& with_replacement, bool pin_zero) {
  std::vector<double> centroids(static_cast<std::size_t>(k) * dim);
  // Seed centroids with distinct corpus points (partial Fisher-Yates); fall back to
  // sampling with replacement when the corpus is smaller than the codebook.
  std::vector<std::size_t> pick(static_cast<std::size_t>(k));
  if (n >= static_cast<std::size_t>(k)) {
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    for (int i = 0; i < k; ++i) {
      const std::size_t j = i + rng.below(n - i);
      std::swap(perm[i], perm[j]);
      pick[i] = perm[i];
    }
  } else {
    with_replacement = true;
    for (int i = 0; i < k; ++i) pick[i] = i < static_cast<int>(n) ? i : rng.below(n);
  }
  const int first_free = pin_zero ? 1 : 0;
  for (int i = first_free; i < k; ++i)
    std::copy_n(points.begin() + pick[i - first_free] * dim, dim,
                centroids.begin() + static_cast<std::size_t>(i) * dim);

  assign.assign(n, 0);
  std::vector<double> sums(centroids.size());
  std::vector<std::size_t> counts(static_cast<std::size_t>(k));
  double prev_err = std::numeric_limits<double>::infinity();
  for (int iter = 0; iter < opts.max_iterations; ++iter) {
    double err = 0.0;
    for (std::size_t p = 0; p < n; ++p) {
      const double* x = points.data() + p * dim;
      double best_d = std::numeric_limits<double>::infinity();
      int best = 0;
      for (int c = 0; c < k; ++c) {
        const double* m = centroids.data() + static_cast<std::size_t>(c) * dim;
        double d = 0.0;
        for (int j = 0; j < dim && d < best_d; ++j) {
          const double diff = x[j] - m[j];
          d += diff * diff;
        }
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      assign[p] = best;
      err += best_d;
    }
    err /= static_cast<double>(n);

    std::fill(sums.begin(), sums.end(), 0.0);
    std::fill(counts.begin(), counts.end(), 0);
    for (std::size_t p = 0; p < n; ++p) {
      const auto c = static_cast<std::size_t>(assign[p]);
      ++counts[c];
      for (int j = 0; j < dim; ++j) sums[c * dim + j] += points[p * dim + j];
    }
    // Empty clusters keep their previous centroid.
    for (int c = first_free; c < k; ++c)
      if (counts[c] > 0)
        for (int j = 0; j < dim; ++j)
          centroids[static_cast<std::size_t>(c) * dim + j] =
              sums[static_cast<std::size_t>(c) * dim + j] / static_cast<double>(counts[c]);

    if (err == 0.0) break;
    if (std::isfinite(prev_err) && (prev_err - err) / prev_err < opts.min_relative_improvement) break;
    prev_err = err;
  }
  return centroids;
}

}  // namespace

std::vector<Codebook> train_codebooks(std::span<const LatentFeature> corpus, const CodecConfig& cfg,
                                      std::uint64_t seed, const TrainOptions& opts,
                                      TrainReport* report) {
  cfg.validate();
  if (corpus.empty()) throw std::invalid_argument("training corpus is empty");
  const int dim = cfg.feature_dim;
  const std::size_t n = corpus.size();
  std::vector<double> residual(n * dim);
  for (std::size_t p = 0; p < n; ++p) {
    if (corpus[p].values.size() != static_cast<std::size_t>(dim))
      throw std::invalid_argument("corpus feature dimension mismatch");
    std::copy(corpus[p].values.begin(), corpus[p].values.end(), residual.begin() + p * dim);
  }
  if (n < static_cast<std::size_t>(cfg.codebook_size))
    warn("corpus of " + std::to_string(n) + " vectors is smaller than codebook size " +
         std::to_string(cfg.codebook_size) + "; sampling with replacement");

  TrainReport local;
  std::vector<Codebook> out;
  std::vector<int> assign;
  for (int depth = 1; depth <= cfg.n_q; ++depth) {
    CounterRng rng(derive_seed(seed, static_cast<std::uint64_t>(depth)));
    bool replaced = false;
    // Residual stages keep a zero codeword so refinement never increases a frame's error.
    const auto centroids =
        lloyd(residual, n, dim, cfg.codebook_size, rng, opts, assign, replaced, depth > 1);
    local.sampled_with_replacement |= replaced;

    std::vector<float> data(centroids.begin(), centroids.end());
    Codebook cb(depth, cfg.codebook_size, dim, std::move(data));
    // Residuals for the next stage use the float codewords actually stored.
    double energy = 0.0;
    for (std::size_t p = 0; p < n; ++p) {
      const auto c = cb.row(assign[p]);
      for (int j = 0; j < dim; ++j) {
        residual[p * dim + j] -= c[j];
        energy += residual[p * dim + j] * residual[p * dim + j];
      }
    }
    local.residual_energy.push_back(energy / static_cast<double>(n));
    out.push_back(std::move(cb));
  }
  if (report) *report = std::move(local);
  return out;
}

std::vector<LatentFeature> synth_features(int n_frames, const CodecConfig& cfg, std::uint64_t seed,
                                          const SynthOptions& opts) {
  if (n_frames < 1) throw std::invalid_argument("n_frames must be >= 1");
  if (opts.duty_cycle <= 0.0 || opts.duty_cycle >= 1.0)
    throw std::invalid_argument("duty_cycle must be in (0, 1)");
  const int dim = cfg.feature_dim;
  CounterRng noise(derive_seed(seed, "synth.noise"));
  CounterRng gate(derive_seed(seed, "synth.gate"));

  // Two-state voiced/silence chain with stationary voiced fraction = duty_cycle.
  const double p_leave_voiced = 1.0 / opts.mean_voiced_frames;
  const double p_leave_silence = p_leave_voiced * opts.duty_cycle / (1.0 - opts.duty_cycle);
  bool voiced = gate.uniform() < opts.duty_cycle;

  const double innovation = std::sqrt(1.0 - opts.ar_coeff * opts.ar_coeff);
  std::vector<double> state(dim);
  for (auto& s : state) s = noise.normal();

  std::vector<LatentFeature> out;
  out.reserve(static_cast<std::size_t>(n_frames));
  for (int n = 0; n < n_frames; ++n) {
    if (n > 0) {
      for (auto& s : state) s = opts.ar_coeff * s + innovation * noise.normal();
      const double u = gate.uniform();
      voiced = voiced ? u >= p_leave_voiced : u < p_leave_silence;
    }
    const double gain = voiced ? 1.0 : opts.silence_gain;
    LatentFeature f{static_cast<std::uint32_t>(n), std::vector<float>(dim)};
    for (int k = 0; k < dim; ++k) f.values[k] = static_cast<float>(gain * state[k]);
    out.push_back(std::move(f));
  }
  return out;
}

std::vector<std::uint8_t> serialize_codebooks(const CodecConfig& cfg,
                                              std::span<const Codebook> codebooks) {
  cfg.validate();
  if (static_cast<int>(codebooks.size()) != cfg.n_q)
    throw std::invalid_argument("codebook count does not match n_q");
  ByteWriter w;
  w.magic("RVQ1");
  w.u32(static_cast<std::uint32_t>(cfg.n_q));
  w.u32(static_cast<std::uint32_t>(cfg.codebook_size));
  w.u32(static_cast<std::uint32_t>(cfg.feature_dim));
  w.u32(static_cast<std::uint32_t>(cfg.bits_per_token()));
  w.u32(static_cast<std::uint32_t>(std::lround(cfg.frame_rate_hz * 1000.0)));
  for (const auto& cb : codebooks) {
    if (cb.size() != cfg.codebook_size || cb.dim() != cfg.feature_dim)
      throw std::invalid_argument("codebook shape does not match config");
    for (float v : cb.data()) w.f32(v);
  }
  return w.take();
}

std::vector<Codebook> parse_codebooks(std::span<const std::uint8_t> bytes, CodecConfig* cfg_out) {
  ByteReader r(bytes);
  r.expect_magic("RVQ1");
  CodecConfig cfg;
  cfg.n_q = static_cast<int>(r.u32());
  cfg.codebook_size = static_cast<int>(r.u32());
  cfg.feature_dim = static_cast<int>(r.u32());
  const auto bits = static_cast<int>(r.u32());
  cfg.frame_rate_hz = r.u32() / 1000.0;
  cfg.validate();
  if (bits != cfg.bits_per_token()) throw FormatError("bits_per_token inconsistent with codebook size");
  const auto per = static_cast<std::size_t>(cfg.codebook_size) * cfg.feature_dim;
  if (r.remaining() != per * cfg.n_q * 4) throw FormatError("codebook payload size mismatch");
  std::vector<Codebook> out;
  for (int d = 1; d <= cfg.n_q; ++d) {
    std::vector<float> data(per);
    for (auto& v : data) v = r.f32();
    out.emplace_back(d, cfg.codebook_size, cfg.feature_dim, std::move(data));
  }
  if (cfg_out) *cfg_out = cfg;
  return out;
}

void save_codebooks(const std::filesystem::path& path, const CodecConfig& cfg,
                    std::span<const Codebook> codebooks) {
  write_file(path, serialize_codebooks(cfg, codebooks));
}

std::vector<Codebook> load_codebooks(const std::filesystem::path& path, CodecConfig* cfg_out) {
  return parse_codebooks(read_file(path), cfg_out);
}

std::vector<std::uint8_t> serialize_features(std::span<const LatentFeature> features) {
  ByteWriter w;
  w.magic("FTR1");
  const std::uint32_t dim = features.empty() ? 0 : static_cast<std::uint32_t>(features[0].values.size());
  w.u32(static_cast<std::uint32_t>(features.size()));
  w.u32(dim);
  for (const auto& f : features) {
    if (f.values.size() != dim) throw std::invalid_argument("ragged feature corpus");
    for (float v : f.values) w.f32(v);
  }
  return w.take();
}

std::vector<LatentFeature> parse_features(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  r.expect_magic("FTR1");
  const auto count = r.u32();
  const auto dim = r.u32();
  if (r.remaining() != static_cast<std::size_t>(count) * dim * 4)
    throw FormatError("feature payload size mismatch");
  std::vector<LatentFeature> out(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    out[i].frame_index = i;
    out[i].values.resize(dim);
    for (auto& v : out[i].values) v = r.f32();
  }
  return out;
}

}  // namespace semtok
