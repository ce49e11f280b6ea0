#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "semtok/types.hpp"

namespace semtok {

struct CodecConfig {
  int n_q = 8;
  int codebook_size = 2048;
  int feature_dim = 16;
  double frame_rate_hz = 12.5;

  // ceil(log2(codebook_size)); 11 for the 2048-entry codebooks.
  int bits_per_token() const {
    int bits = 0;
    while ((1LL << bits) < codebook_size) ++bits;
    return bits;
  }
  double frame_duration_s() const { return 1.0 / frame_rate_hz; }
  void validate() const;

  bool operator==(const CodecConfig&) const = default;
};

struct LatentFeature {
  std::uint32_t frame_index = 0;
  std::vector<float> values;
};

// One RVQ stage: `size` codewords of dimension `dim`, row-major.
class Codebook {
 public:
  Codebook() = default;
  Codebook(int depth, int size, int dim, std::vector<float> data);
  Codebook(int depth, int size, int dim);

  int depth() const { return depth_; }
  int size() const { return size_; }
  int dim() const { return dim_; }
  std::span<const float> row(int i) const {
    return {data_.data() + static_cast<std::size_t>(i) * dim_, static_cast<std::size_t>(dim_)};
  }
  std::span<float> row(int i) {
    return {data_.data() + static_cast<std::size_t>(i) * dim_, static_cast<std::size_t>(dim_)};
  }
  const std::vector<float>& data() const { return data_; }

  // Index of the nearest codeword by squared Euclidean distance, lowest index on ties.
  int nearest(std::span<const double> v) const;

  bool operator==(const Codebook&) const = default;

 private:
  int depth_ = 1;
  int size_ = 0;
  int dim_ = 0;
  std::vector<float> data_;
};

TokenColumn rvq_encode(const LatentFeature& z, std::span<const Codebook> codebooks);

// Sum of the selected codewords for depths 1..depth_limit.
LatentFeature rvq_decode(const TokenColumn& tokens, std::span<const Codebook> codebooks,
                         int depth_limit);

// Squared error ||z - decode(tokens, d)||^2 for d = 1..N_Q.
std::vector<double> residual_energies(const LatentFeature& z, const TokenColumn& tokens,
                                      std::span<const Codebook> codebooks);

struct TrainOptions {
  int max_iterations = 50;
  double min_relative_improvement = 1e-6;
};

struct TrainReport {
  // Mean squared residual left after each depth, measured on the fit corpus.
  std::vector<double> residual_energy;
  bool sampled_with_replacement = false;
};

std::vector<Codebook> train_codebooks(std::span<const LatentFeature> corpus, const CodecConfig& cfg,
                                      std::uint64_t seed, const TrainOptions& opts = {},
                                      TrainReport* report = nullptr);

struct SynthOptions {
  double ar_coeff = 0.9;
  double duty_cycle = 0.5;          // stationary fraction of voiced frames
  double mean_voiced_frames = 5.0;  // mean voiced run length
  double silence_gain = 0.05;
};

std::vector<LatentFeature> synth_features(int n_frames, const CodecConfig& cfg, std::uint64_t seed,
                                          const SynthOptions& opts = {});

// RVQ1 codebook file / FTR1 feature corpus.
std::vector<std::uint8_t> serialize_codebooks(const CodecConfig& cfg,
                                              std::span<const Codebook> codebooks);
std::vector<Codebook> parse_codebooks(std::span<const std::uint8_t> bytes, CodecConfig* cfg_out);
void save_codebooks(const std::filesystem::path& path, const CodecConfig& cfg,
                    std::span<const Codebook> codebooks);
std::vector<Codebook> load_codebooks(const std::filesystem::path& path, CodecConfig* cfg_out);

std::vector<std::uint8_t> serialize_features(std::span<const LatentFeature> features);
std::vector<LatentFeature> parse_features(std::span<const std::uint8_t> bytes);

}  // namespace semtok
