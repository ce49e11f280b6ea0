#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "semtok/controller.hpp"
#include "semtok/rvq.hpp"
#include "semtok/token_source.hpp"

namespace semtok {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr int kConfigSchemaVersion = 1;

struct RunConfig {
  struct Codec {
    CodecConfig cfg;
    int train_frames = 4096;
    int train_iterations = 10;
    std::string codebook_path;  // empty: <output_dir>/codebooks.rvq
  } codec;

  struct Source {
    std::string kind = "codec";  // codec | hmm
    SynthOptions synth;
    HmmSourceOptions hmm;
  } source;

  struct Controller {
    ControllerConfig cfg;
    std::string weights_path;
    bool uep = true;
    std::string p_source = "estimate";  // estimate | true
    std::vector<int> fixed_levels;
    std::vector<int> l_grid;
    std::vector<bool> uep_grid;
  } controller;

  struct Framing {
    int frames_per_packet = 2;
    double header_bits = 320.0;
    double feedback_period_ms = 100.0;
    bool interleave = true;
    int interleave_base = 0;
    bool descriptors_in_payload = false;
  } framing;

  struct Channel {
    std::string model = "uniform";  // uniform | ge
    double p_target = 0.1;
    std::vector<double> p_grid;
    double mean_burst = 4.0;
    std::string granularity = "packet";  // packet | token
    std::uint64_t seed = 1;
    double estimator_window_ms = 2000.0;
  } channel;

  struct Concealment {
    std::string predictor = "count";  // count | repeat_last | uniform
    int order = 2;
    double smoothing = 0.1;
    std::string model_path;  // empty: <output_dir>/predictor.cnt
    double temperature = 0.0;
    std::vector<std::string> predictor_grid;
    std::vector<double> lambdas;  // empty: semantic 100, others 1
  } concealment;

  struct Latency {
    double t_coder = 0.30;
    double t_ra = 0.0;
    double t_token = 0.0;
    double t_transmit = 0.0;
  } latency;

  struct Run {
    int n_frames = 10000;
    std::uint64_t seed = 1;
    std::string output_dir = "out";
  } run;

  // Throws ConfigError on any out-of-range or inconsistent value.
  void validate() const;

  std::filesystem::path output_dir() const { return run.output_dir; }
  std::filesystem::path codebook_file() const;
  std::filesystem::path predictor_file() const;
  std::filesystem::path tokens_file() const { return output_dir() / "tokens.tok"; }
  std::filesystem::path features_file() const { return output_dir() / "features.ftr"; }
};

// Unknown keys are rejected at every level; missing keys take defaults.
RunConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const RunConfig& cfg);
RunConfig load_config(const std::filesystem::path& path);

// Applies a dotted override such as "channel.p_target=0.2". The value is parsed as JSON
// when possible, otherwise taken as a string.
void apply_override(nlohmann::json& doc, const std::string& assignment);

}  // namespace semtok
