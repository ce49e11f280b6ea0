#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "semtok/rng.hpp"
#include "semtok/types.hpp"

namespace semtok {

// Model input V_n with K = n_q + 1 streams (0-based here):
//   [0] text slot (always kPad), [1] semantic token of frame n,
//   [1 + d] depth-(d+1) acoustic token of frame n-1 for d = 1..n_q-1 (0 at n = 0).
struct ModelInputs {
  std::uint32_t step = 0;
  std::vector<Token> streams;

  bool operator==(const ModelInputs&) const = default;
};

// Applies the one-step acoustic delay. Columns may contain kErased. Returns N+1 steps:
// the final step carries the last frame's acoustic tokens behind a kPad semantic slot.
std::vector<ModelInputs> build_model_inputs(std::span<const TokenColumn> columns, int n_q);
std::vector<TokenColumn> undo_delay(std::span<const ModelInputs> inputs, int n_q);

// True where stream k of step n holds a real token rather than padding or the fixed
// n = 0 delay fill.
bool is_token_position(const ModelInputs& v, int stream);

struct PredictorContext {
  int n_q = 8;
  int codebook_size = 2048;
  std::vector<ModelInputs> history;  // reconstructed V_0 .. V_{n-1}

  const ModelInputs* previous() const { return history.empty() ? nullptr : &history.back(); }
};

class Predictor {
 public:
  virtual ~Predictor() = default;
  virtual std::string name() const = 0;
  // Distribution over the codebook for stream prefix.size() (0-based) of the current
  // step, given the causal history and the already-known streams V_{n,<k}.
  virtual std::vector<double> predict_distribution(const PredictorContext& ctx,
                                                   std::span<const Token> prefix) const = 0;
};

class UniformPredictor final : public Predictor {
 public:
  std::string name() const override { return "uniform"; }
  std::vector<double> predict_distribution(const PredictorContext& ctx,
                                           std::span<const Token> prefix) const override;
};

// Copies the previous step's value on the same stream (the previous frame's token at
// the same depth, after the delay mapping).
class RepeatLastPredictor final : public Predictor {
 public:
  std::string name() const override { return "repeat_last"; }
  std::vector<double> predict_distribution(const PredictorContext& ctx,
                                           std::span<const Token> prefix) const override;
};

// Additively smoothed conditional counts. `order` is the number of context tokens:
// 0 is a per-stream unigram, 1 conditions on the previous step's token on the same
// stream, and each further order adds the next-shallower token of the current step.
class CountModel final : public Predictor {
 public:
  CountModel(int order, double smoothing, int n_q, int codebook_size);

  std::string name() const override { return "count"; }
  std::vector<double> predict_distribution(const PredictorContext& ctx,
                                           std::span<const Token> prefix) const override;

  void train(std::span<const TokenColumn> corpus);

  // Context tokens used for stream `stream` (0-based) given the previous step and the
  // current prefix. Exposed so tests can build independent count tables.
  std::vector<Token> context_tokens(const ModelInputs* previous, std::span<const Token> prefix) const;

  int order() const { return order_; }
  double smoothing() const { return smoothing_; }
  int n_q() const { return n_q_; }
  int codebook_size() const { return codebook_size_; }
  std::size_t context_count() const { return table_.size(); }

  std::vector<std::uint8_t> serialize() const;
  static CountModel parse(std::span<const std::uint8_t> bytes);
  void save(const std::filesystem::path& path) const;
  static CountModel load(const std::filesystem::path& path);

 private:
  struct Counts {
    std::uint64_t total = 0;
    std::unordered_map<Token, std::uint32_t> by_token;
  };
  std::uint64_t key(int stream, std::span<const Token> context) const;
  void add(std::uint64_t key, Token token, std::uint32_t n);

  int order_;
  double smoothing_;
  int n_q_;
  int codebook_size_;
  std::unordered_map<std::uint64_t, Counts> table_;
};

std::unique_ptr<Predictor> make_predictor(const std::string& name, int order, double smoothing,
                                          int n_q, int codebook_size);

struct ConcealOptions {
  double temperature = 0.0;  // 0: greedy argmax, lowest index on ties
  std::uint64_t seed = 0;
};

// Returns argmax (temperature 0) or a seeded sample. Sampling counter is caller-chosen.
Token choose_token(std::span<const double> dist, const ConcealOptions& opts, std::uint64_t counter);

// Fills the erased streams of one step in stream order, each filled value joining the
// prefix for deeper streams. Received streams pass through unchanged.
ModelInputs conceal_step(const Predictor& predictor, const PredictorContext& ctx,
                         const ModelInputs& received, const ConcealOptions& opts = {});

// Streaming concealment. push(frame n) yields reconstructed frame n-1 (the acoustic
// delay holds each frame back by one step); finish() yields the last frame.
class ConcealmentSession {
 public:
  ConcealmentSession(const Predictor& predictor, int n_q, int codebook_size, ConcealOptions opts = {});

  std::optional<TokenColumn> push(const TokenColumn& received);
  std::optional<TokenColumn> finish();
  const PredictorContext& context() const { return ctx_; }

 private:
  void run_step(ModelInputs v);

  const Predictor& predictor_;
  PredictorContext ctx_;
  ConcealOptions opts_;
  std::optional<TokenColumn> last_received_;
  bool finished_ = false;
};

std::vector<TokenColumn> conceal_stream(const Predictor& predictor,
                                        std::span<const TokenColumn> received, int n_q,
                                        int codebook_size, const ConcealOptions& opts = {});

// Probability each real token of `truth` receives when the predictor sees the true
// history and prefix. Entry [n][k] is NaN at non-token positions.
std::vector<std::vector<double>> teacher_forced_probabilities(const Predictor& predictor,
                                                              std::span<const TokenColumn> truth,
                                                              int n_q, int codebook_size);

struct LoraAdapter {
  Eigen::MatrixXd base;  // W0, d x h
  Eigen::MatrixXd down;  // B, d x r
  Eigen::MatrixXd up;    // A, r x h

  int rank() const { return static_cast<int>(down.cols()); }
};

// W0 + B A
Eigen::MatrixXd lora_merge(const LoraAdapter& adapter);

}  // namespace semtok
