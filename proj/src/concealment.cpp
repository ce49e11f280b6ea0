#include "semtok/concealment.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <utility>

#include "semtok/binary_io.hpp"

namespace semtok {

std::vector<ModelInputs> build_model_inputs(std::span<const TokenColumn> columns, int n_q) {
  if (n_q < 1) throw std::invalid_argument("n_q must be >= 1");
  std::vector<ModelInputs> out;
  out.reserve(columns.size() + 1);
  for (std::size_t n = 0; n <= columns.size(); ++n) {
    if (n < columns.size()) {
      if (static_cast<int>(columns[n].tokens.size()) != n_q)
        throw std::invalid_argument("column depth does not match n_q");
      if (n > 0 && columns[n].frame_index != columns[n - 1].frame_index + 1)
        throw std::invalid_argument("columns out of frame order");
    }
    ModelInputs v;
    v.step = static_cast<std::uint32_t>(n);
    v.streams.assign(static_cast<std::size_t>(n_q) + 1, 0);
    v.streams[0] = kPad;
    v.streams[1] = n < columns.size() ? columns[n].tokens[0] : kPad;
    if (n > 0)
      for (int d = 1; d < n_q; ++d) v.streams[1 + d] = columns[n - 1].tokens[d];
    out.push_back(std::move(v));
  }
  return out;
}

std::vector<TokenColumn> undo_delay(std::span<const ModelInputs> inputs, int n_q) {
  std::vector<TokenColumn> out;
  for (std::size_t n = 0; n + 1 < inputs.size(); ++n) {
    TokenColumn c{static_cast<std::uint32_t>(n), std::vector<Token>(static_cast<std::size_t>(n_q))};
    c.tokens[0] = inputs[n].streams[1];
    for (int d = 1; d < n_q; ++d) c.tokens[d] = inputs[n + 1].streams[1 + d];
    out.push_back(std::move(c));
  }
  return out;
}

bool is_token_position(const ModelInputs& v, int stream) {
  if (stream == 0) return false;
  if (stream == 1) return v.streams[1] != kPad;
  return v.step > 0;
}

std::vector<double> UniformPredictor::predict_distribution(const PredictorContext& ctx,
                                                           std::span<const Token>) const {
  return std::vector<double>(static_cast<std::size_t>(ctx.codebook_size), 1.0 / ctx.codebook_size);
}

std::vector<double> RepeatLastPredictor::predict_distribution(const PredictorContext& ctx,
                                                              std::span<const Token> prefix) const {
  std::vector<double> out(static_cast<std::size_t>(ctx.codebook_size), 0.0);
  const auto stream = prefix.size();
  Token t = 0;  // V_{-1} is all zeros
  if (const auto* prev = ctx.previous()) t = prev->streams.at(stream);
  if (t < 0 || t >= ctx.codebook_size) t = 0;
  out[static_cast<std::size_t>(t)] = 1.0;
  return out;
}

CountModel::CountModel(int order, double smoothing, int n_q, int codebook_size)
    : order_(order), smoothing_(smoothing), n_q_(n_q), codebook_size_(codebook_size) {
  if (order < 0) throw std::invalid_argument("count model order must be >= 0");
  if (!(smoothing > 0.0)) throw std::invalid_argument("count model smoothing must be > 0");
  if (n_q < 1 || codebook_size < 2) throw std::invalid_argument("invalid count model shape");
}

std::vector<Token> CountModel::context_tokens(const ModelInputs* previous,
                                              std::span<const Token> prefix) const {
  std::vector<Token> ctx;
  if (order_ == 0) return ctx;
  const auto stream = prefix.size();
  ctx.push_back(previous ? previous->streams.at(stream) : 0);
  // Shallower tokens of the current step, nearest first; the text slot is excluded.
  for (std::size_t k = stream; k-- > 1 && static_cast<int>(ctx.size()) < order_;) ctx.push_back(prefix[k]);
  return ctx;
}

std::uint64_t CountModel::key(int stream, std::span<const Token> context) const {
  std::uint64_t h = hash_combine(0x5EED, static_cast<std::uint64_t>(stream));
  h = hash_combine(h, context.size());
  for (Token t : context) h = hash_combine(h, static_cast<std::uint64_t>(static_cast<std::int64_t>(t)));
  return h;
}

void CountModel::add(std::uint64_t k, Token token, std::uint32_t n) {
  auto& c = table_[k];
  c.total += n;
  c.by_token[token] += n;
}

void CountModel::train(std::span<const TokenColumn> corpus) {
  const auto steps = build_model_inputs(corpus, n_q_);
  for (std::size_t n = 0; n < steps.size(); ++n) {
    const ModelInputs* prev = n > 0 ? &steps[n - 1] : nullptr;
    const auto& v = steps[n];
    for (int k = 1; k <= n_q_; ++k) {
      if (!is_token_position(v, k)) continue;
      const Token t = v.streams[k];
      if (t < 0 || t >= codebook_size_) throw std::invalid_argument("corpus token outside codebook");
      const auto prefix = std::span(v.streams).first(static_cast<std::size_t>(k));
      add(key(k, context_tokens(prev, prefix)), t, 1);
    }
  }
}

std::vector<double> CountModel::predict_distribution(const PredictorContext& ctx,
                                                     std::span<const Token> prefix) const {
  if (ctx.codebook_size != codebook_size_) throw std::invalid_argument("codebook size mismatch");
  const int stream = static_cast<int>(prefix.size());
  const auto context = context_tokens(ctx.previous(), prefix);
  const auto it = table_.find(key(stream, context));
  const double total = it == table_.end() ? 0.0 : static_cast<double>(it->second.total);
  const double denom = total + smoothing_ * codebook_size_;
  std::vector<double> out(static_cast<std::size_t>(codebook_size_), smoothing_ / denom);
  if (it != table_.end())
    for (const auto& [token, n] : it->second.by_token)
      out[static_cast<std::size_t>(token)] = (n + smoothing_) / denom;
  return out;
}

std::vector<std::uint8_t> CountModel::serialize() const {
  std::vector<std::tuple<std::uint64_t, Token, std::uint32_t>> triples;
  for (const auto& [k, c] : table_)
    for (const auto& [t, n] : c.by_token) triples.emplace_back(k, t, n);
  std::sort(triples.begin(), triples.end());
  ByteWriter w;
  w.magic("CNT1");
  w.u32(static_cast<std::uint32_t>(order_));
  w.f64(smoothing_);
  w.u32(static_cast<std::uint32_t>(n_q_));
  w.u32(static_cast<std::uint32_t>(codebook_size_));
  w.u64(triples.size());
  for (const auto& [k, t, n] : triples) {
    w.u64(k);
    w.u32(static_cast<std::uint32_t>(t));
    w.u32(n);
  }
  return w.take();
}

CountModel CountModel::parse(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  r.expect_magic("CNT1");
  const auto order = static_cast<int>(r.u32());
  const double smoothing = r.f64();
  const auto n_q = static_cast<int>(r.u32());
  const auto size = static_cast<int>(r.u32());
  CountModel m(order, smoothing, n_q, size);
  const auto count = r.u64();
  if (count > r.remaining() / 16 || r.remaining() != count * 16) throw FormatError("count model size mismatch");
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto k = r.u64();
    const auto t = static_cast<Token>(r.u32());
    const auto n = r.u32();
    if (t < 0 || t >= size) throw FormatError("count model token outside codebook");
    m.add(k, t, n);
  }
  return m;
}

void CountModel::save(const std::filesystem::path& path) const { write_file(path, serialize()); }

CountModel CountModel::load(const std::filesystem::path& path) { return parse(read_file(path)); }

std::unique_ptr<Predictor> make_predictor(const std::string& name, int order, double smoothing,
                                          int n_q, int codebook_size) {
  if (name == "uniform") return std::make_unique<UniformPredictor>();
  if (name == "repeat_last") return std::make_unique<RepeatLastPredictor>();
  if (name == "count") return std::make_unique<CountModel>(order, smoothing, n_q, codebook_size);
  throw std::invalid_argument("unknown predictor \"" + name + "\"");
}

Token choose_token(std::span<const double> dist, const ConcealOptions& opts, std::uint64_t counter) {
  if (dist.empty()) throw std::invalid_argument("empty distribution");
  if (opts.temperature <= 0.0) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < dist.size(); ++i)
      if (dist[i] > dist[best]) best = i;
    return static_cast<Token>(best);
  }
  // p^(1/T), normalised in log space against the maximum.
  double max_log = -std::numeric_limits<double>::infinity();
  std::vector<double> w(dist.size());
  for (std::size_t i = 0; i < dist.size(); ++i) {
    w[i] = dist[i] > 0 ? std::log(dist[i]) / opts.temperature : -std::numeric_limits<double>::infinity();
    max_log = std::max(max_log, w[i]);
  }
  double total = 0.0;
  for (auto& x : w) total += (x = std::exp(x - max_log));
  const double u = CounterRng(opts.seed).uniform_at(counter) * total;
  double acc = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    acc += w[i];
    if (u < acc) return static_cast<Token>(i);
  }
  return static_cast<Token>(w.size() - 1);
}

ModelInputs conceal_step(const Predictor& predictor, const PredictorContext& ctx,
                         const ModelInputs& received, const ConcealOptions& opts) {
  ModelInputs v = received;
  for (std::size_t k = 1; k < v.streams.size(); ++k) {
    if (v.streams[k] != kErased) continue;
    const auto dist = predictor.predict_distribution(ctx, std::span(v.streams).first(k));
    const std::uint64_t counter = static_cast<std::uint64_t>(v.step) * v.streams.size() + k;
    v.streams[k] = choose_token(dist, opts, counter);
  }
  return v;
}

ConcealmentSession::ConcealmentSession(const Predictor& predictor, int n_q, int codebook_size,
                                       ConcealOptions opts)
    : predictor_(predictor), opts_(opts) {
  ctx_.n_q = n_q;
  ctx_.codebook_size = codebook_size;
}

void ConcealmentSession::run_step(ModelInputs v) {
  ctx_.history.push_back(conceal_step(predictor_, ctx_, v, opts_));
}

std::optional<TokenColumn> ConcealmentSession::push(const TokenColumn& received) {
  if (finished_) throw std::logic_error("concealment session already finished");
  if (static_cast<int>(received.tokens.size()) != ctx_.n_q)
    throw std::invalid_argument("column depth does not match n_q");
  if (last_received_ && received.frame_index != last_received_->frame_index + 1)
    throw std::invalid_argument("columns out of frame order");
  const auto n = static_cast<std::uint32_t>(ctx_.history.size());
  ModelInputs v;
  v.step = n;
  v.streams.assign(static_cast<std::size_t>(ctx_.n_q) + 1, 0);
  v.streams[0] = kPad;
  v.streams[1] = received.tokens[0];
  if (last_received_)
    for (int d = 1; d < ctx_.n_q; ++d) v.streams[1 + d] = last_received_->tokens[d];
  run_step(std::move(v));

  std::optional<TokenColumn> out;
  if (ctx_.history.size() >= 2) {
    const auto& prev = ctx_.history[ctx_.history.size() - 2];
    const auto& cur = ctx_.history.back();
    TokenColumn c{last_received_->frame_index, std::vector<Token>(static_cast<std::size_t>(ctx_.n_q))};
    c.tokens[0] = prev.streams[1];
    for (int d = 1; d < ctx_.n_q; ++d) c.tokens[d] = cur.streams[1 + d];
    out = std::move(c);
  }
  last_received_ = received;
  return out;
}

std::optional<TokenColumn> ConcealmentSession::finish() {
  if (finished_ || !last_received_) return std::nullopt;
  finished_ = true;
  ModelInputs v;
  v.step = static_cast<std::uint32_t>(ctx_.history.size());
  v.streams.assign(static_cast<std::size_t>(ctx_.n_q) + 1, 0);
  v.streams[0] = kPad;
  v.streams[1] = kPad;
  for (int d = 1; d < ctx_.n_q; ++d) v.streams[1 + d] = last_received_->tokens[d];
  run_step(std::move(v));
  const auto& prev = ctx_.history[ctx_.history.size() - 2];
  const auto& cur = ctx_.history.back();
  TokenColumn c{last_received_->frame_index, std::vector<Token>(static_cast<std::size_t>(ctx_.n_q))};
  c.tokens[0] = prev.streams[1];
  for (int d = 1; d < ctx_.n_q; ++d) c.tokens[d] = cur.streams[1 + d];
  return c;
}

std::vector<TokenColumn> conceal_stream(const Predictor& predictor,
                                        std::span<const TokenColumn> received, int n_q,
                                        int codebook_size, const ConcealOptions& opts) {
  ConcealmentSession session(predictor, n_q, codebook_size, opts);
  std::vector<TokenColumn> out;
  out.reserve(received.size());
  for (const auto& c : received)
    if (auto r = session.push(c)) out.push_back(std::move(*r));
  if (auto r = session.finish()) out.push_back(std::move(*r));
  return out;
}

std::vector<std::vector<double>> teacher_forced_probabilities(const Predictor& predictor,
                                                              std::span<const TokenColumn> truth,
                                                              int n_q, int codebook_size) {
  const auto steps = build_model_inputs(truth, n_q);
  PredictorContext ctx;
  ctx.n_q = n_q;
  ctx.codebook_size = codebook_size;
  std::vector<std::vector<double>> out;
  out.reserve(steps.size());
  for (const auto& v : steps) {
    std::vector<double> row(v.streams.size(), std::numeric_limits<double>::quiet_NaN());
    for (std::size_t k = 1; k < v.streams.size(); ++k) {
      if (!is_token_position(v, static_cast<int>(k))) continue;
      const auto dist = predictor.predict_distribution(ctx, std::span(v.streams).first(k));
      row[k] = dist.at(static_cast<std::size_t>(v.streams[k]));
    }
    out.push_back(std::move(row));
    ctx.history.push_back(v);
  }
  return out;
}

Eigen::MatrixXd lora_merge(const LoraAdapter& adapter) {
  const auto d = adapter.base.rows();
  const auto h = adapter.base.cols();
  const auto r = adapter.down.cols();
  if (adapter.down.rows() != d || adapter.up.rows() != r || adapter.up.cols() != h)
    throw std::invalid_argument("LoRA shapes are not conformable");
  if (r > std::min(d, h)) throw std::invalid_argument("LoRA rank exceeds min(d, h)");
  return adapter.base + adapter.down * adapter.up;
}

}  // namespace semtok
