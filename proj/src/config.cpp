#include "semtok/config.hpp"

#include <fstream>
#include <set>

namespace semtok {

using nlohmann::json;

namespace {

// Reads keys from one JSON object and rejects whatever is left over.
class Section {
 public:
  Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) throw ConfigError(name_ + " must be an object");
  }
  ~Section() noexcept(false) {
    if (std::uncaught_exceptions() == 0) {
      for (const auto& [k, v] : j_.items())
        if (!seen_.count(k)) throw ConfigError("unknown config key " + name_ + "." + k);
    }
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError("bad value for " + name_ + "." + key + ": " + e.what());
    }
  }
  const json* sub(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }
  std::string path(const char* key) const { return name_ + "." + key; }

 private:
  const json& j_;
  std::string name_;
  std::set<std::string> seen_;
};

ControllerMode parse_mode(const std::string& s) {
  if (s == "heuristic") return ControllerMode::kHeuristic;
  if (s == "learned") return ControllerMode::kLearned;
  if (s == "fixed") return ControllerMode::kFixed;
  throw ConfigError("controller.mode must be heuristic, learned or fixed");
}

const char* mode_name(ControllerMode m) {
  switch (m) {
    case ControllerMode::kHeuristic: return "heuristic";
    case ControllerMode::kLearned: return "learned";
    case ControllerMode::kFixed: return "fixed";
  }
  return "heuristic";
}

bool prob(double v) { return v >= 0.0 && v <= 1.0; }

}  // namespace

RunConfig config_from_json(const json& j) {
  RunConfig c;
  Section root(j, "config");
  int schema = kConfigSchemaVersion;
  root.get("schema_version", schema);
  if (schema != kConfigSchemaVersion) throw ConfigError("unsupported config schema_version");
  if (const auto* s = root.sub("codec")) {
    Section sec(*s, "codec");
    sec.get("n_q", c.codec.cfg.n_q);
    sec.get("codebook_size", c.codec.cfg.codebook_size);
    sec.get("feature_dim", c.codec.cfg.feature_dim);
    sec.get("frame_rate_hz", c.codec.cfg.frame_rate_hz);
    sec.get("train_frames", c.codec.train_frames);
    sec.get("train_iterations", c.codec.train_iterations);
    sec.get("codebook_path", c.codec.codebook_path);
  }
  if (const auto* s = root.sub("source")) {
    Section sec(*s, "source");
    sec.get("kind", c.source.kind);
    if (const auto* syn = sec.sub("synth")) {
      Section ss(*syn, "source.synth");
      ss.get("ar_coeff", c.source.synth.ar_coeff);
      ss.get("duty_cycle", c.source.synth.duty_cycle);
      ss.get("mean_voiced_frames", c.source.synth.mean_voiced_frames);
      ss.get("silence_gain", c.source.synth.silence_gain);
    }
    if (const auto* h = sec.sub("hmm")) {
      Section hs(*h, "source.hmm");
      hs.get("states", c.source.hmm.states);
      hs.get("advance", c.source.hmm.advance);
      hs.get("stay", c.source.hmm.stay);
      hs.get("fidelity", c.source.hmm.fidelity);
      hs.get("structure_seed", c.source.hmm.structure_seed);
    }
  }
  if (const auto* s = root.sub("controller")) {
    Section sec(*s, "controller");
    std::string mode = mode_name(c.controller.cfg.mode);
    sec.get("mode", mode);
    c.controller.cfg.mode = parse_mode(mode);
    sec.get("L", c.controller.cfg.l_budget);
    sec.get("tau", c.controller.cfg.tau);
    sec.get("gamma", c.controller.cfg.gamma);
    sec.get("kappa", c.controller.cfg.heuristic.kappa);
    sec.get("theta", c.controller.cfg.heuristic.theta);
    sec.get("c0", c.controller.cfg.heuristic.c0);
    sec.get("c1", c.controller.cfg.heuristic.c1);
    sec.get("weights_path", c.controller.weights_path);
    sec.get("uep", c.controller.uep);
    sec.get("p_source", c.controller.p_source);
    sec.get("fixed_levels", c.controller.fixed_levels);
    sec.get("L_grid", c.controller.l_grid);
    sec.get("uep_grid", c.controller.uep_grid);
  }
  if (const auto* s = root.sub("framing")) {
    Section sec(*s, "framing");
    sec.get("frames_per_packet", c.framing.frames_per_packet);
    sec.get("header_bits", c.framing.header_bits);
    sec.get("feedback_period_ms", c.framing.feedback_period_ms);
    sec.get("interleave", c.framing.interleave);
    sec.get("interleave_base", c.framing.interleave_base);
    sec.get("descriptors_in_payload", c.framing.descriptors_in_payload);
  }
  if (const auto* s = root.sub("channel")) {
    Section sec(*s, "channel");
    sec.get("model", c.channel.model);
    sec.get("p_target", c.channel.p_target);
    sec.get("p_grid", c.channel.p_grid);
    sec.get("mean_burst", c.channel.mean_burst);
    sec.get("granularity", c.channel.granularity);
    sec.get("seed", c.channel.seed);
    sec.get("estimator_window_ms", c.channel.estimator_window_ms);
  }
  if (const auto* s = root.sub("concealment")) {
    Section sec(*s, "concealment");
    sec.get("predictor", c.concealment.predictor);
    sec.get("order", c.concealment.order);
    sec.get("smoothing", c.concealment.smoothing);
    sec.get("model_path", c.concealment.model_path);
    sec.get("temperature", c.concealment.temperature);
    sec.get("predictor_grid", c.concealment.predictor_grid);
    sec.get("lambdas", c.concealment.lambdas);
  }
  if (const auto* s = root.sub("latency")) {
    Section sec(*s, "latency");
    sec.get("t_coder", c.latency.t_coder);
    sec.get("t_ra", c.latency.t_ra);
    sec.get("t_token", c.latency.t_token);
    sec.get("t_transmit", c.latency.t_transmit);
  }
  if (const auto* s = root.sub("run")) {
    Section sec(*s, "run");
    sec.get("n_frames", c.run.n_frames);
    sec.get("seed", c.run.seed);
    sec.get("output_dir", c.run.output_dir);
  }
  c.validate();
  return c;
}

json config_to_json(const RunConfig& c) {
  json j;
  j["schema_version"] = kConfigSchemaVersion;
  j["codec"] = {{"n_q", c.codec.cfg.n_q},
                {"codebook_size", c.codec.cfg.codebook_size},
                {"feature_dim", c.codec.cfg.feature_dim},
                {"frame_rate_hz", c.codec.cfg.frame_rate_hz},
                {"train_frames", c.codec.train_frames},
                {"train_iterations", c.codec.train_iterations},
                {"codebook_path", c.codec.codebook_path}};
  j["source"] = {{"kind", c.source.kind},
                 {"synth",
                  {{"ar_coeff", c.source.synth.ar_coeff},
                   {"duty_cycle", c.source.synth.duty_cycle},
                   {"mean_voiced_frames", c.source.synth.mean_voiced_frames},
                   {"silence_gain", c.source.synth.silence_gain}}},
                 {"hmm",
                  {{"states", c.source.hmm.states},
                   {"advance", c.source.hmm.advance},
                   {"stay", c.source.hmm.stay},
                   {"fidelity", c.source.hmm.fidelity},
                   {"structure_seed", c.source.hmm.structure_seed}}}};
  j["controller"] = {{"mode", mode_name(c.controller.cfg.mode)},
                     {"L", c.controller.cfg.l_budget},
                     {"tau", c.controller.cfg.tau},
                     {"gamma", c.controller.cfg.gamma},
                     {"kappa", c.controller.cfg.heuristic.kappa},
                     {"theta", c.controller.cfg.heuristic.theta},
                     {"c0", c.controller.cfg.heuristic.c0},
                     {"c1", c.controller.cfg.heuristic.c1},
                     {"weights_path", c.controller.weights_path},
                     {"uep", c.controller.uep},
                     {"p_source", c.controller.p_source},
                     {"fixed_levels", c.controller.fixed_levels},
                     {"L_grid", c.controller.l_grid},
                     {"uep_grid", c.controller.uep_grid}};
  j["framing"] = {{"frames_per_packet", c.framing.frames_per_packet},
                  {"header_bits", c.framing.header_bits},
                  {"feedback_period_ms", c.framing.feedback_period_ms},
                  {"interleave", c.framing.interleave},
                  {"interleave_base", c.framing.interleave_base},
                  {"descriptors_in_payload", c.framing.descriptors_in_payload}};
  j["channel"] = {{"model", c.channel.model},
                  {"p_target", c.channel.p_target},
                  {"p_grid", c.channel.p_grid},
                  {"mean_burst", c.channel.mean_burst},
                  {"granularity", c.channel.granularity},
                  {"seed", c.channel.seed},
                  {"estimator_window_ms", c.channel.estimator_window_ms}};
  j["concealment"] = {{"predictor", c.concealment.predictor},
                      {"order", c.concealment.order},
                      {"smoothing", c.concealment.smoothing},
                      {"model_path", c.concealment.model_path},
                      {"temperature", c.concealment.temperature},
                      {"predictor_grid", c.concealment.predictor_grid},
                      {"lambdas", c.concealment.lambdas}};
  j["latency"] = {{"t_coder", c.latency.t_coder},
                  {"t_ra", c.latency.t_ra},
                  {"t_token", c.latency.t_token},
                  {"t_transmit", c.latency.t_transmit}};
  j["run"] = {{"n_frames", c.run.n_frames}, {"seed", c.run.seed}, {"output_dir", c.run.output_dir}};
  return j;
}

void RunConfig::validate() const {
  try {
    codec.cfg.validate();
    controller.cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (codec.train_frames < 1) throw ConfigError("codec.train_frames must be >= 1");
  if (codec.train_iterations < 1) throw ConfigError("codec.train_iterations must be >= 1");
  if (codec.cfg.bits_per_token() > 16) throw ConfigError("codec.codebook_size must fit 16-bit tokens");
  if (source.kind != "codec" && source.kind != "hmm") throw ConfigError("source.kind must be codec or hmm");
  if (source.kind == "hmm" && controller.cfg.mode != ControllerMode::kFixed)
    throw ConfigError("the hmm source has no latent features; use controller.mode = fixed");
  if (!(source.synth.duty_cycle > 0.0 && source.synth.duty_cycle < 1.0))
    throw ConfigError("source.synth.duty_cycle must be in (0, 1)");
  if (!(std::abs(source.synth.ar_coeff) < 1.0)) throw ConfigError("source.synth.ar_coeff must be in (-1, 1)");
  if (!(source.synth.mean_voiced_frames >= 1.0)) throw ConfigError("source.synth.mean_voiced_frames must be >= 1");
  if (source.hmm.states < 1) throw ConfigError("source.hmm.states must be >= 1");
  if (!prob(source.hmm.advance) || !prob(source.hmm.stay) || source.hmm.advance + source.hmm.stay > 1.0 ||
      !prob(source.hmm.fidelity))
    throw ConfigError("source.hmm probabilities out of range");
  if (controller.p_source != "estimate" && controller.p_source != "true")
    throw ConfigError("controller.p_source must be estimate or true");
  if (controller.cfg.mode == ControllerMode::kFixed) {
    if (static_cast<int>(controller.fixed_levels.size()) != codec.cfg.n_q)
      throw ConfigError("controller.fixed_levels must list n_q levels");
    for (std::size_t d = 0; d < controller.fixed_levels.size(); ++d) {
      const int l = controller.fixed_levels[d];
      if (l < 0 || l > 2) throw ConfigError("controller.fixed_levels entries must be 0, 1 or 2");
      if (d > 0 && l > controller.fixed_levels[d - 1])
        throw ConfigError("controller.fixed_levels must be non-increasing");
    }
  }
  if (controller.cfg.mode == ControllerMode::kLearned && controller.weights_path.empty())
    throw ConfigError("controller.mode = learned needs controller.weights_path");
  for (int l : controller.l_grid)
    if (l < 1 || l > 16) throw ConfigError("controller.L_grid entries must be in [1, 16]");
  if (framing.frames_per_packet < 1 || framing.frames_per_packet > 255)
    throw ConfigError("framing.frames_per_packet must be in [1, 255]");
  if (!(framing.header_bits >= 0.0)) throw ConfigError("framing.header_bits must be >= 0");
  if (!(framing.feedback_period_ms > 0.0)) throw ConfigError("framing.feedback_period_ms must be > 0");
  if (framing.interleave_base != 0 && framing.interleave_base != 1)
    throw ConfigError("framing.interleave_base must be 0 or 1");
  if (channel.model != "uniform" && channel.model != "ge") throw ConfigError("channel.model must be uniform or ge");
  if (channel.granularity != "packet" && channel.granularity != "token")
    throw ConfigError("channel.granularity must be packet or token");
  auto check_p = [&](double p) {
    if (!prob(p)) throw ConfigError("channel loss probabilities must be in [0, 1]");
    if (channel.model == "ge" && p >= 1.0) throw ConfigError("ge channel needs p < 1");
  };
  check_p(channel.p_target);
  for (double p : channel.p_grid) check_p(p);
  if (!(channel.mean_burst >= 1.0)) throw ConfigError("channel.mean_burst must be >= 1");
  if (!(channel.estimator_window_ms > 0.0)) throw ConfigError("channel.estimator_window_ms must be > 0");
  auto check_predictor = [](const std::string& p) {
    if (p != "count" && p != "repeat_last" && p != "uniform")
      throw ConfigError("concealment predictor must be count, repeat_last or uniform");
  };
  check_predictor(concealment.predictor);
  for (const auto& p : concealment.predictor_grid) check_predictor(p);
  if (concealment.order < 0) throw ConfigError("concealment.order must be >= 0");
  if (!(concealment.smoothing > 0.0)) throw ConfigError("concealment.smoothing must be > 0");
  if (!(concealment.temperature >= 0.0)) throw ConfigError("concealment.temperature must be >= 0");
  if (!concealment.lambdas.empty() && static_cast<int>(concealment.lambdas.size()) != codec.cfg.n_q)
    throw ConfigError("concealment.lambdas must list n_q weights");
  for (double l : concealment.lambdas)
    if (!(l > 0.0)) throw ConfigError("concealment.lambdas must be > 0");
  if (latency.t_coder < 0 || latency.t_ra < 0 || latency.t_token < 0 || latency.t_transmit < 0)
    throw ConfigError("latency components must be >= 0");
  if (run.n_frames < 1) throw ConfigError("run.n_frames must be >= 1");
  if (run.output_dir.empty()) throw ConfigError("run.output_dir must not be empty");
}

std::filesystem::path RunConfig::codebook_file() const {
  return codec.codebook_path.empty() ? output_dir() / "codebooks.rvq" : std::filesystem::path(codec.codebook_path);
}

std::filesystem::path RunConfig::predictor_file() const {
  return concealment.model_path.empty() ? output_dir() / "predictor.cnt"
                                        : std::filesystem::path(concealment.model_path);
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like section.key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::parse_error&) {
    value = raw;
  }
  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("malformed override key " + key);
    if (dot == std::string::npos) {
      (*node)[part] = value;
      break;
    }
    node = &(*node)[part];
    if (!node->is_object() && !node->is_null()) throw ConfigError("override path " + key + " crosses a value");
    start = dot + 1;
  }
}

}  // namespace semtok
