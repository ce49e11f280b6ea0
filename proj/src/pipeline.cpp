#include "semtok/pipeline.hpp"

#include <atomic>
#include <bit>
#include <cmath>
#include <exception>
#include <iomanip>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "semtok/metrics.hpp"
#include "semtok/token_source.hpp"

namespace semtok {

using nlohmann::json;

std::uint64_t source_seed(const RunConfig& cfg) { return derive_seed(cfg.run.seed, "source"); }

std::uint64_t training_seed(const RunConfig& cfg) { return derive_seed(cfg.run.seed, "train"); }

std::uint64_t channel_seed(const RunConfig& cfg, double p) {
  std::uint64_t key = hash_label(cfg.channel.model);
  key = hash_combine(key, hash_label(cfg.channel.granularity));
  key = hash_combine(key, std::bit_cast<std::uint64_t>(p));
  key = hash_combine(key, std::bit_cast<std::uint64_t>(cfg.channel.mean_burst));
  return derive_seed(derive_seed(derive_seed(cfg.run.seed, "channel"), cfg.channel.seed), key);
}

Artifacts load_artifacts(const RunConfig& cfg) {
  Artifacts art;
  const auto& codec = cfg.codec.cfg;
  if (cfg.source.kind == "codec") {
    CodecConfig stored;
    art.codebooks = load_codebooks(cfg.codebook_file(), &stored);
    if (stored.n_q != codec.n_q || stored.codebook_size != codec.codebook_size ||
        stored.feature_dim != codec.feature_dim)
      throw std::runtime_error("codebook file " + cfg.codebook_file().string() +
                               " does not match the codec section of the config");
  }
  bool needs_count = cfg.concealment.predictor == "count";
  for (const auto& p : cfg.concealment.predictor_grid) needs_count = needs_count || p == "count";
  if (needs_count) {
    auto model = std::make_shared<CountModel>(CountModel::load(cfg.predictor_file()));
    if (model->n_q() != codec.n_q || model->codebook_size() != codec.codebook_size)
      throw std::runtime_error("predictor file " + cfg.predictor_file().string() +
                               " does not match the codec section of the config");
    art.count_model = std::move(model);
  }
  if (cfg.controller.cfg.mode == ControllerMode::kLearned) {
    art.weights = load_controller_weights(cfg.controller.weights_path);
    art.weights->validate(codec.feature_dim);
  }
  return art;
}

SourceData make_source(const RunConfig& cfg, const Artifacts& art) {
  SourceData src;
  const auto& codec = cfg.codec.cfg;
  if (cfg.source.kind == "hmm") {
    src.columns = hmm_token_source(cfg.run.n_frames, codec.n_q, codec.codebook_size, source_seed(cfg),
                                   cfg.source.hmm);
    return src;
  }
  src.features = synth_features(cfg.run.n_frames, codec, source_seed(cfg), cfg.source.synth);
  src.columns.reserve(src.features.size());
  for (const auto& z : src.features) src.columns.push_back(rvq_encode(z, art.codebooks));
  return src;
}

std::vector<CellParams> expand_grid(const RunConfig& cfg) {
  const std::vector<double> ps = cfg.channel.p_grid.empty() ? std::vector<double>{cfg.channel.p_target}
                                                            : cfg.channel.p_grid;
  const std::vector<int> ls = cfg.controller.l_grid.empty() ? std::vector<int>{cfg.controller.cfg.l_budget}
                                                            : cfg.controller.l_grid;
  const std::vector<std::string> preds = cfg.concealment.predictor_grid.empty()
                                             ? std::vector<std::string>{cfg.concealment.predictor}
                                             : cfg.concealment.predictor_grid;
  const std::vector<bool> ueps = cfg.controller.uep_grid.empty() ? std::vector<bool>{cfg.controller.uep}
                                                                 : cfg.controller.uep_grid;
  std::vector<CellParams> cells;
  for (const auto& pred : preds)
    for (int l : ls)
      for (bool u : ueps)
        for (double p : ps) cells.push_back({p, l, pred, u});
  return cells;
}

std::vector<CellParams> simulate_cells(const RunConfig& cfg) {
  std::vector<CellParams> cells;
  const std::vector<double> ps = cfg.channel.p_grid.empty() ? std::vector<double>{cfg.channel.p_target}
                                                            : cfg.channel.p_grid;
  for (double p : ps)
    cells.push_back({p, cfg.controller.cfg.l_budget, cfg.concealment.predictor, cfg.controller.uep});
  return cells;
}

namespace {

LossTrace draw_losses(const RunConfig& cfg, std::size_t n_units, double p) {
  const auto seed = channel_seed(cfg, p);
  if (cfg.channel.model == "uniform") return uniform_loss(n_units, p, seed);
  return ge_loss(n_units, ge_params_from_target(p, cfg.channel.mean_burst), seed);
}

LatentFeature decode_prefix(const TokenColumn& col, int depth, const std::vector<Codebook>& cbs, int dim) {
  if (depth == 0) return {col.frame_index, std::vector<float>(dim, 0.0f)};
  return rvq_decode(col, cbs, depth);
}

// Depths the receiver knows were sent: everything not marked absent.
int known_depth(const TransmitSet& t) {
  int d = 0;
  for (const auto& s : t.slots) d += s.state != SlotState::kAbsent;
  return d;
}

const Predictor& resolve_predictor(const std::string& name, const Artifacts& art,
                                   std::unique_ptr<Predictor>& owned, const CodecConfig& codec) {
  if (name == "count") {
    if (!art.count_model) throw std::runtime_error("count predictor requested but no model loaded");
    return *art.count_model;
  }
  owned = make_predictor(name, 0, 1.0, codec.n_q, codec.codebook_size);
  return *owned;
}

}  // namespace

CellResult simulate_cell(const RunConfig& cfg, const Artifacts& art, const SourceData& source,
                         const CellParams& params, std::size_t cell_index) {
  const auto& codec = cfg.codec.cfg;
  const int n_q = codec.n_q;
  const std::size_t n = source.columns.size();
  const double frame_ms = 1000.0 * codec.frame_duration_s();
  const double duration_s = static_cast<double>(n) * codec.frame_duration_s();

  FramingConfig fcfg;
  fcfg.n_q = n_q;
  fcfg.bits_per_token = codec.bits_per_token();
  fcfg.frames_per_packet = cfg.framing.frames_per_packet;
  fcfg.interleave = cfg.framing.interleave;
  fcfg.interleave_base = cfg.framing.interleave_base;
  fcfg.validate();
  const std::size_t n_packets = fcfg.packet_count(n);
  const bool packet_level = cfg.channel.granularity == "packet";

  CellResult result;
  ReportRow& row = result.row;
  row.cell = cell_index;
  row.p = params.p;
  row.channel_model = cfg.channel.model;
  row.granularity = cfg.channel.granularity;
  row.predictor = params.predictor;
  row.l_budget = params.l_budget;
  row.uep = params.uep;
  row.n_frames = n;
  row.packets = n_packets;

  // Packet losses do not depend on content, so they can be drawn first and fed back.
  LossTrace packet_losses;
  std::vector<FeedbackMessage> feedback;
  if (packet_level) {
    packet_losses = draw_losses(cfg, n_packets, params.p);
    EstimatorConfig ecfg;
    ecfg.window_ms = cfg.channel.estimator_window_ms;
    ecfg.feedback_period_ms = cfg.framing.feedback_period_ms;
    ecfg.packet_period_ms = frame_ms * cfg.framing.frames_per_packet;
    feedback = estimate_loss(packet_losses.lost, static_cast<double>(n) * frame_ms, ecfg);
  }
  const bool use_estimate = packet_level && cfg.controller.p_source == "estimate";

  ControllerConfig ccfg = cfg.controller.cfg;
  ccfg.l_budget = params.l_budget;
  std::vector<std::uint8_t> fixed_levels(cfg.controller.fixed_levels.begin(), cfg.controller.fixed_levels.end());
  const ControllerWeights* weights = art.weights ? &*art.weights : nullptr;

  std::vector<TransmitSet> sent(n);
  std::vector<int> mask_sums(n);
  double p_sum = 0.0;
  for (std::size_t f = 0; f < n; ++f) {
    const double p_hat =
        use_estimate ? delayed_feedback(feedback, (f + 1) * frame_ms, cfg.framing.feedback_period_ms) : params.p;
    p_sum += p_hat;
    Mask mask;
    if (ccfg.mode == ControllerMode::kFixed) {
      mask = fixed_mask(fixed_levels);
    } else {
      const auto imp = compute_importance(source.features[f], p_hat, weights, ccfg);
      mask = importance_to_mask(imp, params.l_budget, n_q);
    }
    if (!params.uep) mask = without_redundancy(mask);
    mask_sums[f] = mask.sum();
    sent[f] = apply_mask(source.columns[f], mask);
  }
  row.mean_estimated_p = n ? p_sum / n : 0.0;

  std::vector<TransmitSet> wire = sent;
  interleave_stream(wire, fcfg);
  const auto packets = packetize(wire, fcfg);

  std::vector<std::optional<std::vector<std::uint8_t>>> received_bytes(packets.size());
  std::size_t payload_bits = 0, descriptor_bits = 0, wire_bits = 0;
  result.packets.reserve(packets.size());
  for (std::size_t k = 0; k < packets.size(); ++k) {
    const auto bits = packet_bits(packets[k], fcfg);
    payload_bits += bits.payload + bits.piggyback;
    descriptor_bits += bits.descriptor;
    auto bytes = serialize_packet(packets[k], fcfg);
    wire_bits += 8 * bytes.size();
    const bool lost = packet_level && packet_losses.lost[k];
    PacketTraceRow tr;
    tr.seq_no = packets[k].seq_no;
    tr.first_frame = packets[k].first_frame_index;
    tr.last_frame = packets[k].first_frame_index + static_cast<std::uint32_t>(packets[k].frames.size()) - 1;
    tr.payload_bits = bits.payload;
    tr.piggyback_bits = bits.piggyback;
    tr.lost = lost;
    result.packets.push_back(tr);
    if (!lost) received_bytes[k] = std::move(bytes);
  }

  DepacketizeStats dstats;
  std::vector<TransmitSet> received = depacketize(received_bytes, n, fcfg, &dstats);
  row.recovered_from_piggyback = dstats.recovered_from_piggyback;

  if (packet_level) {
    result.losses = std::move(packet_losses);
  } else {
    // One channel unit per transmitted copy, in frame and depth order.
    std::size_t units = 0;
    for (const auto& t : received)
      for (const auto& s : t.slots)
        if (s.state == SlotState::kPresent) units += s.level == 2 ? 2 : 1;
    result.losses = draw_losses(cfg, units, params.p);
    std::size_t u = 0;
    for (auto& t : received)
      for (auto& s : t.slots) {
        if (s.state != SlotState::kPresent) continue;
        const bool first_lost = result.losses.lost[u++];
        bool all_lost = first_lost;
        if (s.level == 2) {
          const bool second_lost = result.losses.lost[u++];
          if (first_lost && !second_lost) ++row.recovered_from_piggyback;
          all_lost = first_lost && second_lost;
        }
        if (all_lost) {
          s.state = SlotState::kErased;
          s.token = kErased;
        }
      }
  }
  row.channel_loss_rate = result.losses.loss_rate();

  std::vector<TokenColumn> gapped(n);
  for (std::size_t f = 0; f < n; ++f) {
    gapped[f].frame_index = static_cast<std::uint32_t>(f);
    gapped[f].tokens.resize(n_q);
    for (int d = 0; d < n_q; ++d) {
      const auto& s = received[f].slots[d];
      gapped[f].tokens[d] = s.state == SlotState::kPresent ? s.token : kErased;
    }
  }

  std::unique_ptr<Predictor> owned;
  const Predictor& predictor = resolve_predictor(params.predictor, art, owned, codec);
  ConcealOptions copts;
  copts.temperature = cfg.concealment.temperature;
  copts.seed = derive_seed(cfg.run.seed, "conceal");
  const auto concealed = conceal_stream(predictor, gapped, n_q, codec.codebook_size, copts);

  const auto stats = recovery_stats(sent, received, concealed);
  row.erasure_rate = stats.erasure_rate();
  row.post_error_rate = stats.post_error_rate();
  row.frame_erasure_rate = stats.frame_erasure_rate();
  for (int d = 0; d < n_q; ++d) {
    row.erasure_by_depth.push_back(stats.erasure_rate_at(d));
    row.post_error_by_depth.push_back(stats.post_error_rate_at(d));
  }

  if (!art.codebooks.empty() && !source.features.empty()) {
    double se = 0.0;
    std::size_t exact = 0;
    for (std::size_t f = 0; f < n; ++f) {
      int sender_depth = 0;
      for (const auto& s : sent[f].slots) sender_depth += s.state == SlotState::kPresent;
      const auto reference = decode_prefix(source.columns[f], sender_depth, art.codebooks, codec.feature_dim);
      const auto decoded = decode_prefix(concealed[f], known_depth(received[f]), art.codebooks, codec.feature_dim);
      exact += reference.values == decoded.values;
      for (int i = 0; i < codec.feature_dim; ++i) {
        const double e = static_cast<double>(source.features[f].values[i]) - decoded.values[i];
        se += e * e;
      }
    }
    row.latent_mse = n ? se / (static_cast<double>(n) * codec.feature_dim) : 0.0;
    row.exact_frame_rate = n ? static_cast<double>(exact) / n : 1.0;
  } else {
    std::size_t exact = 0;
    for (std::size_t f = 0; f < n; ++f) {
      bool same = true;
      for (int d = 0; d < n_q; ++d)
        if (sent[f].slots[d].state == SlotState::kPresent) same = same && concealed[f].tokens[d] == sent[f].slots[d].token;
      exact += same;
    }
    row.exact_frame_rate = n ? static_cast<double>(exact) / n : 1.0;
  }

  const auto lambdas = cfg.concealment.lambdas.empty() ? default_lambdas(n_q) : cfg.concealment.lambdas;
  const auto probs = teacher_forced_probabilities(predictor, source.columns, n_q, codec.codebook_size);
  const auto recon = recon_loss_from_probabilities(probs, lambdas);
  row.recon_ce = recon.value;
  row.recon_ce_capped = recon.capped;
  row.total_loss = total_loss(recon.value, mask_sums, ccfg.gamma);

  double sum_levels = 0.0;
  for (int s : mask_sums) sum_levels += s;
  row.mean_mask_sum = n ? sum_levels / n : 0.0;
  row.payload_bps = payload_bitrate(mask_sums, codec);
  row.measured_payload_bps = duration_s > 0 ? payload_bits / duration_s : 0.0;

  OverheadProfile oh;
  oh.r_payload = row.payload_bps + (cfg.framing.descriptors_in_payload && duration_s > 0 ? descriptor_bits / duration_s : 0.0);
  oh.n_pkt = duration_s > 0 ? n_packets / duration_s : 0.0;
  oh.r_header = cfg.framing.header_bits;
  oh.r_ctrl = feedback_rate_bps(cfg.framing.feedback_period_ms);
  row.total_bps = overhead_estimate(oh);
  row.wire_bps = (duration_s > 0 ? wire_bits / duration_s : 0.0) + oh.n_pkt * oh.r_header + oh.r_ctrl;

  LatencyProfile lat;
  lat.t_context = cfg.framing.frames_per_packet * codec.frame_duration_s();
  lat.t_coder = cfg.latency.t_coder;
  lat.t_ra = cfg.latency.t_ra;
  lat.t_token = cfg.latency.t_token;
  lat.expected_tokens = n ? static_cast<double>(stats.erased_slots) / n : 0.0;
  lat.t_transmit = cfg.latency.t_transmit;
  row.latency_s = latency_estimate(lat);
  return result;
}

std::vector<CellResult> run_cells(const RunConfig& cfg, const Artifacts& art, const SourceData& source,
                                  const std::vector<CellParams>& cells, int jobs) {
  std::vector<CellResult> out(cells.size());
  const int workers = std::max(1, std::min<int>(jobs, static_cast<int>(cells.size())));
  if (workers == 1) {
    for (std::size_t i = 0; i < cells.size(); ++i) out[i] = simulate_cell(cfg, art, source, cells[i], i);
    return out;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < cells.size(); i = next++) {
        try {
          out[i] = simulate_cell(cfg, art, source, cells[i], i);
        } catch (...) {
          std::lock_guard lock(failure_mu);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
  return out;
}

namespace {

json row_to_json(const ReportRow& r) {
  json j;
  j["cell"] = r.cell;
  j["p"] = r.p;
  j["channel_model"] = r.channel_model;
  j["granularity"] = r.granularity;
  j["predictor"] = r.predictor;
  j["L"] = r.l_budget;
  j["uep"] = r.uep;
  j["n_frames"] = r.n_frames;
  j["packets"] = r.packets;
  j["mean_mask_sum"] = r.mean_mask_sum;
  j["payload_bps"] = r.payload_bps;
  j["measured_payload_bps"] = r.measured_payload_bps;
  j["total_bps"] = r.total_bps;
  j["wire_bps"] = r.wire_bps;
  j["channel_loss_rate"] = r.channel_loss_rate;
  j["mean_estimated_p"] = r.mean_estimated_p;
  j["erasure_rate"] = r.erasure_rate;
  j["post_error_rate"] = r.post_error_rate;
  j["frame_erasure_rate"] = r.frame_erasure_rate;
  j["erasure_by_depth"] = r.erasure_by_depth;
  j["post_error_by_depth"] = r.post_error_by_depth;
  j["recovered_from_piggyback"] = r.recovered_from_piggyback;
  j["recon_ce"] = r.recon_ce;
  j["recon_ce_capped"] = r.recon_ce_capped;
  j["total_loss"] = r.total_loss;
  j["latent_mse"] = r.latent_mse ? json(*r.latent_mse) : json(nullptr);
  j["exact_frame_rate"] = r.exact_frame_rate;
  j["latency_s"] = r.latency_s;
  return j;
}

ReportRow row_from_json(const json& j) {
  ReportRow r;
  r.cell = j.at("cell").get<std::size_t>();
  r.p = j.at("p").get<double>();
  r.channel_model = j.at("channel_model").get<std::string>();
  r.granularity = j.at("granularity").get<std::string>();
  r.predictor = j.at("predictor").get<std::string>();
  r.l_budget = j.at("L").get<int>();
  r.uep = j.at("uep").get<bool>();
  r.n_frames = j.at("n_frames").get<std::size_t>();
  r.packets = j.at("packets").get<std::size_t>();
  r.mean_mask_sum = j.at("mean_mask_sum").get<double>();
  r.payload_bps = j.at("payload_bps").get<double>();
  r.measured_payload_bps = j.at("measured_payload_bps").get<double>();
  r.total_bps = j.at("total_bps").get<double>();
  r.wire_bps = j.at("wire_bps").get<double>();
  r.channel_loss_rate = j.at("channel_loss_rate").get<double>();
  r.mean_estimated_p = j.at("mean_estimated_p").get<double>();
  r.erasure_rate = j.at("erasure_rate").get<double>();
  r.post_error_rate = j.at("post_error_rate").get<double>();
  r.frame_erasure_rate = j.at("frame_erasure_rate").get<double>();
  r.erasure_by_depth = j.at("erasure_by_depth").get<std::vector<double>>();
  r.post_error_by_depth = j.at("post_error_by_depth").get<std::vector<double>>();
  r.recovered_from_piggyback = j.at("recovered_from_piggyback").get<std::size_t>();
  r.recon_ce = j.at("recon_ce").get<double>();
  r.recon_ce_capped = j.at("recon_ce_capped").get<std::size_t>();
  r.total_loss = j.at("total_loss").get<double>();
  if (!j.at("latent_mse").is_null()) r.latent_mse = j.at("latent_mse").get<double>();
  r.exact_frame_rate = j.at("exact_frame_rate").get<double>();
  r.latency_s = j.at("latency_s").get<double>();
  return r;
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

std::string join(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ";" : "") + fmt(v[i]);
  return s;
}

}  // namespace

json report_to_json(const RunConfig& cfg, const std::vector<ReportRow>& rows) {
  json j;
  j["schema_version"] = 1;
  j["config"] = config_to_json(cfg);
  j["rows"] = json::array();
  for (const auto& r : rows) j["rows"].push_back(row_to_json(r));
  return j;
}

std::vector<ReportRow> report_rows_from_json(const json& j) {
  if (!j.contains("schema_version") || j.at("schema_version").get<int>() != 1)
    throw std::runtime_error("unsupported report schema_version");
  std::vector<ReportRow> rows;
  for (const auto& r : j.at("rows")) rows.push_back(row_from_json(r));
  return rows;
}

std::string report_csv(const std::vector<ReportRow>& rows) {
  std::ostringstream os;
  os << "cell,p,channel_model,granularity,predictor,L,uep,n_frames,packets,mean_mask_sum,payload_bps,"
        "measured_payload_bps,total_bps,wire_bps,channel_loss_rate,mean_estimated_p,erasure_rate,"
        "post_error_rate,frame_erasure_rate,erasure_by_depth,post_error_by_depth,recovered_from_piggyback,"
        "recon_ce,recon_ce_capped,total_loss,latent_mse,exact_frame_rate,latency_s\n";
  for (const auto& r : rows) {
    os << r.cell << ',' << fmt(r.p) << ',' << r.channel_model << ',' << r.granularity << ',' << r.predictor << ','
       << r.l_budget << ',' << (r.uep ? 1 : 0) << ',' << r.n_frames << ',' << r.packets << ','
       << fmt(r.mean_mask_sum) << ',' << fmt(r.payload_bps) << ',' << fmt(r.measured_payload_bps) << ','
       << fmt(r.total_bps) << ',' << fmt(r.wire_bps) << ',' << fmt(r.channel_loss_rate) << ','
       << fmt(r.mean_estimated_p) << ',' << fmt(r.erasure_rate) << ',' << fmt(r.post_error_rate) << ','
       << fmt(r.frame_erasure_rate) << ',' << join(r.erasure_by_depth) << ',' << join(r.post_error_by_depth)
       << ',' << r.recovered_from_piggyback << ',' << fmt(r.recon_ce) << ',' << r.recon_ce_capped << ','
       << fmt(r.total_loss) << ',' << (r.latent_mse ? fmt(*r.latent_mse) : "") << ','
       << fmt(r.exact_frame_rate) << ',' << fmt(r.latency_s) << '\n';
  }
  return os.str();
}

std::string report_table(const std::vector<ReportRow>& rows) {
  std::ostringstream os;
  os << std::left << std::setw(5) << "cell" << std::setw(8) << "p" << std::setw(9) << "channel" << std::setw(13)
     << "predictor" << std::setw(4) << "L" << std::setw(5) << "uep" << std::right << std::setw(10) << "payload"
     << std::setw(10) << "total" << std::setw(10) << "erasure" << std::setw(10) << "post_err" << std::setw(10)
     << "frame_er" << std::setw(10) << "recon_ce" << std::setw(9) << "latency" << '\n';
  os << std::fixed;
  for (const auto& r : rows) {
    os << std::left << std::setw(5) << r.cell << std::setw(8) << std::setprecision(3) << r.p << std::setw(9)
       << r.channel_model << std::setw(13) << r.predictor << std::setw(4) << r.l_budget << std::setw(5)
       << (r.uep ? "on" : "off") << std::right << std::setprecision(1) << std::setw(10) << r.payload_bps
       << std::setw(10) << r.total_bps << std::setprecision(4) << std::setw(10) << r.erasure_rate << std::setw(10)
       << r.post_error_rate << std::setw(10) << r.frame_erasure_rate << std::setw(10) << r.recon_ce
       << std::setprecision(3) << std::setw(9) << r.latency_s << '\n';
  }
  return os.str();
}

}  // namespace semtok
