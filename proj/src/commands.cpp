#include "semtok/commands.hpp"

#include <fstream>
#include <iomanip>
#include <ostream>
#include <stdexcept>

#include "semtok/binary_io.hpp"
#include "semtok/token_source.hpp"

namespace semtok {

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

void write_report(const RunConfig& cfg, const std::vector<ReportRow>& rows) {
  write_text(cfg.output_dir() / "report.json", report_to_json(cfg, rows).dump(2) + "\n");
  write_text(cfg.output_dir() / "report.csv", report_csv(rows));
}

std::vector<ReportRow> rows_of(const std::vector<CellResult>& results) {
  std::vector<ReportRow> rows;
  rows.reserve(results.size());
  for (const auto& r : results) rows.push_back(r.row);
  return rows;
}

}  // namespace

std::vector<double> cmd_train_codec(const RunConfig& cfg, std::ostream& out) {
  if (cfg.source.kind != "codec") throw ConfigError("train-codec needs source.kind = codec");
  const auto& codec = cfg.codec.cfg;
  const auto corpus = synth_features(cfg.codec.train_frames, codec, training_seed(cfg), cfg.source.synth);
  TrainOptions opts;
  opts.max_iterations = cfg.codec.train_iterations;
  TrainReport report;
  const auto codebooks = train_codebooks(corpus, codec, derive_seed(training_seed(cfg), "lloyd"), opts, &report);

  std::vector<TokenColumn> tokens;
  tokens.reserve(corpus.size());
  for (const auto& z : corpus) tokens.push_back(rvq_encode(z, codebooks));

  save_codebooks(cfg.codebook_file(), codec, codebooks);
  write_file(cfg.features_file(), serialize_features(corpus));
  write_file(cfg.tokens_file(), serialize_tokens(tokens, codec.n_q));

  out << "depth  residual_energy\n";
  for (std::size_t d = 0; d < report.residual_energy.size(); ++d)
    out << std::setw(5) << d + 1 << "  " << std::setprecision(8) << report.residual_energy[d] << '\n';
  out << "wrote " << cfg.codebook_file().string() << ", " << cfg.features_file().string() << ", "
      << cfg.tokens_file().string() << '\n';
  return report.residual_energy;
}

void cmd_train_predictor(const RunConfig& cfg, std::ostream& out) {
  const auto& codec = cfg.codec.cfg;
  std::vector<TokenColumn> corpus;
  if (cfg.source.kind == "hmm") {
    corpus = hmm_token_source(cfg.codec.train_frames, codec.n_q, codec.codebook_size, training_seed(cfg),
                              cfg.source.hmm);
  } else {
    int n_q = 0;
    corpus = parse_tokens(read_file(cfg.tokens_file()), &n_q);
    if (n_q != codec.n_q) throw std::runtime_error("token corpus depth does not match codec.n_q");
  }
  CountModel model(cfg.concealment.order, cfg.concealment.smoothing, codec.n_q, codec.codebook_size);
  model.train(corpus);
  model.save(cfg.predictor_file());
  out << "trained order-" << model.order() << " count model on " << corpus.size() << " frames, "
      << model.context_count() << " contexts\nwrote " << cfg.predictor_file().string() << '\n';
}

std::vector<ReportRow> cmd_simulate(const RunConfig& cfg, std::ostream& out, int jobs) {
  const auto art = load_artifacts(cfg);
  const auto source = make_source(cfg, art);
  const auto results = run_cells(cfg, art, source, simulate_cells(cfg), jobs);
  const auto rows = rows_of(results);
  write_report(cfg, rows);
  for (std::size_t i = 0; i < results.size(); ++i) {
    const std::string suffix = i == 0 ? "" : "_" + std::to_string(i);
    write_text(cfg.output_dir() / ("packets" + suffix + ".csv"), packet_trace_csv(results[i].packets));
    write_text(cfg.output_dir() / ("losses" + suffix + ".csv"), loss_trace_csv(results[i].losses));
  }
  out << report_table(rows);
  return rows;
}

std::vector<ReportRow> cmd_sweep(const RunConfig& cfg, std::ostream& out, int jobs) {
  const auto art = load_artifacts(cfg);
  const auto source = make_source(cfg, art);
  const auto rows = rows_of(run_cells(cfg, art, source, expand_grid(cfg), jobs));
  write_report(cfg, rows);
  out << report_table(rows);
  return rows;
}

std::vector<ReportRow> cmd_report(const std::filesystem::path& report_json, std::ostream& out,
                                  const std::optional<std::filesystem::path>& csv_out) {
  std::ifstream in(report_json);
  if (!in) throw std::runtime_error("cannot open report " + report_json.string());
  const auto j = nlohmann::json::parse(in);
  const auto rows = report_rows_from_json(j);
  out << report_table(rows);
  if (csv_out) write_text(*csv_out, report_csv(rows));
  return rows;
}

}  // namespace semtok
