#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "semtok/channel.hpp"
#include "semtok/concealment.hpp"
#include "semtok/config.hpp"
#include "semtok/controller.hpp"
#include "semtok/framing.hpp"
#include "semtok/rvq.hpp"

namespace semtok {

// Trained files a run depends on, checked against the config that loads them.
struct Artifacts {
  std::vector<Codebook> codebooks;  // empty for the hmm source
  std::shared_ptr<const CountModel> count_model;
  std::optional<ControllerWeights> weights;
};

// Loads whatever the config's source, controller and predictor choices need.
Artifacts load_artifacts(const RunConfig& cfg);

// The evaluation stream: latent features (codec source only) and their tokens.
struct SourceData {
  std::vector<LatentFeature> features;
  std::vector<TokenColumn> columns;
};

SourceData make_source(const RunConfig& cfg, const Artifacts& art);

struct CellParams {
  double p = 0.0;
  int l_budget = 16;
  std::string predictor = "count";
  bool uep = true;
};

// Cells for a sweep: predictor, then L, then UEP flag, then p (innermost). Empty grids
// fall back to the scalar setting.
std::vector<CellParams> expand_grid(const RunConfig& cfg);
// Cells for a simulate run: only the p grid is expanded.
std::vector<CellParams> simulate_cells(const RunConfig& cfg);

struct ReportRow {
  std::size_t cell = 0;
  double p = 0.0;
  std::string channel_model;
  std::string granularity;
  std::string predictor;
  int l_budget = 0;
  bool uep = true;
  std::size_t n_frames = 0;
  std::size_t packets = 0;
  double mean_mask_sum = 0.0;
  double payload_bps = 0.0;
  double measured_payload_bps = 0.0;
  double total_bps = 0.0;
  double wire_bps = 0.0;
  double channel_loss_rate = 0.0;
  double mean_estimated_p = 0.0;
  double erasure_rate = 0.0;
  double post_error_rate = 0.0;
  double frame_erasure_rate = 0.0;
  std::vector<double> erasure_by_depth;
  std::vector<double> post_error_by_depth;
  std::size_t recovered_from_piggyback = 0;
  double recon_ce = 0.0;
  std::size_t recon_ce_capped = 0;
  double total_loss = 0.0;
  std::optional<double> latent_mse;
  double exact_frame_rate = 0.0;  // frames decoding identically to the sender's view
  double latency_s = 0.0;
};

struct CellResult {
  ReportRow row;
  std::vector<PacketTraceRow> packets;
  LossTrace losses;
};

CellResult simulate_cell(const RunConfig& cfg, const Artifacts& art, const SourceData& source,
                         const CellParams& params, std::size_t cell_index = 0);

// Runs the cells on up to `jobs` threads. Results come back in cell order.
std::vector<CellResult> run_cells(const RunConfig& cfg, const Artifacts& art, const SourceData& source,
                                  const std::vector<CellParams>& cells, int jobs = 1);

nlohmann::json report_to_json(const RunConfig& cfg, const std::vector<ReportRow>& rows);
std::vector<ReportRow> report_rows_from_json(const nlohmann::json& j);
std::string report_csv(const std::vector<ReportRow>& rows);
// Plain-text summary table, the body of the `report` command.
std::string report_table(const std::vector<ReportRow>& rows);

// Seeds. The source depends on the master seed only; the channel realization depends
// on the channel condition only, so cells that differ in predictor, L or UEP see the
// same losses.
std::uint64_t source_seed(const RunConfig& cfg);
std::uint64_t training_seed(const RunConfig& cfg);
std::uint64_t channel_seed(const RunConfig& cfg, double p);

}  // namespace semtok
