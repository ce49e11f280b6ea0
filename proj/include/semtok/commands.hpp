#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <vector>

#include "semtok/config.hpp"
#include "semtok/pipeline.hpp"

namespace semtok {

// Writes codebooks.rvq, features.ftr (training corpus) and tokens.tok under the output
// directory and prints the per-depth residual energy table. Returns the table values.
std::vector<double> cmd_train_codec(const RunConfig& cfg, std::ostream& out);

// Fits the count model on tokens.tok (codec source) or a training draw of the hmm
// source and writes predictor.cnt.
void cmd_train_predictor(const RunConfig& cfg, std::ostream& out);

// Runs the p grid (or p_target) and writes report.json, report.csv, packets.csv and
// losses.csv. Cells after the first get packets_<cell>.csv and losses_<cell>.csv.
std::vector<ReportRow> cmd_simulate(const RunConfig& cfg, std::ostream& out, int jobs = 1);

// Cartesian sweep over p, L, predictor and UEP grids; writes report.json and report.csv.
std::vector<ReportRow> cmd_sweep(const RunConfig& cfg, std::ostream& out, int jobs = 1);

// Prints the table for an existing report.json; optionally re-emits it as CSV.
std::vector<ReportRow> cmd_report(const std::filesystem::path& report_json, std::ostream& out,
                                  const std::optional<std::filesystem::path>& csv_out = std::nullopt);

}  // namespace semtok
