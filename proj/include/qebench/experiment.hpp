// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "qebench/encoder.hpp"
#include "qebench/metrics.hpp"
#include "qebench/vqa_model.hpp"
#include "qebench/world.hpp"

namespace qebench {

// One grid cell: an encoder configuration trained on the synthetic benchmark
// and scored on all four (split x probe) evaluation cells.

enum class RunMode { model, frequency_baseline };
std::string to_string(RunMode m);
RunMode parse_run_mode(const std::string& s);

struct ExperimentConfig {
  RunMode mode = RunMode::model;
  EncoderConfig encoder;

  // World knobs layered over the standard families.
  double sigma = 0.05;
  double order_skew = 0.9;
  double rho = 0.8;

  std::size_t n_train = 10000;
  std::size_t n_id_test = 2000;
  std::size_t n_ood_test = 2000;
  std::uint64_t data_seed = 7;

  double lr = 2e-4;
  std::size_t batch = 128;
  std::size_t epochs = 15;
  std::uint64_t train_seed = 1;

  // Locations, not semantics: both stay out of the canonical text.
  std::string out_dir;
  std::string data_file;

  void validate() const;

  // Sorted key=value lines; doubles print shortest-round-trip. The same text
  // is the config file format and the checkpoint's embedded description.
  std::string canonical() const;
  std::string digest() const;

  // Compact human label for report rows, e.g. "transformer/none/copy".
  std::string label() const;

  WorldSpec world() const;
  PriorSpec priors() const;

  // Small-width profile sized for a single core: 32-wide dims, 15 epochs,
  // lr 1e-3, and a world whose order cue out-pays reading the noisy image.
  static ExperimentConfig desk(Variant v);
};

ExperimentConfig parse_experiment_config(const std::string& text);
// "key=value" override onto an existing config; unknown keys are errors.
void apply_override(ExperimentConfig& cfg, const std::string& assignment);

struct ReportRow {
  std::string digest;
  std::string label;
  RunMode mode = RunMode::model;
  std::uint64_t seed = 0;
  MetricsRecord id_full, id_probe, ood_full, ood_probe;
  double wall_seconds = 0.0;
};

std::string row_to_json(const ReportRow& row);
ReportRow row_from_json(const std::string& line);
std::string record_to_json(const MetricsRecord& record);
MetricsRecord record_from_json(const std::string& text);

// Trains (or fits the frequency baseline), evaluates the four cells, fills
// the %Acc/gap pairs, and — when out_dir is set — writes the checkpoint and
// appends the row to rows.jsonl. Identical config+seed reproduces identical
// metrics; only wall_seconds varies.
ReportRow run_experiment(const ExperimentConfig& cfg);

// The training loop alone; exposed for reuse and for probing trajectories.
VqaModel train_model(const ExperimentConfig& cfg, const WorldSpec& world,
                     const Dataset& data);

// Rebuilds the model a checkpoint describes and scores one evaluation cell.
MetricsRecord evaluate_checkpoint(const std::string& path, Split split,
                                  ProbeMode probe);

// ---------------------------------------------------------------------------
// report emission

enum class ReportFormat { csv, table };

// Flat, fully parseable projection of a ReportRow. %Acc/gap columns carry the
// ood-test pair, mirroring the probe's natural home on the shifted split.
struct ReportLine {
  std::string variant;
  std::string knobs;
  std::int64_t seed = 0;  // -1 marks a median-over-seeds aggregate
  std::string digest;
  double id_acc = 0.0;
  double id_qtype_acc = 0.0;
  double ood_acc = 0.0;
  double ood_qtype_acc = 0.0;
  double pct_acc = 0.0;
  double delta_gap = 0.0;
  double wall_seconds = 0.0;

  bool operator==(const ReportLine&) const = default;
};

ReportLine to_line(const ReportRow& row);

// Rows sort by (variant, knobs, seed) regardless of insertion order.
// aggregate=true emits one median line per (variant, knobs, digest) group.
std::string emit_report(const std::vector<ReportRow>& rows, ReportFormat fmt,
                        bool aggregate = false);
std::string emit_report_lines(std::vector<ReportLine> lines, ReportFormat fmt,
                              bool aggregate = false);
std::vector<ReportLine> parse_report_csv(const std::string& text);

}  // namespace qebench
