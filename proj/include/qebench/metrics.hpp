// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "qebench/vqa_model.hpp"
#include "qebench/world.hpp"

namespace qebench {

enum class ProbeMode { full_q, qtype_only };
std::string to_string(ProbeMode m);
ProbeMode parse_probe_mode(const std::string& s);

// Accuracies in percent at full precision; two-decimal truncation is a
// presentation step, never part of the stored record.
struct MetricsRecord {
  Split split = Split::id_test;
  ProbeMode probe = ProbeMode::full_q;
  std::size_t sample_count = 0;
  double overall_acc = 0.0;               // percent
  std::vector<double> per_type_acc;       // percent, one entry per type
  std::vector<std::size_t> per_type_count;
  std::optional<double> pct_acc;          // 100 * qtype / full, split-wide
  std::optional<double> delta_gap;        // full - qtype, split-wide
};

// Answer id for a sample under a probe mode.
using Predictor =
    std::function<std::size_t(const SyntheticSample&, ProbeMode)>;

// Top-1 exact-match accuracy, overall and per question type.
MetricsRecord evaluate(const WorldSpec& world,
                       const std::vector<SyntheticSample>& samples,
                       ProbeMode probe, const Predictor& predict);

// Encodes the full question or its one-token type prefix and arg-maxes the
// model's answer logits.
Predictor model_predictor(const VqaModel& model, const WorldSpec& world);

// Fills pct_acc/delta_gap onto both records of one split's (full, probe)
// pair. The identities hold exactly at full precision.
void attach_prior_probe(MetricsRecord& full, MetricsRecord& probe);

// Truncation (not rounding) at two decimals.
double two_decimal_floor(double x);

// Per-type train-majority answer; the prior-only reference predictor.
struct FrequencyTable {
  std::vector<std::size_t> majority;  // global answer id per type

  static FrequencyTable fit(const WorldSpec& world,
                            const std::vector<SyntheticSample>& train);
  std::size_t predict(const SyntheticSample& sample) const;
  Predictor predictor() const;
};

// Expected accuracy (percent) of always answering each type's designated
// train majority on the given split, computed from the priors alone: the
// prior-exploitation ceiling on id-test and floor on ood-test.
double analytic_prior_accuracy(const WorldSpec& world, const PriorSpec& priors,
                               Split split);

}  // namespace qebench
