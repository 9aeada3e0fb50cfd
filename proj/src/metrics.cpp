// SPDX-License-Identifier: Apache-2.0
#include "qebench/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "qebench/errors.hpp"

namespace qebench {

std::string to_string(ProbeMode m) {
  switch (m) {
    case ProbeMode::full_q: return "full-q";
    case ProbeMode::qtype_only: return "qtype-only";
  }
  throw DomainError("unknown probe mode");
}

ProbeMode parse_probe_mode(const std::string& s) {
  if (s == "full-q") return ProbeMode::full_q;
  if (s == "qtype-only") return ProbeMode::qtype_only;
  throw ConfigError("unknown probe mode '" + s + "'");
}

MetricsRecord evaluate(const WorldSpec& world,
                       const std::vector<SyntheticSample>& samples,
                       ProbeMode probe, const Predictor& predict) {
  world.validate();
  if (samples.empty()) throw DomainError("cannot evaluate an empty sample list");
  if (!predict) throw DomainError("evaluate needs a predictor");

  MetricsRecord rec;
  rec.split = samples.front().split;
  rec.probe = probe;
  rec.sample_count = samples.size();
  std::vector<std::size_t> hits(kTypeCount, 0), totals(kTypeCount, 0);
  std::size_t overall_hits = 0;
  for (const SyntheticSample& s : samples) {
    if (s.type >= kTypeCount) throw DataError("sample type out of range");
    if (s.split != rec.split) {
      throw DataError("evaluation list mixes samples from different splits");
    }
    const std::size_t guess = predict(s, probe);
    if (guess >= world.answer_count()) {
      throw DataError("predictor returned an out-of-range answer id");
    }
    ++totals[s.type];
    if (guess == s.answer) {
      ++hits[s.type];
      ++overall_hits;
    }
  }
  rec.overall_acc = 100.0 * static_cast<double>(overall_hits) /
                    static_cast<double>(samples.size());
  rec.per_type_acc.resize(kTypeCount, 0.0);
  rec.per_type_count = totals;
  for (std::size_t t = 0; t < kTypeCount; ++t) {
    if (totals[t] > 0) {
      rec.per_type_acc[t] = 100.0 * static_cast<double>(hits[t]) /
                            static_cast<double>(totals[t]);
    }
  }
  return rec;
}

Predictor model_predictor(const VqaModel& model, const WorldSpec& world) {
  return [&model, world](const SyntheticSample& s, ProbeMode probe) {
    TokenSequence tokens;
    if (probe == ProbeMode::qtype_only) {
      tokens = qtype_probe(world, s);
    } else {
      tokens.ids = s.tokens;
    }
    return model.predict(tokens, image_features(world, s));
  };
}

void attach_prior_probe(MetricsRecord& full, MetricsRecord& probe) {
  if (full.probe != ProbeMode::full_q || probe.probe != ProbeMode::qtype_only) {
    throw DomainError("pairing needs one full-q and one qtype-only record");
  }
  if (full.split != probe.split) {
    throw DomainError("pairing needs records from the same split");
  }
  if (full.overall_acc <= 0.0) {
    throw NumericError("pct-acc undefined at zero full-question accuracy");
  }
  const double pct = 100.0 * probe.overall_acc / full.overall_acc;
  const double gap = full.overall_acc - probe.overall_acc;
  full.pct_acc = pct;
  full.delta_gap = gap;
  probe.pct_acc = pct;
  probe.delta_gap = gap;
}

double two_decimal_floor(double x) { return std::floor(x * 100.0) / 100.0; }

FrequencyTable FrequencyTable::fit(const WorldSpec& world,
                                   const std::vector<SyntheticSample>& train) {
  world.validate();
  if (train.empty()) throw DomainError("cannot fit a frequency table on nothing");
  std::vector<std::vector<std::size_t>> counts(
      kTypeCount, std::vector<std::size_t>(world.answer_count(), 0));
  for (const SyntheticSample& s : train) {
    if (s.type >= kTypeCount || s.answer >= world.answer_count()) {
      throw DataError("training sample out of range");
    }
    ++counts[s.type][s.answer];
  }
  FrequencyTable table;
  table.majority.resize(kTypeCount, 0);
  for (std::size_t t = 0; t < kTypeCount; ++t) {
    // Ties break toward the lowest answer id, mirroring arg-max prediction.
    table.majority[t] = static_cast<std::size_t>(
        std::max_element(counts[t].begin(), counts[t].end()) -
        counts[t].begin());
  }
  return table;
}

std::size_t FrequencyTable::predict(const SyntheticSample& sample) const {
  if (sample.type >= majority.size()) {
    throw DataError("sample type out of range");
  }
  return majority[sample.type];
}

Predictor FrequencyTable::predictor() const {
  return [table = *this](const SyntheticSample& s, ProbeMode) {
    return table.predict(s);
  };
}

double analytic_prior_accuracy(const WorldSpec& world, const PriorSpec& priors,
                               Split split) {
  world.validate();
  priors.validate(world);
  double acc = 0.0;
  for (std::size_t t = 0; t < kTypeCount; ++t) {
    const auto& dist = priors.dist_for(split, t);
    acc += world.type_mix[t] * dist[priors.train_majority[t]];
  }
  return 100.0 * acc;
}

}  // namespace qebench
