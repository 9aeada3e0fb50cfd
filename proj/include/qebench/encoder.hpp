// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "qebench/param_store.hpp"
#include "qebench/rng.hpp"
#include "qebench/tensor.hpp"

namespace qebench {

// Question-encoder zoo: recurrent baselines, a naive self-attention stack,
// and a graph-attention encoder over the complete token digraph.

enum class Variant { gru, bigru, transformer, gat };
enum class Aggregation { last_hidden, sum_pool };
enum class PosEncMode { learned_absolute, none, conv1d };
enum class MhaMode { copy, split };
enum class ScoreMode { concat_leakyrelu, scaled_dot_product };

std::string to_string(Variant v);
std::string to_string(Aggregation a);
std::string to_string(PosEncMode p);
std::string to_string(MhaMode m);
std::string to_string(ScoreMode s);
Variant parse_variant(const std::string& s);
Aggregation parse_aggregation(const std::string& s);
PosEncMode parse_pos_enc(const std::string& s);
MhaMode parse_mha_mode(const std::string& s);
ScoreMode parse_score_mode(const std::string& s);

inline constexpr double kLeakySlope = 0.2;
inline constexpr double kLayerNormEps = 1e-5;

struct EncoderConfig {
  Variant variant = Variant::gat;
  Aggregation aggregation = Aggregation::sum_pool;
  PosEncMode pos_enc = PosEncMode::learned_absolute;
  std::size_t layers = 1;
  std::size_t heads = 2;
  std::size_t window = 3;
  MhaMode mha_mode = MhaMode::copy;
  ScoreMode score_mode = ScoreMode::concat_leakyrelu;
  std::size_t d_w = 512;
  std::size_t d_a = 512;
  std::size_t d_q = 512;
  std::size_t max_len = 32;

  // Throws ConfigError on contradictions (odd bigru width, indivisible
  // split heads, transformer d_w != d_q, zero dims).
  void validate() const;

  // Sorted key=value lines; identical configs share identical text.
  std::string canonical() const;
  std::string digest() const;

  // Small-width profile for bench runs on one core.
  static EncoderConfig desk(Variant v);
};

struct TokenSequence {
  std::vector<std::size_t> ids;
  std::size_t size() const { return ids.size(); }
};

// Complete digraph over tokens, self-loops included; labels carry the
// original 1-based positions, the only place order survives.
struct QuestionGraph {
  std::size_t node_count = 0;
  std::vector<std::size_t> labels;  // permutation of 1..n
  Tensor features;                  // [n x d_w]
  std::size_t edge_count() const { return node_count * node_count; }
};

// Detached per-head attention rows for probes; never on a tape.
struct AttentionRecord {
  std::vector<Tensor> head_weights;  // per head [n x n]
};

struct EncodedQuestion {
  Tensor vector;  // [d_q]
  std::vector<AttentionRecord> attention;  // per attention round
};

// Creates every parameter the config calls for, deterministic given rng.
// The embedding row at padding_id starts at zero and never receives
// gradient, so it stays exactly zero through training.
void register_encoder_params(ParameterStore& store, const EncoderConfig& cfg,
                             std::size_t vocab_size, std::size_t padding_id,
                             Rng& rng);

Tensor embed_tokens(const TokenSequence& tokens, const Tensor& table,
                    std::size_t padding_id);

// Adds the first n learned position rows; n beyond the table is an error.
Tensor add_position_encodings(const Tensor& embedded, const Tensor& pos_table);

struct LayerOut {
  Tensor hidden;  // [n x d_q]
  AttentionRecord attention;
};

// One pre-activation self-attention block: MHA (copy or split head mixing),
// residual + layer norm, position-wise FFN, residual + layer norm.
LayerOut self_attention_layer(const Tensor& x, const EncoderConfig& cfg,
                              const ParameterStore& store, std::size_t layer);

QuestionGraph build_question_graph(const Tensor& embedded);

// One round of attention-weighted message passing over the complete digraph.
LayerOut gat_node_update(const QuestionGraph& graph, const EncoderConfig& cfg,
                         const ParameterStore& store);

// Reorders nodes by label, runs the width-`window` sequence conv (right
// zero pad, no activation), and sum-pools positions into one vector.
Tensor position_aware_aggregate(const Tensor& nodes,
                                const std::vector<std::size_t>& labels,
                                const EncoderConfig& cfg,
                                const ParameterStore& store);

// Gated recurrence over the embedded sequence (both directions for bigru).
Tensor encode_gru(const Tensor& embedded, const EncoderConfig& cfg,
                  const ParameterStore& store);

// Full dispatch: embed, variant-specific body, aggregate.
EncodedQuestion encode(const TokenSequence& tokens, const EncoderConfig& cfg,
                       const ParameterStore& store, std::size_t padding_id);

}  // namespace qebench
