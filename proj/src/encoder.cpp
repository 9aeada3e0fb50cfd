// SPDX-License-Identifier: Apache-2.0
#include "qebench/encoder.hpp"

#include <cmath>
#include <sstream>

#include "qebench/digest.hpp"
#include "qebench/errors.hpp"
#include "qebench/ops.hpp"

namespace qebench {

namespace op = ops;

// ---------------------------------------------------------------------------
// enum names

std::string to_string(Variant v) {
  switch (v) {
    case Variant::gru: return "gru";
    case Variant::bigru: return "bigru";
    case Variant::transformer: return "transformer";
    case Variant::gat: return "gat";
  }
  return "?";
}

std::string to_string(Aggregation a) {
  return a == Aggregation::last_hidden ? "last-hidden" : "sum-pool";
}

std::string to_string(PosEncMode p) {
  switch (p) {
    case PosEncMode::learned_absolute: return "learned-absolute";
    case PosEncMode::none: return "none";
    case PosEncMode::conv1d: return "conv1d";
  }
  return "?";
}

std::string to_string(MhaMode m) {
  return m == MhaMode::copy ? "copy" : "split";
}

std::string to_string(ScoreMode s) {
  return s == ScoreMode::concat_leakyrelu ? "concat-leakyrelu" : "sdpa";
}

Variant parse_variant(const std::string& s) {
  if (s == "gru") return Variant::gru;
  if (s == "bigru") return Variant::bigru;
  if (s == "transformer") return Variant::transformer;
  if (s == "gat") return Variant::gat;
  throw ConfigError("unknown variant '" + s + "'");
}

Aggregation parse_aggregation(const std::string& s) {
  if (s == "last-hidden") return Aggregation::last_hidden;
  if (s == "sum-pool") return Aggregation::sum_pool;
  throw ConfigError("unknown aggregation '" + s + "'");
}

PosEncMode parse_pos_enc(const std::string& s) {
  if (s == "learned-absolute") return PosEncMode::learned_absolute;
  if (s == "none") return PosEncMode::none;
  if (s == "conv1d") return PosEncMode::conv1d;
  throw ConfigError("unknown pos-enc mode '" + s + "'");
}

MhaMode parse_mha_mode(const std::string& s) {
  if (s == "copy") return MhaMode::copy;
  if (s == "split") return MhaMode::split;
  throw ConfigError("unknown mha mode '" + s + "'");
}

ScoreMode parse_score_mode(const std::string& s) {
  if (s == "concat-leakyrelu") return ScoreMode::concat_leakyrelu;
  if (s == "sdpa") return ScoreMode::scaled_dot_product;
  throw ConfigError("unknown score mode '" + s + "'");
}

// ---------------------------------------------------------------------------
// config

void EncoderConfig::validate() const {
  if (d_w == 0 || d_a == 0 || d_q == 0) {
    throw ConfigError("encoder: widths must be positive");
  }
  if (layers == 0) throw ConfigError("encoder: layers must be at least 1");
  if (heads == 0) throw ConfigError("encoder: heads must be at least 1");
  if (window == 0) throw ConfigError("encoder: window must be at least 1");
  if (max_len == 0) throw ConfigError("encoder: max_len must be at least 1");
  if (variant == Variant::bigru && d_q % 2 != 0) {
    throw ConfigError("encoder: bigru needs even d_q, have " +
                      std::to_string(d_q));
  }
  const bool splits = (variant == Variant::transformer ||
                       variant == Variant::gat) &&
                      mha_mode == MhaMode::split;
  if (splits && d_q % heads != 0) {
    throw ConfigError("encoder: split heads need d_q divisible by heads (" +
                      std::to_string(d_q) + " / " + std::to_string(heads) +
                      ")");
  }
  if (variant == Variant::transformer && d_w != d_q) {
    throw ConfigError(
        "encoder: transformer residuals need d_w == d_q, have d_w=" +
        std::to_string(d_w) + " d_q=" + std::to_string(d_q));
  }
}

std::string EncoderConfig::canonical() const {
  std::ostringstream out;
  out << "aggregation=" << to_string(aggregation) << "\n";
  out << "d_a=" << d_a << "\n";
  out << "d_q=" << d_q << "\n";
  out << "d_w=" << d_w << "\n";
  out << "heads=" << heads << "\n";
  out << "layers=" << layers << "\n";
  out << "max_len=" << max_len << "\n";
  out << "mha_mode=" << to_string(mha_mode) << "\n";
  out << "pos_enc=" << to_string(pos_enc) << "\n";
  out << "score_mode=" << to_string(score_mode) << "\n";
  out << "variant=" << to_string(variant) << "\n";
  out << "window=" << window << "\n";
  return out.str();
}

std::string EncoderConfig::digest() const { return text_digest(canonical()); }

EncoderConfig EncoderConfig::desk(Variant v) {
  EncoderConfig cfg;
  cfg.variant = v;
  cfg.d_w = cfg.d_a = cfg.d_q = 32;
  cfg.max_len = 8;
  switch (v) {
    case Variant::gru:
    case Variant::bigru:
      cfg.aggregation = Aggregation::last_hidden;
      cfg.pos_enc = PosEncMode::none;
      break;
    case Variant::transformer:
      cfg.aggregation = Aggregation::sum_pool;
      cfg.pos_enc = PosEncMode::learned_absolute;
      break;
    case Variant::gat:
      cfg.aggregation = Aggregation::sum_pool;
      cfg.pos_enc = PosEncMode::none;
      break;
  }
  return cfg;
}

// ---------------------------------------------------------------------------
// parameter registration

namespace {

std::size_t value_width(const EncoderConfig& cfg) {
  return cfg.mha_mode == MhaMode::split ? cfg.d_q / cfg.heads : cfg.d_q;
}

std::function<double()> glorot(Rng& rng, std::size_t fan_in,
                               std::size_t fan_out) {
  const double limit =
      std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  return [&rng, limit] { return rng.uniform(-limit, limit); };
}

std::function<double()> small_uniform(Rng& rng) {
  return [&rng] { return rng.uniform(-0.1, 0.1); };
}

void register_gru_direction(ParameterStore& store, const std::string& prefix,
                            std::size_t d_w, std::size_t hidden, Rng& rng) {
  store.create(prefix + ".w_ih", {d_w, 3 * hidden}, glorot(rng, d_w, hidden));
  store.create(prefix + ".w_hh", {hidden, 3 * hidden},
               glorot(rng, hidden, hidden));
  store.create(prefix + ".b_ih", {3 * hidden});
  store.create(prefix + ".b_hh", {3 * hidden});
}

}  // namespace

void register_encoder_params(ParameterStore& store, const EncoderConfig& cfg,
                             std::size_t vocab_size, std::size_t padding_id,
                             Rng& rng) {
  cfg.validate();
  if (vocab_size == 0) throw ConfigError("encoder: empty vocabulary");
  if (padding_id >= vocab_size) {
    throw ConfigError("encoder: padding id " + std::to_string(padding_id) +
                      " outside vocabulary of " + std::to_string(vocab_size));
  }
  Tensor& table =
      store.create("embed.table", {vocab_size, cfg.d_w}, small_uniform(rng));
  for (std::size_t j = 0; j < cfg.d_w; ++j) {
    table.at(padding_id * cfg.d_w + j) = 0.0;
  }

  switch (cfg.variant) {
    case Variant::gru:
      register_gru_direction(store, "gru.fwd", cfg.d_w, cfg.d_q, rng);
      break;
    case Variant::bigru:
      register_gru_direction(store, "gru.fwd", cfg.d_w, cfg.d_q / 2, rng);
      register_gru_direction(store, "gru.bwd", cfg.d_w, cfg.d_q / 2, rng);
      break;
    case Variant::transformer: {
      if (cfg.pos_enc == PosEncMode::learned_absolute) {
        store.create("pos.table", {cfg.max_len, cfg.d_w}, small_uniform(rng));
      }
      const std::size_t dh = value_width(cfg);
      for (std::size_t l = 0; l < cfg.layers; ++l) {
        const std::string lp = "tr.l" + std::to_string(l);
        for (std::size_t k = 0; k < cfg.heads; ++k) {
          const std::string hp = lp + ".h" + std::to_string(k);
          store.create(hp + ".wq", {cfg.d_q, dh}, glorot(rng, cfg.d_q, dh));
          store.create(hp + ".bq", {dh});
          store.create(hp + ".wk", {cfg.d_q, dh}, glorot(rng, cfg.d_q, dh));
          store.create(hp + ".bk", {dh});
          store.create(hp + ".wv", {cfg.d_q, dh}, glorot(rng, cfg.d_q, dh));
          store.create(hp + ".bv", {dh});
        }
        store.create(lp + ".wo", {cfg.d_q, cfg.d_q},
                     glorot(rng, cfg.d_q, cfg.d_q));
        store.create(lp + ".bo", {cfg.d_q});
        store.create(lp + ".ln1.gain", {cfg.d_q},
                     [] { return 1.0; });
        store.create(lp + ".ln1.shift", {cfg.d_q});
        const std::size_t inner = 4 * cfg.d_q;
        store.create(lp + ".ffn.w1", {cfg.d_q, inner},
                     glorot(rng, cfg.d_q, inner));
        store.create(lp + ".ffn.b1", {inner});
        store.create(lp + ".ffn.w2", {inner, cfg.d_q},
                     glorot(rng, inner, cfg.d_q));
        store.create(lp + ".ffn.b2", {cfg.d_q});
        store.create(lp + ".ln2.gain", {cfg.d_q}, [] { return 1.0; });
        store.create(lp + ".ln2.shift", {cfg.d_q});
      }
      if (cfg.pos_enc == PosEncMode::conv1d) {
        store.create("tr.conv.kernel", {cfg.window, cfg.d_q, cfg.d_q},
                     glorot(rng, cfg.window * cfg.d_q, cfg.window * cfg.d_q));
        store.create("tr.conv.bias", {cfg.d_q});
      }
      break;
    }
    case Variant::gat: {
      const std::size_t dv = value_width(cfg);
      for (std::size_t k = 0; k < cfg.heads; ++k) {
        const std::string hp = "gat.h" + std::to_string(k);
        store.create(hp + ".w1", {cfg.d_w, cfg.d_a},
                     glorot(rng, cfg.d_w, cfg.d_a));
        store.create(hp + ".w2", {cfg.d_w, cfg.d_a},
                     glorot(rng, cfg.d_w, cfg.d_a));
        store.create(hp + ".wa", {2 * cfg.d_a}, glorot(rng, 2 * cfg.d_a, 1));
        store.create(hp + ".wg", {cfg.d_w, dv}, glorot(rng, cfg.d_w, dv));
        store.create(hp + ".bg", {dv});
      }
      store.create("gat.conv.kernel", {cfg.window, cfg.d_q, cfg.d_q},
                   glorot(rng, cfg.window * cfg.d_q, cfg.window * cfg.d_q));
      store.create("gat.conv.bias", {cfg.d_q});
      break;
    }
  }
}

// ---------------------------------------------------------------------------
// shared pieces

Tensor embed_tokens(const TokenSequence& tokens, const Tensor& table,
                    std::size_t padding_id) {
  if (tokens.ids.empty()) throw DataError("encode: empty token sequence");
  return op::take_rows(table, tokens.ids, padding_id);
}

Tensor add_position_encodings(const Tensor& embedded, const Tensor& pos_table) {
  const std::size_t n = embedded.dim(0);
  if (n > pos_table.dim(0)) {
    throw DomainError("encode: sequence length " + std::to_string(n) +
                      " exceeds position table of " +
                      std::to_string(pos_table.dim(0)));
  }
  std::vector<std::size_t> firstN(n);
  for (std::size_t i = 0; i < n; ++i) firstN[i] = i;
  return op::add(embedded, op::take_rows(pos_table, firstN));
}

// ---------------------------------------------------------------------------
// transformer

LayerOut self_attention_layer(const Tensor& x, const EncoderConfig& cfg,
                              const ParameterStore& store, std::size_t layer) {
  const std::size_t dh = value_width(cfg);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  const std::string lp = "tr.l" + std::to_string(layer);
  LayerOut result;
  std::vector<Tensor> head_outputs;
  Tensor mixed;
  for (std::size_t k = 0; k < cfg.heads; ++k) {
    const std::string hp = lp + ".h" + std::to_string(k);
    Tensor q = op::apply_affine(x, store.get(hp + ".wq"), store.get(hp + ".bq"));
    Tensor key =
        op::apply_affine(x, store.get(hp + ".wk"), store.get(hp + ".bk"));
    Tensor v = op::apply_affine(x, store.get(hp + ".wv"), store.get(hp + ".bv"));
    Tensor scores = op::scale(op::matmul_nt(q, key), inv_sqrt);
    Tensor alpha = op::softmax_rows(scores);
    result.attention.head_weights.push_back(alpha.detached());
    head_outputs.push_back(op::matmul(alpha, v));
  }
  if (cfg.mha_mode == MhaMode::split) {
    mixed = op::concat_cols(head_outputs);
  } else {
    mixed = head_outputs.front();
    for (std::size_t k = 1; k < cfg.heads; ++k) {
      mixed = op::add(mixed, head_outputs[k]);
    }
    mixed = op::scale(mixed, 1.0 / static_cast<double>(cfg.heads));
  }
  Tensor projected =
      op::apply_affine(mixed, store.get(lp + ".wo"), store.get(lp + ".bo"));
  Tensor h1 = op::layer_norm_rows(op::add(x, projected),
                                  store.get(lp + ".ln1.gain"),
                                  store.get(lp + ".ln1.shift"), kLayerNormEps);
  Tensor inner = op::relu(
      op::apply_affine(h1, store.get(lp + ".ffn.w1"), store.get(lp + ".ffn.b1")));
  Tensor ffn =
      op::apply_affine(inner, store.get(lp + ".ffn.w2"), store.get(lp + ".ffn.b2"));
  result.hidden = op::layer_norm_rows(op::add(h1, ffn),
                                      store.get(lp + ".ln2.gain"),
                                      store.get(lp + ".ln2.shift"),
                                      kLayerNormEps);
  return result;
}

// ---------------------------------------------------------------------------
// graph encoder

QuestionGraph build_question_graph(const Tensor& embedded) {
  if (embedded.ndim() != 2 || embedded.dim(0) == 0) {
    throw DataError("graph: need a nonempty [n x d] feature matrix");
  }
  QuestionGraph g;
  g.node_count = embedded.dim(0);
  g.labels.resize(g.node_count);
  for (std::size_t i = 0; i < g.node_count; ++i) g.labels[i] = i + 1;
  g.features = embedded;
  return g;
}

LayerOut gat_node_update(const QuestionGraph& graph, const EncoderConfig& cfg,
                         const ParameterStore& store) {
  const Tensor& x = graph.features;
  if (x.ndim() != 2 || x.dim(0) != graph.node_count) {
    throw DataError("graph: feature rows disagree with node count");
  }
  LayerOut result;
  std::vector<Tensor> head_outputs;
  for (std::size_t k = 0; k < cfg.heads; ++k) {
    const std::string hp = "gat.h" + std::to_string(k);
    Tensor p1 = op::apply_linear(x, store.get(hp + ".w1"));
    Tensor p2 = op::apply_linear(x, store.get(hp + ".w2"));
    Tensor scores;
    if (cfg.score_mode == ScoreMode::concat_leakyrelu) {
      const Tensor& wa = store.get(hp + ".wa");
      Tensor left = op::matvec(p1, op::slice(wa, 0, cfg.d_a));
      Tensor right = op::matvec(p2, op::slice(wa, cfg.d_a, 2 * cfg.d_a));
      scores = op::leaky_relu(op::outer_add(left, right), kLeakySlope);
    } else {
      scores = op::scale(op::matmul_nt(p1, p2),
                         1.0 / std::sqrt(static_cast<double>(cfg.d_a)));
    }
    Tensor alpha = op::softmax_rows(scores);
    result.attention.head_weights.push_back(alpha.detached());
    Tensor values =
        op::apply_affine(x, store.get(hp + ".wg"), store.get(hp + ".bg"));
    head_outputs.push_back(op::matmul(alpha, values));
  }
  if (cfg.mha_mode == MhaMode::split) {
    result.hidden = op::concat_cols(head_outputs);
  } else {
    Tensor acc = head_outputs.front();
    for (std::size_t k = 1; k < cfg.heads; ++k) {
      acc = op::add(acc, head_outputs[k]);
    }
    result.hidden = op::scale(acc, 1.0 / static_cast<double>(cfg.heads));
  }
  return result;
}

Tensor position_aware_aggregate(const Tensor& nodes,
                                const std::vector<std::size_t>& labels,
                                const EncoderConfig& cfg,
                                const ParameterStore& store) {
  const std::size_t n = nodes.dim(0);
  if (labels.size() != n) {
    throw DataError("aggregate: " + std::to_string(labels.size()) +
                    " labels for " + std::to_string(n) + " nodes");
  }
  std::vector<std::size_t> order(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t lab = labels[i];
    if (lab < 1 || lab > n || order[lab - 1] != n) {
      throw DataError("aggregate: labels must be a permutation of 1.." +
                      std::to_string(n));
    }
    order[lab - 1] = i;
  }
  const Tensor& kernel = store.get("gat.conv.kernel");
  if (kernel.dim(0) != cfg.window) {
    throw ConfigError("aggregate: kernel window " +
                      std::to_string(kernel.dim(0)) +
                      " disagrees with config window " +
                      std::to_string(cfg.window));
  }
  Tensor seq = op::permute_rows(nodes, order);
  Tensor conv = op::conv1d_seq(seq, kernel, store.get("gat.conv.bias"));
  return op::sum_pool(conv);
}

// ---------------------------------------------------------------------------
// recurrent encoder

namespace {

struct GruTrace {
  std::vector<Tensor> states;  // in processing order
};

GruTrace run_gru_direction(const Tensor& embedded, const ParameterStore& store,
                           const std::string& prefix, std::size_t hidden,
                           bool reversed) {
  const std::size_t n = embedded.dim(0);
  const Tensor& w_ih = store.get(prefix + ".w_ih");
  const Tensor& w_hh = store.get(prefix + ".w_hh");
  const Tensor& b_ih = store.get(prefix + ".b_ih");
  const Tensor& b_hh = store.get(prefix + ".b_hh");
  const std::size_t h = hidden;
  Tensor state = Tensor::zeros({h});
  Tensor ones = Tensor::full({h}, 1.0);
  GruTrace trace;
  for (std::size_t step = 0; step < n; ++step) {
    const std::size_t t = reversed ? n - 1 - step : step;
    Tensor x = op::row(embedded, t);
    Tensor gi = op::apply_affine(x, w_ih, b_ih);
    Tensor gh = op::apply_affine(state, w_hh, b_hh);
    Tensor r = op::sigmoid(op::add(op::slice(gi, 0, h), op::slice(gh, 0, h)));
    Tensor z = op::sigmoid(
        op::add(op::slice(gi, h, 2 * h), op::slice(gh, h, 2 * h)));
    Tensor cand = op::tanh(op::add(op::slice(gi, 2 * h, 3 * h),
                                   op::mul(r, op::slice(gh, 2 * h, 3 * h))));
    state = op::add(op::mul(op::sub(ones, z), cand), op::mul(z, state));
    trace.states.push_back(state);
  }
  return trace;
}

Tensor pool_states(const GruTrace& trace, Aggregation agg) {
  if (agg == Aggregation::last_hidden) return trace.states.back();
  Tensor acc = trace.states.front();
  for (std::size_t i = 1; i < trace.states.size(); ++i) {
    acc = op::add(acc, trace.states[i]);
  }
  return acc;
}

}  // namespace

Tensor encode_gru(const Tensor& embedded, const EncoderConfig& cfg,
                  const ParameterStore& store) {
  if (cfg.variant == Variant::gru) {
    GruTrace fwd = run_gru_direction(embedded, store, "gru.fwd", cfg.d_q,
                                     /*reversed=*/false);
    return pool_states(fwd, cfg.aggregation);
  }
  const std::size_t h = cfg.d_q / 2;
  GruTrace fwd =
      run_gru_direction(embedded, store, "gru.fwd", h, /*reversed=*/false);
  GruTrace bwd =
      run_gru_direction(embedded, store, "gru.bwd", h, /*reversed=*/true);
  return op::concat({pool_states(fwd, cfg.aggregation),
                     pool_states(bwd, cfg.aggregation)});
}

// ---------------------------------------------------------------------------
// dispatch

EncodedQuestion encode(const TokenSequence& tokens, const EncoderConfig& cfg,
                       const ParameterStore& store, std::size_t padding_id) {
  cfg.validate();
  Tensor embedded = embed_tokens(tokens, store.get("embed.table"), padding_id);
  EncodedQuestion out;
  switch (cfg.variant) {
    case Variant::gru:
    case Variant::bigru:
      out.vector = encode_gru(embedded, cfg, store);
      break;
    case Variant::transformer: {
      Tensor x = embedded;
      if (cfg.pos_enc == PosEncMode::learned_absolute) {
        x = add_position_encodings(x, store.get("pos.table"));
      }
      for (std::size_t l = 0; l < cfg.layers; ++l) {
        LayerOut lo = self_attention_layer(x, cfg, store, l);
        x = lo.hidden;
        out.attention.push_back(std::move(lo.attention));
      }
      if (cfg.pos_enc == PosEncMode::conv1d) {
        x = op::conv1d_seq(x, store.get("tr.conv.kernel"),
                           store.get("tr.conv.bias"));
      }
      out.vector = cfg.aggregation == Aggregation::last_hidden
                       ? op::row(x, x.dim(0) - 1)
                       : op::sum_pool(x);
      break;
    }
    case Variant::gat: {
      QuestionGraph graph = build_question_graph(embedded);
      LayerOut lo = gat_node_update(graph, cfg, store);
      out.attention.push_back(std::move(lo.attention));
      out.vector =
          position_aware_aggregate(lo.hidden, graph.labels, cfg, store);
      break;
    }
  }
  return out;
}

}  // namespace qebench
