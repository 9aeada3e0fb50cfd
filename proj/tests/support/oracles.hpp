// SPDX-License-Identifier: Apache-2.0
#pragma once

// Reference implementations of the encoder building blocks, written as plain
// double loops with no shared code beyond parameter values. Kept deliberately
// naive so disagreements point at the production path.

#include <cmath>
#include <cstddef>
#include <vector>

#include "qebench/encoder.hpp"
#include "qebench/param_store.hpp"

namespace qebench {
namespace testoracle {

using Vec = std::vector<double>;

inline Vec values_of(const Tensor& t) {
  return Vec(t.data(), t.data() + t.size());
}

inline double osigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline double oleaky(double x, double slope) {
  return x > 0.0 ? x : slope * x;
}

// y[n x m] = x[n x k] . w[k x m] (+ b[m])
inline Vec oaffine(const Vec& x, std::size_t n, std::size_t k, const Vec& w,
                   std::size_t m, const Vec* b) {
  Vec y(n * m, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      double acc = b ? (*b)[j] : 0.0;
      for (std::size_t c = 0; c < k; ++c) {
        acc += x[i * k + c] * w[c * m + j];
      }
      y[i * m + j] = acc;
    }
  }
  return y;
}

inline void osoftmax_rows(Vec& a, std::size_t n, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    double z = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      a[i * m + j] = std::exp(a[i * m + j]);
      z += a[i * m + j];
    }
    for (std::size_t j = 0; j < m; ++j) a[i * m + j] /= z;
  }
}

inline void olayer_norm(Vec& x, std::size_t n, std::size_t d, const Vec& gain,
                        const Vec& shift, double eps) {
  for (std::size_t i = 0; i < n; ++i) {
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += x[i * d + j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double c = x[i * d + j] - mu;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      x[i * d + j] = gain[j] * (x[i * d + j] - mu) * inv + shift[j];
    }
  }
}

// Recurrent reference: gate order [reset | update | candidate].
inline Vec oracle_gru_encode(const Vec& emb, std::size_t n, std::size_t dw,
                             const EncoderConfig& cfg,
                             const ParameterStore& store) {
  const bool bi = cfg.variant == Variant::bigru;
  const std::size_t h = bi ? cfg.d_q / 2 : cfg.d_q;
  auto run = [&](const std::string& prefix, bool reversed) {
    const Vec w_ih = values_of(store.get(prefix + ".w_ih"));
    const Vec w_hh = values_of(store.get(prefix + ".w_hh"));
    const Vec b_ih = values_of(store.get(prefix + ".b_ih"));
    const Vec b_hh = values_of(store.get(prefix + ".b_hh"));
    Vec state(h, 0.0);
    Vec pooled(h, 0.0);
    for (std::size_t step = 0; step < n; ++step) {
      const std::size_t t = reversed ? n - 1 - step : step;
      Vec gi(3 * h), gh(3 * h);
      for (std::size_t j = 0; j < 3 * h; ++j) {
        double acc = b_ih[j];
        for (std::size_t c = 0; c < dw; ++c) {
          acc += emb[t * dw + c] * w_ih[c * 3 * h + j];
        }
        gi[j] = acc;
        acc = b_hh[j];
        for (std::size_t c = 0; c < h; ++c) {
          acc += state[c] * w_hh[c * 3 * h + j];
        }
        gh[j] = acc;
      }
      Vec next(h);
      for (std::size_t j = 0; j < h; ++j) {
        const double r = osigmoid(gi[j] + gh[j]);
        const double z = osigmoid(gi[h + j] + gh[h + j]);
        const double cand = std::tanh(gi[2 * h + j] + r * gh[2 * h + j]);
        next[j] = (1.0 - z) * cand + z * state[j];
      }
      state = next;
      for (std::size_t j = 0; j < h; ++j) pooled[j] += state[j];
    }
    return cfg.aggregation == Aggregation::last_hidden ? state : pooled;
  };
  Vec fwd = run("gru.fwd", false);
  if (!bi) return fwd;
  Vec bwd = run("gru.bwd", true);
  fwd.insert(fwd.end(), bwd.begin(), bwd.end());
  return fwd;
}

// Self-attention block reference.
inline Vec oracle_attention_layer(const Vec& x, std::size_t n,
                                  const EncoderConfig& cfg,
                                  const ParameterStore& store,
                                  std::size_t layer) {
  const std::size_t d = cfg.d_q;
  const std::size_t dh =
      cfg.mha_mode == MhaMode::split ? d / cfg.heads : d;
  const std::string lp = "tr.l" + std::to_string(layer);
  Vec mixed(n * d, 0.0);
  for (std::size_t k = 0; k < cfg.heads; ++k) {
    const std::string hp = lp + ".h" + std::to_string(k);
    const Vec bq = values_of(store.get(hp + ".bq"));
    const Vec bk = values_of(store.get(hp + ".bk"));
    const Vec bv = values_of(store.get(hp + ".bv"));
    Vec q = oaffine(x, n, d, values_of(store.get(hp + ".wq")), dh, &bq);
    Vec key = oaffine(x, n, d, values_of(store.get(hp + ".wk")), dh, &bk);
    Vec v = oaffine(x, n, d, values_of(store.get(hp + ".wv")), dh, &bv);
    Vec scores(n * n);
    const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        double acc = 0.0;
        for (std::size_t c = 0; c < dh; ++c) {
          acc += q[i * dh + c] * key[j * dh + c];
        }
        scores[i * n + j] = acc * inv;
      }
    }
    osoftmax_rows(scores, n, n);
    Vec o(n * dh, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t c = 0; c < dh; ++c) {
          o[i * dh + c] += scores[i * n + j] * v[j * dh + c];
        }
      }
    }
    if (cfg.mha_mode == MhaMode::split) {
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t c = 0; c < dh; ++c) {
          mixed[i * d + k * dh + c] = o[i * dh + c];
        }
      }
    } else {
      for (std::size_t i = 0; i < n * d; ++i) {
        mixed[i] += o[i] / static_cast<double>(cfg.heads);
      }
    }
  }
  const Vec bo = values_of(store.get(lp + ".bo"));
  Vec proj = oaffine(mixed, n, d, values_of(store.get(lp + ".wo")), d, &bo);
  for (std::size_t i = 0; i < n * d; ++i) proj[i] += x[i];
  olayer_norm(proj, n, d, values_of(store.get(lp + ".ln1.gain")),
              values_of(store.get(lp + ".ln1.shift")), kLayerNormEps);
  const Vec b1 = values_of(store.get(lp + ".ffn.b1"));
  const Vec b2 = values_of(store.get(lp + ".ffn.b2"));
  Vec inner =
      oaffine(proj, n, d, values_of(store.get(lp + ".ffn.w1")), 4 * d, &b1);
  for (auto& v2 : inner) v2 = v2 > 0.0 ? v2 : 0.0;
  Vec ffn =
      oaffine(inner, n, 4 * d, values_of(store.get(lp + ".ffn.w2")), d, &b2);
  for (std::size_t i = 0; i < n * d; ++i) ffn[i] += proj[i];
  olayer_norm(ffn, n, d, values_of(store.get(lp + ".ln2.gain")),
              values_of(store.get(lp + ".ln2.shift")), kLayerNormEps);
  return ffn;
}

// One message-passing round over the complete digraph.
inline Vec oracle_gat_update(const Vec& x, std::size_t n,
                             const EncoderConfig& cfg,
                             const ParameterStore& store) {
  const std::size_t dw = cfg.d_w, da = cfg.d_a, dq = cfg.d_q;
  const std::size_t dv = cfg.mha_mode == MhaMode::split ? dq / cfg.heads : dq;
  Vec out(n * dq, 0.0);
  for (std::size_t k = 0; k < cfg.heads; ++k) {
    const std::string hp = "gat.h" + std::to_string(k);
    Vec p1 = oaffine(x, n, dw, values_of(store.get(hp + ".w1")), da, nullptr);
    Vec p2 = oaffine(x, n, dw, values_of(store.get(hp + ".w2")), da, nullptr);
    Vec alpha(n * n);
    if (cfg.score_mode == ScoreMode::concat_leakyrelu) {
      const Vec wa = values_of(store.get(hp + ".wa"));
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          double acc = 0.0;
          for (std::size_t c = 0; c < da; ++c) acc += wa[c] * p1[i * da + c];
          for (std::size_t c = 0; c < da; ++c) {
            acc += wa[da + c] * p2[j * da + c];
          }
          alpha[i * n + j] = oleaky(acc, kLeakySlope);
        }
      }
    } else {
      const double inv = 1.0 / std::sqrt(static_cast<double>(da));
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          double acc = 0.0;
          for (std::size_t c = 0; c < da; ++c) {
            acc += p1[i * da + c] * p2[j * da + c];
          }
          alpha[i * n + j] = acc * inv;
        }
      }
    }
    osoftmax_rows(alpha, n, n);
    const Vec bg = values_of(store.get(hp + ".bg"));
    Vec vals = oaffine(x, n, dw, values_of(store.get(hp + ".wg")), dv, &bg);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t c = 0; c < dv; ++c) {
          const double m = alpha[i * n + j] * vals[j * dv + c];
          if (cfg.mha_mode == MhaMode::split) {
            out[i * dq + k * dv + c] += m;
          } else {
            out[i * dq + c] += m / static_cast<double>(cfg.heads);
          }
        }
      }
    }
  }
  return out;
}

// Label-ordered window conv + position sum.
inline Vec oracle_position_aggregate(const Vec& nodes, std::size_t n,
                                     const std::vector<std::size_t>& labels,
                                     const EncoderConfig& cfg,
                                     const ParameterStore& store) {
  const std::size_t d = cfg.d_q, s = cfg.window;
  const Vec kernel = values_of(store.get("gat.conv.kernel"));
  const Vec bias = values_of(store.get("gat.conv.bias"));
  Vec seq(n * d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t pos = labels[i] - 1;
    for (std::size_t c = 0; c < d; ++c) seq[pos * d + c] = nodes[i * d + c];
  }
  Vec q(d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t o = 0; o < d; ++o) {
      double acc = bias[o];
      for (std::size_t t = 0; t < s; ++t) {
        if (i + t >= n) continue;
        for (std::size_t c = 0; c < d; ++c) {
          acc += seq[(i + t) * d + c] * kernel[(t * d + c) * d + o];
        }
      }
      q[o] += acc;
    }
  }
  return q;
}

}  // namespace testoracle
}  // namespace qebench
