// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "qebench/encoder.hpp"
#include "qebench/param_store.hpp"
#include "qebench/tensor.hpp"

namespace qebench {

// Answer classifier on top of a question encoder: top-down attention over
// object features, elementwise fusion, two-layer classifier head.

struct VqaConfig {
  EncoderConfig encoder;
  std::size_t vocab = 0;
  std::size_t answers = 0;
  std::size_t d_v = 0;  // per-object image feature width
  std::size_t padding_id = 0;

  void validate() const;
  std::string canonical() const;  // encoder text plus the head keys
  std::string digest() const;
};

// Question-conditioned attention over object rows. Scores come from a
// bias-free two-stream projection (constant shifts cancel in the softmax);
// returns the attention-weighted feature in image space.
Tensor attend_image(const Tensor& q, const Tensor& image_feats,
                    const ParameterStore& store, Tensor* weights_out = nullptr);

// Projects the attended feature into question space, fuses elementwise,
// and maps through the classifier head to answer logits.
Tensor fuse_predict(const Tensor& q, const Tensor& attended,
                    const ParameterStore& store);

class VqaModel {
 public:
  VqaModel(VqaConfig cfg, std::uint64_t init_seed);

  const VqaConfig& config() const { return cfg_; }
  ParameterStore& params() { return store_; }
  const ParameterStore& params() const { return store_; }

  // Full forward to logits; optionally surfaces the attention probes.
  Tensor logits(const TokenSequence& tokens, const Tensor& image_feats,
                std::vector<AttentionRecord>* question_attention = nullptr,
                Tensor* image_attention = nullptr) const;

  std::size_t predict(const TokenSequence& tokens,
                      const Tensor& image_feats) const;

  // Ties break toward the lowest index.
  static std::size_t argmax_lowest(const Tensor& logits);

 private:
  VqaConfig cfg_;
  ParameterStore store_;
};

// ---------------------------------------------------------------------------
// checkpointing: self-describing byte-stable container

struct CheckpointData {
  std::string config_text;
  std::vector<std::pair<std::string, Tensor>> params;
};

void save_checkpoint(std::ostream& out, const std::string& config_text,
                     const ParameterStore& store);
CheckpointData read_checkpoint(std::istream& in);
// Shape- and name-checked value transfer into an existing store.
void load_into(ParameterStore& store, const CheckpointData& data);

}  // namespace qebench
