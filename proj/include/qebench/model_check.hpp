// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>

#include "qebench/encoder.hpp"
#include "qebench/grad_check.hpp"

namespace qebench {

// A self-contained full-model gradient probe: builds a small seeded VQA
// instance (tokens, image, one-hot target) around the given encoder and runs
// central differences through the whole pipeline. Dims come from the encoder
// config; keep them small, the cost is quadratic in width.
struct ModelCheckSpec {
  EncoderConfig encoder;
  std::size_t vocab = 9;
  std::size_t answers = 5;
  std::size_t d_v = 6;
  std::size_t objects = 3;
  std::size_t tokens = 5;
  std::uint64_t seed = 613;
  GradCheckOptions options;
};

GradCheckReport model_grad_check(const ModelCheckSpec& spec);

}  // namespace qebench
