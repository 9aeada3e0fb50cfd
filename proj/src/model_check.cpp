// SPDX-License-Identifier: Apache-2.0
#include "qebench/model_check.hpp"

#include <vector>

#include "qebench/errors.hpp"
#include "qebench/ops.hpp"
#include "qebench/rng.hpp"
#include "qebench/vqa_model.hpp"

namespace qebench {

GradCheckReport model_grad_check(const ModelCheckSpec& spec) {
  if (spec.vocab < 2 || spec.answers < 2 || spec.d_v < 1 ||
      spec.objects < 1 || spec.tokens < 1) {
    throw DomainError("model check needs a non-degenerate instance");
  }
  if (spec.tokens > spec.encoder.max_len) {
    throw ConfigError("model check sequence exceeds the encoder's max length");
  }

  VqaConfig vc;
  vc.encoder = spec.encoder;
  vc.vocab = spec.vocab;
  vc.answers = spec.answers;
  vc.d_v = spec.d_v;
  vc.padding_id = 0;
  VqaModel model(vc, mix_seed(spec.seed, 0x9d));

  Rng rng(mix_seed(spec.seed, 0x1e));
  TokenSequence q;
  for (std::size_t i = 0; i < spec.tokens; ++i) {
    q.ids.push_back(1 + rng.index(spec.vocab - 1));  // content words only
  }
  std::vector<double> img(spec.objects * spec.d_v);
  for (double& v : img) v = 2.0 * rng.uniform() - 1.0;
  Tensor image({spec.objects, spec.d_v}, std::move(img));
  std::vector<double> hot(spec.answers, 0.0);
  hot[rng.index(spec.answers)] = 1.0;
  Tensor target({spec.answers}, std::move(hot));

  auto fn = [&](ParameterStore&, Tape&) {
    return ops::bce_with_logits_mean(model.logits(q, image), target);
  };
  return finite_diff_check(fn, model.params(), spec.options);
}

}  // namespace qebench
