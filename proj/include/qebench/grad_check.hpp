// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "qebench/param_store.hpp"
#include "qebench/tensor.hpp"

namespace qebench {

// A differentiable scalar objective: must record its result on the given
// tape via the watched parameters.
using ScalarFn = std::function<Tensor(ParameterStore&, Tape&)>;

struct GradCheckOptions {
  double eps = 1e-5;
  // 0 = probe every coordinate; otherwise a seeded sample per parameter.
  std::size_t max_coords_per_param = 0;
  std::uint64_t seed = 17;
};

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst_param;
  std::size_t worst_coord = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

// Central differences against one reverse sweep. Relative error per probed
// coordinate is |analytic - numeric| / max(1, |analytic|); returns the max.
// Non-finite losses or gradients raise NumericError.
GradCheckReport finite_diff_check(const ScalarFn& fn, ParameterStore& params,
                                  const GradCheckOptions& opt = {});

}  // namespace qebench
