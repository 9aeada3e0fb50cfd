// SPDX-License-Identifier: Apache-2.0
#include "qebench/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "qebench/errors.hpp"
#include "qebench/rng.hpp"

namespace qebench {

namespace {

double eval_value(const ScalarFn& fn, ParameterStore& params) {
  Tape tape;
  params.watch_all(tape);
  Tensor loss = fn(params, tape);
  const double v = loss.value();
  if (!std::isfinite(v)) {
    throw NumericError("grad check: non-finite loss value");
  }
  return v;
}

}  // namespace

GradCheckReport finite_diff_check(const ScalarFn& fn, ParameterStore& params,
                                  const GradCheckOptions& opt) {
  // Analytic pass.
  Tape tape;
  params.watch_all(tape);
  Tensor loss = fn(params, tape);
  if (!std::isfinite(loss.value())) {
    throw NumericError("grad check: non-finite loss value");
  }
  tape.backward(loss);
  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.count());
  for (const auto& name : params.names()) {
    analytic.push_back(tape.grad(params.get(name)));
    for (double g : analytic.back()) {
      if (!std::isfinite(g)) {
        throw NumericError("grad check: non-finite gradient in '" + name +
                           "'");
      }
    }
  }

  GradCheckReport report;
  for (std::size_t pi = 0; pi < params.count(); ++pi) {
    const std::string& name = params.names()[pi];
    Tensor& p = params.get(name);
    const std::size_t n = p.size();

    std::vector<std::size_t> coords;
    if (opt.max_coords_per_param == 0 || n <= opt.max_coords_per_param) {
      coords.resize(n);
      for (std::size_t i = 0; i < n; ++i) coords[i] = i;
    } else {
      // Seeded sample without replacement via partial shuffle.
      std::vector<std::size_t> all(n);
      for (std::size_t i = 0; i < n; ++i) all[i] = i;
      Rng rng(mix_seed(opt.seed, pi));
      for (std::size_t i = 0; i < opt.max_coords_per_param; ++i) {
        std::swap(all[i], all[i + rng.index(n - i)]);
      }
      coords.assign(all.begin(),
                    all.begin() + static_cast<std::ptrdiff_t>(
                                      opt.max_coords_per_param));
    }

    for (std::size_t c : coords) {
      double* slot = p.data() + c;
      const double saved = *slot;
      *slot = saved + opt.eps;
      const double up = eval_value(fn, params);
      *slot = saved - opt.eps;
      const double down = eval_value(fn, params);
      *slot = saved;
      const double numeric = (up - down) / (2.0 * opt.eps);
      const double a = analytic[pi][c];
      const double rel = std::abs(a - numeric) / std::max(1.0, std::abs(a));
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_param = name;
        report.worst_coord = c;
        report.worst_analytic = a;
        report.worst_numeric = numeric;
      }
    }
  }
  // Leave the store tape-free; callers often continue with pure forwards.
  params.unbind_all();
  return report;
}

}  // namespace qebench
