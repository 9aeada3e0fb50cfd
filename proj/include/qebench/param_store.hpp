// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "qebench/tensor.hpp"

namespace qebench {

struct AdamWConfig {
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

// Named parameter registry with decoupled-weight-decay Adam state. Names are
// unique; iteration follows insertion order everywhere (updates, serialization,
// norms), which keeps runs bit-reproducible.
class ParameterStore {
 public:
  Tensor& create(const std::string& name, std::vector<std::size_t> shape);
  Tensor& create(const std::string& name, std::vector<std::size_t> shape,
                 const std::function<double()>& init);

  Tensor& get(const std::string& name);
  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const;

  const std::vector<std::string>& names() const { return names_; }
  std::size_t count() const { return params_.size(); }
  std::size_t total_values() const;

  // Rebinds every parameter as a leaf on `tape` (cheap; once per tape).
  void watch_all(Tape& tape);
  // Clears tape attachments so pure-value forward passes record nothing.
  void unbind_all();

  // One optimizer step from the gradients on `tape` (missing grads = zero;
  // decay is applied to the parameter directly, not through the moments).
  void adamw_step(const Tape& tape, const AdamWConfig& cfg);
  std::int64_t step_count() const { return steps_; }

  double param_norm() const;  // l2 over all values, fixed order

  // Raw value serialization in insertion order (framing lives with the
  // checkpoint writer).
  void write_values(std::ostream& out) const;
  void read_values(std::istream& in);

 private:
  std::size_t index_of(const std::string& name) const;

  std::vector<std::string> names_;
  // deque: create() hands out references that must survive later creates.
  std::deque<Tensor> params_;
  std::deque<std::vector<double>> moment1_, moment2_;
  std::map<std::string, std::size_t> index_;
  std::int64_t steps_ = 0;
};

}  // namespace qebench
