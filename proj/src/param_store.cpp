// SPDX-License-Identifier: Apache-2.0
#include "qebench/param_store.hpp"

#include <cmath>
#include <istream>
#include <ostream>

#include "qebench/errors.hpp"

namespace qebench {

Tensor& ParameterStore::create(const std::string& name,
                               std::vector<std::size_t> shape) {
  if (index_.count(name)) {
    throw ConfigError("param: duplicate name '" + name + "'");
  }
  index_[name] = params_.size();
  names_.push_back(name);
  params_.emplace_back(std::move(shape));
  moment1_.emplace_back(params_.back().size(), 0.0);
  moment2_.emplace_back(params_.back().size(), 0.0);
  params_.back().set_requires_grad(true);
  return params_.back();
}

Tensor& ParameterStore::create(const std::string& name,
                               std::vector<std::size_t> shape,
                               const std::function<double()>& init) {
  Tensor& t = create(name, std::move(shape));
  double* p = t.data();
  for (std::size_t i = 0; i < t.size(); ++i) p[i] = init();
  return t;
}

std::size_t ParameterStore::index_of(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) {
    throw LookupError("param: unknown name '" + name + "'");
  }
  return it->second;
}

Tensor& ParameterStore::get(const std::string& name) {
  return params_[index_of(name)];
}

const Tensor& ParameterStore::get(const std::string& name) const {
  return params_[index_of(name)];
}

bool ParameterStore::contains(const std::string& name) const {
  return index_.count(name) != 0;
}

std::size_t ParameterStore::total_values() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.size();
  return n;
}

void ParameterStore::watch_all(Tape& tape) {
  for (auto& p : params_) tape.watch(p);
}

void ParameterStore::unbind_all() {
  for (auto& p : params_) p.clear_tape();
}

void ParameterStore::adamw_step(const Tape& tape, const AdamWConfig& cfg) {
  steps_ += 1;
  const double t = static_cast<double>(steps_);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t pi = 0; pi < params_.size(); ++pi) {
    Tensor& p = params_[pi];
    const double* g = tape.grad_view(p);  // nullptr when loss never saw p
    double* v = p.data();
    auto& m1 = moment1_[pi];
    auto& m2 = moment2_[pi];
    const std::size_t n = p.size();
    for (std::size_t i = 0; i < n; ++i) {
      const double gi = g ? g[i] : 0.0;
      m1[i] = cfg.beta1 * m1[i] + (1.0 - cfg.beta1) * gi;
      m2[i] = cfg.beta2 * m2[i] + (1.0 - cfg.beta2) * gi * gi;
      const double mhat = m1[i] / bc1;
      const double vhat = m2[i] / bc2;
      v[i] -= cfg.lr * (mhat / (std::sqrt(vhat) + cfg.eps) +
                        cfg.weight_decay * v[i]);
    }
  }
}

double ParameterStore::param_norm() const {
  double acc = 0.0;
  for (const auto& p : params_) {
    const double* v = p.data();
    for (std::size_t i = 0; i < p.size(); ++i) acc += v[i] * v[i];
  }
  return std::sqrt(acc);
}

void ParameterStore::write_values(std::ostream& out) const {
  for (const auto& p : params_) {
    out.write(reinterpret_cast<const char*>(p.data()),
              static_cast<std::streamsize>(p.size() * sizeof(double)));
  }
}

void ParameterStore::read_values(std::istream& in) {
  for (auto& p : params_) {
    in.read(reinterpret_cast<char*>(p.data()),
            static_cast<std::streamsize>(p.size() * sizeof(double)));
    if (!in) throw IoError("param: truncated value stream");
  }
}

}  // namespace qebench
