// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "qebench/errors.hpp"

namespace qebench {

class Tape;

// Dense row-major tensor of doubles. Copies share storage (shared_ptr); ops
// always allocate fresh outputs, so shared storage is never mutated through
// an op. A tensor is "on tape" once watched or produced by a recorded op.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape)
      : values_(std::make_shared<std::vector<double>>(count(shape), 0.0)),
        shape_(std::move(shape)) {}

  Tensor(std::vector<std::size_t> shape, std::vector<double> values)
      : values_(std::make_shared<std::vector<double>>(std::move(values))),
        shape_(std::move(shape)) {
    if (values_->size() != count(shape_)) {
      throw DimensionError("tensor: value count " +
                           std::to_string(values_->size()) +
                           " does not match shape product " +
                           std::to_string(count(shape_)));
    }
  }

  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  static Tensor zeros(std::vector<std::size_t> shape) {
    return Tensor(std::move(shape));
  }

  static Tensor full(std::vector<std::size_t> shape, double v) {
    Tensor t(std::move(shape));
    for (auto& x : *t.values_) x = v;
    return t;
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t ndim() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return values_ ? values_->size() : 0; }

  double* data() { return values_->data(); }
  const double* data() const { return values_->data(); }
  double& at(std::size_t i) { return (*values_)[i]; }
  double at(std::size_t i) const { return (*values_)[i]; }

  // Scalar read; the common exit point for losses.
  double value() const {
    if (size() != 1) {
      throw DimensionError("tensor: value() needs a scalar, have size " +
                           std::to_string(size()));
    }
    return (*values_)[0];
  }

  bool requires_grad() const { return requires_grad_; }
  Tensor& set_requires_grad(bool on = true) {
    requires_grad_ = on;
    return *this;
  }

  bool on_tape() const { return node_ >= 0; }
  int node() const { return node_; }
  Tape* tape() const { return tape_; }

  // Drops any tape attachment; values untouched.
  Tensor& clear_tape() {
    node_ = -1;
    tape_ = nullptr;
    return *this;
  }

  // Value copy with no tape attachment (for records kept past backward).
  Tensor detached() const {
    Tensor t;
    t.shape_ = shape_;
    t.values_ = std::make_shared<std::vector<double>>(*values_);
    return t;
  }

  std::shared_ptr<std::vector<double>> storage() const { return values_; }

 private:
  friend class Tape;

  static std::size_t count(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
  }

  std::shared_ptr<std::vector<double>> values_;
  std::vector<std::size_t> shape_;
  bool requires_grad_ = false;
  int node_ = -1;
  Tape* tape_ = nullptr;
};

// Record of differentiable operations. Node ids are issued in execution
// order, so a single reverse sweep is already topologically sorted. Gradient
// buffers are allocated lazily; leaves that never influence the loss read
// back as zero.
class Tape {
 public:
  using BackwardFn = std::function<void(const double* out_grad, Tape&)>;

  // Registers (or rebinds) a leaf. Marks it requires-grad.
  void watch(Tensor& t) {
    t.set_requires_grad(true);
    t.tape_ = this;
    t.node_ = static_cast<int>(nodes_.size());
    nodes_.push_back(Node{nullptr, t.size()});
  }

  // Issues a node for an op output; `bw` scatters the node's incoming
  // gradient to the op's inputs via grad_accum.
  int record(std::size_t out_size, BackwardFn bw) {
    nodes_.push_back(Node{std::move(bw), out_size});
    return static_cast<int>(nodes_.size()) - 1;
  }

  // Attaches a freshly recorded node to its output tensor.
  void bind(Tensor& t, int node) {
    t.tape_ = this;
    t.node_ = node;
  }

  // Accumulation buffer for a node, zero-initialized on first touch.
  double* grad_accum(int node, std::size_t size) {
    auto& g = grads_[static_cast<std::size_t>(node)];
    if (g.empty()) g.assign(size, 0.0);
    return g.data();
  }

  // Single reverse sweep from a scalar loss recorded on this tape.
  void backward(const Tensor& loss) {
    if (loss.size() != 1) {
      throw DomainError("backward: loss must be scalar, have size " +
                        std::to_string(loss.size()));
    }
    if (loss.tape_ != this || loss.node_ < 0) {
      throw DomainError("backward: loss is not recorded on this tape");
    }
    grads_.assign(nodes_.size(), {});
    grads_[static_cast<std::size_t>(loss.node_)] = {1.0};
    for (int i = loss.node_; i >= 0; --i) {
      auto& g = grads_[static_cast<std::size_t>(i)];
      if (g.empty()) continue;  // node did not influence the loss
      auto& bw = nodes_[static_cast<std::size_t>(i)].backward;
      if (bw) bw(g.data(), *this);
    }
    ran_ = true;
  }

  bool ran_backward() const { return ran_; }

  // Gradient of a leaf (or any recorded tensor); zeros if untouched.
  std::vector<double> grad(const Tensor& t) const {
    if (t.tape_ != this || t.node_ < 0) {
      throw DomainError("grad: tensor is not on this tape");
    }
    if (!ran_) throw DomainError("grad: backward has not run");
    const auto& g = grads_[static_cast<std::size_t>(t.node_)];
    if (g.empty()) return std::vector<double>(t.size(), 0.0);
    return g;
  }

  // Borrowed view of a gradient, nullptr when untouched. Valid until the
  // next backward/reset.
  const double* grad_view(const Tensor& t) const {
    if (t.tape_ != this || t.node_ < 0) {
      throw DomainError("grad: tensor is not on this tape");
    }
    if (!ran_) throw DomainError("grad: backward has not run");
    const auto& g = grads_[static_cast<std::size_t>(t.node_)];
    return g.empty() ? nullptr : g.data();
  }

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    BackwardFn backward;  // null for leaves
    std::size_t out_size;
  };

  std::vector<Node> nodes_;
  std::vector<std::vector<double>> grads_;
  bool ran_ = false;
};

}  // namespace qebench
