// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "vmolora/matrix.hpp"

namespace vmolora {

class Tape;

/// Handle to a node recorded on a Tape. Cheap to copy; only valid while the
/// owning tape is alive.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Matrix& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

/// Define-by-run reverse-mode tape over Matrix values.
///
/// A tape records one forward pass and supports exactly one backward pass.
/// Parameters are registered by name; registering the same name twice
/// returns the same leaf so shared weights accumulate a single gradient.
/// Single-owner: never touch one tape from two threads.
class Tape {
 public:
  /// Receives the gradient flowing into the node and scatters it to inputs.
  using Backward = std::function<void(Tape&, const Matrix& out_grad)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) { nodes_.reserve(1024); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  Var constant(Matrix value);
  /// Records a constant without copying. `value` must outlive the tape.
  Var constant_ref(const Matrix& value);
  /// Registers a named parameter leaf. `value` must outlive the tape.
  Var parameter(const std::string& name, const Matrix& value, bool trainable);

  const Matrix& value(Var v) const;
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

  /// Records an operation result. `fn` is dropped when no input needs a
  /// gradient.
  Var record(Matrix value, std::initializer_list<Var> inputs, Backward fn);
  Var record(Matrix value, const std::vector<Var>& inputs, Backward fn);

  /// Gradient buffer of node `v`, allocated as zeros on first access.
  Matrix& grad(Var v);

  /// Reverse sweep from a 1x1 loss. Throws if called twice.
  void backward(Var loss);
  bool backward_done() const { return backward_done_; }

  bool has_parameter(const std::string& name) const { return params_.count(name) != 0; }
  const Matrix& gradient(const std::string& name) const;
  bool trainable(const std::string& name) const;
  std::vector<std::string> parameter_names() const;

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix owned;
    const Matrix* ref = nullptr;
    Matrix grad;
    Backward backward;
    bool requires_grad = false;
  };

  Var push(Node node);

  bool grad_enabled_;
  bool backward_done_ = false;
  std::vector<Node> nodes_;
  std::map<std::string, std::size_t> params_;
};

}  // namespace vmolora
