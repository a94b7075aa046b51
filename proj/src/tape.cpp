// SPDX-License-Identifier: Apache-2.0

#include "vmolora/tape.hpp"

namespace vmolora {

const Matrix& Var::value() const { return tape->value(*this); }

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

Var Tape::constant(Matrix value) {
  Node n;
  n.owned = std::move(value);
  return push(std::move(n));
}

Var Tape::constant_ref(const Matrix& value) {
  Node n;
  n.ref = &value;
  return push(std::move(n));
}

Var Tape::parameter(const std::string& name, const Matrix& value, bool trainable) {
  if (auto it = params_.find(name); it != params_.end()) {
    const Node& existing = nodes_[it->second];
    if (existing.ref != &value) {
      throw ContractError("parameter '" + name + "' registered twice with different storage");
    }
    return Var{this, it->second};
  }
  Node n;
  n.ref = &value;
  n.requires_grad = grad_enabled_ && trainable;
  Var v = push(std::move(n));
  params_.emplace(name, v.id);
  return v;
}

const Matrix& Tape::value(Var v) const {
  const Node& n = nodes_[v.id];
  return n.ref != nullptr ? *n.ref : n.owned;
}

Var Tape::record(Matrix value, std::initializer_list<Var> inputs, Backward fn) {
  bool needs = false;
  if (grad_enabled_) {
    for (Var in : inputs) needs = needs || nodes_[in.id].requires_grad;
  }
  Node n;
  n.owned = std::move(value);
  n.requires_grad = needs;
  if (needs) n.backward = std::move(fn);
  return push(std::move(n));
}

Var Tape::record(Matrix value, const std::vector<Var>& inputs, Backward fn) {
  bool needs = false;
  if (grad_enabled_) {
    for (Var in : inputs) needs = needs || nodes_[in.id].requires_grad;
  }
  Node n;
  n.owned = std::move(value);
  n.requires_grad = needs;
  if (needs) n.backward = std::move(fn);
  return push(std::move(n));
}

Matrix& Tape::grad(Var v) {
  Node& n = nodes_[v.id];
  if (n.grad.empty()) {
    const Matrix& val = value(v);
    n.grad = Matrix(val.rows(), val.cols());
  }
  return n.grad;
}

void Tape::backward(Var loss) {
  if (backward_done_) {
    throw ContractError("backward already ran on this tape; record a new forward pass first");
  }
  if (!grad_enabled_) throw ContractError("backward on a tape with gradients disabled");
  const Matrix& lv = value(loss);
  if (lv.rows() != 1 || lv.cols() != 1) {
    throw ShapeError("backward needs a 1x1 loss, got " + lv.shape_string());
  }
  backward_done_ = true;
  if (nodes_[loss.id].requires_grad) {
    grad(loss)(0, 0) = 1.0;
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.backward || n.grad.empty()) continue;
      // Move out so the closure may freely grow other grad buffers.
      Matrix g = std::move(n.grad);
      n.backward(*this, g);
      n.grad = std::move(g);
    }
  }
  for (const auto& [name, id] : params_) grad(Var{this, id});
}

const Matrix& Tape::gradient(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw ContractError("unknown parameter '" + name + "'");
  if (!backward_done_) throw ContractError("gradient requested before backward");
  return nodes_[it->second].grad;
}

bool Tape::trainable(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw ContractError("unknown parameter '" + name + "'");
  return nodes_[it->second].requires_grad;
}

std::vector<std::string> Tape::parameter_names() const {
  std::vector<std::string> out;
  out.reserve(params_.size());
  for (const auto& [name, id] : params_) out.push_back(name);
  return out;
}

}  // namespace vmolora
