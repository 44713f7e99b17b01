#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tvae/errors.hpp"
#include "tvae/tensor.hpp"

namespace tvae::diff {

class Tape;

/// Handle to a node recorded on a Tape. Cheap to copy; valid as long as the
/// tape lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
  std::size_t id() const noexcept { return id_; }
  Tape* tape() const noexcept { return tape_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Accumulates d(root)/d(input) for every input that requires a gradient.
/// Entries of `input_grads` are null for inputs that do not.
using BackwardFn = std::function<void(const Tensor& grad_out, std::span<Tensor* const> input_grads)>;

/// Result of a reverse pass: gradient per node id. Leaves the root does not
/// depend on report an exactly-zero gradient.
class Gradients {
 public:
  Gradients() = default;
  Gradients(std::vector<Tensor> grads, std::vector<bool> present, const Tape* tape)
      : grads_(std::move(grads)), present_(std::move(present)), tape_(tape) {}

  Tensor of(const Var& v) const;

 private:
  std::vector<Tensor> grads_;
  std::vector<bool> present_;
  const Tape* tape_ = nullptr;
};

/// Dynamic reverse-mode tape. Nodes are appended in evaluation order, so
/// node ids are a valid topological order by construction. One tape per
/// forward pass; a tape is confined to a single thread.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value) { return push(std::move(value), {}, nullptr, false, true); }
  Var parameter(Tensor value) { return push(std::move(value), {}, nullptr, true, true); }

  /// Records an operation result. The backward rule is dropped when no input
  /// requires a gradient, so constant subgraphs cost nothing in the reverse pass.
  Var record(Tensor value, std::vector<Var> inputs, BackwardFn backward) {
    bool needs = false;
    std::vector<std::size_t> ids;
    ids.reserve(inputs.size());
    for (const Var& in : inputs) {
      if (in.tape() != this) throw ContractError("operation mixes variables from different tapes");
      ids.push_back(in.id());
      needs = needs || nodes_[in.id()].requires_grad;
    }
    if (!needs) return push(std::move(value), {}, nullptr, false, false);
    return push(std::move(value), std::move(ids), std::move(backward), true, false);
  }

  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

  Gradients backward(const Var& root) const {
    if (root.tape() != this) throw ContractError("backward root belongs to another tape");
    const Tensor& root_value = nodes_[root.id()].value;
    if (root_value.size() != 1) {
      throw ContractError("backward requires a scalar root, got shape " + shape_string(root_value.shape()));
    }
    std::vector<Tensor> grads(nodes_.size(), Tensor(Shape{0}));
    std::vector<bool> present(nodes_.size(), false);
    grads[root.id()] = Tensor(root_value.shape(), 1.0);
    present[root.id()] = true;

    std::vector<Tensor*> input_grads;
    for (std::size_t id = root.id() + 1; id-- > 0;) {
      const Node& node = nodes_[id];
      if (!present[id] || !node.backward) continue;
      input_grads.assign(node.inputs.size(), nullptr);
      for (std::size_t k = 0; k < node.inputs.size(); ++k) {
        const std::size_t in = node.inputs[k];
        if (!nodes_[in].requires_grad) continue;
        if (!present[in]) {
          grads[in] = Tensor(nodes_[in].value.shape(), 0.0);
          present[in] = true;
        }
        input_grads[k] = &grads[in];
      }
      node.backward(grads[id], input_grads);
    }
    return Gradients(std::move(grads), std::move(present), this);
  }

 private:
  struct Node {
    Tensor value;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
    bool leaf = false;
  };

  Var push(Tensor value, std::vector<std::size_t> inputs, BackwardFn backward, bool requires_grad, bool leaf) {
    nodes_.push_back(Node{std::move(value), std::move(inputs), std::move(backward), requires_grad, leaf});
    return Var(this, nodes_.size() - 1);
  }

  // deque keeps value references stable while new nodes are appended
  std::deque<Node> nodes_;
};

inline const Tensor& Var::value() const {
  if (!tape_) throw ContractError("use of an unbound Var");
  return tape_->value(id_);
}

inline bool Var::requires_grad() const { return tape_ && tape_->requires_grad(id_); }

inline Tensor Gradients::of(const Var& v) const {
  if (v.tape() != tape_) throw ContractError("gradient requested for a variable of another tape");
  if (v.id() < present_.size() && present_[v.id()]) return grads_[v.id()];
  return Tensor(v.value().shape(), 0.0);
}

}  // namespace tvae::diff
