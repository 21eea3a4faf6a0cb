#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "tgmz/common.hpp"
#include "tgmz/params.hpp"

namespace tgmz {

template <class S>
class Tape;

// Handle to a tape node. Cheap to copy; valid for the lifetime of its tape.
template <class S>
class Var {
 public:
  Var() = default;
  Var(Tape<S>* tape, int id) : tape_(tape), id_(id) {}

  Tape<S>* tape() const { return tape_; }
  int id() const { return id_; }
  const Mat<S>& value() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }

 private:
  Tape<S>* tape_ = nullptr;
  int id_ = -1;
};

// Reverse-mode tape over dense matrices. Nodes are appended in forward order
// (a topological order by construction); backward replays them exactly once
// in reverse. Gradient accumulation order is fixed by node order, which makes
// repeated forward+backward passes bitwise identical.
template <class S>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<S> constant(Mat<S> v) { return push_node(std::move(v), false, {}); }

  // Gradient-tracked input that is not a parameter (grad-check probes).
  Var<S> leaf(Mat<S> v) { return push_node(std::move(v), true, {}); }

  // Tracked leaf bound to a named parameter; backward() sums the gradients of
  // all leaves bound to the same parameter.
  Var<S> param(Parameter<S>& p) {
    Var<S> v = push_node(p.value, true, {});
    bindings_.push_back({v.id(), &p});
    return v;
  }

  // Frozen binding: the parameter participates in the forward value but the
  // tape treats it as a constant (stop-gradient).
  Var<S> frozen(const Parameter<S>& p) { return constant(p.value); }

  using BackFn = std::function<void(Tape<S>&, const Mat<S>&)>;

  Var<S> push(Mat<S> value, std::initializer_list<int> inputs, BackFn back) {
    bool track = false;
    for (int id : inputs) track = track || nodes_[std::size_t(id)].track;
    return push_node(std::move(value), track, track ? std::move(back) : BackFn{});
  }

  const Mat<S>& value(int id) const { return nodes_[std::size_t(id)].value; }
  bool tracked(int id) const { return nodes_[std::size_t(id)].track; }

  // Lazy Eigen expressions: the right-hand side is only evaluated when the
  // receiving node is tracked.
  template <class Expr>
  void add_grad(int id, const Expr& e) {
    Node& n = nodes_[std::size_t(id)];
    if (n.track) n.grad += e;
  }

  // Accumulates d(loss)/d(p) for every parameter in `targets`; parameters the
  // loss does not depend on get zero entries so the map covers the group.
  GradMap<S> backward(Var<S> loss, const ParamGroup<S>& targets) {
    run_backward(loss);
    GradMap<S> grads;
    for (Parameter<S>* p : targets) {
      Mat<S> g = Mat<S>::Zero(p->value.rows(), p->value.cols());
      for (const auto& [node_id, bound] : bindings_) {
        if (bound == p && node_id <= loss.id()) g += nodes_[std::size_t(node_id)].grad;
      }
      grads.emplace(p->name, std::move(g));
    }
    return grads;
  }

  // Gradient of the last backward() pass with respect to an arbitrary tracked
  // node (used by grad checks on plain inputs).
  const Mat<S>& grad(Var<S> v) const { return nodes_[std::size_t(v.id())].grad; }

 private:
  struct Node {
    Mat<S> value;
    Mat<S> grad;
    BackFn back;
    bool track = false;
  };

  Var<S> push_node(Mat<S> value, bool track, BackFn back) {
    nodes_.push_back(Node{std::move(value), Mat<S>(), std::move(back), track});
    return Var<S>(this, int(nodes_.size()) - 1);
  }

  void run_backward(Var<S> loss) {
    if (loss.tape() != this) throw ContractError("backward: loss from another tape");
    const Mat<S>& lv = value(loss.id());
    if (lv.rows() != 1 || lv.cols() != 1) {
      throw ContractError(cat("backward: loss must be scalar, got ", shape_str(lv)));
    }
    if (!tracked(loss.id())) {
      throw ContractError("backward: loss does not depend on any tracked input");
    }
    for (Node& n : nodes_) {
      if (n.track) n.grad = Mat<S>::Zero(n.value.rows(), n.value.cols());
    }
    nodes_[std::size_t(loss.id())].grad(0, 0) = S(1);
    for (int id = loss.id(); id >= 0; --id) {
      Node& n = nodes_[std::size_t(id)];
      if (n.track && n.back) n.back(*this, n.grad);
    }
  }

  std::vector<Node> nodes_;
  std::vector<std::pair<int, const Parameter<S>*>> bindings_;
};

template <class S>
const Mat<S>& Var<S>::value() const {
  return tape_->value(id_);
}

}  // namespace tgmz
