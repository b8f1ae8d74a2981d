#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "qadv/ops.hpp"
#include "qadv/tensor.hpp"

namespace qadv {

class Tape;
class Gradients;
struct Var;
Gradients backward(const Tape& tape, std::span<const std::pair<Var, Tensor>> seeds,
                   const std::function<void(OpKind)>& visit);

// Handle to a value recorded on a specific tape.
struct Var {
  std::uint64_t tape_id = 0;
  std::size_t index = 0;
};

// Records executed primitives so adjoints can be replayed in reverse order.
// A tape is single-writer; concurrent passes each need their own tape.
class Tape {
 public:
  Tape();

  // Leaf values: inputs and parameters. Only named leaves appear in
  // Gradients::by_name().
  Var leaf(Tensor value, std::string name = {}, bool requires_grad = true);
  Var constant(Tensor value) { return leaf(std::move(value), {}, false); }

  Var apply(OpKind kind, std::initializer_list<Var> inputs, OpParams params = {});

  Var dense(Var x, Var w, Var b) { return apply(OpKind::Dense, {x, w, b}); }
  Var conv2d(Var x, Var k, Var b, std::size_t stride, std::size_t pad);
  Var depthwise_conv2d(Var x, Var k, Var b, std::size_t stride, std::size_t pad);
  Var relu(Var x) { return apply(OpKind::Relu, {x}); }
  Var max_pool(Var x, std::size_t pool, std::size_t stride);
  Var avg_pool(Var x, std::size_t pool, std::size_t stride);
  Var softmax(Var x) { return apply(OpKind::Softmax, {x}); }
  Var add(Var a, Var b) { return apply(OpKind::Add, {a, b}); }
  Var flatten(Var x) { return apply(OpKind::Flatten, {x}); }
  Var cross_entropy(Var logits, int label);
  Var cross_entropy(Var logits, Tensor target);
  Var mul(Var a, Var b) { return apply(OpKind::Mul, {a, b}); }
  Var sum(Var x) { return apply(OpKind::Sum, {x}); }
  Var scale(Var x, float factor);

  const Tensor& value(Var v) const;
  std::size_t size() const noexcept { return nodes_.size(); }
  bool owns(Var v) const noexcept { return v.tape_id == id_ && v.index < nodes_.size(); }

  // Primitive kinds in execution order; leaves are omitted.
  std::vector<OpKind> executed_ops() const;

 private:
  friend class Gradients;
  friend Gradients backward(const Tape&, std::span<const std::pair<Var, Tensor>>,
                            const std::function<void(OpKind)>&);

  struct Node {
    bool is_leaf = true;
    OpKind kind = OpKind::Sum;
    OpParams params;
    std::vector<std::size_t> inputs;
    Tensor value;
    bool needs_grad = false;
    std::string name;
  };

  std::uint64_t id_;
  std::vector<Node> nodes_;
};

// Adjoints produced by one backward pass.
class Gradients {
 public:
  // Gradient of the seeded outputs w.r.t. a recorded value. Values that did
  // not influence the outputs have zero gradient.
  const Tensor& operator[](Var v) const;
  const Tensor& operator[](const std::string& name) const;
  bool contains(const std::string& name) const { return by_name_.count(name) != 0; }
  const std::map<std::string, Tensor>& by_name() const noexcept { return by_name_; }

 private:
  friend Gradients backward(const Tape&, std::span<const std::pair<Var, Tensor>>,
                            const std::function<void(OpKind)>&);
  std::uint64_t tape_id_ = 0;
  std::vector<Tensor> grads_;
  std::map<std::string, Tensor> by_name_;
};

// Gradient of a scalar loss recorded on `tape`. d(loss)/d(loss) = 1.
Gradients backward(const Tape& tape, Var loss);

// Vector-Jacobian product for one or more outputs with explicit seeds.
// `visit` is called once per replayed primitive, in replay order.
Gradients backward(const Tape& tape, std::span<const std::pair<Var, Tensor>> seeds,
                   const std::function<void(OpKind)>& visit = {});

// Central differences: component i is (f(x + h e_i) - f(x - h e_i)) / 2h,
// evaluated in double precision. Throws NumericDomainError naming the
// coordinate when f is non-finite.
Tensor finite_difference_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x,
                                  double h);

}  // namespace qadv
