#include "qadv/autodiff.hpp"

#include <atomic>
#include <cmath>

#include "qadv/error.hpp"

namespace qadv {

namespace {
std::atomic<std::uint64_t> next_tape_id{1};
}

Tape::Tape() : id_(next_tape_id.fetch_add(1)) {}

Var Tape::leaf(Tensor value, std::string name, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = requires_grad;
  n.name = std::move(name);
  nodes_.push_back(std::move(n));
  return {id_, nodes_.size() - 1};
}

Var Tape::apply(OpKind kind, std::initializer_list<Var> inputs, OpParams params) {
  std::vector<Tensor> values;
  values.reserve(inputs.size());
  Node n;
  n.is_leaf = false;
  n.kind = kind;
  for (const Var& v : inputs) {
    if (!owns(v)) throw InvalidArgument("tape: input value is not recorded on this tape");
    n.inputs.push_back(v.index);
    n.needs_grad = n.needs_grad || nodes_[v.index].needs_grad;
    values.push_back(nodes_[v.index].value);
  }
  n.value = forward_primitive(kind, values, params);
  n.params = std::move(params);
  nodes_.push_back(std::move(n));
  return {id_, nodes_.size() - 1};
}

Var Tape::conv2d(Var x, Var k, Var b, std::size_t stride, std::size_t pad) {
  OpParams p;
  p.stride = stride;
  p.padding = pad;
  return apply(OpKind::Conv2d, {x, k, b}, p);
}

Var Tape::depthwise_conv2d(Var x, Var k, Var b, std::size_t stride, std::size_t pad) {
  OpParams p;
  p.stride = stride;
  p.padding = pad;
  return apply(OpKind::DepthwiseConv2d, {x, k, b}, p);
}

Var Tape::max_pool(Var x, std::size_t pool, std::size_t stride) {
  OpParams p;
  p.pool = pool;
  p.stride = stride;
  return apply(OpKind::MaxPool, {x}, p);
}

Var Tape::avg_pool(Var x, std::size_t pool, std::size_t stride) {
  OpParams p;
  p.pool = pool;
  p.stride = stride;
  return apply(OpKind::AvgPool, {x}, p);
}

Var Tape::cross_entropy(Var logits, int label) {
  OpParams p;
  p.label = label;
  return apply(OpKind::CrossEntropy, {logits}, p);
}

Var Tape::cross_entropy(Var logits, Tensor target) {
  OpParams p;
  p.label = -1;
  p.soft_target = std::move(target);
  return apply(OpKind::CrossEntropy, {logits}, p);
}

Var Tape::scale(Var x, float factor) {
  OpParams p;
  p.factor = factor;
  return apply(OpKind::Scale, {x}, p);
}

const Tensor& Tape::value(Var v) const {
  if (!owns(v)) throw InvalidArgument("tape: value is not recorded on this tape");
  return nodes_[v.index].value;
}

std::vector<OpKind> Tape::executed_ops() const {
  std::vector<OpKind> out;
  for (const auto& n : nodes_)
    if (!n.is_leaf) out.push_back(n.kind);
  return out;
}

const Tensor& Gradients::operator[](Var v) const {
  if (v.tape_id != tape_id_ || v.index >= grads_.size()) {
    throw InvalidArgument("gradients: value is not from the differentiated tape");
  }
  return grads_[v.index];
}

const Tensor& Gradients::operator[](const std::string& name) const {
  auto it = by_name_.find(name);
  if (it == by_name_.end()) throw InvalidArgument("gradients: no leaf named '" + name + "'");
  return it->second;
}

Gradients backward(const Tape& tape, Var loss) {
  if (!tape.owns(loss)) throw InvalidArgument("backward: loss is not recorded on this tape");
  if (tape.value(loss).size() != 1) {
    throw InvalidArgument("backward: loss must be a scalar, got shape " +
                          shape_string(tape.value(loss).shape()));
  }
  const std::pair<Var, Tensor> seed{loss, Tensor::scalar(1.0f)};
  return backward(tape, std::span(&seed, 1));
}

Gradients backward(const Tape& tape, std::span<const std::pair<Var, Tensor>> seeds,
                   const std::function<void(OpKind)>& visit) {
  const auto& nodes = tape.nodes_;
  Gradients out;
  out.tape_id_ = tape.id_;
  out.grads_.resize(nodes.size());
  std::size_t last = 0;
  for (const auto& [v, s] : seeds) {
    if (!tape.owns(v)) throw InvalidArgument("backward: output is not recorded on this tape");
    require_same_shape(nodes[v.index].value, s, "backward seed");
    auto& g = out.grads_[v.index];
    if (g.empty()) g = Tensor(s.shape());
    g += s;
    last = std::max(last, v.index + 1);
  }
  for (std::size_t i = last; i-- > 0;) {
    const auto& n = nodes[i];
    if (n.is_leaf || !n.needs_grad || out.grads_[i].empty()) continue;
    if (visit) visit(n.kind);
    std::vector<Tensor> in;
    bool flags[3] = {false, false, false};
    for (std::size_t k = 0; k < n.inputs.size(); ++k) {
      in.push_back(nodes[n.inputs[k]].value);
      flags[k] = nodes[n.inputs[k]].needs_grad;
    }
    auto gin = backward_primitive(n.kind, in, n.value, out.grads_[i], n.params,
                                  std::span<const bool>(flags, n.inputs.size()));
    for (std::size_t k = 0; k < n.inputs.size(); ++k) {
      if (!flags[k] || gin[k].empty()) continue;
      auto& dst = out.grads_[n.inputs[k]];
      if (dst.empty()) {
        dst = std::move(gin[k]);
      } else {
        dst += gin[k];
      }
    }
  }
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (out.grads_[i].empty()) out.grads_[i] = Tensor(nodes[i].value.shape());
    if (nodes[i].is_leaf && !nodes[i].name.empty()) out.by_name_[nodes[i].name] = out.grads_[i];
  }
  return out;
}

Tensor finite_difference_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x,
                                  double h) {
  if (!(h > 0.0)) throw InvalidArgument("finite difference step must be positive");
  Tensor grad(x.shape());
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    // Divide by the step actually representable in float32.
    const float orig = probe[i];
    const float hi = float(double(orig) + h);
    const float lo = float(double(orig) - h);
    probe[i] = hi;
    const double up = f(probe);
    probe[i] = lo;
    const double down = f(probe);
    probe[i] = orig;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw NumericDomainError("finite difference: non-finite function value at coordinate " +
                               std::to_string(i));
    }
    grad[i] = float((up - down) / (double(hi) - double(lo)));
  }
  return grad;
}

}  // namespace qadv
