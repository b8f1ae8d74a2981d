#include "qadv/model.hpp"

#include <cmath>

#include "qadv/error.hpp"
#include "qadv/ops.hpp"
#include "qadv/random.hpp"
#include "reference_forward.hpp"

namespace qadv {

std::string_view layer_kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::Conv2d: return "conv2d";
    case LayerKind::DepthwiseConv2d: return "depthwise-conv2d";
    case LayerKind::Dense: return "dense";
    case LayerKind::Relu: return "relu";
    case LayerKind::MaxPool: return "max-pool";
    case LayerKind::AvgPool: return "avg-pool";
    case LayerKind::Add: return "add";
    case LayerKind::Flatten: return "flatten";
  }
  return "?";
}

LayerKind parse_layer_kind(std::string_view name) {
  for (auto k : {LayerKind::Conv2d, LayerKind::DepthwiseConv2d, LayerKind::Dense, LayerKind::Relu,
                 LayerKind::MaxPool, LayerKind::AvgPool, LayerKind::Add, LayerKind::Flatten}) {
    if (layer_kind_name(k) == name) return k;
  }
  throw InvalidArgument("unknown layer kind '" + std::string(name) + "'");
}

std::string param_name(std::size_t layer, std::size_t slot) {
  return std::to_string(layer) + (slot == 0 ? ".w" : ".b");
}

ModelGraph::ModelGraph(Shape input_shape, std::size_t classes, std::vector<LayerSpec> layers,
                       std::uint64_t seed)
    : input_shape_(std::move(input_shape)), classes_(classes), layers_(std::move(layers)) {
  validate_and_infer_shapes();
  Rng rng(seed);
  params_.assign(layers_.size(), {});
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    if (!l.has_params()) continue;
    const Shape& in = l.inputs[0] < 0 ? input_shape_ : shapes_[std::size_t(l.inputs[0])];
    Shape wshape;
    std::size_t fan_in = 0, nbias = 0;
    switch (l.kind) {
      case LayerKind::Conv2d:
        wshape = {l.out_channels, in[0], l.kernel, l.kernel};
        fan_in = in[0] * l.kernel * l.kernel;
        nbias = l.out_channels;
        break;
      case LayerKind::DepthwiseConv2d:
        wshape = {in[0], l.kernel, l.kernel};
        fan_in = l.kernel * l.kernel;
        nbias = in[0];
        break;
      default:
        wshape = {l.units, in[0]};
        fan_in = in[0];
        nbias = l.units;
        break;
    }
    Tensor w(wshape);
    const double sd = std::sqrt(2.0 / double(fan_in));
    for (auto& v : w.data()) v = float(rng.normal() * sd);
    params_[i] = {std::move(w), Tensor({nbias})};
  }
}

ModelGraph::ModelGraph(Shape input_shape, std::size_t classes, std::vector<LayerSpec> layers,
                       std::vector<std::vector<Tensor>> params)
    : input_shape_(std::move(input_shape)),
      classes_(classes),
      layers_(std::move(layers)),
      params_(std::move(params)) {
  validate_and_infer_shapes();
  if (params_.size() != layers_.size()) {
    throw InvalidArgument("model: expected parameters for " + std::to_string(layers_.size()) +
                          " layers, got " + std::to_string(params_.size()));
  }
  // Shape-check parameters by running a zero input through the graph.
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (layers_[i].has_params() != (params_[i].size() == 2)) {
      throw InvalidArgument("model: layer " + std::to_string(i) + " has wrong parameter count");
    }
    for (const auto& p : params_[i]) {
      if (!p.all_finite()) {
        throw NumericDomainError("model: non-finite parameter in layer " + std::to_string(i));
      }
    }
  }
  const Tensor out = forward(Tensor(input_shape_));
  (void)out;
}

void ModelGraph::validate_and_infer_shapes() {
  if (input_shape_.size() != 3 && input_shape_.size() != 1) {
    throw InvalidArgument("model: input shape must be [C,H,W] or [N], got " +
                          shape_string(input_shape_));
  }
  if (classes_ < 2) throw InvalidArgument("model: need at least two classes");
  if (layers_.empty()) throw InvalidArgument("model: no layers");
  shapes_.clear();
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    const std::string where = "model: layer " + std::to_string(i) + " (" +
                              std::string(layer_kind_name(l.kind)) + ")";
    const std::size_t arity = l.kind == LayerKind::Add ? 2 : 1;
    if (l.inputs.size() != arity) throw InvalidArgument(where + ": wrong number of inputs");
    for (int src : l.inputs) {
      if (src < -1 || src >= int(i)) throw InvalidArgument(where + ": input must precede layer");
    }
    auto in_shape = [&](std::size_t k) -> const Shape& {
      return l.inputs[k] < 0 ? input_shape_ : shapes_[std::size_t(l.inputs[k])];
    };
    const Shape& in = in_shape(0);
    Shape out;
    switch (l.kind) {
      case LayerKind::Conv2d:
      case LayerKind::DepthwiseConv2d:
        if (in.size() != 3) throw InvalidArgument(where + ": expects [C,H,W] input");
        if (l.kind == LayerKind::Conv2d && l.out_channels == 0) {
          throw InvalidArgument(where + ": out_channels must be positive");
        }
        out = {l.kind == LayerKind::Conv2d ? l.out_channels : in[0],
               conv_out_dim(in[1], l.kernel, l.stride, l.padding),
               conv_out_dim(in[2], l.kernel, l.stride, l.padding)};
        break;
      case LayerKind::MaxPool:
      case LayerKind::AvgPool:
        if (in.size() != 3) throw InvalidArgument(where + ": expects [C,H,W] input");
        out = {in[0], conv_out_dim(in[1], l.kernel, l.stride, 0),
               conv_out_dim(in[2], l.kernel, l.stride, 0)};
        break;
      case LayerKind::Dense:
        if (in.size() != 1) throw InvalidArgument(where + ": expects a flat input");
        if (l.units == 0) throw InvalidArgument(where + ": units must be positive");
        out = {l.units};
        break;
      case LayerKind::Relu: out = in; break;
      case LayerKind::Flatten: out = {shape_size(in)}; break;
      case LayerKind::Add:
        if (in_shape(0) != in_shape(1)) {
          throw InvalidArgument(where + ": operand shapes differ " + shape_string(in_shape(0)) +
                                " vs " + shape_string(in_shape(1)));
        }
        out = in;
        break;
    }
    shapes_.push_back(out);
  }
  if (layers_.back().kind != LayerKind::Dense || shapes_.back() != Shape{classes_}) {
    throw InvalidArgument("model: final layer must be dense with " + std::to_string(classes_) +
                          " outputs");
  }
}

std::size_t ModelGraph::parameter_count() const {
  std::size_t n = 0;
  for (const auto& ps : params_)
    for (const auto& p : ps) n += p.size();
  return n;
}

std::size_t ModelGraph::feature_layer() const {
  const int src = layers_.back().inputs[0];
  if (src < 0) throw InvalidArgument("model: final dense layer reads the raw input");
  return std::size_t(src);
}

void ModelGraph::check_input(const Tensor& x) const {
  if (x.shape() != input_shape_) {
    throw InvalidArgument("model: input shape " + shape_string(x.shape()) + " does not match " +
                          shape_string(input_shape_));
  }
  if (!x.all_finite()) throw NumericDomainError("model: non-finite input");
}

std::vector<Tensor> ModelGraph::forward_all(const Tensor& x) const {
  check_input(x);
  std::vector<Tensor> out;
  out.reserve(layers_.size());
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    const Tensor& in = l.inputs[0] < 0 ? x : out[std::size_t(l.inputs[0])];
    switch (l.kind) {
      case LayerKind::Conv2d:
        out.push_back(ops::conv2d(in, params_[i][0], params_[i][1], l.stride, l.padding));
        break;
      case LayerKind::DepthwiseConv2d:
        out.push_back(ops::depthwise_conv2d(in, params_[i][0], params_[i][1], l.stride, l.padding));
        break;
      case LayerKind::Dense: out.push_back(ops::dense(in, params_[i][0], params_[i][1])); break;
      case LayerKind::Relu: out.push_back(ops::relu(in)); break;
      case LayerKind::MaxPool: out.push_back(ops::max_pool(in, l.kernel, l.stride)); break;
      case LayerKind::AvgPool: out.push_back(ops::avg_pool(in, l.kernel, l.stride)); break;
      case LayerKind::Flatten: out.push_back(ops::flatten(in)); break;
      case LayerKind::Add: {
        const Tensor& other = l.inputs[1] < 0 ? x : out[std::size_t(l.inputs[1])];
        out.push_back(ops::add(in, other));
        break;
      }
    }
  }
  return out;
}

Tensor ModelGraph::forward(const Tensor& x) const { return std::move(forward_all(x).back()); }

std::vector<double> ModelGraph::forward_precise(const Tensor& x) const {
  check_input(x);
  std::vector<double> input(x.data().begin(), x.data().end());
  auto act = detail::reference_forward(
      layers_, input_shape_, shapes_, input,
      [&](std::size_t i, std::size_t k) { return double(params_[i][0][k]); },
      [&](std::size_t i, std::size_t k) { return double(params_[i][1][k]); },
      [](std::size_t, double y) { return y; });
  return std::move(act.back());
}

Tensor ModelGraph::probabilities(const Tensor& x) const { return ops::softmax(forward(x)); }

int ModelGraph::predict(const Tensor& x) const { return int(argmax(forward(x))); }

ModelGraph::Recorded ModelGraph::record(Tape& tape, const Tensor& x, bool input_grad,
                                        bool param_grad) const {
  check_input(x);
  Recorded r;
  r.input = tape.leaf(x, "input", input_grad);
  r.params.resize(layers_.size());
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    for (std::size_t s = 0; s < params_[i].size(); ++s) {
      r.params[i].push_back(tape.leaf(params_[i][s], param_name(i, s), param_grad));
    }
    const Var in = l.inputs[0] < 0 ? r.input : r.outputs[std::size_t(l.inputs[0])];
    Var out;
    switch (l.kind) {
      case LayerKind::Conv2d:
        out = tape.conv2d(in, r.params[i][0], r.params[i][1], l.stride, l.padding);
        break;
      case LayerKind::DepthwiseConv2d:
        out = tape.depthwise_conv2d(in, r.params[i][0], r.params[i][1], l.stride, l.padding);
        break;
      case LayerKind::Dense: out = tape.dense(in, r.params[i][0], r.params[i][1]); break;
      case LayerKind::Relu: out = tape.relu(in); break;
      case LayerKind::MaxPool: out = tape.max_pool(in, l.kernel, l.stride); break;
      case LayerKind::AvgPool: out = tape.avg_pool(in, l.kernel, l.stride); break;
      case LayerKind::Flatten: out = tape.flatten(in); break;
      case LayerKind::Add: {
        const Var other = l.inputs[1] < 0 ? r.input : r.outputs[std::size_t(l.inputs[1])];
        out = tape.add(in, other);
        break;
      }
    }
    r.outputs.push_back(out);
  }
  return r;
}

namespace {

void require_image_input(const Shape& s, const char* who) {
  if (s.size() != 3 || (s[0] != 1 && s[0] != 3) || s[1] != s[2] || s[1] < 4) {
    throw InvalidArgument(std::string(who) + ": input must be square grayscale or RGB [C,H,W], got " +
                          shape_string(s));
  }
}

LayerSpec layer(LayerKind kind, std::vector<int> inputs) {
  LayerSpec l;
  l.kind = kind;
  l.inputs = std::move(inputs);
  return l;
}

LayerSpec conv(int in, std::size_t out_ch, std::size_t k, std::size_t stride, std::size_t pad) {
  LayerSpec l = layer(LayerKind::Conv2d, {in});
  l.out_channels = out_ch;
  l.kernel = k;
  l.stride = stride;
  l.padding = pad;
  return l;
}

LayerSpec pool(LayerKind kind, int in, std::size_t window) {
  LayerSpec l = layer(kind, {in});
  l.kernel = window;
  l.stride = window;
  return l;
}

LayerSpec dense(int in, std::size_t units) {
  LayerSpec l = layer(LayerKind::Dense, {in});
  l.units = units;
  return l;
}

}  // namespace

ModelGraph build_toy_resnet(const Shape& input_shape, std::size_t classes, std::uint64_t seed) {
  require_image_input(input_shape, "build_toy_resnet");
  if (input_shape[1] % 4 != 0) {
    throw InvalidArgument("build_toy_resnet: side must be a multiple of 4");
  }
  std::vector<LayerSpec> l;
  l.push_back(conv(-1, 8, 3, 1, 1));            // 0
  l.push_back(layer(LayerKind::Relu, {0}));     // 1
  l.push_back(pool(LayerKind::MaxPool, 1, 2));  // 2
  l.push_back(conv(2, 8, 3, 1, 1));             // 3
  l.push_back(layer(LayerKind::Relu, {3}));     // 4
  l.push_back(conv(4, 8, 3, 1, 1));             // 5
  l.push_back(layer(LayerKind::Add, {5, 2}));   // 6 residual
  l.push_back(layer(LayerKind::Relu, {6}));     // 7
  l.push_back(pool(LayerKind::MaxPool, 7, 2));  // 8
  l.push_back(layer(LayerKind::Flatten, {8}));  // 9
  l.push_back(dense(9, classes));               // 10
  ModelGraph m(input_shape, classes, std::move(l), seed);
  if (m.parameter_count() > 100000) {
    throw InvalidArgument("build_toy_resnet: input too large for the toy parameter budget");
  }
  return m;
}

ModelGraph build_toy_dscnn(const Shape& input_shape, std::size_t classes, std::uint64_t seed) {
  require_image_input(input_shape, "build_toy_dscnn");
  if (input_shape[1] % 4 != 0) {
    throw InvalidArgument("build_toy_dscnn: side must be a multiple of 4");
  }
  std::vector<LayerSpec> l;
  l.push_back(conv(-1, 8, 3, 2, 1));            // 0 strided stem
  l.push_back(layer(LayerKind::Relu, {0}));     // 1
  LayerSpec dw = layer(LayerKind::DepthwiseConv2d, {1});
  dw.kernel = 3;
  dw.padding = 1;
  l.push_back(dw);                              // 2 depthwise
  l.push_back(layer(LayerKind::Relu, {2}));     // 3
  l.push_back(conv(3, 16, 1, 1, 0));            // 4 pointwise
  l.push_back(layer(LayerKind::Relu, {4}));     // 5
  l.push_back(pool(LayerKind::AvgPool, 5, 2));  // 6
  l.push_back(layer(LayerKind::Flatten, {6}));  // 7
  l.push_back(dense(7, classes));               // 8
  ModelGraph m(input_shape, classes, std::move(l), seed);
  if (m.parameter_count() > 100000) {
    throw InvalidArgument("build_toy_dscnn: input too large for the toy parameter budget");
  }
  return m;
}

ModelGraph negate_logits(const ModelGraph& model) {
  auto params = model.all_params();
  for (auto& p : params.back()) p *= -1.0f;
  ModelGraph out(model.input_shape(), model.classes(), model.layers(), std::move(params));
  out.metadata() = model.metadata();
  return out;
}

}  // namespace qadv
