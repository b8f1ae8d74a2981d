#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "qadv/autodiff.hpp"
#include "qadv/tensor.hpp"

namespace qadv {

enum class LayerKind { Conv2d, DepthwiseConv2d, Dense, Relu, MaxPool, AvgPool, Add, Flatten };

std::string_view layer_kind_name(LayerKind kind);
LayerKind parse_layer_kind(std::string_view name);

// One node of a feed-forward graph. `inputs` lists producer layer indices,
// with -1 standing for the model input; producers must precede the layer.
struct LayerSpec {
  LayerKind kind = LayerKind::Relu;
  std::vector<int> inputs;
  std::size_t out_channels = 0;  // Conv2d
  std::size_t units = 0;         // Dense
  std::size_t kernel = 3;        // conv kernel side or pooling window
  std::size_t stride = 1;
  std::size_t padding = 0;

  bool has_params() const noexcept {
    return kind == LayerKind::Conv2d || kind == LayerKind::DepthwiseConv2d ||
           kind == LayerKind::Dense;
  }
  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

// Float-32 classifier: a topologically ordered layer list whose last layer is
// a Dense producing one logit per class.
class ModelGraph {
 public:
  ModelGraph() = default;
  // He-initialised parameters drawn from `seed`.
  ModelGraph(Shape input_shape, std::size_t classes, std::vector<LayerSpec> layers,
             std::uint64_t seed);
  // Explicit parameters: params[i] = {weight, bias} for parametric layers, {} otherwise.
  ModelGraph(Shape input_shape, std::size_t classes, std::vector<LayerSpec> layers,
             std::vector<std::vector<Tensor>> params);

  const Shape& input_shape() const noexcept { return input_shape_; }
  std::size_t classes() const noexcept { return classes_; }
  const std::vector<LayerSpec>& layers() const noexcept { return layers_; }
  const Shape& output_shape(std::size_t layer) const { return shapes_.at(layer); }
  std::size_t parameter_count() const;

  const std::vector<Tensor>& params(std::size_t layer) const { return params_.at(layer); }
  std::vector<Tensor>& params(std::size_t layer) { return params_.at(layer); }
  const std::vector<std::vector<Tensor>>& all_params() const noexcept { return params_; }

  // Layer whose output feeds the final Dense (the penultimate representation).
  std::size_t feature_layer() const;

  Tensor forward(const Tensor& x) const;
  std::vector<Tensor> forward_all(const Tensor& x) const;
  Tensor probabilities(const Tensor& x) const;
  // Same graph evaluated in double precision; returns the logits.
  std::vector<double> forward_precise(const Tensor& x) const;
  int predict(const Tensor& x) const;

  struct Recorded {
    Var input;
    std::vector<Var> outputs;
    std::vector<std::vector<Var>> params;
    Var logits() const { return outputs.back(); }
  };
  // Records a forward pass. Parameter leaves are named "<layer>.w"/"<layer>.b".
  Recorded record(Tape& tape, const Tensor& x, bool input_grad, bool param_grad) const;

  // Free-form origin notes (e.g. defense kind and config hash); serialized.
  std::map<std::string, std::string>& metadata() noexcept { return metadata_; }
  const std::map<std::string, std::string>& metadata() const noexcept { return metadata_; }

 private:
  void validate_and_infer_shapes();
  void check_input(const Tensor& x) const;

  Shape input_shape_;
  std::size_t classes_ = 0;
  std::vector<LayerSpec> layers_;
  std::vector<Shape> shapes_;
  std::vector<std::vector<Tensor>> params_;
  std::map<std::string, std::string> metadata_;
};

std::string param_name(std::size_t layer, std::size_t slot);

// Toy analogue of ResNet-8: conv stem, one residual block, flatten, dense.
ModelGraph build_toy_resnet(const Shape& input_shape, std::size_t classes, std::uint64_t seed = 0);
// Toy analogue of DS-CNN: strided conv, one depthwise-separable block, avg-pool, dense.
ModelGraph build_toy_dscnn(const Shape& input_shape, std::size_t classes, std::uint64_t seed = 0);

// Returns a copy whose final layer (weights and bias) is negated.
ModelGraph negate_logits(const ModelGraph& model);

}  // namespace qadv
