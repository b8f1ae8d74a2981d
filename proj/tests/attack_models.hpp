#pragma once

// Small hand-built classifiers with known geometry.

#include <vector>

#include "qadv/model.hpp"

namespace qadv::testing {

// Logits W x + b on a flat input of size d; W is row-major [classes, d].
inline ModelGraph linear_classifier(std::size_t d, std::size_t classes, std::vector<float> W,
                                    std::vector<float> b) {
  LayerSpec l;
  l.kind = LayerKind::Dense;
  l.inputs = {-1};
  l.units = classes;
  return ModelGraph({d}, classes, {l},
                    std::vector<std::vector<Tensor>>{{Tensor({classes, d}, std::move(W)),
                                                      Tensor({classes}, std::move(b))}});
}

// Binary classifier whose class-1 minus class-0 logit is w.x + c.
inline ModelGraph binary_linear(const std::vector<float>& w, float c) {
  const std::size_t d = w.size();
  std::vector<float> W(2 * d);
  for (std::size_t i = 0; i < d; ++i) {
    W[i] = -0.5f * w[i];
    W[d + i] = 0.5f * w[i];
  }
  return linear_classifier(d, 2, W, {-0.5f * c, 0.5f * c});
}

// Image-shaped variant: Flatten then Dense.
inline ModelGraph image_linear(const Shape& shape, std::size_t classes, std::vector<float> W,
                               std::vector<float> b) {
  LayerSpec f;
  f.kind = LayerKind::Flatten;
  f.inputs = {-1};
  LayerSpec l;
  l.kind = LayerKind::Dense;
  l.inputs = {0};
  l.units = classes;
  const std::size_t d = shape_size(shape);
  return ModelGraph(shape, classes, {f, l},
                    std::vector<std::vector<Tensor>>{
                        {}, {Tensor({classes, d}, std::move(W)), Tensor({classes}, std::move(b))}});
}

}  // namespace qadv::testing
