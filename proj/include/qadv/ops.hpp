#pragma once

#include <span>
#include <string_view>
#include <vector>

#include "qadv/tensor.hpp"

namespace qadv {

enum class OpKind {
  Dense,            // (x[N], W[M,N], b[M]) -> [M]
  Conv2d,           // (x[C,H,W], K[O,C,kh,kw], b[O]) -> [O,Ho,Wo]
  DepthwiseConv2d,  // (x[C,H,W], K[C,kh,kw], b[C]) -> [C,Ho,Wo]
  Relu,
  MaxPool,
  AvgPool,
  Softmax,       // over the last axis of a rank-1 or rank-2 tensor
  Add,
  Flatten,
  CrossEntropy,  // fused softmax + cross-entropy, scalar output
  Mul,           // elementwise product
  Sum,           // scalar sum of all elements
  Scale,         // x * factor
};

std::string_view op_name(OpKind kind);

struct OpParams {
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t pool = 2;  // pooling window side
  // CrossEntropy target: a class index, or a probability vector when label < 0.
  int label = -1;
  Tensor soft_target;
  float factor = 1.0f;
};

std::size_t conv_out_dim(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t pad);

// Deterministic forward evaluation of one primitive. Throws InvalidArgument on
// non-conforming shapes and NumericDomainError on non-finite inputs.
Tensor forward_primitive(OpKind kind, std::span<const Tensor> inputs, const OpParams& params = {});

// Vector-Jacobian product of one primitive: given dL/d(output), returns
// dL/d(input_i) for every input with needs[i] set (others left empty).
std::vector<Tensor> backward_primitive(OpKind kind, std::span<const Tensor> inputs,
                                       const Tensor& output, const Tensor& grad_output,
                                       const OpParams& params, std::span<const bool> needs);

namespace ops {

Tensor dense(const Tensor& x, const Tensor& w, const Tensor& b);
Tensor conv2d(const Tensor& x, const Tensor& k, const Tensor& b, std::size_t stride, std::size_t pad);
Tensor depthwise_conv2d(const Tensor& x, const Tensor& k, const Tensor& b, std::size_t stride,
                        std::size_t pad);
Tensor relu(const Tensor& x);
Tensor max_pool(const Tensor& x, std::size_t pool, std::size_t stride);
Tensor avg_pool(const Tensor& x, std::size_t pool, std::size_t stride);
Tensor softmax(const Tensor& x);
Tensor log_softmax(const Tensor& x);
Tensor add(const Tensor& a, const Tensor& b);
Tensor flatten(const Tensor& x);
float cross_entropy(const Tensor& logits, int label);
float cross_entropy(const Tensor& logits, const Tensor& target);

}  // namespace ops

}  // namespace qadv
