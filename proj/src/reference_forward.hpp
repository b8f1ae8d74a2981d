#pragma once

// Double-precision graph evaluation shared by ModelGraph::forward_precise and
// the fake-quant reference. `weight(i, k)` / `bias(i, k)` read layer i's
// parameters; `boundary(i, y)` post-processes every produced value (identity
// for plain evaluation, quantize-dequantize for fake-quant).

#include <algorithm>
#include <vector>

#include "qadv/model.hpp"

namespace qadv::detail {

template <class Weight, class Bias, class Boundary>
std::vector<std::vector<double>> reference_forward(const std::vector<LayerSpec>& layers,
                                                   const Shape& input_shape,
                                                   const std::vector<Shape>& out_shapes,
                                                   const std::vector<double>& input, Weight weight,
                                                   Bias bias, Boundary boundary) {
  std::vector<std::vector<double>> act(layers.size());
  auto shape_of = [&](int src) -> const Shape& {
    return src < 0 ? input_shape : out_shapes[std::size_t(src)];
  };
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& l = layers[i];
    const int src = l.inputs[0];
    const auto& in = src < 0 ? input : act[std::size_t(src)];
    const Shape& os = out_shapes[i];
    auto& out = act[i];
    out.assign(shape_size(os), 0.0);
    switch (l.kind) {
      case LayerKind::Conv2d:
      case LayerKind::DepthwiseConv2d: {
        const Shape& is = shape_of(src);
        const std::size_t C = is[0], H = is[1], W = is[2], O = os[0], OH = os[1], OW = os[2];
        const std::size_t k = l.kernel;
        const bool dw = l.kind == LayerKind::DepthwiseConv2d;
        for (std::size_t o = 0; o < O; ++o)
          for (std::size_t oy = 0; oy < OH; ++oy)
            for (std::size_t ox = 0; ox < OW; ++ox) {
              double y = bias(i, o);
              const std::size_t c0 = dw ? o : 0, c1 = dw ? o + 1 : C;
              for (std::size_t c = c0; c < c1; ++c)
                for (std::size_t ky = 0; ky < k; ++ky) {
                  const long iy = long(oy * l.stride + ky) - long(l.padding);
                  if (iy < 0 || iy >= long(H)) continue;
                  for (std::size_t kx = 0; kx < k; ++kx) {
                    const long ix = long(ox * l.stride + kx) - long(l.padding);
                    if (ix < 0 || ix >= long(W)) continue;
                    const std::size_t wi = dw ? (o * k + ky) * k + kx : ((o * C + c) * k + ky) * k + kx;
                    y += in[(c * H + std::size_t(iy)) * W + std::size_t(ix)] * weight(i, wi);
                  }
                }
              out[(o * OH + oy) * OW + ox] = boundary(i, y);
            }
        break;
      }
      case LayerKind::Dense: {
        const std::size_t N = in.size();
        for (std::size_t m = 0; m < out.size(); ++m) {
          double y = bias(i, m);
          for (std::size_t n = 0; n < N; ++n) y += in[n] * weight(i, m * N + n);
          out[m] = boundary(i, y);
        }
        break;
      }
      case LayerKind::Relu:
        for (std::size_t n = 0; n < out.size(); ++n) out[n] = boundary(i, std::max(in[n], 0.0));
        break;
      case LayerKind::MaxPool:
      case LayerKind::AvgPool: {
        const Shape& is = shape_of(src);
        const std::size_t H = is[1], W = is[2], OH = os[1], OW = os[2];
        const std::size_t k = l.kernel, s = l.stride;
        for (std::size_t c = 0; c < os[0]; ++c)
          for (std::size_t oy = 0; oy < OH; ++oy)
            for (std::size_t ox = 0; ox < OW; ++ox) {
              double acc = l.kind == LayerKind::MaxPool ? -1e300 : 0.0;
              for (std::size_t ky = 0; ky < k; ++ky)
                for (std::size_t kx = 0; kx < k; ++kx) {
                  const double v = in[(c * H + oy * s + ky) * W + ox * s + kx];
                  acc = l.kind == LayerKind::MaxPool ? std::max(acc, v) : acc + v;
                }
              if (l.kind == LayerKind::AvgPool) acc /= double(k * k);
              out[(c * OH + oy) * OW + ox] = boundary(i, acc);
            }
        break;
      }
      case LayerKind::Flatten: out = in; break;
      case LayerKind::Add: {
        const int b = l.inputs[1];
        const auto& other = b < 0 ? input : act[std::size_t(b)];
        for (std::size_t n = 0; n < out.size(); ++n) out[n] = boundary(i, in[n] + other[n]);
        break;
      }
    }
  }
  return act;
}

}  // namespace qadv::detail
