#include "qadv/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "qadv/error.hpp"

namespace qadv {

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::Dense: return "dense";
    case OpKind::Conv2d: return "conv2d";
    case OpKind::DepthwiseConv2d: return "depthwise-conv2d";
    case OpKind::Relu: return "relu";
    case OpKind::MaxPool: return "max-pool";
    case OpKind::AvgPool: return "avg-pool";
    case OpKind::Softmax: return "softmax";
    case OpKind::Add: return "add";
    case OpKind::Flatten: return "flatten";
    case OpKind::CrossEntropy: return "cross-entropy-loss";
    case OpKind::Mul: return "mul";
    case OpKind::Sum: return "sum";
    case OpKind::Scale: return "scale";
  }
  return "?";
}

std::size_t conv_out_dim(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t pad) {
  if (stride == 0) throw InvalidArgument("stride must be positive");
  if (in + 2 * pad < kernel) {
    throw InvalidArgument("kernel " + std::to_string(kernel) + " larger than padded input " +
                          std::to_string(in + 2 * pad));
  }
  return (in + 2 * pad - kernel) / stride + 1;
}

namespace {

void require_rank(const Tensor& t, std::size_t rank, std::string_view op, std::string_view what) {
  if (t.rank() != rank) {
    throw InvalidArgument(std::string(op) + ": " + std::string(what) + " must have rank " +
                          std::to_string(rank) + ", got " + shape_string(t.shape()));
  }
}

void require_finite(const Tensor& t, std::string_view op) {
  auto d = t.data();
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (!std::isfinite(d[i])) {
      throw NumericDomainError(std::string(op) + ": non-finite input at element " +
                               std::to_string(i));
    }
  }
}

std::size_t input_arity(OpKind kind) {
  switch (kind) {
    case OpKind::Dense:
    case OpKind::Conv2d:
    case OpKind::DepthwiseConv2d: return 3;
    case OpKind::Add:
    case OpKind::Mul: return 2;
    default: return 1;
  }
}

}  // namespace

namespace ops {

Tensor dense(const Tensor& x, const Tensor& w, const Tensor& b) {
  require_rank(x, 1, "dense", "input");
  require_rank(w, 2, "dense", "weight");
  require_rank(b, 1, "dense", "bias");
  const std::size_t m = w.dim(0), n = w.dim(1);
  if (n != x.size() || b.size() != m) {
    throw InvalidArgument("dense: weight " + shape_string(w.shape()) + " incompatible with input " +
                          shape_string(x.shape()) + " / bias " + shape_string(b.shape()));
  }
  Tensor out({m});
  const float* wp = w.data().data();
  const float* xp = x.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    float acc = b[i];
    const float* row = wp + i * n;
    for (std::size_t j = 0; j < n; ++j) acc += row[j] * xp[j];
    out[i] = acc;
  }
  return out;
}

Tensor conv2d(const Tensor& x, const Tensor& k, const Tensor& b, std::size_t stride, std::size_t pad) {
  require_rank(x, 3, "conv2d", "input");
  require_rank(k, 4, "conv2d", "kernel");
  require_rank(b, 1, "conv2d", "bias");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::size_t o = k.dim(0), kh = k.dim(2), kw = k.dim(3);
  if (k.dim(1) != c || b.size() != o) {
    throw InvalidArgument("conv2d: kernel " + shape_string(k.shape()) + " incompatible with input " +
                          shape_string(x.shape()));
  }
  const std::size_t ho = conv_out_dim(h, kh, stride, pad), wo = conv_out_dim(w, kw, stride, pad);
  Tensor out({o, ho, wo});
  const float* xp = x.data().data();
  const float* kp = k.data().data();
  float* op = out.data().data();
  // same per-output summation order as the direct loop, but the inner loop
  // runs along contiguous output columns
  for (std::size_t oc = 0; oc < o; ++oc) {
    float* plane = op + oc * ho * wo;
    std::fill(plane, plane + ho * wo, b[oc]);
    for (std::size_t ic = 0; ic < c; ++ic) {
      for (std::size_t ky = 0; ky < kh; ++ky) {
        for (std::size_t kx = 0; kx < kw; ++kx) {
          const float kv = kp[((oc * c + ic) * kh + ky) * kw + kx];
          const std::size_t lo = kx >= pad ? 0 : (pad - kx + stride - 1) / stride;
          if (w + pad <= kx) continue;
          const std::size_t last = w + pad - kx - 1;  // ox * stride <= last
          const std::size_t hi = std::min(wo, last / stride + 1);
          for (std::size_t oy = 0; oy < ho; ++oy) {
            const std::ptrdiff_t iy = std::ptrdiff_t(oy * stride + ky) - std::ptrdiff_t(pad);
            if (iy < 0 || iy >= std::ptrdiff_t(h)) continue;
            const float* row = xp + (ic * h + std::size_t(iy)) * w;
            float* orow = plane + oy * wo;
            for (std::size_t ox = lo; ox < hi; ++ox) orow[ox] += kv * row[ox * stride + kx - pad];
          }
        }
      }
    }
  }
  return out;
}

Tensor depthwise_conv2d(const Tensor& x, const Tensor& k, const Tensor& b, std::size_t stride,
                        std::size_t pad) {
  require_rank(x, 3, "depthwise-conv2d", "input");
  require_rank(k, 3, "depthwise-conv2d", "kernel");
  require_rank(b, 1, "depthwise-conv2d", "bias");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::size_t kh = k.dim(1), kw = k.dim(2);
  if (k.dim(0) != c || b.size() != c) {
    throw InvalidArgument("depthwise-conv2d: kernel " + shape_string(k.shape()) +
                          " incompatible with input " + shape_string(x.shape()));
  }
  const std::size_t ho = conv_out_dim(h, kh, stride, pad), wo = conv_out_dim(w, kw, stride, pad);
  Tensor out({c, ho, wo});
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t oy = 0; oy < ho; ++oy) {
      for (std::size_t ox = 0; ox < wo; ++ox) {
        float acc = b[ch];
        for (std::size_t ky = 0; ky < kh; ++ky) {
          const std::ptrdiff_t iy = std::ptrdiff_t(oy * stride + ky) - std::ptrdiff_t(pad);
          if (iy < 0 || iy >= std::ptrdiff_t(h)) continue;
          for (std::size_t kx = 0; kx < kw; ++kx) {
            const std::ptrdiff_t ix = std::ptrdiff_t(ox * stride + kx) - std::ptrdiff_t(pad);
            if (ix < 0 || ix >= std::ptrdiff_t(w)) continue;
            acc += k[(ch * kh + ky) * kw + kx] * x.at(ch, iy, ix);
          }
        }
        out.at(ch, oy, ox) = acc;
      }
    }
  }
  return out;
}

Tensor relu(const Tensor& x) {
  Tensor out = x;
  for (auto& v : out.data()) v = v > 0.0f ? v : 0.0f;
  return out;
}

Tensor max_pool(const Tensor& x, std::size_t pool, std::size_t stride) {
  require_rank(x, 3, "max-pool", "input");
  const std::size_t c = x.dim(0);
  const std::size_t ho = conv_out_dim(x.dim(1), pool, stride, 0);
  const std::size_t wo = conv_out_dim(x.dim(2), pool, stride, 0);
  Tensor out({c, ho, wo});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t oy = 0; oy < ho; ++oy)
      for (std::size_t ox = 0; ox < wo; ++ox) {
        float m = -std::numeric_limits<float>::infinity();
        for (std::size_t ky = 0; ky < pool; ++ky)
          for (std::size_t kx = 0; kx < pool; ++kx)
            m = std::max(m, x.at(ch, oy * stride + ky, ox * stride + kx));
        out.at(ch, oy, ox) = m;
      }
  return out;
}

Tensor avg_pool(const Tensor& x, std::size_t pool, std::size_t stride) {
  require_rank(x, 3, "avg-pool", "input");
  const std::size_t c = x.dim(0);
  const std::size_t ho = conv_out_dim(x.dim(1), pool, stride, 0);
  const std::size_t wo = conv_out_dim(x.dim(2), pool, stride, 0);
  const float inv = 1.0f / float(pool * pool);
  Tensor out({c, ho, wo});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t oy = 0; oy < ho; ++oy)
      for (std::size_t ox = 0; ox < wo; ++ox) {
        float s = 0.0f;
        for (std::size_t ky = 0; ky < pool; ++ky)
          for (std::size_t kx = 0; kx < pool; ++kx) s += x.at(ch, oy * stride + ky, ox * stride + kx);
        out.at(ch, oy, ox) = s * inv;
      }
  return out;
}

Tensor softmax(const Tensor& x) {
  if (x.rank() != 1 && x.rank() != 2) {
    throw InvalidArgument("softmax: expected rank 1 or 2, got " + shape_string(x.shape()));
  }
  const std::size_t cols = x.shape().back();
  const std::size_t rows = x.size() / cols;
  Tensor out(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const float* in = x.data().data() + r * cols;
    float* o = out.data().data() + r * cols;
    const float m = *std::max_element(in, in + cols);
    double s = 0.0;
    for (std::size_t i = 0; i < cols; ++i) s += std::exp(double(in[i]) - m);
    for (std::size_t i = 0; i < cols; ++i) o[i] = float(std::exp(double(in[i]) - m) / s);
  }
  return out;
}

Tensor log_softmax(const Tensor& x) {
  require_rank(x, 1, "log-softmax", "input");
  const float m = *std::max_element(x.data().begin(), x.data().end());
  double s = 0.0;
  for (float v : x.data()) s += std::exp(double(v) - m);
  const double lse = m + std::log(s);
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = float(double(x[i]) - lse);
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  return a + b;
}

Tensor flatten(const Tensor& x) { return x.reshaped({x.size()}); }

float cross_entropy(const Tensor& logits, int label) {
  require_rank(logits, 1, "cross-entropy-loss", "logits");
  if (label < 0 || std::size_t(label) >= logits.size()) {
    throw InvalidArgument("cross-entropy-loss: label " + std::to_string(label) + " out of range");
  }
  return -log_softmax(logits)[std::size_t(label)];
}

float cross_entropy(const Tensor& logits, const Tensor& target) {
  require_rank(logits, 1, "cross-entropy-loss", "logits");
  require_same_shape(logits, target, "cross-entropy-loss");
  const Tensor ls = log_softmax(logits);
  double s = 0.0;
  for (std::size_t i = 0; i < ls.size(); ++i) s -= double(target[i]) * ls[i];
  return float(s);
}

}  // namespace ops

Tensor forward_primitive(OpKind kind, std::span<const Tensor> in, const OpParams& p) {
  if (in.size() != input_arity(kind)) {
    throw InvalidArgument(std::string(op_name(kind)) + ": expected " +
                          std::to_string(input_arity(kind)) + " inputs, got " +
                          std::to_string(in.size()));
  }
  for (const auto& t : in) require_finite(t, op_name(kind));
  switch (kind) {
    case OpKind::Dense: return ops::dense(in[0], in[1], in[2]);
    case OpKind::Conv2d: return ops::conv2d(in[0], in[1], in[2], p.stride, p.padding);
    case OpKind::DepthwiseConv2d:
      return ops::depthwise_conv2d(in[0], in[1], in[2], p.stride, p.padding);
    case OpKind::Relu: return ops::relu(in[0]);
    case OpKind::MaxPool: return ops::max_pool(in[0], p.pool, p.stride);
    case OpKind::AvgPool: return ops::avg_pool(in[0], p.pool, p.stride);
    case OpKind::Softmax: return ops::softmax(in[0]);
    case OpKind::Add: return ops::add(in[0], in[1]);
    case OpKind::Flatten: return ops::flatten(in[0]);
    case OpKind::CrossEntropy:
      return Tensor::scalar(p.label >= 0 ? ops::cross_entropy(in[0], p.label)
                                         : ops::cross_entropy(in[0], p.soft_target));
    case OpKind::Mul: {
      require_same_shape(in[0], in[1], "mul");
      Tensor out = in[0];
      for (std::size_t i = 0; i < out.size(); ++i) out[i] *= in[1][i];
      return out;
    }
    case OpKind::Sum: {
      double s = 0.0;
      for (float v : in[0].data()) s += v;
      return Tensor::scalar(float(s));
    }
    case OpKind::Scale: return in[0] * p.factor;
  }
  throw InvalidArgument("unknown op kind");
}

std::vector<Tensor> backward_primitive(OpKind kind, std::span<const Tensor> in, const Tensor& out,
                                       const Tensor& g, const OpParams& p,
                                       std::span<const bool> needs) {
  std::vector<Tensor> grads(in.size());
  auto need = [&](std::size_t i) { return i < needs.size() && needs[i]; };
  switch (kind) {
    case OpKind::Dense: {
      const Tensor &x = in[0], &w = in[1];
      const std::size_t m = w.dim(0), n = w.dim(1);
      if (need(0)) {
        Tensor dx({n});
        for (std::size_t i = 0; i < m; ++i) {
          const float gi = g[i];
          if (gi == 0.0f) continue;
          for (std::size_t j = 0; j < n; ++j) dx[j] += gi * w[i * n + j];
        }
        grads[0] = std::move(dx);
      }
      if (need(1)) {
        Tensor dw(w.shape());
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) dw[i * n + j] = g[i] * x[j];
        grads[1] = std::move(dw);
      }
      if (need(2)) grads[2] = g;
      break;
    }
    case OpKind::Conv2d: {
      const Tensor &x = in[0], &k = in[1];
      const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
      const std::size_t o = k.dim(0), kh = k.dim(2), kw = k.dim(3);
      const std::size_t ho = out.dim(1), wo = out.dim(2);
      const std::size_t s = p.stride, pad = p.padding;
      Tensor dx, dk, db;
      if (need(0)) dx = Tensor(x.shape());
      if (need(1)) dk = Tensor(k.shape());
      if (need(2)) db = Tensor({o});
      const float* xp = x.data().data();
      const float* kp = k.data().data();
      for (std::size_t oc = 0; oc < o; ++oc) {
        for (std::size_t oy = 0; oy < ho; ++oy) {
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const float go = g[(oc * ho + oy) * wo + ox];
            if (go == 0.0f) continue;
            if (need(2)) db[oc] += go;
            for (std::size_t ic = 0; ic < c; ++ic) {
              for (std::size_t ky = 0; ky < kh; ++ky) {
                const std::ptrdiff_t iy = std::ptrdiff_t(oy * s + ky) - std::ptrdiff_t(pad);
                if (iy < 0 || iy >= std::ptrdiff_t(h)) continue;
                for (std::size_t kx = 0; kx < kw; ++kx) {
                  const std::ptrdiff_t ix = std::ptrdiff_t(ox * s + kx) - std::ptrdiff_t(pad);
                  if (ix < 0 || ix >= std::ptrdiff_t(w)) continue;
                  const std::size_t ki = ((oc * c + ic) * kh + ky) * kw + kx;
                  const std::size_t xi = (ic * h + iy) * w + ix;
                  if (need(0)) dx[xi] += go * kp[ki];
                  if (need(1)) dk[ki] += go * xp[xi];
                }
              }
            }
          }
        }
      }
      grads[0] = std::move(dx);
      grads[1] = std::move(dk);
      grads[2] = std::move(db);
      break;
    }
    case OpKind::DepthwiseConv2d: {
      const Tensor &x = in[0], &k = in[1];
      const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
      const std::size_t kh = k.dim(1), kw = k.dim(2);
      const std::size_t ho = out.dim(1), wo = out.dim(2);
      const std::size_t s = p.stride, pad = p.padding;
      Tensor dx, dk, db;
      if (need(0)) dx = Tensor(x.shape());
      if (need(1)) dk = Tensor(k.shape());
      if (need(2)) db = Tensor({c});
      for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t oy = 0; oy < ho; ++oy) {
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const float go = g[(ch * ho + oy) * wo + ox];
            if (go == 0.0f) continue;
            if (need(2)) db[ch] += go;
            for (std::size_t ky = 0; ky < kh; ++ky) {
              const std::ptrdiff_t iy = std::ptrdiff_t(oy * s + ky) - std::ptrdiff_t(pad);
              if (iy < 0 || iy >= std::ptrdiff_t(h)) continue;
              for (std::size_t kx = 0; kx < kw; ++kx) {
                const std::ptrdiff_t ix = std::ptrdiff_t(ox * s + kx) - std::ptrdiff_t(pad);
                if (ix < 0 || ix >= std::ptrdiff_t(w)) continue;
                const std::size_t ki = (ch * kh + ky) * kw + kx;
                const std::size_t xi = (ch * h + iy) * w + ix;
                if (need(0)) dx[xi] += go * k[ki];
                if (need(1)) dk[ki] += go * x[xi];
              }
            }
          }
        }
      }
      grads[0] = std::move(dx);
      grads[1] = std::move(dk);
      grads[2] = std::move(db);
      break;
    }
    case OpKind::Relu: {
      // Subgradient at 0 is 0.
      Tensor dx = g;
      for (std::size_t i = 0; i < dx.size(); ++i)
        if (!(in[0][i] > 0.0f)) dx[i] = 0.0f;
      grads[0] = std::move(dx);
      break;
    }
    case OpKind::MaxPool: {
      const Tensor& x = in[0];
      Tensor dx(x.shape());
      const std::size_t c = x.dim(0), ho = out.dim(1), wo = out.dim(2), s = p.stride;
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t oy = 0; oy < ho; ++oy)
          for (std::size_t ox = 0; ox < wo; ++ox) {
            // First maximal element in scan order receives the gradient.
            std::size_t by = oy * s, bx = ox * s;
            float m = x.at(ch, by, bx);
            for (std::size_t ky = 0; ky < p.pool; ++ky)
              for (std::size_t kx = 0; kx < p.pool; ++kx) {
                const float v = x.at(ch, oy * s + ky, ox * s + kx);
                if (v > m) {
                  m = v;
                  by = oy * s + ky;
                  bx = ox * s + kx;
                }
              }
            dx.at(ch, by, bx) += g[(ch * ho + oy) * wo + ox];
          }
      grads[0] = std::move(dx);
      break;
    }
    case OpKind::AvgPool: {
      const Tensor& x = in[0];
      Tensor dx(x.shape());
      const std::size_t c = x.dim(0), ho = out.dim(1), wo = out.dim(2), s = p.stride;
      const float inv = 1.0f / float(p.pool * p.pool);
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t oy = 0; oy < ho; ++oy)
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const float go = g[(ch * ho + oy) * wo + ox] * inv;
            for (std::size_t ky = 0; ky < p.pool; ++ky)
              for (std::size_t kx = 0; kx < p.pool; ++kx) dx.at(ch, oy * s + ky, ox * s + kx) += go;
          }
      grads[0] = std::move(dx);
      break;
    }
    case OpKind::Softmax: {
      const std::size_t cols = out.shape().back(), rows = out.size() / cols;
      Tensor dx(out.shape());
      for (std::size_t r = 0; r < rows; ++r) {
        double s = 0.0;
        for (std::size_t i = 0; i < cols; ++i) s += double(g[r * cols + i]) * out[r * cols + i];
        for (std::size_t i = 0; i < cols; ++i)
          dx[r * cols + i] = float(out[r * cols + i] * (g[r * cols + i] - s));
      }
      grads[0] = std::move(dx);
      break;
    }
    case OpKind::Add:
      if (need(0)) grads[0] = g;
      if (need(1)) grads[1] = g;
      break;
    case OpKind::Flatten: grads[0] = g.reshaped(in[0].shape()); break;
    case OpKind::CrossEntropy: {
      Tensor dx = ops::softmax(in[0]);
      if (p.label >= 0) {
        dx[std::size_t(p.label)] -= 1.0f;
      } else {
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] -= p.soft_target[i];
      }
      dx *= g[0];
      grads[0] = std::move(dx);
      break;
    }
    case OpKind::Mul:
      if (need(0)) {
        Tensor d = g;
        for (std::size_t i = 0; i < d.size(); ++i) d[i] *= in[1][i];
        grads[0] = std::move(d);
      }
      if (need(1)) {
        Tensor d = g;
        for (std::size_t i = 0; i < d.size(); ++i) d[i] *= in[0][i];
        grads[1] = std::move(d);
      }
      break;
    case OpKind::Sum: grads[0] = Tensor(in[0].shape(), g[0]); break;
    case OpKind::Scale: grads[0] = g * p.factor; break;
  }
  return grads;
}

}  // namespace qadv
