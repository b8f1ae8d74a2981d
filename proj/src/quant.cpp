#include "qadv/quant.hpp"

#include <algorithm>
#include <climits>
#include <cmath>

#include "qadv/error.hpp"
#include "qadv/ops.hpp"
#include "qadv/serialize.hpp"
#include "reference_forward.hpp"

namespace qadv {

namespace {

double round_half_away(double v) { return v < 0.0 ? -std::floor(-v + 0.5) : std::floor(v + 0.5); }

// round_half_away(n / 2^r) for r >= 1.
std::int64_t rounding_shift(__int128 n, int r) {
  if (r > 120) return 0;
  const bool neg = n < 0;
  unsigned __int128 a = neg ? (unsigned __int128)(-n) : (unsigned __int128)n;
  a = (a + ((unsigned __int128)1 << (r - 1))) >> r;
  if (a > (unsigned __int128)INT64_MAX) throw InternalOverflow("requantization result out of range");
  return neg ? -std::int64_t(a) : std::int64_t(a);
}

// round_half_away(s / n) for n > 0.
std::int64_t rounding_div(std::int64_t s, std::int64_t n) {
  const std::int64_t a = s < 0 ? -s : s;
  const std::int64_t q = (2 * a + n) / (2 * n);
  return s < 0 ? -q : q;
}

std::int32_t saturate(std::int64_t v, const QuantParams& p) {
  return std::int32_t(std::clamp<std::int64_t>(v, p.qmin(), p.qmax()));
}

std::string layer_label(std::size_t i, const LayerSpec& l) {
  return "layer " + std::to_string(i) + " (" + std::string(layer_kind_name(l.kind)) + ")";
}

// Accumulator of the configured width; wrapping is reported, never silent.
struct Accumulator {
  bool narrow;
  const std::string* where;
  std::int64_t v = 0;

  void check() const {
    if (narrow && (v > INT32_MAX || v < INT32_MIN)) {
      throw InternalOverflow(*where + ": int32 accumulator overflow");
    }
  }
  void start(std::int64_t bias) {
    v = bias;
    check();
  }
  void add(std::int64_t term) {
    if (__builtin_add_overflow(v, term, &v)) {
      throw InternalOverflow(*where + ": int64 accumulator overflow");
    }
    check();
  }
};

struct Geometry {
  std::size_t C, H, W, O, OH, OW, k, stride, pad;
};

Geometry geometry(const Shape& in, const QuantizedLayer& L) {
  return {in[0], in[1], in[2], L.output_shape[0], L.output_shape[1], L.output_shape[2],
          L.spec.kernel, L.spec.stride, L.spec.padding};
}

// Visits (output index, input index, weight index) for conv-like layers.
// Padding taps are skipped: they carry real value 0.
template <class Start, class Tap, class Finish>
void conv_loop(const Geometry& g, bool depthwise, Start start, Tap tap, Finish finish) {
  for (std::size_t o = 0; o < g.O; ++o)
    for (std::size_t oy = 0; oy < g.OH; ++oy)
      for (std::size_t ox = 0; ox < g.OW; ++ox) {
        start(o);
        const std::size_t c0 = depthwise ? o : 0, c1 = depthwise ? o + 1 : g.C;
        for (std::size_t c = c0; c < c1; ++c)
          for (std::size_t ky = 0; ky < g.k; ++ky) {
            const long iy = long(oy * g.stride + ky) - long(g.pad);
            if (iy < 0 || iy >= long(g.H)) continue;
            for (std::size_t kx = 0; kx < g.k; ++kx) {
              const long ix = long(ox * g.stride + kx) - long(g.pad);
              if (ix < 0 || ix >= long(g.W)) continue;
              const std::size_t xi = (c * g.H + std::size_t(iy)) * g.W + std::size_t(ix);
              const std::size_t wi = depthwise ? (o * g.k + ky) * g.k + kx
                                               : ((o * g.C + c) * g.k + ky) * g.k + kx;
              tap(xi, wi);
            }
          }
        finish((o * g.OH + oy) * g.OW + ox);
      }
}

template <class Visit>
void pool_loop(const Shape& in, const QuantizedLayer& L, Visit visit) {
  const std::size_t C = in[0], H = in[1], W = in[2];
  const std::size_t OH = L.output_shape[1], OW = L.output_shape[2];
  const std::size_t k = L.spec.kernel, s = L.spec.stride;
  std::vector<std::size_t> window;
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t oy = 0; oy < OH; ++oy)
      for (std::size_t ox = 0; ox < OW; ++ox) {
        window.clear();
        for (std::size_t ky = 0; ky < k; ++ky)
          for (std::size_t kx = 0; kx < k; ++kx)
            window.push_back((c * H + oy * s + ky) * W + ox * s + kx);
        visit((c * OH + oy) * OW + ox, window);
      }
}

const Shape& shape_of(const QuantizedModel& qm, int producer) {
  return producer < 0 ? qm.input_shape : qm.layers[std::size_t(producer)].output_shape;
}

void check_model_input(const QuantizedModel& qm, const Tensor& x) {
  if (x.shape() != qm.input_shape) {
    throw InvalidArgument("quantized model: input shape " + shape_string(x.shape()) +
                          " does not match " + shape_string(qm.input_shape));
  }
  if (!x.all_finite()) throw NumericDomainError("quantized model: non-finite input");
}

// quantize-dequantize in double. The ratio is snapped to 2^-24 so that exact
// ties (e.g. averages of lattice values) are not broken by representation error.
double fake_quant(double y, const QuantParams& p) {
  double r = y / p.scale;
  r = std::nearbyint(r * 16777216.0) / 16777216.0;
  const double q = std::clamp(round_half_away(r) + p.zero_point, double(p.qmin()), double(p.qmax()));
  return (q - p.zero_point) * p.scale;
}

}  // namespace

void check_bits(int bits) {
  if (bits != 8 && bits != 16) {
    throw InvalidArgument("quantization supports 8 or 16 bits, got " + std::to_string(bits));
  }
}

std::int32_t QuantParams::qmin() const noexcept { return bits == 16 ? -32768 : -128; }
std::int32_t QuantParams::qmax() const noexcept { return bits == 16 ? 32767 : 127; }

void QuantParams::validate() const {
  check_bits(bits);
  if (!(scale > 0.0) || !std::isfinite(scale)) {
    throw InvalidArgument("quant params: scale must be positive and finite");
  }
  if (zero_point < qmin() || zero_point > qmax()) {
    throw InvalidArgument("quant params: zero point " + std::to_string(zero_point) +
                          " out of range for " + std::to_string(bits) + " bits");
  }
  if (symmetric && zero_point != 0) {
    throw InvalidArgument("quant params: symmetric params need zero point 0");
  }
}

QuantParams choose_params(double lo, double hi, int bits, bool symmetric) {
  check_bits(bits);
  if (!std::isfinite(lo) || !std::isfinite(hi) || lo > hi) {
    throw InvalidArgument("choose_params: invalid range");
  }
  QuantParams p;
  p.bits = bits;
  p.symmetric = symmetric;
  lo = std::min(lo, 0.0);
  hi = std::max(hi, 0.0);
  if (hi == lo) return p;  // degenerate: scale 1, zero point 0
  if (symmetric) {
    p.scale = std::max(-lo, hi) / double(p.qmax());
    return p;
  }
  p.scale = (hi - lo) / double(p.qmax() - p.qmin());
  const double zp = double(p.qmin()) - round_half_away(lo / p.scale);
  p.zero_point = std::int32_t(std::clamp(zp, double(p.qmin()), double(p.qmax())));
  return p;
}

std::int32_t quantize_value(double x, const QuantParams& p) {
  const double q = round_half_away(x / p.scale) + double(p.zero_point);
  return std::int32_t(std::clamp(q, double(p.qmin()), double(p.qmax())));
}

double dequantize_value(std::int32_t q, const QuantParams& p) {
  return double(std::int64_t(q) - p.zero_point) * p.scale;
}

std::vector<std::int32_t> quantize_tensor(const Tensor& x, const QuantParams& p) {
  p.validate();
  std::vector<std::int32_t> q(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) q[i] = quantize_value(x[i], p);
  return q;
}

Tensor dequantize_tensor(std::span<const std::int32_t> q, const Shape& shape, const QuantParams& p) {
  p.validate();
  Tensor t(shape);
  if (t.size() != q.size()) throw InvalidArgument("dequantize_tensor: size does not match shape");
  for (std::size_t i = 0; i < q.size(); ++i) t[i] = float(dequantize_value(q[i], p));
  return t;
}

Requant Requant::from_real(double m) {
  if (!(m >= 0.0) || !std::isfinite(m)) throw InvalidArgument("requant multiplier must be >= 0");
  if (m == 0.0) return {};
  int e = 0;
  const double frac = std::frexp(m, &e);
  auto q = std::int64_t(std::llround(frac * 2147483648.0));
  if (q == (std::int64_t{1} << 31)) {
    q /= 2;
    ++e;
  }
  return {std::int32_t(q), e};
}

double Requant::real() const noexcept { return std::ldexp(double(multiplier), exponent - 31); }

std::int64_t apply_requant(std::int64_t acc, const Requant& m) {
  const __int128 n = (__int128)acc * m.multiplier;
  const int r = 31 - m.exponent;
  if (r >= 1) return rounding_shift(n, r);
  if (-r > 30) throw InternalOverflow("requantization multiplier too large");
  const __int128 v = n * ((__int128)1 << -r);
  if (v > INT64_MAX || v < INT64_MIN) throw InternalOverflow("requantization result out of range");
  return std::int64_t(v);
}

const QuantParams& QuantizedModel::params_of(int producer) const {
  return producer < 0 ? input : layers.at(std::size_t(producer)).output;
}

Calibration calibrate(const ModelGraph& model, const Dataset& calibration, int bits) {
  check_bits(bits);
  if (calibration.empty()) throw InvalidArgument("calibrate: empty calibration set");
  const std::size_t n = model.layers().size();
  double in_lo = INFINITY, in_hi = -INFINITY;
  std::vector<double> lo(n, INFINITY), hi(n, -INFINITY);
  for (const auto& x : calibration.images) {
    for (float v : x.data()) {
      in_lo = std::min(in_lo, double(v));
      in_hi = std::max(in_hi, double(v));
    }
    const auto outs = model.forward_all(x);
    for (std::size_t i = 0; i < n; ++i)
      for (float v : outs[i].data()) {
        lo[i] = std::min(lo[i], double(v));
        hi[i] = std::max(hi[i], double(v));
      }
  }
  const bool sym = bits == 16;
  Calibration cal;
  cal.input = choose_params(in_lo, in_hi, bits, sym);
  cal.outputs.resize(n);
  cal.weights.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& l = model.layers()[i];
    switch (l.kind) {
      case LayerKind::MaxPool:
      case LayerKind::AvgPool:
      case LayerKind::Flatten:
        cal.outputs[i] = l.inputs[0] < 0 ? cal.input : cal.outputs[std::size_t(l.inputs[0])];
        break;
      default: cal.outputs[i] = choose_params(lo[i], hi[i], bits, sym); break;
    }
    cal.weights[i].bits = bits;
    cal.weights[i].symmetric = true;
    if (l.has_params()) {
      const auto& w = model.params(i)[0];
      double wlo = 0.0, whi = 0.0;
      for (float v : w.data()) {
        wlo = std::min(wlo, double(v));
        whi = std::max(whi, double(v));
      }
      cal.weights[i] = choose_params(wlo, whi, bits, true);
    }
  }
  return cal;
}

QuantizedModel quantize_model(const ModelGraph& model, const Calibration& cal, int bits) {
  check_bits(bits);
  const std::size_t n = model.layers().size();
  if (cal.outputs.size() != n || cal.weights.size() != n) {
    throw InvalidArgument("quantize_model: calibration does not match the model");
  }
  QuantizedModel qm;
  qm.input_shape = model.input_shape();
  qm.classes = model.classes();
  qm.bits = bits;
  qm.input = cal.input;
  qm.metadata = model.metadata();
  qm.input.validate();
  for (std::size_t i = 0; i < n; ++i) {
    const auto& l = model.layers()[i];
    QuantizedLayer L;
    L.spec = l;
    L.output_shape = model.output_shape(i);
    L.output = cal.outputs[i];
    L.output.validate();
    if (L.output.bits != bits || qm.input.bits != bits) {
      throw InvalidArgument("quantize_model: calibration bit-width does not match");
    }
    const QuantParams& in = qm.params_of(l.inputs[0]);
    switch (l.kind) {
      case LayerKind::Conv2d:
      case LayerKind::DepthwiseConv2d:
      case LayerKind::Dense: {
        const Tensor& w = model.params(i)[0];
        const Tensor& b = model.params(i)[1];
        L.weight_params = cal.weights[i];
        L.weight_shape = w.shape();
        L.weights = quantize_tensor(w, L.weight_params);
        L.bias_shape = b.shape();
        const double bias_scale = in.scale * L.weight_params.scale;
        for (float v : b.data()) {
          const double q = round_half_away(double(v) / bias_scale);
          if (!(std::abs(q) < 9.2e18)) {
            throw InternalOverflow(layer_label(i, l) + ": bias does not fit the accumulator");
          }
          L.bias.push_back(std::int64_t(q));
        }
        L.requant = {Requant::from_real(bias_scale / L.output.scale)};
        break;
      }
      case LayerKind::Relu: L.requant = {Requant::from_real(in.scale / L.output.scale)}; break;
      case LayerKind::Add:
        L.requant = {Requant::from_real(in.scale / L.output.scale),
                     Requant::from_real(qm.params_of(l.inputs[1]).scale / L.output.scale)};
        break;
      default:
        if (!(L.output == in)) {
          throw InvalidArgument(layer_label(i, l) + ": must share its input's quant params");
        }
        break;
    }
    qm.layers.push_back(std::move(L));
  }
  return qm;
}

QuantizedModel quantize_model(const ModelGraph& model, const Dataset& calibration, int bits) {
  check_bits(bits);
  return quantize_model(model, calibrate(model, calibration, bits), bits);
}

IntegerOutput integer_infer(const QuantizedModel& qm, const Tensor& x) {
  check_model_input(qm, x);
  const bool narrow = qm.bits == 8;
  std::vector<std::vector<std::int32_t>> act(qm.layers.size());
  const std::vector<std::int32_t> input = quantize_tensor(x, qm.input);
  for (std::size_t i = 0; i < qm.layers.size(); ++i) {
    const QuantizedLayer& L = qm.layers[i];
    const std::string where = layer_label(i, L.spec);
    const int src = L.spec.inputs[0];
    const auto& in = src < 0 ? input : act[std::size_t(src)];
    const QuantParams& ip = qm.params_of(src);
    const QuantParams& op = L.output;
    auto& out = act[i];
    out.assign(shape_size(L.output_shape), 0);
    Accumulator acc{narrow, &where};
    switch (L.spec.kind) {
      case LayerKind::Conv2d:
      case LayerKind::DepthwiseConv2d:
        conv_loop(
            geometry(shape_of(qm, src), L), L.spec.kind == LayerKind::DepthwiseConv2d,
            [&](std::size_t o) { acc.start(L.bias[o]); },
            [&](std::size_t xi, std::size_t wi) {
              acc.add(std::int64_t(in[xi] - ip.zero_point) * L.weights[wi]);
            },
            [&](std::size_t oi) { out[oi] = saturate(op.zero_point + apply_requant(acc.v, L.requant[0]), op); });
        break;
      case LayerKind::Dense: {
        const std::size_t N = in.size();
        for (std::size_t m = 0; m < out.size(); ++m) {
          acc.start(L.bias[m]);
          for (std::size_t k = 0; k < N; ++k)
            acc.add(std::int64_t(in[k] - ip.zero_point) * L.weights[m * N + k]);
          out[m] = saturate(op.zero_point + apply_requant(acc.v, L.requant[0]), op);
        }
        break;
      }
      case LayerKind::Relu:
        for (std::size_t k = 0; k < out.size(); ++k) {
          const std::int64_t v = std::max<std::int64_t>(in[k] - ip.zero_point, 0);
          out[k] = saturate(op.zero_point + apply_requant(v, L.requant[0]), op);
        }
        break;
      case LayerKind::MaxPool:
        pool_loop(shape_of(qm, src), L, [&](std::size_t oi, const std::vector<std::size_t>& w) {
          std::int32_t m = in[w[0]];
          for (auto j : w) m = std::max(m, in[j]);
          out[oi] = m;
        });
        break;
      case LayerKind::AvgPool:
        pool_loop(shape_of(qm, src), L, [&](std::size_t oi, const std::vector<std::size_t>& w) {
          std::int64_t s = 0;
          for (auto j : w) s += in[j] - ip.zero_point;
          out[oi] = saturate(op.zero_point + rounding_div(s, std::int64_t(w.size())), op);
        });
        break;
      case LayerKind::Flatten: out = in; break;
      case LayerKind::Add: {
        const int src_b = L.spec.inputs[1];
        const auto& inb = src_b < 0 ? input : act[std::size_t(src_b)];
        const QuantParams& bp = qm.params_of(src_b);
        const Requant &ma = L.requant[0], &mb = L.requant[1];
        // Align both fixed-point products to one exponent, then round once.
        const int ra = 31 - ma.exponent, rb = 31 - mb.exponent;
        const int r = std::max({ra, rb, 1});
        if (r - ra > 64 || r - rb > 64) throw InternalOverflow(where + ": operand scales too far apart");
        for (std::size_t k = 0; k < out.size(); ++k) {
          const __int128 a = (__int128)(std::int64_t(in[k]) - ip.zero_point) * ma.multiplier;
          const __int128 b = (__int128)(std::int64_t(inb[k]) - bp.zero_point) * mb.multiplier;
          const __int128 sum = a * ((__int128)1 << (r - ra)) + b * ((__int128)1 << (r - rb));
          out[k] = saturate(op.zero_point + rounding_shift(sum, r), op);
        }
        break;
      }
    }
  }
  IntegerOutput res;
  res.codes = act.back();
  res.logits = dequantize_tensor(res.codes, qm.layers.back().output_shape, qm.layers.back().output);
  res.probabilities = ops::softmax(res.logits);
  return res;
}

int integer_predict(const QuantizedModel& qm, const Tensor& x) {
  const auto out = integer_infer(qm, x);
  return int(std::max_element(out.codes.begin(), out.codes.end()) - out.codes.begin());
}

Tensor fake_quant_infer(const QuantizedModel& qm, const Tensor& x) {
  check_model_input(qm, x);
  std::vector<double> input(x.size());
  for (std::size_t k = 0; k < x.size(); ++k) input[k] = fake_quant(x[k], qm.input);
  std::vector<LayerSpec> specs;
  std::vector<Shape> shapes;
  for (const auto& L : qm.layers) {
    specs.push_back(L.spec);
    shapes.push_back(L.output_shape);
  }
  const auto act = detail::reference_forward(
      specs, qm.input_shape, shapes, input,
      [&](std::size_t i, std::size_t k) {
        return dequantize_value(qm.layers[i].weights[k], qm.layers[i].weight_params);
      },
      [&](std::size_t i, std::size_t k) {
        const auto& L = qm.layers[i];
        return double(L.bias[k]) * qm.params_of(L.spec.inputs[0]).scale * L.weight_params.scale;
      },
      [&](std::size_t i, double y) { return fake_quant(y, qm.layers[i].output); });
  Tensor logits(qm.layers.back().output_shape);
  for (std::size_t k = 0; k < logits.size(); ++k) logits[k] = float(act.back()[k]);
  return logits;
}

ModelGraph dequantize_model(const QuantizedModel& qm) {
  std::vector<LayerSpec> specs;
  std::vector<std::vector<Tensor>> params;
  for (const auto& L : qm.layers) {
    specs.push_back(L.spec);
    std::vector<Tensor> ps;
    if (L.spec.has_params()) {
      const QuantParams& ip = qm.params_of(L.spec.inputs[0]);
      ps.push_back(dequantize_tensor(L.weights, L.weight_shape, L.weight_params));
      Tensor b(L.bias_shape);
      for (std::size_t k = 0; k < L.bias.size(); ++k)
        b[k] = float(double(L.bias[k]) * ip.scale * L.weight_params.scale);
      ps.push_back(std::move(b));
    }
    params.push_back(std::move(ps));
  }
  ModelGraph m(qm.input_shape, qm.classes, std::move(specs), std::move(params));
  m.metadata() = qm.metadata;
  return m;
}

Tensor quantize_adversarial_input(const Tensor& x_adv, const QuantizedModel& qm) {
  return dequantize_tensor(quantize_tensor(x_adv, qm.input), x_adv.shape(), qm.input);
}

namespace {

void write_params(ByteWriter& w, const QuantParams& p) {
  w.f64(p.scale);
  w.i32(p.zero_point);
  w.u8(std::uint8_t(p.bits));
  w.u8(p.symmetric ? 1 : 0);
}

QuantParams read_params(ByteReader& r) {
  const std::size_t at = r.offset();
  QuantParams p;
  p.scale = r.f64();
  p.zero_point = r.i32();
  p.bits = r.u8();
  p.symmetric = r.u8() != 0;
  try {
    p.validate();
  } catch (const InvalidArgument& e) {
    throw FormatError("invalid quant params at byte offset " + std::to_string(at) + ": " + e.what());
  }
  return p;
}

}  // namespace

std::vector<std::uint8_t> encode_quantized_model(const QuantizedModel& qm) {
  ByteWriter w;
  write_container_header(w, PayloadKind::Quantized);
  write_model_body(w, dequantize_model(qm));
  w.i32(qm.bits);
  write_params(w, qm.input);
  w.u32(std::uint32_t(qm.layers.size()));
  for (const auto& L : qm.layers) {
    write_params(w, L.weight_params);
    write_params(w, L.output);
    w.u64(L.weights.size());
    for (auto v : L.weights) w.i32(v);
    w.u64(L.bias.size());
    for (auto v : L.bias) w.i64(v);
    w.u32(std::uint32_t(L.requant.size()));
    for (const auto& m : L.requant) {
      w.i32(m.multiplier);
      w.i32(m.exponent);
    }
  }
  return w.buffer();
}

QuantizedModel decode_quantized_model(std::vector<std::uint8_t> bytes) {
  ByteReader r(std::move(bytes));
  if (read_container_header(r) != PayloadKind::Quantized) {
    r.fail("container holds a float model; use load_model");
  }
  const ModelGraph g = read_model_body(r);
  QuantizedModel qm;
  qm.input_shape = g.input_shape();
  qm.classes = g.classes();
  qm.metadata = g.metadata();
  qm.bits = r.i32();
  if (qm.bits != 8 && qm.bits != 16) r.fail("unsupported bit-width " + std::to_string(qm.bits));
  qm.input = read_params(r);
  if (r.u32() != g.layers().size()) r.fail("quantization section layer count does not match graph");
  for (std::size_t i = 0; i < g.layers().size(); ++i) {
    QuantizedLayer L;
    L.spec = g.layers()[i];
    L.output_shape = g.output_shape(i);
    L.weight_params = read_params(r);
    L.output = read_params(r);
    const auto nw = r.u64();
    const std::size_t expect_w = L.spec.has_params() ? g.params(i)[0].size() : 0;
    if (nw != expect_w) r.fail("weight code count does not match graph");
    for (std::uint64_t k = 0; k < nw; ++k) L.weights.push_back(r.i32());
    const auto nb = r.u64();
    const std::size_t expect_b = L.spec.has_params() ? g.params(i)[1].size() : 0;
    if (nb != expect_b) r.fail("bias code count does not match graph");
    for (std::uint64_t k = 0; k < nb; ++k) L.bias.push_back(r.i64());
    if (L.spec.has_params()) {
      L.weight_shape = g.params(i)[0].shape();
      L.bias_shape = g.params(i)[1].shape();
    }
    const auto nr = r.u32();
    const std::uint32_t expect_r = L.spec.kind == LayerKind::Add                                ? 2
                                   : L.spec.has_params() || L.spec.kind == LayerKind::Relu ? 1
                                                                                           : 0;
    if (nr != expect_r) r.fail("requantization multiplier count does not match layer kind");
    for (std::uint32_t k = 0; k < nr; ++k) {
      Requant m;
      m.multiplier = r.i32();
      m.exponent = r.i32();
      L.requant.push_back(m);
    }
    qm.layers.push_back(std::move(L));
  }
  if (!r.at_end()) r.fail("trailing bytes after quantized model");
  return qm;
}

void save_quantized_model(const QuantizedModel& qm, const std::filesystem::path& path) {
  write_file(path, encode_quantized_model(qm));
}

QuantizedModel load_quantized_model(const std::filesystem::path& path) {
  return decode_quantized_model(read_file(path));
}

}  // namespace qadv
