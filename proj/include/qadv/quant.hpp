#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "qadv/dataset.hpp"
#include "qadv/model.hpp"

namespace qadv {

// Per-tensor affine quantization: real = (q - zero_point) * scale.
struct QuantParams {
  double scale = 1.0;
  std::int32_t zero_point = 0;
  int bits = 8;
  bool symmetric = false;

  std::int32_t qmin() const noexcept;
  std::int32_t qmax() const noexcept;
  // Throws InvalidArgument on bits other than 8/16, scale <= 0, zero point out
  // of range, or a symmetric set with non-zero zero point.
  void validate() const;
  friend bool operator==(const QuantParams&, const QuantParams&) = default;
};

void check_bits(int bits);

// Params covering [lo, hi] (extended to contain 0). Degenerate range gives
// scale 1, zero point 0.
QuantParams choose_params(double lo, double hi, int bits, bool symmetric);

// Half-away-from-zero rounding, saturated to [qmin, qmax].
std::int32_t quantize_value(double x, const QuantParams& p);
double dequantize_value(std::int32_t q, const QuantParams& p);

std::vector<std::int32_t> quantize_tensor(const Tensor& x, const QuantParams& p);
Tensor dequantize_tensor(std::span<const std::int32_t> q, const Shape& shape, const QuantParams& p);

// Fixed-point real multiplier: value = multiplier * 2^(exponent - 31) with
// multiplier in [2^30, 2^31) (or 0 for a zero multiplier).
struct Requant {
  std::int32_t multiplier = 0;
  int exponent = 0;

  static Requant from_real(double m);
  double real() const noexcept;
  friend bool operator==(const Requant&, const Requant&) = default;
};

// round_half_away(acc * m).
std::int64_t apply_requant(std::int64_t acc, const Requant& m);

struct QuantizedLayer {
  LayerSpec spec;
  Shape output_shape;
  Shape weight_shape;                // empty for parameter-free layers
  std::vector<std::int32_t> weights;
  QuantParams weight_params;
  Shape bias_shape;
  std::vector<std::int64_t> bias;    // quantized at input_scale * weight_scale
  QuantParams output;                // params of this layer's output tensor
  std::vector<Requant> requant;      // one per input (see integer kernels)

  friend bool operator==(const QuantizedLayer&, const QuantizedLayer&) = default;
};

struct QuantizedModel {
  Shape input_shape;
  std::size_t classes = 0;
  int bits = 8;
  QuantParams input;
  std::vector<QuantizedLayer> layers;
  std::map<std::string, std::string> metadata;

  // Params of the tensor consumed through layer input slot -1 or a producer index.
  const QuantParams& params_of(int producer) const;
  friend bool operator==(const QuantizedModel&, const QuantizedModel&) = default;
};

struct Calibration {
  QuantParams input;
  std::vector<QuantParams> outputs;  // per layer
  std::vector<QuantParams> weights;  // per layer (default for parameter-free layers)
};

// Exact min/max over the calibration set. Pooling and flatten layers inherit
// their input's params.
Calibration calibrate(const ModelGraph& model, const Dataset& calibration, int bits);

QuantizedModel quantize_model(const ModelGraph& model, const Dataset& calibration, int bits);
QuantizedModel quantize_model(const ModelGraph& model, const Calibration& cal, int bits);

struct IntegerOutput {
  Tensor logits;                     // dequantized output codes
  Tensor probabilities;              // softmax of logits
  std::vector<std::int32_t> codes;   // raw output codes
};

// Integer-only forward pass. int8 uses int32 accumulators, int16 uses int64;
// InternalOverflow names the layer when an accumulator leaves its range.
IntegerOutput integer_infer(const QuantizedModel& qm, const Tensor& x);
int integer_predict(const QuantizedModel& qm, const Tensor& x);

// Double-precision reference: float forward with quantize-dequantize at every
// tensor boundary. Returns dequantized logits.
Tensor fake_quant_infer(const QuantizedModel& qm, const Tensor& x);

// Float graph carrying the dequantized weights and biases.
ModelGraph dequantize_model(const QuantizedModel& qm);

// The sample the quantized model actually perceives.
Tensor quantize_adversarial_input(const Tensor& x_adv, const QuantizedModel& qm);

void save_quantized_model(const QuantizedModel& qm, const std::filesystem::path& path);
QuantizedModel load_quantized_model(const std::filesystem::path& path);
std::vector<std::uint8_t> encode_quantized_model(const QuantizedModel& qm);
QuantizedModel decode_quantized_model(std::vector<std::uint8_t> bytes);

}  // namespace qadv
