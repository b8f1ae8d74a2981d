#pragma once

#include <cstdint>
#include <filesystem>

#include "qadv/io.hpp"
#include "qadv/model.hpp"

namespace qadv {

// Model container layout (little-endian):
//   "QADV" | u32 version | u8 payload kind (0 float, 1 quantized)
//   | str graph JSON | u32 tensor count | raw tensors | str metadata JSON
//   | quantization section (payload kind 1 only)
inline constexpr std::uint32_t kModelFormatVersion = 1;

enum class PayloadKind : std::uint8_t { Float = 0, Quantized = 1 };

void save_model(const ModelGraph& model, const std::filesystem::path& path);
ModelGraph load_model(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_model(const ModelGraph& model);
ModelGraph decode_model(std::vector<std::uint8_t> bytes);

// Shared with the quantized container.
void write_container_header(ByteWriter& w, PayloadKind kind);
PayloadKind read_container_header(ByteReader& r);
void write_model_body(ByteWriter& w, const ModelGraph& model);
ModelGraph read_model_body(ByteReader& r);

}  // namespace qadv
