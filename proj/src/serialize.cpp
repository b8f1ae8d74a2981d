#include "qadv/serialize.hpp"

#include <json.hpp>

#include "qadv/error.hpp"

namespace qadv {

using nlohmann::json;

namespace {

json graph_to_json(const ModelGraph& m) {
  json layers = json::array();
  for (const auto& l : m.layers()) {
    layers.push_back({{"kind", std::string(layer_kind_name(l.kind))},
                      {"inputs", l.inputs},
                      {"out_channels", l.out_channels},
                      {"units", l.units},
                      {"kernel", l.kernel},
                      {"stride", l.stride},
                      {"padding", l.padding}});
  }
  return {{"input_shape", m.input_shape()}, {"classes", m.classes()}, {"layers", layers}};
}

}  // namespace

void write_container_header(ByteWriter& w, PayloadKind kind) {
  w.bytes("QADV");
  w.u32(kModelFormatVersion);
  w.u8(std::uint8_t(kind));
}

PayloadKind read_container_header(ByteReader& r) {
  if (r.bytes(4) != "QADV") r.fail("bad model magic (expected \"QADV\")");
  const auto version = r.u32();
  if (version != kModelFormatVersion) {
    r.fail("model format version " + std::to_string(version) + " is not supported (expected version " +
           std::to_string(kModelFormatVersion) + ")");
  }
  const auto kind = r.u8();
  if (kind > 1) r.fail("unknown payload kind " + std::to_string(kind));
  return PayloadKind(kind);
}

void write_model_body(ByteWriter& w, const ModelGraph& model) {
  w.str(graph_to_json(model).dump());
  std::uint32_t count = 0;
  for (const auto& ps : model.all_params()) count += std::uint32_t(ps.size());
  w.u32(count);
  for (const auto& ps : model.all_params())
    for (const auto& p : ps) encode_raw_tensor(w, p);
  w.str(json(model.metadata()).dump());
}

ModelGraph read_model_body(ByteReader& r) {
  const std::size_t graph_at = r.offset();
  json g;
  Shape input_shape;
  std::size_t classes = 0;
  std::vector<LayerSpec> layers;
  try {
    g = json::parse(r.str());
    input_shape = g.at("input_shape").get<Shape>();
    classes = g.at("classes").get<std::size_t>();
    for (const auto& jl : g.at("layers")) {
      LayerSpec l;
      l.kind = parse_layer_kind(jl.at("kind").get<std::string>());
      l.inputs = jl.at("inputs").get<std::vector<int>>();
      l.out_channels = jl.at("out_channels").get<std::size_t>();
      l.units = jl.at("units").get<std::size_t>();
      l.kernel = jl.at("kernel").get<std::size_t>();
      l.stride = jl.at("stride").get<std::size_t>();
      l.padding = jl.at("padding").get<std::size_t>();
      layers.push_back(l);
    }
  } catch (const FormatError&) {
    throw;
  } catch (const std::exception& e) {
    throw FormatError(std::string("malformed graph description at byte offset ") +
                      std::to_string(graph_at) + ": " + e.what());
  }
  const auto count = r.u32();
  std::vector<std::vector<Tensor>> params(layers.size());
  std::size_t expected = 0;
  for (const auto& l : layers) expected += l.has_params() ? 2 : 0;
  if (count != expected) {
    r.fail("parameter tensor count " + std::to_string(count) + " does not match graph (" +
           std::to_string(expected) + ")");
  }
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (!layers[i].has_params()) continue;
    params[i].push_back(decode_raw_tensor(r));
    params[i].push_back(decode_raw_tensor(r));
  }
  const std::size_t meta_at = r.offset();
  std::map<std::string, std::string> meta;
  try {
    meta = json::parse(r.str()).get<std::map<std::string, std::string>>();
  } catch (const FormatError&) {
    throw;
  } catch (const std::exception& e) {
    throw FormatError(std::string("malformed metadata at byte offset ") + std::to_string(meta_at) +
                      ": " + e.what());
  }
  try {
    ModelGraph m(input_shape, classes, std::move(layers), std::move(params));
    m.metadata() = std::move(meta);
    return m;
  } catch (const InvalidArgument& e) {
    throw FormatError(std::string("inconsistent model at byte offset ") + std::to_string(graph_at) +
                      ": " + e.what());
  }
}

std::vector<std::uint8_t> encode_model(const ModelGraph& model) {
  ByteWriter w;
  write_container_header(w, PayloadKind::Float);
  write_model_body(w, model);
  return w.buffer();
}

ModelGraph decode_model(std::vector<std::uint8_t> bytes) {
  ByteReader r(std::move(bytes));
  if (read_container_header(r) != PayloadKind::Float) {
    r.fail("container holds a quantized model; use load_quantized_model");
  }
  ModelGraph m = read_model_body(r);
  if (!r.at_end()) r.fail("trailing bytes after model");
  return m;
}

void save_model(const ModelGraph& model, const std::filesystem::path& path) {
  write_file(path, encode_model(model));
}

ModelGraph load_model(const std::filesystem::path& path) { return decode_model(read_file(path)); }

}  // namespace qadv
