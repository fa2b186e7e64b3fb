#pragma once

// Model persistence: a JSON envelope carrying the converter spec, the init
// seed, and every parameter tensor as little-endian float64 bytes in base64.
// Round trips restore parameters bit-exactly.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "cbc/converter.hpp"
#include "cbc/spec_json.hpp"

namespace cbc {

inline constexpr int checkpoint_format_version = 1;

namespace detail {

inline constexpr char base64_alphabet[] =
    "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

inline std::string base64_encode(const std::vector<std::uint8_t>& bytes) {
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 3 <= bytes.size(); i += 3) {
    const std::uint32_t v = (static_cast<std::uint32_t>(bytes[i]) << 16) |
                            (static_cast<std::uint32_t>(bytes[i + 1]) << 8) | bytes[i + 2];
    out.push_back(base64_alphabet[(v >> 18) & 63]);
    out.push_back(base64_alphabet[(v >> 12) & 63]);
    out.push_back(base64_alphabet[(v >> 6) & 63]);
    out.push_back(base64_alphabet[v & 63]);
  }
  const std::size_t rest = bytes.size() - i;
  if (rest == 1) {
    const std::uint32_t v = static_cast<std::uint32_t>(bytes[i]) << 16;
    out.push_back(base64_alphabet[(v >> 18) & 63]);
    out.push_back(base64_alphabet[(v >> 12) & 63]);
    out.push_back('=');
    out.push_back('=');
  } else if (rest == 2) {
    const std::uint32_t v = (static_cast<std::uint32_t>(bytes[i]) << 16) |
                            (static_cast<std::uint32_t>(bytes[i + 1]) << 8);
    out.push_back(base64_alphabet[(v >> 18) & 63]);
    out.push_back(base64_alphabet[(v >> 12) & 63]);
    out.push_back(base64_alphabet[(v >> 6) & 63]);
    out.push_back('=');
  }
  return out;
}

inline std::vector<std::uint8_t> base64_decode(const std::string& text) {
  if (text.size() % 4 != 0) {
    throw std::runtime_error("base64: length " + std::to_string(text.size()) +
                             " is not a multiple of 4");
  }
  std::array<int, 256> lookup;
  lookup.fill(-1);
  for (int i = 0; i < 64; ++i) {
    lookup[static_cast<unsigned char>(base64_alphabet[i])] = i;
  }
  std::vector<std::uint8_t> out;
  out.reserve(text.size() / 4 * 3);
  for (std::size_t i = 0; i < text.size(); i += 4) {
    int vals[4];
    int pad = 0;
    for (int k = 0; k < 4; ++k) {
      const char c = text[i + k];
      if (c == '=') {
        // Padding may only occupy the final one or two positions.
        if (i + 4 != text.size() || k < 2) throw std::runtime_error("base64: stray padding");
        vals[k] = 0;
        ++pad;
      } else {
        if (pad > 0) throw std::runtime_error("base64: data after padding");
        vals[k] = lookup[static_cast<unsigned char>(c)];
        if (vals[k] < 0) {
          throw std::runtime_error(std::string("base64: invalid character '") + c + "'");
        }
      }
    }
    const std::uint32_t v = (static_cast<std::uint32_t>(vals[0]) << 18) |
                            (static_cast<std::uint32_t>(vals[1]) << 12) |
                            (static_cast<std::uint32_t>(vals[2]) << 6) |
                            static_cast<std::uint32_t>(vals[3]);
    out.push_back(static_cast<std::uint8_t>((v >> 16) & 0xff));
    if (pad < 2) out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xff));
    if (pad < 1) out.push_back(static_cast<std::uint8_t>(v & 0xff));
  }
  return out;
}

/// Serializes doubles as little-endian bytes regardless of host order.
inline std::vector<std::uint8_t> doubles_to_le_bytes(const std::vector<double>& values) {
  std::vector<std::uint8_t> bytes(values.size() * 8);
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint64_t u;
    std::memcpy(&u, &values[i], 8);
    if constexpr (std::endian::native == std::endian::big) {
      u = __builtin_bswap64(u);
    }
    for (int k = 0; k < 8; ++k) bytes[i * 8 + k] = static_cast<std::uint8_t>((u >> (8 * k)) & 0xff);
  }
  return bytes;
}

inline std::vector<double> doubles_from_le_bytes(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() % 8 != 0) {
    throw std::runtime_error("checkpoint payload is not a whole number of float64 values");
  }
  std::vector<double> values(bytes.size() / 8);
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint64_t u = 0;
    for (int k = 0; k < 8; ++k) u |= static_cast<std::uint64_t>(bytes[i * 8 + k]) << (8 * k);
    if constexpr (std::endian::native == std::endian::big) {
      u = __builtin_bswap64(u);
    }
    std::memcpy(&values[i], &u, 8);
  }
  return values;
}

}  // namespace detail

inline json checkpoint_to_json(const Model& model) {
  json params = json::array();
  for (const Parameter& p : model.params) {
    params.push_back(json{{"shape", p.tensor.shape},
                          {"data", detail::base64_encode(detail::doubles_to_le_bytes(p.tensor.data))}});
  }
  return json{{"format_version", checkpoint_format_version},
              {"spec", converter_spec_to_json(model.spec)},
              {"init_seed", model.init_seed},
              {"params", std::move(params)}};
}

inline Model checkpoint_from_json(const json& j) {
  if (!j.is_object() || !j.contains("format_version")) {
    throw std::runtime_error("checkpoint: missing format_version");
  }
  const int version = j.at("format_version").get<int>();
  if (version != checkpoint_format_version) {
    throw std::runtime_error("checkpoint: format_version " + std::to_string(version) +
                             " is not supported (expected " +
                             std::to_string(checkpoint_format_version) + ")");
  }
  detail::reject_unknown_keys(j, {"format_version", "spec", "init_seed", "params"}, "checkpoint");
  const ConverterSpec spec =
      converter_spec_from_json(detail::require_field(j, "spec", "checkpoint"), "checkpoint.spec");
  const json& seed_json = detail::require_field(j, "init_seed", "checkpoint");
  if (!seed_json.is_number_integer() && !seed_json.is_number_unsigned()) {
    throw std::runtime_error("checkpoint: init_seed must be an integer");
  }
  const auto init_seed = seed_json.get<std::uint64_t>();

  // Rebuild through the normal constructor so slot layout and shapes come
  // from the spec itself, then overwrite the freshly drawn values.
  Model model = build_converter(spec, init_seed);
  const json& params = detail::require_field(j, "params", "checkpoint");
  if (!params.is_array() || params.size() != model.params.size()) {
    throw std::runtime_error("checkpoint: expected " + std::to_string(model.params.size()) +
                             " parameter tensors, found " +
                             std::to_string(params.is_array() ? params.size() : 0));
  }
  for (std::size_t i = 0; i < model.params.size(); ++i) {
    const json& entry = params[i];
    detail::reject_unknown_keys(entry, {"shape", "data"},
                                "checkpoint.params[" + std::to_string(i) + "]");
    const auto shape = detail::get_int_array(entry, "shape",
                                             "checkpoint.params[" + std::to_string(i) + "]");
    if (shape != model.params[i].tensor.shape) {
      throw std::runtime_error("checkpoint: parameter " + std::to_string(i) + " has shape " +
                               shape_to_string(shape) + " but the spec requires " +
                               shape_to_string(model.params[i].tensor.shape));
    }
    const std::vector<double> values = detail::doubles_from_le_bytes(detail::base64_decode(
        detail::get_string(entry, "data", "checkpoint.params[" + std::to_string(i) + "]")));
    if (values.size() != model.params[i].tensor.data.size()) {
      throw std::runtime_error("checkpoint: parameter " + std::to_string(i) + " payload holds " +
                               std::to_string(values.size()) + " values but shape " +
                               shape_to_string(shape) + " requires " +
                               std::to_string(model.params[i].tensor.data.size()));
    }
    model.params[i].tensor.data = values;
    model.params[i].tensor.grad.clear();
    model.params[i].adam_m.assign(values.size(), 0.0);
    model.params[i].adam_v.assign(values.size(), 0.0);
    model.params[i].step_count = 0;
  }
  return model;
}

inline void save_checkpoint(const Model& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path + " for writing");
  out << checkpoint_to_json(model).dump(2) << '\n';
  if (!out) throw std::runtime_error("save_checkpoint: write to " + path + " failed");
}

inline Model load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  json j;
  try {
    j = json::parse(buffer.str());
  } catch (const json::parse_error& e) {
    throw std::runtime_error("load_checkpoint: " + path + " is not valid JSON: " + e.what());
  }
  return checkpoint_from_json(j);
}

/// Loads and additionally requires the embedded spec to equal `expected`
/// (exact field-level comparison via the JSON encoding).
inline Model load_checkpoint(const std::string& path, const ConverterSpec& expected) {
  Model model = load_checkpoint(path);
  if (converter_spec_to_json(model.spec) != converter_spec_to_json(expected)) {
    throw std::runtime_error("load_checkpoint: checkpoint spec \"" + model.spec.name +
                             "\" does not match the expected converter \"" + expected.name +
                             "\"");
  }
  return model;
}

}  // namespace cbc
