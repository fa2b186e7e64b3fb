#pragma once

// JSON encoding of converter and training specs. Field names are stable;
// parsers reject unknown keys so typos surface as errors instead of
// silently-ignored settings.

#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "cbc/converter.hpp"

namespace cbc {

using json = nlohmann::json;

namespace detail {

[[noreturn]] inline void json_error(const std::string& context, const std::string& what) {
  throw std::invalid_argument(context + ": " + what);
}

inline void require_object(const json& j, const std::string& context) {
  if (!j.is_object()) json_error(context, "expected an object, got " + std::string(j.type_name()));
}

/// Rejects keys outside the allowed set, naming the offender and its path.
inline void reject_unknown_keys(const json& j, std::initializer_list<const char*> allowed,
                                const std::string& context) {
  require_object(j, context);
  for (const auto& [key, value] : j.items()) {
    bool known = false;
    for (const char* a : allowed) {
      if (key == a) {
        known = true;
        break;
      }
    }
    if (!known) json_error(context, "unknown key \"" + key + "\"");
  }
}

inline const json& require_field(const json& j, const char* key, const std::string& context) {
  const auto it = j.find(key);
  if (it == j.end()) json_error(context, "missing required key \"" + std::string(key) + "\"");
  return *it;
}

inline int get_int(const json& j, const char* key, const std::string& context) {
  const json& v = require_field(j, key, context);
  if (!v.is_number_integer()) json_error(context + "." + key, "expected an integer");
  return v.get<int>();
}

inline int get_int_or(const json& j, const char* key, int fallback, const std::string& context) {
  if (!j.contains(key)) return fallback;
  return get_int(j, key, context);
}

inline double get_double(const json& j, const char* key, const std::string& context) {
  const json& v = require_field(j, key, context);
  if (!v.is_number()) json_error(context + "." + key, "expected a number");
  return v.get<double>();
}

inline double get_double_or(const json& j, const char* key, double fallback,
                            const std::string& context) {
  if (!j.contains(key)) return fallback;
  return get_double(j, key, context);
}

inline std::string get_string(const json& j, const char* key, const std::string& context) {
  const json& v = require_field(j, key, context);
  if (!v.is_string()) json_error(context + "." + key, "expected a string");
  return v.get<std::string>();
}

inline std::vector<int> get_int_array(const json& j, const char* key, const std::string& context) {
  const json& v = require_field(j, key, context);
  if (!v.is_array()) json_error(context + "." + key, "expected an array of integers");
  std::vector<int> out;
  out.reserve(v.size());
  for (const json& e : v) {
    if (!e.is_number_integer()) json_error(context + "." + key, "expected an array of integers");
    out.push_back(e.get<int>());
  }
  return out;
}

}  // namespace detail

inline json noise_to_json(const NoiseSpec& noise) {
  return json{{"shape", noise.shape}, {"mean", noise.mean}, {"stddev", noise.stddev}};
}

inline NoiseSpec noise_from_json(const json& j, const std::string& context = "noise") {
  detail::reject_unknown_keys(j, {"shape", "mean", "stddev"}, context);
  NoiseSpec noise;
  noise.shape = detail::get_int_array(j, "shape", context);
  noise.mean = detail::get_double_or(j, "mean", 0.0, context);
  noise.stddev = detail::get_double_or(j, "stddev", 1.0, context);
  noise.validate();
  return noise;
}

inline json layer_to_json(const LayerSpec& layer) {
  json j{{"kind", to_string(layer.kind)}};
  switch (layer.kind) {
    case LayerSpec::Kind::affine:
      j["n_out"] = layer.n_out;
      break;
    case LayerSpec::Kind::reshape:
      j["dims"] = layer.dims;
      break;
    case LayerSpec::Kind::conv1d:
    case LayerSpec::Kind::conv_transpose1d:
    case LayerSpec::Kind::conv2d:
    case LayerSpec::Kind::conv_transpose2d:
      j["channels_out"] = layer.channels_out;
      j["kernel"] = layer.kernel;
      j["stride"] = layer.stride;
      j["padding"] = layer.padding;
      break;
    case LayerSpec::Kind::upsample2d:
      j["factor"] = layer.factor;
      break;
    case LayerSpec::Kind::activation:
      j["act"] = to_string(layer.act);
      break;
  }
  return j;
}

inline LayerSpec layer_from_json(const json& j, const std::string& context = "layer") {
  detail::require_object(j, context);
  const std::string kind = detail::get_string(j, "kind", context);
  if (kind == "affine") {
    detail::reject_unknown_keys(j, {"kind", "n_out"}, context);
    return LayerSpec::affine(detail::get_int(j, "n_out", context));
  }
  if (kind == "reshape") {
    detail::reject_unknown_keys(j, {"kind", "dims"}, context);
    return LayerSpec::reshape(detail::get_int_array(j, "dims", context));
  }
  if (kind == "conv1d" || kind == "conv_transpose1d" || kind == "conv2d" ||
      kind == "conv_transpose2d") {
    detail::reject_unknown_keys(j, {"kind", "channels_out", "kernel", "stride", "padding"},
                                context);
    const int channels_out = detail::get_int(j, "channels_out", context);
    const int kernel = detail::get_int(j, "kernel", context);
    const int stride = detail::get_int_or(j, "stride", 1, context);
    const int padding = detail::get_int_or(j, "padding", 0, context);
    if (kind == "conv1d") return LayerSpec::conv1d(channels_out, kernel, stride, padding);
    if (kind == "conv_transpose1d") {
      return LayerSpec::conv_transpose1d(channels_out, kernel, stride, padding);
    }
    if (kind == "conv2d") return LayerSpec::conv2d(channels_out, kernel, stride, padding);
    return LayerSpec::conv_transpose2d(channels_out, kernel, stride, padding);
  }
  if (kind == "upsample2d") {
    detail::reject_unknown_keys(j, {"kind", "factor"}, context);
    return LayerSpec::upsample2d(detail::get_int(j, "factor", context));
  }
  if (kind == "activation") {
    detail::reject_unknown_keys(j, {"kind", "act"}, context);
    return LayerSpec::activation(activation_from_string(detail::get_string(j, "act", context)));
  }
  detail::json_error(context, "unknown layer kind \"" + kind + "\"");
}

inline json converter_spec_to_json(const ConverterSpec& spec) {
  json layers = json::array();
  for (const LayerSpec& layer : spec.layers) layers.push_back(layer_to_json(layer));
  return json{{"name", spec.name},
              {"noise", noise_to_json(spec.noise)},
              {"layers", std::move(layers)},
              {"output_activation",
               spec.output_activation == OutputActivation::sigmoid ? "sigmoid" : "none"}};
}

inline ConverterSpec converter_spec_from_json(const json& j,
                                              const std::string& context = "converter") {
  detail::reject_unknown_keys(j, {"name", "noise", "layers", "output_activation"}, context);
  ConverterSpec spec;
  if (j.contains("name")) spec.name = detail::get_string(j, "name", context);
  spec.noise = noise_from_json(detail::require_field(j, "noise", context), context + ".noise");
  const json& layers = detail::require_field(j, "layers", context);
  if (!layers.is_array()) detail::json_error(context + ".layers", "expected an array");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    spec.layers.push_back(
        layer_from_json(layers[i], context + ".layers[" + std::to_string(i) + "]"));
  }
  if (j.contains("output_activation")) {
    const std::string out = detail::get_string(j, "output_activation", context);
    if (out == "sigmoid") {
      spec.output_activation = OutputActivation::sigmoid;
    } else if (out == "none") {
      spec.output_activation = OutputActivation::none;
    } else {
      detail::json_error(context + ".output_activation",
                         "expected \"none\" or \"sigmoid\", got \"" + out + "\"");
    }
  }
  return spec;
}

inline json train_config_to_json(const TrainConfig& cfg) {
  return json{{"max_steps", cfg.max_steps},
              {"batch_size", cfg.batch_size},
              {"adam",
               json{{"lr", cfg.adam.lr},
                    {"beta1", cfg.adam.beta1},
                    {"beta2", cfg.adam.beta2},
                    {"eps", cfg.adam.eps}}},
              {"convergence_tol", cfg.convergence_tol},
              {"patience", cfg.patience},
              {"seed", cfg.seed}};
}

inline TrainConfig train_config_from_json(const json& j, const std::string& context = "train") {
  detail::reject_unknown_keys(
      j, {"max_steps", "batch_size", "adam", "convergence_tol", "patience", "seed"}, context);
  TrainConfig cfg;
  cfg.max_steps = detail::get_int_or(j, "max_steps", cfg.max_steps, context);
  cfg.batch_size = detail::get_int_or(j, "batch_size", cfg.batch_size, context);
  if (j.contains("adam")) {
    const json& a = j.at("adam");
    const std::string actx = context + ".adam";
    detail::reject_unknown_keys(a, {"lr", "beta1", "beta2", "eps"}, actx);
    cfg.adam.lr = detail::get_double_or(a, "lr", cfg.adam.lr, actx);
    cfg.adam.beta1 = detail::get_double_or(a, "beta1", cfg.adam.beta1, actx);
    cfg.adam.beta2 = detail::get_double_or(a, "beta2", cfg.adam.beta2, actx);
    cfg.adam.eps = detail::get_double_or(a, "eps", cfg.adam.eps, actx);
  }
  cfg.convergence_tol = detail::get_double_or(j, "convergence_tol", cfg.convergence_tol, context);
  cfg.patience = detail::get_int_or(j, "patience", cfg.patience, context);
  if (j.contains("seed")) {
    const json& s = j.at("seed");
    if (!s.is_number_integer() && !s.is_number_unsigned()) {
      detail::json_error(context + ".seed", "expected an integer");
    }
    cfg.seed = s.get<std::uint64_t>();
  }
  cfg.validate();
  return cfg;
}

}  // namespace cbc
