#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "cbc/optimizer.hpp"
#include "cbc/process.hpp"
#include "cbc/random.hpp"
#include "cbc/tape.hpp"
#include "cbc/tensor.hpp"

namespace cbc {

/// White-noise input: i.i.d. Gaussian values of the given shape.
struct NoiseSpec {
  std::vector<int> shape{5};
  double mean = 0.0;
  double stddev = 1.0;

  void validate() const {
    shape_numel(shape);  // rejects non-positive dims
    if (stddev < 0.0) throw std::invalid_argument("NoiseSpec: stddev must be non-negative");
  }
};

inline Tensor sample_noise(const NoiseSpec& spec, RandomStream& rng) {
  return random_normal(spec.shape, spec.mean, spec.stddev, rng);
}

/// One declarative layer of a converter stack.
struct LayerSpec {
  enum class Kind {
    affine,
    reshape,
    conv1d,
    conv_transpose1d,
    conv2d,
    conv_transpose2d,
    upsample2d,
    activation,
  };

  Kind kind = Kind::affine;
  int n_out = 0;                // affine
  std::vector<int> dims;        // reshape
  int channels_out = 0;         // conv family
  int kernel = 0;
  int stride = 1;
  int padding = 0;
  int factor = 1;               // upsample2d
  Activation act = Activation::relu;  // activation

  static LayerSpec affine(int n_out) {
    LayerSpec l;
    l.kind = Kind::affine;
    l.n_out = n_out;
    return l;
  }
  static LayerSpec reshape(std::vector<int> dims) {
    LayerSpec l;
    l.kind = Kind::reshape;
    l.dims = std::move(dims);
    return l;
  }
  static LayerSpec conv1d(int channels_out, int kernel, int stride, int padding) {
    LayerSpec l;
    l.kind = Kind::conv1d;
    l.channels_out = channels_out;
    l.kernel = kernel;
    l.stride = stride;
    l.padding = padding;
    return l;
  }
  static LayerSpec conv_transpose1d(int channels_out, int kernel, int stride, int padding) {
    LayerSpec l = conv1d(channels_out, kernel, stride, padding);
    l.kind = Kind::conv_transpose1d;
    return l;
  }
  static LayerSpec conv2d(int channels_out, int kernel, int stride, int padding) {
    LayerSpec l = conv1d(channels_out, kernel, stride, padding);
    l.kind = Kind::conv2d;
    return l;
  }
  static LayerSpec conv_transpose2d(int channels_out, int kernel, int stride, int padding) {
    LayerSpec l = conv1d(channels_out, kernel, stride, padding);
    l.kind = Kind::conv_transpose2d;
    return l;
  }
  static LayerSpec upsample2d(int factor) {
    LayerSpec l;
    l.kind = Kind::upsample2d;
    l.factor = factor;
    return l;
  }
  static LayerSpec activation(Activation kind) {
    LayerSpec l;
    l.kind = Kind::activation;
    l.act = kind;
    return l;
  }

  bool has_parameters() const {
    switch (kind) {
      case Kind::affine:
      case Kind::conv1d:
      case Kind::conv_transpose1d:
      case Kind::conv2d:
      case Kind::conv_transpose2d:
        return true;
      default:
        return false;
    }
  }
};

inline std::string to_string(LayerSpec::Kind k) {
  switch (k) {
    case LayerSpec::Kind::affine: return "affine";
    case LayerSpec::Kind::reshape: return "reshape";
    case LayerSpec::Kind::conv1d: return "conv1d";
    case LayerSpec::Kind::conv_transpose1d: return "conv_transpose1d";
    case LayerSpec::Kind::conv2d: return "conv2d";
    case LayerSpec::Kind::conv_transpose2d: return "conv_transpose2d";
    case LayerSpec::Kind::upsample2d: return "upsample2d";
    case LayerSpec::Kind::activation: return "activation";
  }
  throw std::invalid_argument("unknown layer kind");
}

enum class OutputActivation { none, sigmoid };

/// Full declarative converter: noise in, layer stack, optional squashing of
/// the final trajectory into (0,1).
struct ConverterSpec {
  std::string name;  // optional label, carried into checkpoints
  NoiseSpec noise;
  std::vector<LayerSpec> layers;
  OutputActivation output_activation = OutputActivation::none;
};

namespace detail {

[[noreturn]] inline void spec_error(std::size_t layer_index, const LayerSpec& layer,
                                    const std::string& what) {
  throw std::invalid_argument("layer " + std::to_string(layer_index) + " (" +
                              to_string(layer.kind) + "): " + what);
}

}  // namespace detail

/// Shapes after every layer, validating the whole chain. per_layer[i] is the
/// output shape of layers[i]; the returned vector is the final output shape.
inline std::vector<int> infer_shapes(const ConverterSpec& spec,
                                     std::vector<std::vector<int>>* per_layer = nullptr) {
  spec.noise.validate();
  std::vector<int> shape = spec.noise.shape;
  if (per_layer) per_layer->clear();
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    switch (l.kind) {
      case LayerSpec::Kind::affine: {
        if (l.n_out < 1) detail::spec_error(i, l, "n_out must be positive");
        shape = {l.n_out};
        break;
      }
      case LayerSpec::Kind::reshape: {
        if (shape_numel(l.dims) != shape_numel(shape)) {
          detail::spec_error(i, l, "cannot view " + shape_to_string(shape) + " as " +
                                       shape_to_string(l.dims));
        }
        shape = l.dims;
        break;
      }
      case LayerSpec::Kind::conv1d:
      case LayerSpec::Kind::conv_transpose1d: {
        if (shape.size() != 2) {
          detail::spec_error(i, l, "needs a [channels x length] input, got " +
                                       shape_to_string(shape));
        }
        if (l.channels_out < 1 || l.kernel < 1 || l.stride < 1 || l.padding < 0) {
          detail::spec_error(i, l, "bad channels/kernel/stride/padding");
        }
        const int len = shape[1];
        int out_len;
        if (l.kind == LayerSpec::Kind::conv1d) {
          if (l.kernel > len + 2 * l.padding) {
            detail::spec_error(i, l, "kernel larger than padded input");
          }
          out_len = (len + 2 * l.padding - l.kernel) / l.stride + 1;
        } else {
          out_len = (len - 1) * l.stride + l.kernel - 2 * l.padding;
          if (out_len <= 0) detail::spec_error(i, l, "non-positive output length");
        }
        shape = {l.channels_out, out_len};
        break;
      }
      case LayerSpec::Kind::conv2d:
      case LayerSpec::Kind::conv_transpose2d: {
        if (shape.size() != 3) {
          detail::spec_error(i, l, "needs a [channels x height x width] input, got " +
                                       shape_to_string(shape));
        }
        if (l.channels_out < 1 || l.kernel < 1 || l.stride < 1 || l.padding < 0) {
          detail::spec_error(i, l, "bad channels/kernel/stride/padding");
        }
        int h = shape[1], w = shape[2];
        if (l.kind == LayerSpec::Kind::conv2d) {
          if (l.kernel > h + 2 * l.padding || l.kernel > w + 2 * l.padding) {
            detail::spec_error(i, l, "kernel larger than padded input");
          }
          h = (h + 2 * l.padding - l.kernel) / l.stride + 1;
          w = (w + 2 * l.padding - l.kernel) / l.stride + 1;
        } else {
          h = (h - 1) * l.stride + l.kernel - 2 * l.padding;
          w = (w - 1) * l.stride + l.kernel - 2 * l.padding;
          if (h <= 0 || w <= 0) detail::spec_error(i, l, "non-positive output size");
        }
        shape = {l.channels_out, h, w};
        break;
      }
      case LayerSpec::Kind::upsample2d: {
        if (shape.size() != 3) {
          detail::spec_error(i, l, "needs a [channels x height x width] input, got " +
                                       shape_to_string(shape));
        }
        if (l.factor < 1) detail::spec_error(i, l, "factor must be >= 1");
        shape = {shape[0], shape[1] * l.factor, shape[2] * l.factor};
        break;
      }
      case LayerSpec::Kind::activation:
        break;
    }
    if (per_layer) per_layer->push_back(shape);
  }
  return shape;
}

/// A built converter: the spec plus its concrete parameter tensors.
struct Model {
  ConverterSpec spec;
  std::vector<Parameter> params;
  struct Slot {
    int weight = -1;
    int bias = -1;
  };
  std::vector<Slot> slots;  // one per layer; -1 for parameterless layers
  std::uint64_t init_seed = 0;

  std::vector<Parameter*> param_ptrs() {
    std::vector<Parameter*> out;
    out.reserve(params.size());
    for (Parameter& p : params) out.push_back(&p);
    return out;
  }
};

/// Initializes all parameters: He-style normal (sd = sqrt(2/fan_in)) for
/// layers feeding a relu, Glorot-style normal (sd = sqrt(2/(fan_in+fan_out)))
/// otherwise; biases zero. Deterministic in the seed.
inline Model build_converter(const ConverterSpec& spec, std::uint64_t seed) {
  std::vector<std::vector<int>> shapes;
  infer_shapes(spec, &shapes);

  Model model;
  model.spec = spec;
  model.init_seed = seed;
  model.slots.resize(spec.layers.size());
  RandomStream rng(seed);

  std::vector<int> in_shape = spec.noise.shape;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    if (l.has_parameters()) {
      std::vector<int> w_shape;
      int fan_in = 0, fan_out = 0;
      switch (l.kind) {
        case LayerSpec::Kind::affine: {
          const int n_in = static_cast<int>(shape_numel(in_shape));
          w_shape = {l.n_out, n_in};
          fan_in = n_in;
          fan_out = l.n_out;
          break;
        }
        case LayerSpec::Kind::conv1d:
          w_shape = {l.channels_out, in_shape[0], l.kernel};
          fan_in = in_shape[0] * l.kernel;
          fan_out = l.channels_out * l.kernel;
          break;
        case LayerSpec::Kind::conv_transpose1d:
          w_shape = {in_shape[0], l.channels_out, l.kernel};
          fan_in = in_shape[0] * l.kernel;
          fan_out = l.channels_out * l.kernel;
          break;
        case LayerSpec::Kind::conv2d:
          w_shape = {l.channels_out, in_shape[0], l.kernel, l.kernel};
          fan_in = in_shape[0] * l.kernel * l.kernel;
          fan_out = l.channels_out * l.kernel * l.kernel;
          break;
        case LayerSpec::Kind::conv_transpose2d:
          w_shape = {in_shape[0], l.channels_out, l.kernel, l.kernel};
          fan_in = in_shape[0] * l.kernel * l.kernel;
          fan_out = l.channels_out * l.kernel * l.kernel;
          break;
        default:
          break;
      }
      const bool feeds_relu = i + 1 < spec.layers.size() &&
                              spec.layers[i + 1].kind == LayerSpec::Kind::activation &&
                              spec.layers[i + 1].act == Activation::relu;
      const double sd = feeds_relu ? std::sqrt(2.0 / fan_in)
                                   : std::sqrt(2.0 / (fan_in + fan_out));
      const int c_out = l.kind == LayerSpec::Kind::affine ? l.n_out : l.channels_out;
      model.slots[i].weight = static_cast<int>(model.params.size());
      model.params.emplace_back(random_normal(w_shape, 0.0, sd, rng));
      model.slots[i].bias = static_cast<int>(model.params.size());
      model.params.emplace_back(Tensor({c_out}));
    }
    in_shape = shapes[i];
  }
  return model;
}

/// Builds the layer chain on a tape. param_nodes[i] must be the tape node
/// for model.params[i] (param() nodes during training, constant() nodes for
/// pure inference).
inline Tape::NodeId forward_on_tape(Tape& t, const Model& model, Tape::NodeId x,
                                    const std::vector<Tape::NodeId>& param_nodes) {
  if (param_nodes.size() != model.params.size()) {
    throw std::invalid_argument("forward_on_tape: wrong parameter node count");
  }
  Tape::NodeId cur = x;
  for (std::size_t i = 0; i < model.spec.layers.size(); ++i) {
    const LayerSpec& l = model.spec.layers[i];
    const Model::Slot& s = model.slots[i];
    switch (l.kind) {
      case LayerSpec::Kind::affine:
        cur = t.affine(cur, param_nodes[static_cast<std::size_t>(s.weight)],
                       param_nodes[static_cast<std::size_t>(s.bias)]);
        break;
      case LayerSpec::Kind::reshape:
        cur = t.reshape(cur, l.dims);
        break;
      case LayerSpec::Kind::conv1d:
        cur = t.conv1d(cur, param_nodes[static_cast<std::size_t>(s.weight)],
                       param_nodes[static_cast<std::size_t>(s.bias)], l.stride, l.padding);
        break;
      case LayerSpec::Kind::conv_transpose1d:
        cur = t.conv_transpose1d(cur, param_nodes[static_cast<std::size_t>(s.weight)],
                                 param_nodes[static_cast<std::size_t>(s.bias)], l.stride,
                                 l.padding);
        break;
      case LayerSpec::Kind::conv2d:
        cur = t.conv2d(cur, param_nodes[static_cast<std::size_t>(s.weight)],
                       param_nodes[static_cast<std::size_t>(s.bias)], l.stride, l.padding);
        break;
      case LayerSpec::Kind::conv_transpose2d:
        cur = t.conv_transpose2d(cur, param_nodes[static_cast<std::size_t>(s.weight)],
                                 param_nodes[static_cast<std::size_t>(s.bias)], l.stride,
                                 l.padding);
        break;
      case LayerSpec::Kind::upsample2d:
        cur = t.upsample2d_nearest(cur, l.factor);
        break;
      case LayerSpec::Kind::activation:
        cur = t.activation(cur, l.act);
        break;
    }
  }
  if (model.spec.output_activation == OutputActivation::sigmoid) {
    cur = t.activation(cur, Activation::sigmoid);
  }
  return cur;
}

inline Domain domain_from_shape(const std::vector<int>& shape) {
  if (shape.size() == 1) return Grid1D{shape[0]};
  if (shape.size() == 3) return Grid2D{shape[0], shape[1], shape[2]};
  throw std::invalid_argument("domain_from_shape: need rank 1 or 3, got " +
                              shape_to_string(shape));
}

/// Maps one noise draw through the converter. Pure inference: no gradient
/// bookkeeping is recorded.
inline Trajectory forward_trajectory(const Model& model, const Tensor& omega) {
  if (omega.shape != model.spec.noise.shape) {
    throw std::invalid_argument("forward_trajectory: noise shape " +
                                shape_to_string(omega.shape) + " does not match spec " +
                                shape_to_string(model.spec.noise.shape));
  }
  Tape t;
  std::vector<Tape::NodeId> param_nodes;
  param_nodes.reserve(model.params.size());
  for (const Parameter& p : model.params) param_nodes.push_back(t.constant(p.tensor));
  const auto out = forward_on_tape(t, model, t.constant(omega), param_nodes);
  const Tensor& value = t.value(out);
  return Trajectory(domain_from_shape(value.shape), value.data);
}

struct TrainConfig {
  int max_steps = 5000;
  int batch_size = 16;
  AdamConfig adam;
  double convergence_tol = 1e-5;
  int patience = 200;
  std::uint64_t seed = 0;

  void validate() const {
    if (max_steps < 1) throw std::invalid_argument("TrainConfig: max_steps must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
    if (!(convergence_tol > 0.0)) {
      throw std::invalid_argument("TrainConfig: convergence_tol must be positive");
    }
    if (patience < 1) throw std::invalid_argument("TrainConfig: patience must be >= 1");
  }
};

struct TrainResult {
  std::vector<double> loss_history;  // mean batch loss per step
  bool converged = false;
};

/// Per-instance optimization: every step draws a fresh batch of noise,
/// averages the observation MSE over the batch, and takes one Adam step.
/// Stops early once the relative improvement over the best loss seen stays
/// below convergence_tol for `patience` consecutive steps.
inline TrainResult train(Model& model, const ObservationSet& obs, const TrainConfig& cfg) {
  cfg.validate();
  const std::vector<int> out_shape = infer_shapes(model.spec);
  if (obs.domain_size != static_cast<int>(shape_numel(out_shape))) {
    throw std::invalid_argument("train: observation domain size " +
                                std::to_string(obs.domain_size) +
                                " does not match converter output " +
                                shape_to_string(out_shape));
  }
  RandomStream noise_rng(cfg.seed);
  TrainResult result;
  result.loss_history.reserve(static_cast<std::size_t>(cfg.max_steps));
  double best = 0.0;
  int stall = 0;
  for (int step = 1; step <= cfg.max_steps; ++step) {
    Tape t;
    std::vector<Tape::NodeId> param_nodes;
    param_nodes.reserve(model.params.size());
    for (Parameter& p : model.params) param_nodes.push_back(t.param(p));
    std::vector<Tape::NodeId> losses;
    losses.reserve(static_cast<std::size_t>(cfg.batch_size));
    for (int b = 0; b < cfg.batch_size; ++b) {
      const auto omega = t.constant(sample_noise(model.spec.noise, noise_rng));
      const auto out = forward_on_tape(t, model, omega, param_nodes);
      losses.push_back(t.mse_at_indices(out, obs.entries));
    }
    const auto loss = t.average(losses);
    const double loss_value = t.value(loss).data[0];
    if (!std::isfinite(loss_value)) {
      throw std::runtime_error("train: non-finite loss " + std::to_string(loss_value) +
                               " at step " + std::to_string(step));
    }
    result.loss_history.push_back(loss_value);
    t.backward(loss);
    adam_step(model.param_ptrs(), cfg.adam);

    if (step == 1) {
      best = loss_value;
      continue;
    }
    const double improvement = (best - loss_value) / std::max(std::fabs(best), 1e-12);
    if (improvement < cfg.convergence_tol) {
      ++stall;
    } else {
      stall = 0;
    }
    best = std::min(best, loss_value);
    if (stall >= cfg.patience) {
      result.converged = true;
      break;
    }
  }
  return result;
}

/// Mean squared error at the observed sites over a fresh noise batch:
/// mean over (sample, observation) of (Q(omega)[s] - O_s)^2.
inline double ensemble_observation_mse(const Model& model, const ObservationSet& obs,
                                       int batch, std::uint64_t seed) {
  if (batch < 1) throw std::invalid_argument("ensemble_observation_mse: batch must be >= 1");
  if (obs.entries.empty()) return 0.0;
  RandomStream rng(seed);
  double acc = 0.0;
  for (int b = 0; b < batch; ++b) {
    const Trajectory traj = forward_trajectory(model, sample_noise(model.spec.noise, rng));
    for (const ObservedValue& o : obs.entries) {
      const double d = traj.values[static_cast<std::size_t>(o.index)] - o.value;
      acc += d * d;
    }
  }
  return acc / (static_cast<double>(batch) * static_cast<double>(obs.entries.size()));
}

/// The 1-D converter: noise[5] -> three-layer MLP -> reshape to 16 channels
/// of length 33 -> three stride-2 stages growing 33 -> 67 -> 134 -> 268,
/// then two stride-1 K=31 stages shrinking 268 -> 238 -> 200.
///
/// The 528-unit seed keeps every stage above 200 effective dimensions, so the
/// network can pin down up to ~200 observed values regardless of their
/// correlation structure.  The two wide final stages use padding K-1 and
/// larger, so every output site has a fully in-bounds receptive field (no
/// zero-padding reaches the output) and adjacent outputs share 30 of 31 taps.
/// Both properties matter when only a subset of sites is constrained during
/// fitting: narrow or edge-padded final stages leave sharp notches at the
/// unconstrained sites, while this plan interpolates smoothly through them.
inline ConverterSpec cbc1d_200() {
  ConverterSpec s;
  s.name = "cbc1d_200";
  s.noise.shape = {5};
  s.layers = {
      LayerSpec::affine(64),
      LayerSpec::activation(Activation::relu),
      LayerSpec::affine(128),
      LayerSpec::activation(Activation::relu),
      LayerSpec::affine(528),
      LayerSpec::activation(Activation::relu),
      LayerSpec::reshape({16, 33}),
      LayerSpec::conv_transpose1d(16, 5, 2, 1),
      LayerSpec::activation(Activation::relu),
      LayerSpec::conv_transpose1d(16, 4, 2, 1),
      LayerSpec::activation(Activation::relu),
      LayerSpec::conv_transpose1d(8, 4, 2, 1),
      LayerSpec::activation(Activation::relu),
      LayerSpec::conv_transpose1d(8, 31, 1, 30),
      LayerSpec::activation(Activation::relu),
      LayerSpec::conv_transpose1d(1, 31, 1, 34),
      LayerSpec::reshape({200}),
  };
  s.output_activation = OutputActivation::none;
  return s;
}

/// The smooth 2-D converter for 28x28 images: channelwise mixing with
/// kernel-1 convolutions on noise columns, reshape to 7x7, then two
/// upsample-and-convolve stages and a final convolution, squashed by a
/// sigmoid (7 -> 14 -> 28).
///
/// The noise tensor puts its 49 spatial sites on the channel axis.  Kernel-1
/// convolutions mix channels but share their biases along the length axis,
/// so channels are the only axis a per-site mean can live on; with sites as
/// channels the expected seed image is freely shapeable, which is what lets
/// the network match an image in expectation over noise draws.
inline ConverterSpec smooth2d_mnist() {
  ConverterSpec s;
  s.name = "smooth2d_mnist";
  s.noise.shape = {49, 4};
  s.layers = {
      LayerSpec::conv1d(64, 1, 1, 0),
      LayerSpec::activation(Activation::relu),
      LayerSpec::conv1d(128, 1, 1, 0),
      LayerSpec::activation(Activation::relu),
      LayerSpec::conv1d(392, 1, 1, 0),
      LayerSpec::activation(Activation::relu),
      LayerSpec::reshape({32, 7, 7}),
      LayerSpec::upsample2d(2),
      LayerSpec::conv2d(16, 3, 1, 1),
      LayerSpec::activation(Activation::relu),
      LayerSpec::upsample2d(2),
      LayerSpec::conv2d(8, 3, 1, 1),
      LayerSpec::activation(Activation::relu),
      LayerSpec::conv2d(1, 3, 1, 1),
  };
  s.output_activation = OutputActivation::sigmoid;
  return s;
}

/// The smooth 2-D converter for 32x32 color images: reshape to 4x4 and
/// three upsample-and-convolve stages (4 -> 8 -> 16 -> 32) ending in 3
/// channels under a sigmoid.  Noise sites live on the channel axis for the
/// same reason as in smooth2d_mnist.
inline ConverterSpec smooth2d_cifar() {
  ConverterSpec s;
  s.name = "smooth2d_cifar";
  s.noise.shape = {16, 4};
  s.layers = {
      LayerSpec::conv1d(32, 1, 1, 0),
      LayerSpec::activation(Activation::relu),
      LayerSpec::conv1d(64, 1, 1, 0),
      LayerSpec::activation(Activation::relu),
      LayerSpec::conv1d(128, 1, 1, 0),
      LayerSpec::activation(Activation::relu),
      LayerSpec::reshape({32, 4, 4}),
      LayerSpec::upsample2d(2),
      LayerSpec::conv2d(16, 3, 1, 1),
      LayerSpec::activation(Activation::relu),
      LayerSpec::upsample2d(2),
      LayerSpec::conv2d(8, 3, 1, 1),
      LayerSpec::activation(Activation::relu),
      LayerSpec::upsample2d(2),
      LayerSpec::conv2d(3, 3, 1, 1),
  };
  s.output_activation = OutputActivation::sigmoid;
  return s;
}

inline std::vector<std::string> canonical_names() {
  return {"cbc1d_200", "smooth2d_mnist", "smooth2d_cifar"};
}

inline ConverterSpec canonical_spec(const std::string& name) {
  if (name == "cbc1d_200") return cbc1d_200();
  if (name == "smooth2d_mnist") return smooth2d_mnist();
  if (name == "smooth2d_cifar") return smooth2d_cifar();
  throw std::invalid_argument("canonical_spec: unknown converter '" + name + "'");
}

}  // namespace cbc
