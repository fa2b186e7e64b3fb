#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cbc/optimizer.hpp"
#include "cbc/tensor.hpp"

namespace cbc {

enum class Activation { relu, tanh, sigmoid };

inline Activation activation_from_string(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "tanh") return Activation::tanh;
  if (s == "sigmoid") return Activation::sigmoid;
  throw std::invalid_argument("unknown activation kind: " + s);
}

inline std::string to_string(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
    case Activation::sigmoid: return "sigmoid";
  }
  throw std::invalid_argument("unknown activation kind");
}

/// One observed value at a flat (row-major) index of a trajectory tensor.
struct ObservedValue {
  int index = 0;
  double value = 0.0;
};

/// Reverse-mode autodiff tape. Operations run eagerly and record a
/// backward closure; backward() replays the closures in reverse creation
/// order exactly once, accumulating gradients additively where a node
/// feeds several consumers. Gradients of nodes created via param() are
/// added into the owning Parameter's tensor.grad.
///
/// A tape is single-use: calling backward() twice throws. Single-threaded
/// by design; build one tape per training step.
class Tape {
 public:
  using NodeId = int;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf that never needs a gradient.
  NodeId constant(Tensor value) { return add_leaf(std::move(value), false, nullptr); }

  /// Differentiable leaf; query its gradient with grad() after backward().
  NodeId input(Tensor value) { return add_leaf(std::move(value), true, nullptr); }

  /// Differentiable leaf bound to a Parameter: backward() accumulates the
  /// node's gradient into p.tensor.grad.
  NodeId param(Parameter& p) {
    return add_leaf(Tensor(p.tensor.shape, p.tensor.data), true, &p);
  }

  const Tensor& value(NodeId id) const { return node(id).value; }

  /// Gradient of the loss w.r.t. this node; valid only after backward().
  const std::vector<double>& grad(NodeId id) const {
    const NodeState& n = node(id);
    if (!consumed_) throw std::logic_error("grad requested before backward()");
    return n.grad;
  }

  /// out[j] = b[j] + sum_i W[j,i] * x[i]. x must hold n_in values,
  /// weight is [n_out x n_in], bias is [n_out].
  NodeId affine(NodeId x, NodeId weight, NodeId bias) {
    const Tensor& xv = node(x).value;
    const Tensor& wv = node(weight).value;
    const Tensor& bv = node(bias).value;
    if (wv.rank() != 2) throw std::invalid_argument("affine: weight must be rank 2");
    const int n_out = wv.shape[0];
    const int n_in = wv.shape[1];
    if (static_cast<int>(xv.size()) != n_in) {
      throw std::invalid_argument("affine: input size " + std::to_string(xv.size()) +
                                  " does not match weight " + shape_to_string(wv.shape));
    }
    if (static_cast<int>(bv.size()) != n_out) {
      throw std::invalid_argument("affine: bias size does not match weight rows");
    }
    Tensor out({n_out});
    for (int j = 0; j < n_out; ++j) {
      double acc = bv.data[j];
      const double* wrow = wv.data.data() + static_cast<std::size_t>(j) * n_in;
      for (int i = 0; i < n_in; ++i) acc += wrow[i] * xv.data[i];
      out.data[j] = acc;
    }
    const NodeId id = add_node(std::move(out), {x, weight, bias});
    if (node(id).requires_grad) {
      node(id).backprop = [this, id, x, weight, bias, n_in, n_out] {
        const std::vector<double>& gy = node(id).grad;
        const Tensor& xv2 = node(x).value;
        const Tensor& wv2 = node(weight).value;
        std::vector<double>& gx = node(x).grad;
        std::vector<double>& gw = node(weight).grad;
        std::vector<double>& gb = node(bias).grad;
        for (int j = 0; j < n_out; ++j) {
          const double g = gy[j];
          const double* wrow = wv2.data.data() + static_cast<std::size_t>(j) * n_in;
          double* gwrow = gw.data() + static_cast<std::size_t>(j) * n_in;
          gb[j] += g;
          for (int i = 0; i < n_in; ++i) {
            gx[i] += g * wrow[i];
            gwrow[i] += g * xv2.data[i];
          }
        }
      };
    }
    return id;
  }

  /// 1-D cross-correlation with zero padding.
  /// x: [C_in x L], kernels: [C_out x C_in x K], bias: [C_out].
  /// out[oc,i] = b[oc] + sum_{ic,k} x[ic, i*stride + k - padding] * w[oc,ic,k];
  /// L' = floor((L + 2*padding - K) / stride) + 1.
  NodeId conv1d(NodeId x, NodeId kernels, NodeId bias, int stride, int padding) {
    check_conv_args(stride, padding, "conv1d");
    const Tensor& xv = node(x).value;
    const Tensor& wv = node(kernels).value;
    const Tensor& bv = node(bias).value;
    if (xv.rank() != 2) throw std::invalid_argument("conv1d: input must be [C_in x L]");
    if (wv.rank() != 3) throw std::invalid_argument("conv1d: kernels must be [C_out x C_in x K]");
    const int c_in = xv.shape[0], len = xv.shape[1];
    const int c_out = wv.shape[0], k_size = wv.shape[2];
    if (wv.shape[1] != c_in) {
      throw std::invalid_argument("conv1d: kernel C_in " + std::to_string(wv.shape[1]) +
                                  " does not match input channels " + std::to_string(c_in));
    }
    if (static_cast<int>(bv.size()) != c_out) {
      throw std::invalid_argument("conv1d: bias size does not match C_out");
    }
    if (k_size > len + 2 * padding) {
      throw std::invalid_argument("conv1d: kernel larger than padded input");
    }
    const int l_out = (len + 2 * padding - k_size) / stride + 1;
    Tensor out({c_out, l_out});
    for (int oc = 0; oc < c_out; ++oc) {
      double* orow = out.data.data() + static_cast<std::size_t>(oc) * l_out;
      for (int i = 0; i < l_out; ++i) {
        double acc = bv.data[oc];
        for (int ic = 0; ic < c_in; ++ic) {
          const double* xrow = xv.data.data() + static_cast<std::size_t>(ic) * len;
          const double* wrow = wv.data.data() + (static_cast<std::size_t>(oc) * c_in + ic) * k_size;
          for (int k = 0; k < k_size; ++k) {
            const int t = i * stride + k - padding;
            if (t >= 0 && t < len) acc += xrow[t] * wrow[k];
          }
        }
        orow[i] = acc;
      }
    }
    const NodeId id = add_node(std::move(out), {x, kernels, bias});
    if (node(id).requires_grad) {
      node(id).backprop = [this, id, x, kernels, bias, stride, padding, c_in, len, c_out,
                           k_size, l_out] {
        const std::vector<double>& gy = node(id).grad;
        const Tensor& xv2 = node(x).value;
        const Tensor& wv2 = node(kernels).value;
        std::vector<double>& gx = node(x).grad;
        std::vector<double>& gw = node(kernels).grad;
        std::vector<double>& gb = node(bias).grad;
        for (int oc = 0; oc < c_out; ++oc) {
          const double* gyrow = gy.data() + static_cast<std::size_t>(oc) * l_out;
          for (int i = 0; i < l_out; ++i) {
            const double g = gyrow[i];
            gb[oc] += g;
            for (int ic = 0; ic < c_in; ++ic) {
              const double* xrow = xv2.data.data() + static_cast<std::size_t>(ic) * len;
              const double* wrow =
                  wv2.data.data() + (static_cast<std::size_t>(oc) * c_in + ic) * k_size;
              double* gxrow = gx.data() + static_cast<std::size_t>(ic) * len;
              double* gwrow = gw.data() + (static_cast<std::size_t>(oc) * c_in + ic) * k_size;
              for (int k = 0; k < k_size; ++k) {
                const int t = i * stride + k - padding;
                if (t >= 0 && t < len) {
                  gxrow[t] += g * wrow[k];
                  gwrow[k] += g * xrow[t];
                }
              }
            }
          }
        }
      };
    }
    return id;
  }

  /// Adjoint of conv1d: scatter-add of the kernel at each input position.
  /// x: [C_in x L], kernels: [C_in x C_out x K], bias: [C_out].
  /// out[oc, i*stride + k - padding] += x[ic,i] * w[ic,oc,k];
  /// L' = (L-1)*stride + K - 2*padding, which must be positive.
  /// With a shared kernel tensor, <conv1d(a), b> == <a, conv_transpose1d(b)>.
  NodeId conv_transpose1d(NodeId x, NodeId kernels, NodeId bias, int stride, int padding) {
    check_conv_args(stride, padding, "conv_transpose1d");
    const Tensor& xv = node(x).value;
    const Tensor& wv = node(kernels).value;
    const Tensor& bv = node(bias).value;
    if (xv.rank() != 2) throw std::invalid_argument("conv_transpose1d: input must be [C_in x L]");
    if (wv.rank() != 3) {
      throw std::invalid_argument("conv_transpose1d: kernels must be [C_in x C_out x K]");
    }
    const int c_in = xv.shape[0], len = xv.shape[1];
    const int c_out = wv.shape[1], k_size = wv.shape[2];
    if (wv.shape[0] != c_in) {
      throw std::invalid_argument("conv_transpose1d: kernel C_in does not match input channels");
    }
    if (static_cast<int>(bv.size()) != c_out) {
      throw std::invalid_argument("conv_transpose1d: bias size does not match C_out");
    }
    const int l_out = (len - 1) * stride + k_size - 2 * padding;
    if (l_out <= 0) {
      throw std::invalid_argument("conv_transpose1d: non-positive output length " +
                                  std::to_string(l_out));
    }
    Tensor out({c_out, l_out});
    for (int oc = 0; oc < c_out; ++oc) {
      double* orow = out.data.data() + static_cast<std::size_t>(oc) * l_out;
      for (int j = 0; j < l_out; ++j) orow[j] = bv.data[oc];
    }
    for (int ic = 0; ic < c_in; ++ic) {
      const double* xrow = xv.data.data() + static_cast<std::size_t>(ic) * len;
      for (int oc = 0; oc < c_out; ++oc) {
        const double* wrow = wv.data.data() + (static_cast<std::size_t>(ic) * c_out + oc) * k_size;
        double* orow = out.data.data() + static_cast<std::size_t>(oc) * l_out;
        for (int i = 0; i < len; ++i) {
          const double xi = xrow[i];
          for (int k = 0; k < k_size; ++k) {
            const int j = i * stride + k - padding;
            if (j >= 0 && j < l_out) orow[j] += xi * wrow[k];
          }
        }
      }
    }
    const NodeId id = add_node(std::move(out), {x, kernels, bias});
    if (node(id).requires_grad) {
      node(id).backprop = [this, id, x, kernels, bias, stride, padding, c_in, len, c_out,
                           k_size, l_out] {
        const std::vector<double>& gy = node(id).grad;
        const Tensor& xv2 = node(x).value;
        const Tensor& wv2 = node(kernels).value;
        std::vector<double>& gx = node(x).grad;
        std::vector<double>& gw = node(kernels).grad;
        std::vector<double>& gb = node(bias).grad;
        for (int oc = 0; oc < c_out; ++oc) {
          const double* gyrow = gy.data() + static_cast<std::size_t>(oc) * l_out;
          for (int j = 0; j < l_out; ++j) gb[oc] += gyrow[j];
        }
        for (int ic = 0; ic < c_in; ++ic) {
          const double* xrow = xv2.data.data() + static_cast<std::size_t>(ic) * len;
          double* gxrow = gx.data() + static_cast<std::size_t>(ic) * len;
          for (int oc = 0; oc < c_out; ++oc) {
            const double* wrow =
                wv2.data.data() + (static_cast<std::size_t>(ic) * c_out + oc) * k_size;
            double* gwrow = gw.data() + (static_cast<std::size_t>(ic) * c_out + oc) * k_size;
            const double* gyrow = gy.data() + static_cast<std::size_t>(oc) * l_out;
            for (int i = 0; i < len; ++i) {
              for (int k = 0; k < k_size; ++k) {
                const int j = i * stride + k - padding;
                if (j >= 0 && j < l_out) {
                  gxrow[i] += gyrow[j] * wrow[k];
                  gwrow[k] += xrow[i] * gyrow[j];
                }
              }
            }
          }
        }
      };
    }
    return id;
  }

  /// 2-D cross-correlation with zero padding and a square kernel.
  /// x: [C_in x H x W], kernels: [C_out x C_in x K x K], bias: [C_out].
  NodeId conv2d(NodeId x, NodeId kernels, NodeId bias, int stride, int padding) {
    check_conv_args(stride, padding, "conv2d");
    const Tensor& xv = node(x).value;
    const Tensor& wv = node(kernels).value;
    const Tensor& bv = node(bias).value;
    if (xv.rank() != 3) throw std::invalid_argument("conv2d: input must be [C_in x H x W]");
    if (wv.rank() != 4 || wv.shape[2] != wv.shape[3]) {
      throw std::invalid_argument("conv2d: kernels must be [C_out x C_in x K x K]");
    }
    const int c_in = xv.shape[0], h = xv.shape[1], w = xv.shape[2];
    const int c_out = wv.shape[0], k_size = wv.shape[2];
    if (wv.shape[1] != c_in) {
      throw std::invalid_argument("conv2d: kernel C_in does not match input channels");
    }
    if (static_cast<int>(bv.size()) != c_out) {
      throw std::invalid_argument("conv2d: bias size does not match C_out");
    }
    if (k_size > h + 2 * padding || k_size > w + 2 * padding) {
      throw std::invalid_argument("conv2d: kernel larger than padded input");
    }
    const int h_out = (h + 2 * padding - k_size) / stride + 1;
    const int w_out = (w + 2 * padding - k_size) / stride + 1;
    Tensor out({c_out, h_out, w_out});
    for (int oc = 0; oc < c_out; ++oc) {
      for (int oi = 0; oi < h_out; ++oi) {
        double* orow = out.data.data() +
                       (static_cast<std::size_t>(oc) * h_out + oi) * w_out;
        for (int oj = 0; oj < w_out; ++oj) {
          double acc = bv.data[oc];
          for (int ic = 0; ic < c_in; ++ic) {
            const double* xplane = xv.data.data() + static_cast<std::size_t>(ic) * h * w;
            const double* wplane =
                wv.data.data() + (static_cast<std::size_t>(oc) * c_in + ic) * k_size * k_size;
            for (int ki = 0; ki < k_size; ++ki) {
              const int ti = oi * stride + ki - padding;
              if (ti < 0 || ti >= h) continue;
              for (int kj = 0; kj < k_size; ++kj) {
                const int tj = oj * stride + kj - padding;
                if (tj >= 0 && tj < w) acc += xplane[ti * w + tj] * wplane[ki * k_size + kj];
              }
            }
          }
          orow[oj] = acc;
        }
      }
    }
    const NodeId id = add_node(std::move(out), {x, kernels, bias});
    if (node(id).requires_grad) {
      node(id).backprop = [this, id, x, kernels, bias, stride, padding, c_in, h, w, c_out,
                           k_size, h_out, w_out] {
        const std::vector<double>& gy = node(id).grad;
        const Tensor& xv2 = node(x).value;
        const Tensor& wv2 = node(kernels).value;
        std::vector<double>& gx = node(x).grad;
        std::vector<double>& gw = node(kernels).grad;
        std::vector<double>& gb = node(bias).grad;
        for (int oc = 0; oc < c_out; ++oc) {
          for (int oi = 0; oi < h_out; ++oi) {
            const double* gyrow =
                gy.data() + (static_cast<std::size_t>(oc) * h_out + oi) * w_out;
            for (int oj = 0; oj < w_out; ++oj) {
              const double g = gyrow[oj];
              gb[oc] += g;
              for (int ic = 0; ic < c_in; ++ic) {
                const double* xplane = xv2.data.data() + static_cast<std::size_t>(ic) * h * w;
                double* gxplane = gx.data() + static_cast<std::size_t>(ic) * h * w;
                const double* wplane =
                    wv2.data.data() +
                    (static_cast<std::size_t>(oc) * c_in + ic) * k_size * k_size;
                double* gwplane =
                    gw.data() + (static_cast<std::size_t>(oc) * c_in + ic) * k_size * k_size;
                for (int ki = 0; ki < k_size; ++ki) {
                  const int ti = oi * stride + ki - padding;
                  if (ti < 0 || ti >= h) continue;
                  for (int kj = 0; kj < k_size; ++kj) {
                    const int tj = oj * stride + kj - padding;
                    if (tj >= 0 && tj < w) {
                      gxplane[ti * w + tj] += g * wplane[ki * k_size + kj];
                      gwplane[ki * k_size + kj] += g * xplane[ti * w + tj];
                    }
                  }
                }
              }
            }
          }
        }
      };
    }
    return id;
  }

  /// Adjoint of conv2d. x: [C_in x H x W], kernels: [C_in x C_out x K x K],
  /// output side = (side-1)*stride + K - 2*padding.
  NodeId conv_transpose2d(NodeId x, NodeId kernels, NodeId bias, int stride, int padding) {
    check_conv_args(stride, padding, "conv_transpose2d");
    const Tensor& xv = node(x).value;
    const Tensor& wv = node(kernels).value;
    const Tensor& bv = node(bias).value;
    if (xv.rank() != 3) {
      throw std::invalid_argument("conv_transpose2d: input must be [C_in x H x W]");
    }
    if (wv.rank() != 4 || wv.shape[2] != wv.shape[3]) {
      throw std::invalid_argument("conv_transpose2d: kernels must be [C_in x C_out x K x K]");
    }
    const int c_in = xv.shape[0], h = xv.shape[1], w = xv.shape[2];
    const int c_out = wv.shape[1], k_size = wv.shape[2];
    if (wv.shape[0] != c_in) {
      throw std::invalid_argument("conv_transpose2d: kernel C_in does not match input channels");
    }
    if (static_cast<int>(bv.size()) != c_out) {
      throw std::invalid_argument("conv_transpose2d: bias size does not match C_out");
    }
    const int h_out = (h - 1) * stride + k_size - 2 * padding;
    const int w_out = (w - 1) * stride + k_size - 2 * padding;
    if (h_out <= 0 || w_out <= 0) {
      throw std::invalid_argument("conv_transpose2d: non-positive output size");
    }
    Tensor out({c_out, h_out, w_out});
    for (int oc = 0; oc < c_out; ++oc) {
      double* oplane = out.data.data() + static_cast<std::size_t>(oc) * h_out * w_out;
      for (int j = 0; j < h_out * w_out; ++j) oplane[j] = bv.data[oc];
    }
    for (int ic = 0; ic < c_in; ++ic) {
      const double* xplane = xv.data.data() + static_cast<std::size_t>(ic) * h * w;
      for (int oc = 0; oc < c_out; ++oc) {
        const double* wplane =
            wv.data.data() + (static_cast<std::size_t>(ic) * c_out + oc) * k_size * k_size;
        double* oplane = out.data.data() + static_cast<std::size_t>(oc) * h_out * w_out;
        for (int i = 0; i < h; ++i) {
          for (int j = 0; j < w; ++j) {
            const double xi = xplane[i * w + j];
            for (int ki = 0; ki < k_size; ++ki) {
              const int oi = i * stride + ki - padding;
              if (oi < 0 || oi >= h_out) continue;
              for (int kj = 0; kj < k_size; ++kj) {
                const int oj = j * stride + kj - padding;
                if (oj >= 0 && oj < w_out) {
                  oplane[oi * w_out + oj] += xi * wplane[ki * k_size + kj];
                }
              }
            }
          }
        }
      }
    }
    const NodeId id = add_node(std::move(out), {x, kernels, bias});
    if (node(id).requires_grad) {
      node(id).backprop = [this, id, x, kernels, bias, stride, padding, c_in, h, w, c_out,
                           k_size, h_out, w_out] {
        const std::vector<double>& gy = node(id).grad;
        const Tensor& xv2 = node(x).value;
        const Tensor& wv2 = node(kernels).value;
        std::vector<double>& gx = node(x).grad;
        std::vector<double>& gw = node(kernels).grad;
        std::vector<double>& gb = node(bias).grad;
        for (int oc = 0; oc < c_out; ++oc) {
          const double* gyplane = gy.data() + static_cast<std::size_t>(oc) * h_out * w_out;
          for (int j = 0; j < h_out * w_out; ++j) gb[oc] += gyplane[j];
        }
        for (int ic = 0; ic < c_in; ++ic) {
          const double* xplane = xv2.data.data() + static_cast<std::size_t>(ic) * h * w;
          double* gxplane = gx.data() + static_cast<std::size_t>(ic) * h * w;
          for (int oc = 0; oc < c_out; ++oc) {
            const double* wplane =
                wv2.data.data() + (static_cast<std::size_t>(ic) * c_out + oc) * k_size * k_size;
            double* gwplane =
                gw.data() + (static_cast<std::size_t>(ic) * c_out + oc) * k_size * k_size;
            const double* gyplane = gy.data() + static_cast<std::size_t>(oc) * h_out * w_out;
            for (int i = 0; i < h; ++i) {
              for (int j = 0; j < w; ++j) {
                const double xi = xplane[i * w + j];
                double gacc = 0.0;
                for (int ki = 0; ki < k_size; ++ki) {
                  const int oi = i * stride + ki - padding;
                  if (oi < 0 || oi >= h_out) continue;
                  for (int kj = 0; kj < k_size; ++kj) {
                    const int oj = j * stride + kj - padding;
                    if (oj >= 0 && oj < w_out) {
                      const double g = gyplane[oi * w_out + oj];
                      gacc += g * wplane[ki * k_size + kj];
                      gwplane[ki * k_size + kj] += xi * g;
                    }
                  }
                }
                gxplane[i * w + j] += gacc;
              }
            }
          }
        }
      };
    }
    return id;
  }

  /// Nearest-neighbor upsampling: each pixel becomes a factor x factor block.
  NodeId upsample2d_nearest(NodeId x, int factor) {
    if (factor < 1) throw std::invalid_argument("upsample2d_nearest: factor must be >= 1");
    const Tensor& xv = node(x).value;
    if (xv.rank() != 3) {
      throw std::invalid_argument("upsample2d_nearest: input must be [C x H x W]");
    }
    const int c = xv.shape[0], h = xv.shape[1], w = xv.shape[2];
    const int h_out = h * factor, w_out = w * factor;
    Tensor out({c, h_out, w_out});
    for (int ch = 0; ch < c; ++ch) {
      const double* xplane = xv.data.data() + static_cast<std::size_t>(ch) * h * w;
      double* oplane = out.data.data() + static_cast<std::size_t>(ch) * h_out * w_out;
      for (int oi = 0; oi < h_out; ++oi) {
        const double* xrow = xplane + (oi / factor) * w;
        double* orow = oplane + oi * w_out;
        for (int oj = 0; oj < w_out; ++oj) orow[oj] = xrow[oj / factor];
      }
    }
    const NodeId id = add_node(std::move(out), {x});
    if (node(id).requires_grad) {
      node(id).backprop = [this, id, x, factor, c, h, w] {
        const std::vector<double>& gy = node(id).grad;
        std::vector<double>& gx = node(x).grad;
        const int h_out = h * factor, w_out = w * factor;
        for (int ch = 0; ch < c; ++ch) {
          const double* gyplane = gy.data() + static_cast<std::size_t>(ch) * h_out * w_out;
          double* gxplane = gx.data() + static_cast<std::size_t>(ch) * h * w;
          for (int oi = 0; oi < h_out; ++oi) {
            const double* gyrow = gyplane + oi * w_out;
            double* gxrow = gxplane + (oi / factor) * w;
            for (int oj = 0; oj < w_out; ++oj) gxrow[oj / factor] += gyrow[oj];
          }
        }
      };
    }
    return id;
  }

  /// Elementwise relu/tanh/sigmoid. Sigmoid output is kept strictly inside
  /// (0,1) even for saturating inputs.
  NodeId activation(NodeId x, Activation kind) {
    const Tensor& xv = node(x).value;
    Tensor out(xv.shape);
    switch (kind) {
      case Activation::relu:
        for (std::size_t i = 0; i < xv.size(); ++i) {
          const double v = xv.data[i];
          relu_margin_ = std::min(relu_margin_, std::fabs(v));
          out.data[i] = v > 0.0 ? v : 0.0;
        }
        break;
      case Activation::tanh:
        for (std::size_t i = 0; i < xv.size(); ++i) out.data[i] = std::tanh(xv.data[i]);
        break;
      case Activation::sigmoid:
        for (std::size_t i = 0; i < xv.size(); ++i) out.data[i] = stable_sigmoid(xv.data[i]);
        break;
      default:
        throw std::invalid_argument("activation: unknown kind");
    }
    const NodeId id = add_node(std::move(out), {x});
    if (node(id).requires_grad) {
      node(id).backprop = [this, id, x, kind] {
        const std::vector<double>& gy = node(id).grad;
        const Tensor& xv2 = node(x).value;
        const Tensor& yv = node(id).value;
        std::vector<double>& gx = node(x).grad;
        switch (kind) {
          case Activation::relu:
            for (std::size_t i = 0; i < gy.size(); ++i) {
              if (xv2.data[i] > 0.0) gx[i] += gy[i];
            }
            break;
          case Activation::tanh:
            for (std::size_t i = 0; i < gy.size(); ++i) {
              gx[i] += gy[i] * (1.0 - yv.data[i] * yv.data[i]);
            }
            break;
          case Activation::sigmoid:
            for (std::size_t i = 0; i < gy.size(); ++i) {
              gx[i] += gy[i] * yv.data[i] * (1.0 - yv.data[i]);
            }
            break;
        }
      };
    }
    return id;
  }

  /// Same data, new shape; element count must match.
  NodeId reshape(NodeId x, std::vector<int> shape) {
    const Tensor& xv = node(x).value;
    if (shape_numel(shape) != xv.size()) {
      throw std::invalid_argument("reshape: cannot view " + shape_to_string(xv.shape) +
                                  " as " + shape_to_string(shape));
    }
    Tensor out(std::move(shape), xv.data);
    const NodeId id = add_node(std::move(out), {x});
    if (node(id).requires_grad) {
      node(id).backprop = [this, id, x] {
        const std::vector<double>& gy = node(id).grad;
        std::vector<double>& gx = node(x).grad;
        for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
      };
    }
    return id;
  }

  /// Sum of squared errors at the observed flat indices:
  /// sum_s (x[s] - O_s)^2. The gradient touches observed positions only.
  NodeId mse_at_indices(NodeId trajectory, std::span<const ObservedValue> obs) {
    const Tensor& xv = node(trajectory).value;
    for (const ObservedValue& o : obs) {
      if (o.index < 0 || static_cast<std::size_t>(o.index) >= xv.size()) {
        throw std::invalid_argument("mse_at_indices: index " + std::to_string(o.index) +
                                    " out of range for trajectory of size " +
                                    std::to_string(xv.size()));
      }
    }
    double acc = 0.0;
    for (const ObservedValue& o : obs) {
      const double d = xv.data[o.index] - o.value;
      acc += d * d;
    }
    const NodeId id = add_node(Tensor::scalar(acc), {trajectory});
    if (node(id).requires_grad) {
      std::vector<ObservedValue> saved(obs.begin(), obs.end());
      node(id).backprop = [this, id, trajectory, saved = std::move(saved)] {
        const double g = node(id).grad[0];
        const Tensor& xv2 = node(trajectory).value;
        std::vector<double>& gx = node(trajectory).grad;
        for (const ObservedValue& o : saved) {
          gx[o.index] += g * 2.0 * (xv2.data[o.index] - o.value);
        }
      };
    }
    return id;
  }

  /// Scalar sum of all elements.
  NodeId sum(NodeId x) {
    const Tensor& xv = node(x).value;
    double acc = 0.0;
    for (double v : xv.data) acc += v;
    const NodeId id = add_node(Tensor::scalar(acc), {x});
    if (node(id).requires_grad) {
      node(id).backprop = [this, id, x] {
        const double g = node(id).grad[0];
        std::vector<double>& gx = node(x).grad;
        for (double& v : gx) v += g;
      };
    }
    return id;
  }

  /// Scalar dot product with a fixed weight vector (handy for projecting a
  /// tensor output to a scalar in gradient checks).
  NodeId weighted_sum(NodeId x, std::vector<double> weights) {
    const Tensor& xv = node(x).value;
    if (weights.size() != xv.size()) {
      throw std::invalid_argument("weighted_sum: weight length does not match tensor size");
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i) acc += weights[i] * xv.data[i];
    const NodeId id = add_node(Tensor::scalar(acc), {x});
    if (node(id).requires_grad) {
      node(id).backprop = [this, id, x, weights = std::move(weights)] {
        const double g = node(id).grad[0];
        std::vector<double>& gx = node(x).grad;
        for (std::size_t i = 0; i < weights.size(); ++i) gx[i] += g * weights[i];
      };
    }
    return id;
  }

  /// Mean of scalar nodes (batch averaging of per-sample losses).
  NodeId average(const std::vector<NodeId>& scalars) {
    if (scalars.empty()) throw std::invalid_argument("average: empty node list");
    double acc = 0.0;
    for (NodeId s : scalars) {
      if (node(s).value.size() != 1) {
        throw std::invalid_argument("average: all inputs must be scalars");
      }
      acc += node(s).value.data[0];
    }
    const NodeId id = add_node(Tensor::scalar(acc / static_cast<double>(scalars.size())),
                               scalars);
    if (node(id).requires_grad) {
      node(id).backprop = [this, id, scalars] {
        const double g = node(id).grad[0] / static_cast<double>(scalars.size());
        for (NodeId s : scalars) node(s).grad[0] += g;
      };
    }
    return id;
  }

  /// Reverse sweep from a scalar loss. Populates grad on every reachable
  /// node and accumulates into bound Parameters' tensor.grad. A tape can
  /// be consumed once; a second call throws.
  void backward(NodeId loss) {
    const NodeState& ln = node(loss);
    if (ln.value.size() != 1) {
      throw std::invalid_argument("backward: loss must be a scalar, got shape " +
                                  shape_to_string(ln.value.shape));
    }
    if (consumed_) throw std::logic_error("backward: tape already consumed");
    consumed_ = true;
    for (NodeState& n : nodes_) n.grad.assign(n.value.size(), 0.0);
    nodes_[static_cast<std::size_t>(loss)].grad[0] = 1.0;
    for (NodeId id = loss; id >= 0; --id) {
      NodeState& n = nodes_[static_cast<std::size_t>(id)];
      if (n.requires_grad && n.backprop) n.backprop();
    }
    for (NodeState& n : nodes_) {
      if (!n.bound) continue;
      Parameter& p = *n.bound;
      if (p.tensor.grad.size() != p.tensor.data.size()) {
        p.tensor.grad.assign(p.tensor.data.size(), 0.0);
      }
      for (std::size_t i = 0; i < n.grad.size(); ++i) p.tensor.grad[i] += n.grad[i];
    }
  }

  bool consumed() const { return consumed_; }

  /// Smallest |input| seen by any relu so far. Finite-difference checks use
  /// this to reject instances sitting on a relu kink.
  double relu_kink_margin() const { return relu_margin_; }

 private:
  struct NodeState {
    Tensor value;
    std::vector<double> grad;
    std::function<void()> backprop;
    Parameter* bound = nullptr;
    bool requires_grad = false;
  };

  static void check_conv_args(int stride, int padding, const char* op) {
    if (stride < 1) throw std::invalid_argument(std::string(op) + ": stride must be >= 1");
    if (padding < 0) throw std::invalid_argument(std::string(op) + ": padding must be >= 0");
  }

  static double stable_sigmoid(double x) {
    double y;
    if (x >= 0.0) {
      const double z = std::exp(-x);
      y = 1.0 / (1.0 + z);
    } else {
      const double z = std::exp(x);
      y = z / (1.0 + z);
    }
    constexpr double lo = std::numeric_limits<double>::min();
    const double hi = 1.0 - std::numeric_limits<double>::epsilon() / 2.0;
    return std::min(std::max(y, lo), hi);
  }

  NodeId add_leaf(Tensor value, bool requires_grad, Parameter* bound) {
    NodeState n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.bound = bound;
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
  }

  NodeId add_node(Tensor value, const std::vector<NodeId>& inputs) {
    bool rg = false;
    for (NodeId in : inputs) rg = rg || node(in).requires_grad;
    NodeState n;
    n.value = std::move(value);
    n.requires_grad = rg;
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
  }

  NodeState& node(NodeId id) {
    if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size()) {
      throw std::invalid_argument("bad node id " + std::to_string(id));
    }
    return nodes_[static_cast<std::size_t>(id)];
  }
  const NodeState& node(NodeId id) const {
    return const_cast<Tape*>(this)->node(id);
  }

  std::vector<NodeState> nodes_;
  bool consumed_ = false;
  double relu_margin_ = std::numeric_limits<double>::infinity();
};

}  // namespace cbc
