#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "dtgan/common.hpp"
#include "dtgan/rng.hpp"

namespace dtgan::neural {

enum class Activation { identity, relu, leaky_relu, tanh, sigmoid };

std::string activation_name(Activation a);
Activation activation_from_name(const std::string& name);

inline constexpr double kLeakySlope = 0.2;

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
/// Per-sample gradient rows; row-major so each sample's flat gradient is a
/// contiguous block.
template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using RowMajorMap =
    Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename Scalar>
using ConstRowMajorMap =
    Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

namespace detail {

template <typename Scalar>
Scalar act_value(Activation a, Scalar z) {
  switch (a) {
    case Activation::identity: return z;
    case Activation::relu: return z > Scalar(0) ? z : Scalar(0);
    case Activation::leaky_relu: return z > Scalar(0) ? z : Scalar(kLeakySlope) * z;
    case Activation::tanh: return std::tanh(z);
    case Activation::sigmoid: return Scalar(1) / (Scalar(1) + std::exp(-z));
  }
  return z;
}

template <typename Scalar>
Scalar act_deriv(Activation a, Scalar z) {
  switch (a) {
    case Activation::identity: return Scalar(1);
    case Activation::relu: return z > Scalar(0) ? Scalar(1) : Scalar(0);
    case Activation::leaky_relu: return z > Scalar(0) ? Scalar(1) : Scalar(kLeakySlope);
    case Activation::tanh: {
      Scalar y = std::tanh(z);
      return Scalar(1) - y * y;
    }
    case Activation::sigmoid: {
      Scalar y = Scalar(1) / (Scalar(1) + std::exp(-z));
      return y * (Scalar(1) - y);
    }
  }
  return Scalar(1);
}

template <typename Scalar>
Scalar act_second_deriv(Activation a, Scalar z) {
  switch (a) {
    case Activation::identity:
    case Activation::relu:
    case Activation::leaky_relu:
      return Scalar(0);
    case Activation::tanh: {
      Scalar y = std::tanh(z);
      return Scalar(-2) * y * (Scalar(1) - y * y);
    }
    case Activation::sigmoid: {
      Scalar y = Scalar(1) / (Scalar(1) + std::exp(-z));
      return y * (Scalar(1) - y) * (Scalar(1) - Scalar(2) * y);
    }
  }
  return Scalar(0);
}

}  // namespace detail

/// Batch forward pass record: inputs, per-layer pre-activations and
/// activations. Everything the backward passes need.
template <typename Scalar>
struct ForwardTrace {
  MatrixX<Scalar> input;               // B x in
  std::vector<MatrixX<Scalar>> pre;    // per layer, B x width
  std::vector<MatrixX<Scalar>> act;    // per layer, B x width

  Eigen::Index batch() const { return input.rows(); }

  /// Activations feeding the final layer (the input itself for a one-layer
  /// net). Used as the feature representation of a critic.
  const MatrixX<Scalar>& penultimate() const {
    return act.size() >= 2 ? act[act.size() - 2] : input;
  }
};

/// Fully connected feed-forward network over a flat parameter vector.
/// Layout, in order per layer: weight matrix (out x in, row-major), then
/// bias (out). Biases start at zero; weights are Glorot-uniform.
template <typename Scalar>
class DenseNet {
 public:
  DenseNet() = default;

  /// dims = [input, hidden..., output]; one activation per layer.
  DenseNet(std::vector<int> dims, std::vector<Activation> acts)
      : dims_(std::move(dims)), acts_(std::move(acts)) {
    if (dims_.size() < 2) throw ConfigError("network needs at least one layer");
    if (acts_.size() != dims_.size() - 1) throw ConfigError("one activation per layer required");
    for (int d : dims_) {
      if (d < 1) throw ConfigError("layer widths must be >= 1");
    }
    offsets_.resize(layer_count());
    Eigen::Index total = 0;
    for (size_t l = 0; l < layer_count(); ++l) {
      offsets_[l] = total;
      total += static_cast<Eigen::Index>(dims_[l]) * dims_[l + 1] + dims_[l + 1];
    }
    params_ = VectorX<Scalar>::Zero(total);
  }

  static DenseNet glorot(std::vector<int> dims, std::vector<Activation> acts, Rng rng) {
    DenseNet net(std::move(dims), std::move(acts));
    for (size_t l = 0; l < net.layer_count(); ++l) {
      int fan_in = net.dims_[l];
      int fan_out = net.dims_[l + 1];
      Scalar bound = static_cast<Scalar>(std::sqrt(6.0 / (fan_in + fan_out)));
      auto w = net.weights(l);
      for (Eigen::Index r = 0; r < w.rows(); ++r) {
        for (Eigen::Index c = 0; c < w.cols(); ++c) {
          w(r, c) = bound * static_cast<Scalar>(2.0 * rng.uniform() - 1.0);
        }
      }
      net.bias(l).setZero();
    }
    return net;
  }

  size_t layer_count() const { return acts_.size(); }
  const std::vector<int>& dims() const { return dims_; }
  const std::vector<Activation>& activations() const { return acts_; }
  int input_dim() const { return dims_.front(); }
  int output_dim() const { return dims_.back(); }
  Eigen::Index param_count() const { return params_.size(); }
  VectorX<Scalar>& params() { return params_; }
  const VectorX<Scalar>& params() const { return params_; }

  RowMajorMap<Scalar> weights(size_t layer) {
    return RowMajorMap<Scalar>(params_.data() + offsets_[layer], dims_[layer + 1], dims_[layer]);
  }
  ConstRowMajorMap<Scalar> weights(size_t layer) const {
    return ConstRowMajorMap<Scalar>(params_.data() + offsets_[layer], dims_[layer + 1],
                                    dims_[layer]);
  }
  Eigen::Map<VectorX<Scalar>> bias(size_t layer) {
    return Eigen::Map<VectorX<Scalar>>(
        params_.data() + offsets_[layer] +
            static_cast<Eigen::Index>(dims_[layer]) * dims_[layer + 1],
        dims_[layer + 1]);
  }
  Eigen::Map<const VectorX<Scalar>> bias(size_t layer) const {
    return Eigen::Map<const VectorX<Scalar>>(
        params_.data() + offsets_[layer] +
            static_cast<Eigen::Index>(dims_[layer]) * dims_[layer + 1],
        dims_[layer + 1]);
  }

  MatrixX<Scalar> forward(const MatrixX<Scalar>& batch, ForwardTrace<Scalar>* trace = nullptr) const {
    if (batch.cols() != input_dim()) throw ConfigError("batch width does not match input dim");
    if (trace) {
      trace->input = batch;
      trace->pre.assign(layer_count(), {});
      trace->act.assign(layer_count(), {});
    }
    MatrixX<Scalar> a = batch;
    for (size_t l = 0; l < layer_count(); ++l) {
      MatrixX<Scalar> z = (a * weights(l).transpose()).rowwise() + bias(l).transpose();
      MatrixX<Scalar> out = z.unaryExpr([&](Scalar v) { return detail::act_value(acts_[l], v); });
      if (trace) {
        trace->pre[l] = z;
        trace->act[l] = out;
      }
      a = std::move(out);
    }
    return a;
  }

  /// Mean over the batch of the per-sample parameter gradients, given
  /// per-sample output gradients dY (B x out). Equals the gradient of
  /// (1/B) sum_i L_i when dY row i is dL_i/dy_i.
  VectorX<Scalar> param_grads(const ForwardTrace<Scalar>& trace, const MatrixX<Scalar>& dy) const {
    VectorX<Scalar> grad = VectorX<Scalar>::Zero(param_count());
    const Scalar inv_b = Scalar(1) / static_cast<Scalar>(trace.batch());
    MatrixX<Scalar> delta = apply_deriv(layer_count() - 1, trace, dy);
    for (size_t l = layer_count(); l-- > 0;) {
      const MatrixX<Scalar>& below = l == 0 ? trace.input : trace.act[l - 1];
      RowMajorMap<Scalar> gw(grad.data() + offsets_[l], dims_[l + 1], dims_[l]);
      gw = (delta.transpose() * below) * inv_b;
      Eigen::Map<VectorX<Scalar>> gb(
          grad.data() + offsets_[l] + static_cast<Eigen::Index>(dims_[l]) * dims_[l + 1],
          dims_[l + 1]);
      gb = delta.colwise().sum().transpose() * inv_b;
      if (l > 0) delta = apply_deriv(l - 1, trace, delta * weights(l));
    }
    return grad;
  }

  /// One row per sample: the gradient of that sample's loss contribution.
  /// Row means reproduce param_grads exactly.
  RowMatrix<Scalar> per_sample_grads(const ForwardTrace<Scalar>& trace,
                                     const MatrixX<Scalar>& dy) const {
    const Eigen::Index b = trace.batch();
    const Eigen::Index p = param_count();
    RowMatrix<Scalar> rows = RowMatrix<Scalar>::Zero(b, p);
    MatrixX<Scalar> delta = apply_deriv(layer_count() - 1, trace, dy);
    for (size_t l = layer_count(); l-- > 0;) {
      const MatrixX<Scalar>& below = l == 0 ? trace.input : trace.act[l - 1];
      const Eigen::Index in = dims_[l], out = dims_[l + 1];
      for (Eigen::Index i = 0; i < b; ++i) {
        Scalar* base = rows.data() + i * p + offsets_[l];
        RowMajorMap<Scalar> gw(base, out, in);
        gw = delta.row(i).transpose() * below.row(i);
        Eigen::Map<VectorX<Scalar>> gb(base + in * out, out);
        gb = delta.row(i).transpose();
      }
      if (l > 0) delta = apply_deriv(l - 1, trace, delta * weights(l));
    }
    return rows;
  }

  /// Gradient of the summed scalar output w.r.t. each input row. Requires a
  /// single output unit.
  MatrixX<Scalar> input_grads(const MatrixX<Scalar>& batch) const {
    if (output_dim() != 1) throw ConfigError("input gradients require a scalar output");
    ForwardTrace<Scalar> trace;
    forward(batch, &trace);
    MatrixX<Scalar> ones = MatrixX<Scalar>::Ones(batch.rows(), 1);
    return input_grads_from_output(trace, ones);
  }

  /// Reverse pass from output gradients down to the input batch.
  MatrixX<Scalar> input_grads_from_output(const ForwardTrace<Scalar>& trace,
                                          const MatrixX<Scalar>& dy) const {
    return backward_from_layer(trace, layer_count() - 1, dy);
  }

  /// Reverse pass seeded with gradients w.r.t. the activations of `layer`,
  /// propagated down to the inputs.
  MatrixX<Scalar> backward_from_layer(const ForwardTrace<Scalar>& trace, size_t layer,
                                      const MatrixX<Scalar>& d_act) const {
    MatrixX<Scalar> delta = apply_deriv(layer, trace, d_act);
    for (size_t l = layer + 1; l-- > 1;) {
      delta = apply_deriv(l - 1, trace, delta * weights(l));
    }
    return delta * weights(0);
  }

  /// Gradient w.r.t. the parameters of sum_i v_i^T (d D(x_i)/d x_i), the
  /// mixed second-order quantity behind the gradient-penalty update.
  /// Forward-over-reverse: v seeds a tangent forward pass, and the adjoint
  /// of that pass yields parameter gradients.
  VectorX<Scalar> mixed_input_param_grads(const MatrixX<Scalar>& batch,
                                          const MatrixX<Scalar>& v) const {
    if (output_dim() != 1) throw ConfigError("mixed gradients require a scalar output");
    if (v.rows() != batch.rows() || v.cols() != batch.cols()) {
      throw ConfigError("tangent batch shape mismatch");
    }
    const size_t layers = layer_count();
    ForwardTrace<Scalar> trace;
    forward(batch, &trace);

    // Tangent pass: u_l = phi'(z_l) .* (u_{l-1} W_l^T), u_0 = v.
    std::vector<MatrixX<Scalar>> u(layers);
    std::vector<MatrixX<Scalar>> dz(layers);  // u_{l-1} W_l^T
    MatrixX<Scalar> cur = v;
    for (size_t l = 0; l < layers; ++l) {
      dz[l] = cur * weights(l).transpose();
      u[l] = deriv_matrix(l, trace).cwiseProduct(dz[l]);
      cur = u[l];
    }

    // Adjoint of the tangent graph. ubar_L = 1 (sum over batch of the
    // scalar tangent outputs), abar_L = 0.
    VectorX<Scalar> grad = VectorX<Scalar>::Zero(param_count());
    MatrixX<Scalar> ubar = MatrixX<Scalar>::Ones(batch.rows(), 1);
    MatrixX<Scalar> abar = MatrixX<Scalar>::Zero(batch.rows(), 1);
    for (size_t l = layers; l-- > 0;) {
      MatrixX<Scalar> h = deriv_matrix(l, trace);
      MatrixX<Scalar> k = second_deriv_matrix(l, trace);
      MatrixX<Scalar> dzbar = ubar.cwiseProduct(h);
      MatrixX<Scalar> zbar = ubar.cwiseProduct(dz[l]).cwiseProduct(k) + abar.cwiseProduct(h);
      const MatrixX<Scalar>& a_below = l == 0 ? trace.input : trace.act[l - 1];
      const MatrixX<Scalar>& u_below = l == 0 ? v : u[l - 1];
      RowMajorMap<Scalar> gw(grad.data() + offsets_[l], dims_[l + 1], dims_[l]);
      gw = dzbar.transpose() * u_below + zbar.transpose() * a_below;
      Eigen::Map<VectorX<Scalar>> gb(
          grad.data() + offsets_[l] + static_cast<Eigen::Index>(dims_[l]) * dims_[l + 1],
          dims_[l + 1]);
      gb = zbar.colwise().sum().transpose();
      if (l > 0) {
        ubar = dzbar * weights(l);
        abar = zbar * weights(l);
      }
    }
    return grad;
  }

  void save(std::ostream& out) const;
  static DenseNet load(std::istream& in);

 private:
  MatrixX<Scalar> apply_deriv(size_t layer, const ForwardTrace<Scalar>& trace,
                              const MatrixX<Scalar>& upstream) const {
    return upstream.cwiseProduct(deriv_matrix(layer, trace));
  }
  MatrixX<Scalar> deriv_matrix(size_t layer, const ForwardTrace<Scalar>& trace) const {
    return trace.pre[layer].unaryExpr(
        [&](Scalar z) { return detail::act_deriv(acts_[layer], z); });
  }
  MatrixX<Scalar> second_deriv_matrix(size_t layer, const ForwardTrace<Scalar>& trace) const {
    return trace.pre[layer].unaryExpr(
        [&](Scalar z) { return detail::act_second_deriv(acts_[layer], z); });
  }

  std::vector<int> dims_;
  std::vector<Activation> acts_;
  std::vector<Eigen::Index> offsets_;
  VectorX<Scalar> params_;
};

/// Standard Adam with bias correction. Defaults follow the gradient-penalty
/// training convention.
template <typename Scalar>
struct AdamState {
  VectorX<Scalar> m;
  VectorX<Scalar> v;
  long step = 0;
  Scalar lr = Scalar(2e-4);
  Scalar beta1 = Scalar(0.5);
  Scalar beta2 = Scalar(0.9);
  Scalar eps = Scalar(1e-8);

  explicit AdamState(Eigen::Index n, Scalar lr_ = Scalar(2e-4))
      : m(VectorX<Scalar>::Zero(n)), v(VectorX<Scalar>::Zero(n)), lr(lr_) {}
};

template <typename Scalar>
void adam_step(AdamState<Scalar>& state, DenseNet<Scalar>& net, const VectorX<Scalar>& grad) {
  if (grad.size() != net.param_count()) throw ConfigError("gradient length mismatch");
  ++state.step;
  state.m = state.beta1 * state.m + (Scalar(1) - state.beta1) * grad;
  state.v = state.beta2 * state.v + (Scalar(1) - state.beta2) * grad.cwiseProduct(grad);
  Scalar c1 = Scalar(1) - std::pow(state.beta1, Scalar(state.step));
  Scalar c2 = Scalar(1) - std::pow(state.beta2, Scalar(state.step));
  net.params() -= (state.lr * (state.m / c1).array() /
                   ((state.v / c2).array().sqrt() + state.eps))
                      .matrix();
}

using DenseNetF = DenseNet<float>;
using DenseNetD = DenseNet<double>;

}  // namespace dtgan::neural
