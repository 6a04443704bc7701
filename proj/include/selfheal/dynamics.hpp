#pragma once

// Depth-T networks x_{t+1} = F_t(x_t + u_t) with hand-derived derivatives.
//
// Layer maps are templated on the scalar so the same code evaluates on doubles
// and on forward-mode duals (white-box attacks differentiate through them).

#include <cmath>
#include <string>
#include <vector>

#include "selfheal/dual.hpp"
#include "selfheal/numerics.hpp"

namespace selfheal {

enum class Activation { identity, tanh, relu, softplus };

std::string activation_name(Activation a);
Activation parse_activation(const std::string& name);

/// sup over z of |sigma''(z)|; zero for piecewise-linear activations.
double activation_curvature_sup(Activation a);

template <class T>
T activation_value(Activation a, const T& z) {
  using std::exp;
  using std::log1p;
  using std::tanh;
  switch (a) {
    case Activation::identity:
      return z;
    case Activation::tanh:
      return tanh(z);
    case Activation::relu:
      return value_of(z) > 0.0 ? z : T(0.0);
    case Activation::softplus:
      // log(1 + e^z) without overflow
      if (value_of(z) > 0.0) return z + log1p(exp(-z));
      return log1p(exp(z));
  }
  return z;
}

/// Derivative; relu uses the subgradient 0 at exactly zero.
template <class T>
T activation_deriv(Activation a, const T& z) {
  using std::exp;
  using std::tanh;
  switch (a) {
    case Activation::identity:
      return T(1.0);
    case Activation::tanh: {
      const T th = tanh(z);
      return 1.0 - th * th;
    }
    case Activation::relu:
      return T(value_of(z) > 0.0 ? 1.0 : 0.0);
    case Activation::softplus:
      if (value_of(z) >= 0.0) return 1.0 / (1.0 + exp(-z));
      {
        const T e = exp(z);
        return e / (1.0 + e);
      }
  }
  return T(1.0);
}

struct Layer {
  Mat64 weight;  // d_out x d_in
  Vec64 bias;    // d_out
  Activation activation = Activation::identity;
  bool residual_skip = false;

  std::size_t in_dim() const { return weight.cols(); }
  std::size_t out_dim() const { return weight.rows(); }
  void validate() const;
};

template <class T>
Vector<T> pre_activation(const Layer& layer, const Vector<T>& x) {
  Vector<T> z = matvec(layer.weight, x);
  for (std::size_t i = 0; i < z.size(); ++i) z[i] += layer.bias[i];
  return z;
}

template <class T>
Vector<T> apply(const Layer& layer, const Vector<T>& x) {
  if (x.size() != layer.in_dim()) {
    throw DimensionError("layer input has dim " + std::to_string(x.size()) + ", expected " +
                         std::to_string(layer.in_dim()));
  }
  Vector<T> y = pre_activation(layer, x);
  for (auto& v : y) v = activation_value(layer.activation, v);
  if (layer.residual_skip) y += x;
  return y;
}

/// jacobian(layer, x)ᵀ w without forming the Jacobian.
template <class T>
Vector<T> vjp(const Layer& layer, const Vector<T>& x, const Vector<T>& w) {
  if (x.size() != layer.in_dim() || w.size() != layer.out_dim()) {
    throw DimensionError("vjp: shape mismatch");
  }
  Vector<T> g = pre_activation(layer, x);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = activation_deriv(layer.activation, g[i]) * w[i];
  Vector<T> out = matvec_t(layer.weight, g);
  if (layer.residual_skip) out += w;
  return out;
}

Mat64 jacobian(const Layer& layer, const Vec64& x);

/// Uniform bound on the bilinear norm of the layer's second derivative.
double hessian_norm_bound(const Layer& layer);

struct LayerGrads {
  Vec64 input;
  Mat64 weight;
  Vec64 bias;
};

/// Gradients of wᵀ apply(layer, x) with respect to input, weight and bias.
LayerGrads backward(const Layer& layer, const Vec64& x, const Vec64& w);

struct DynamicalNet {
  std::vector<Layer> layers;
  Layer head;

  std::size_t depth() const { return layers.size(); }
  std::size_t input_dim() const { return layers.front().in_dim(); }
  std::size_t state_dim(std::size_t t) const {
    return t == 0 ? layers.front().in_dim() : layers[t - 1].out_dim();
  }
  std::size_t num_classes() const { return head.out_dim(); }
  void validate() const;
};

struct Trajectory {
  std::vector<Vec64> states;    // x_0 .. x_T
  std::vector<Vec64> controls;  // u_0 .. u_{T-1}
};

template <class T>
std::vector<Vector<T>> zero_controls(const DynamicalNet& net) {
  std::vector<Vector<T>> u;
  for (std::size_t t = 0; t < net.depth(); ++t) u.emplace_back(net.layers[t].in_dim());
  return u;
}

Trajectory forward(const DynamicalNet& net, const Vec64& x0, const std::vector<Vec64>& controls);
Trajectory forward(const DynamicalNet& net, const Vec64& x0);

/// Final state without recording the trajectory.
template <class T>
Vector<T> propagate(const DynamicalNet& net, const Vector<T>& x0) {
  Vector<T> x = x0;
  for (const auto& layer : net.layers) x = apply(layer, x);
  return x;
}

/// Head output of the uncontrolled net (layers then head).
template <class T>
Vector<T> net_output(const DynamicalNet& net, const Vector<T>& x0) {
  return apply(net.head, propagate(net, x0));
}

/// Reverse-mode gradients of wᵀ net_output(net, x0) for every parameter.
struct NetGrads {
  std::vector<LayerGrads> layers;
  LayerGrads head;
  Vec64 input;
};
NetGrads net_backward(const DynamicalNet& net, const Vec64& x0, const Vec64& w);

/// (d net_output / d x0)ᵀ w, templated for dual inputs.
template <class T>
Vector<T> net_vjp(const DynamicalNet& net, const Vector<T>& x0, const Vector<T>& w) {
  std::vector<Vector<T>> xs{x0};
  for (const auto& layer : net.layers) xs.push_back(apply(layer, xs.back()));
  Vector<T> g = vjp(net.head, xs.back(), w);
  for (std::size_t t = net.depth(); t-- > 0;) g = vjp(net.layers[t], xs[t], g);
  return g;
}

/// Head logits of the uncontrolled net.
Vec64 logits(const DynamicalNet& net, const Vec64& x0);
std::size_t predict(const DynamicalNet& net, const Vec64& x0);

/// Index of the largest entry (lowest index on ties).
std::size_t argmax(const Vec64& v);

}  // namespace selfheal
