#include "selfheal/dynamics.hpp"

#include <algorithm>

namespace selfheal {

std::string activation_name(Activation a) {
  switch (a) {
    case Activation::identity:
      return "identity";
    case Activation::tanh:
      return "tanh";
    case Activation::relu:
      return "relu";
    case Activation::softplus:
      return "softplus";
  }
  return "identity";
}

Activation parse_activation(const std::string& name) {
  if (name == "identity") return Activation::identity;
  if (name == "tanh") return Activation::tanh;
  if (name == "relu") return Activation::relu;
  if (name == "softplus") return Activation::softplus;
  throw ParseError("unknown activation '" + name + "'");
}

double activation_curvature_sup(Activation a) {
  switch (a) {
    case Activation::tanh:
      return 4.0 / (3.0 * std::sqrt(3.0));
    case Activation::softplus:
      return 0.25;
    default:
      return 0.0;
  }
}

void Layer::validate() const {
  if (weight.rows() == 0 || weight.cols() == 0) throw DimensionError("layer has empty weight");
  if (bias.size() != weight.rows()) throw DimensionError("layer bias length != weight rows");
  if (residual_skip && weight.rows() != weight.cols())
    throw DimensionError("residual skip needs a square weight");
  if (!all_finite(weight) || !all_finite(bias)) throw NumericalError("layer has non-finite parameters");
}

Mat64 jacobian(const Layer& layer, const Vec64& x) {
  if (x.size() != layer.in_dim()) throw DimensionError("jacobian: input dim mismatch");
  const Vec64 z = pre_activation(layer, x);
  Mat64 j(layer.out_dim(), layer.in_dim());
  for (std::size_t r = 0; r < j.rows(); ++r) {
    const double s = activation_deriv(layer.activation, z[r]);
    for (std::size_t c = 0; c < j.cols(); ++c) j(r, c) = s * layer.weight(r, c);
  }
  if (layer.residual_skip)
    for (std::size_t i = 0; i < j.rows(); ++i) j(i, i) += 1.0;
  return j;
}

double hessian_norm_bound(const Layer& layer) {
  const double curv = activation_curvature_sup(layer.activation);
  if (curv == 0.0) return 0.0;
  double max_row = 0.0;
  for (std::size_t r = 0; r < layer.out_dim(); ++r) max_row = std::max(max_row, norm2(layer.weight.row(r)));
  return curv * spectral_norm(layer.weight) * max_row;
}

LayerGrads backward(const Layer& layer, const Vec64& x, const Vec64& w) {
  const Vec64 z = pre_activation(layer, x);
  Vec64 g(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) g[i] = activation_deriv(layer.activation, z[i]) * w[i];
  LayerGrads out{matvec_t(layer.weight, g), Mat64::outer(g, x), g};
  if (layer.residual_skip) out.input += w;
  return out;
}

void DynamicalNet::validate() const {
  if (layers.empty()) throw DimensionError("network needs at least one layer");
  for (std::size_t t = 0; t < layers.size(); ++t) {
    layers[t].validate();
    if (t > 0 && layers[t].in_dim() != layers[t - 1].out_dim())
      throw DimensionError("layer " + std::to_string(t) + " input does not chain with previous output");
  }
  head.validate();
  if (head.in_dim() != layers.back().out_dim()) throw DimensionError("head input does not match final state");
}

Trajectory forward(const DynamicalNet& net, const Vec64& x0, const std::vector<Vec64>& controls) {
  if (controls.size() != net.depth()) throw DimensionError("forward: need one control per layer");
  if (x0.size() != net.input_dim()) throw DimensionError("forward: input dim mismatch");
  Trajectory traj;
  traj.controls = controls;
  traj.states.reserve(net.depth() + 1);
  traj.states.push_back(x0);
  for (std::size_t t = 0; t < net.depth(); ++t) {
    if (controls[t].size() != net.layers[t].in_dim())
      throw DimensionError("forward: control " + std::to_string(t) + " has wrong dim");
    Vec64 next = apply(net.layers[t], traj.states[t] + controls[t]);
    if (!all_finite(next)) throw NumericalError("forward: non-finite state at layer " + std::to_string(t + 1));
    traj.states.push_back(std::move(next));
  }
  return traj;
}

Trajectory forward(const DynamicalNet& net, const Vec64& x0) {
  return forward(net, x0, zero_controls<double>(net));
}

NetGrads net_backward(const DynamicalNet& net, const Vec64& x0, const Vec64& w) {
  std::vector<Vec64> xs{x0};
  for (const auto& layer : net.layers) xs.push_back(apply(layer, xs.back()));
  NetGrads out;
  out.head = backward(net.head, xs.back(), w);
  out.layers.resize(net.depth());
  Vec64 g = out.head.input;
  for (std::size_t t = net.depth(); t-- > 0;) {
    out.layers[t] = backward(net.layers[t], xs[t], g);
    g = out.layers[t].input;
  }
  out.input = std::move(g);
  return out;
}

Vec64 logits(const DynamicalNet& net, const Vec64& x0) { return net_output(net, x0); }

std::size_t predict(const DynamicalNet& net, const Vec64& x0) { return argmax(logits(net, x0)); }

std::size_t argmax(const Vec64& v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

}  // namespace selfheal
