#include "dext/tape.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <optional>

#include "dext/error.hpp"

namespace dext {
namespace {

std::atomic<std::uint64_t> next_tape_id{1};

void require_shape(bool ok, const std::string& what) {
  if (!ok) throw Error(ErrorCode::ShapeMismatch, what);
}

}  // namespace

Tape::Tape() : id_(next_tape_id.fetch_add(1)) {}

const Tape::Node& Tape::node(Var v) const {
  if (v.tape_id != id_ || v.node < 0 || static_cast<std::size_t>(v.node) >= nodes_.size()) {
    throw Error(ErrorCode::SeedNotOnTape, "variable does not belong to this tape");
  }
  return nodes_[static_cast<std::size_t>(v.node)];
}

Var Tape::push(std::vector<int> inputs, Tensor value, BackwardFn backward) {
  nodes_.push_back(Node{std::move(inputs), std::move(value), std::move(backward)});
  return Var{id_, static_cast<int>(nodes_.size()) - 1};
}

const Tensor& Tape::value(Var v) const { return node(v).value; }

ScalarRef Tape::element(Var v, std::size_t index) const {
  if (index >= node(v).value.size()) {
    throw Error(ErrorCode::SeedNotOnTape, "element index out of range");
  }
  return ScalarRef{v, index};
}

Var Tape::input(Tensor x) {
  if (input_node_ >= 0) throw Error(ErrorCode::InvalidArgument, "tape already has an input");
  Var v = push({}, std::move(x), nullptr);
  input_node_ = v.node;
  return v;
}

Var Tape::record(std::vector<Var> inputs, Tensor value, BackwardFn backward) {
  std::vector<int> ids;
  ids.reserve(inputs.size());
  for (Var in : inputs) {
    node(in);
    ids.push_back(in.node);
  }
  return push(std::move(ids), std::move(value), std::move(backward));
}

Var Tape::conv2d(Var x, const ConvLayer& layer) {
  const auto& g = layer.geometry;
  const Tensor& in = value(x);
  require_shape(in.shape == Shape{g.in_channels, g.in_height, g.in_width},
                "conv2d input " + shape_string(in.shape));
  require_shape(layer.weights.size() == static_cast<std::size_t>(g.weight_size()) &&
                    (layer.bias.empty() || layer.bias.size() == static_cast<std::size_t>(g.out_channels)),
                "conv2d parameters");
  Tensor out({g.out_channels, g.out_height(), g.out_width()});
  kernels::parallel::conv2d_forward(g, in.values(), layer.weights, layer.bias, out.values());
  const ConvLayer* params = &layer;
  return record({x}, std::move(out), [params](const BackwardArgs& a) {
    std::vector<float> gin(a.grad_inputs[0]->size());
    kernels::parallel::conv2d_backward_input(params->geometry, a.grad_output.values(),
                                             params->weights, gin);
    auto& dst = a.grad_inputs[0]->data;
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += gin[i];
  });
}

Var Tape::affine(Var x, const AffineLayer& layer) {
  const Tensor& in = value(x);
  require_shape(in.size() == static_cast<std::size_t>(layer.cols),
                "affine input " + shape_string(in.shape) + " vs cols " + std::to_string(layer.cols));
  require_shape(layer.weights.size() == static_cast<std::size_t>(layer.rows) * layer.cols &&
                    (layer.bias.empty() || layer.bias.size() == static_cast<std::size_t>(layer.rows)),
                "affine parameters");
  Tensor out({layer.rows});
  kernels::parallel::affine_forward(layer.rows, layer.cols, in.values(), layer.weights, layer.bias,
                                    out.values());
  const AffineLayer* params = &layer;
  return record({x}, std::move(out), [params](const BackwardArgs& a) {
    std::vector<float> gin(a.grad_inputs[0]->size());
    kernels::parallel::affine_backward_input(params->rows, params->cols, a.grad_output.values(),
                                             params->weights, gin);
    auto& dst = a.grad_inputs[0]->data;
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += gin[i];
  });
}

Var Tape::relu(Var x) {
  const Tensor& in = value(x);
  Tensor out(in.shape);
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = std::max(in[i], 0.0f);
  return record({x}, std::move(out), [](const BackwardArgs& a) {
    const Tensor& f = *a.inputs[0];
    const Tensor& r = a.grad_output;
    Tensor& dst = *a.grad_inputs[0];
    // Subgradient at exactly zero is zero in both modes.
    if (a.rule == GradientRule::Guided) {
      for (std::size_t i = 0; i < f.size(); ++i)
        if (f[i] > 0.0f && r[i] > 0.0f) dst[i] += r[i];
    } else {
      for (std::size_t i = 0; i < f.size(); ++i)
        if (f[i] > 0.0f) dst[i] += r[i];
    }
  });
}

Var Tape::softmax(Var x) {
  const Tensor& in = value(x);
  require_shape(in.rank() >= 1 && in.shape.back() > 0, "softmax needs a non-empty last axis");
  const std::size_t cols = static_cast<std::size_t>(in.shape.back());
  const std::size_t rows = in.size() / cols;
  Tensor out(in.shape);
  for (std::size_t r = 0; r < rows; ++r) {
    const float* src = in.data.data() + r * cols;
    float* dst = out.data.data() + r * cols;
    const float peak = *std::max_element(src, src + cols);
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) total += std::exp(static_cast<double>(src[c]) - peak);
    for (std::size_t c = 0; c < cols; ++c)
      dst[c] = static_cast<float>(std::exp(static_cast<double>(src[c]) - peak) / total);
  }
  return record({x}, std::move(out), [rows, cols](const BackwardArgs& a) {
    const Tensor& y = a.output;
    const Tensor& gy = a.grad_output;
    Tensor& dst = *a.grad_inputs[0];
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < cols; ++c) dot += static_cast<double>(gy[r * cols + c]) * y[r * cols + c];
      for (std::size_t c = 0; c < cols; ++c) {
        const std::size_t i = r * cols + c;
        dst[i] += static_cast<float>(y[i] * (gy[i] - dot));
      }
    }
  });
}

Var Tape::sum(Var x) {
  const Tensor& in = value(x);
  double total = 0.0;
  for (float v : in.data) total += v;
  return record({x}, Tensor({1}, {static_cast<float>(total)}), [](const BackwardArgs& a) {
    const float g = a.grad_output[0];
    for (float& v : a.grad_inputs[0]->data) v += g;
  });
}

Var Tape::reshape(Var x, Shape shape) {
  const Tensor& in = value(x);
  require_shape(element_count(shape) == in.size(),
                "reshape " + shape_string(in.shape) + " -> " + shape_string(shape));
  return record({x}, Tensor(std::move(shape), in.data), [](const BackwardArgs& a) {
    auto& dst = a.grad_inputs[0]->data;
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += a.grad_output[i];
  });
}

Var Tape::gather(Var x, std::vector<std::size_t> source, Shape shape) {
  const Tensor& in = value(x);
  require_shape(element_count(shape) == source.size(), "gather index count vs shape");
  Tensor out(std::move(shape));
  for (std::size_t i = 0; i < source.size(); ++i) {
    require_shape(source[i] < in.size(), "gather index out of range");
    out[i] = in[source[i]];
  }
  return record({x}, std::move(out), [source = std::move(source)](const BackwardArgs& a) {
    Tensor& dst = *a.grad_inputs[0];
    for (std::size_t i = 0; i < source.size(); ++i) dst[source[i]] += a.grad_output[i];
  });
}

Tensor Tape::backward(ScalarRef seed, GradientRule rule) const {
  const Node& seed_node = node(seed.var);
  if (seed.index >= seed_node.value.size()) {
    throw Error(ErrorCode::SeedNotOnTape, "seed index out of range");
  }
  if (input_node_ < 0) throw Error(ErrorCode::SeedNotOnTape, "tape has no input leaf");

  std::vector<std::optional<Tensor>> grads(nodes_.size());
  grads[static_cast<std::size_t>(seed.var.node)] = Tensor(seed_node.value.shape);
  (*grads[static_cast<std::size_t>(seed.var.node)])[seed.index] = 1.0f;

  for (int n = seed.var.node; n >= 0; --n) {
    auto& grad = grads[static_cast<std::size_t>(n)];
    const Node& current = nodes_[static_cast<std::size_t>(n)];
    if (!grad || !current.backward) continue;
    std::vector<const Tensor*> input_values;
    std::vector<Tensor*> input_grads;
    for (int in : current.inputs) {
      auto& slot = grads[static_cast<std::size_t>(in)];
      if (!slot) slot = Tensor(nodes_[static_cast<std::size_t>(in)].value.shape);
      input_values.push_back(&nodes_[static_cast<std::size_t>(in)].value);
      input_grads.push_back(&*slot);
    }
    current.backward(BackwardArgs{input_values, current.value, *grad, input_grads, rule});
    grad.reset();
  }
  auto& result = grads[static_cast<std::size_t>(input_node_)];
  if (!result) return Tensor(nodes_[static_cast<std::size_t>(input_node_)].value.shape);
  return std::move(*result);
}

}  // namespace dext
