#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "dext/kernels.hpp"
#include "dext/tensor.hpp"

namespace dext {

// How ReLU propagates gradients during a backward pass. Guided additionally
// drops negative incoming gradients, which turns a plain input gradient into
// guided backpropagation.
enum class GradientRule { Standard, Guided };

// Handle to a node on a specific Tape.
struct Var {
  std::uint64_t tape_id = 0;
  int node = -1;
};

// One scalar element of a recorded tensor; the seed of a backward pass.
struct ScalarRef {
  Var var;
  std::size_t index = 0;
};

struct ConvLayer {
  kernels::ConvGeometry geometry;
  std::vector<float> weights;  // [out, in, k, k]
  std::vector<float> bias;     // [out]
};

struct AffineLayer {
  int rows = 0;
  int cols = 0;
  std::vector<float> weights;  // [rows, cols]
  std::vector<float> bias;     // [rows]
};

struct BackwardArgs {
  std::span<const Tensor* const> inputs;
  const Tensor& output;
  const Tensor& grad_output;
  std::span<Tensor* const> grad_inputs;  // accumulate with +=
  GradientRule rule;
};

// Single-use, single-threaded record of one forward pass. Layer parameters
// passed to conv2d/affine are referenced, not copied, and must outlive the
// tape. Tensors returned by value() stay valid for the tape's lifetime.
class Tape {
 public:
  using BackwardFn = std::function<void(const BackwardArgs&)>;

  Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  // The differentiation leaf. Exactly one per tape.
  Var input(Tensor x);

  Var conv2d(Var x, const ConvLayer& layer);
  Var affine(Var x, const AffineLayer& layer);
  Var relu(Var x);
  // Row-wise softmax over the last axis.
  Var softmax(Var x);
  Var sum(Var x);
  Var reshape(Var x, Shape shape);
  // out[i] = x[source[i]]; backward scatters and adds.
  Var gather(Var x, std::vector<std::size_t> source, Shape shape);

  // Records a custom operator. `backward` must add its contribution into
  // args.grad_inputs.
  Var record(std::vector<Var> inputs, Tensor value, BackwardFn backward);

  const Tensor& value(Var v) const;
  ScalarRef element(Var v, std::size_t index) const;
  std::size_t size() const noexcept { return nodes_.size(); }

  // Gradient of the seed scalar w.r.t. the input leaf. Does not mutate the
  // tape; repeated calls with the same rule are bit-identical.
  Tensor backward(ScalarRef seed, GradientRule rule) const;

 private:
  struct Node {
    std::vector<int> inputs;
    Tensor value;
    BackwardFn backward;
  };

  const Node& node(Var v) const;
  Var push(std::vector<int> inputs, Tensor value, BackwardFn backward);

  std::uint64_t id_;
  int input_node_ = -1;
  std::deque<Node> nodes_;
};

}  // namespace dext
