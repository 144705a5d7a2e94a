#pragma once

#include <span>

namespace dext::kernels {

// Geometry of a square-kernel 2-D convolution over a CHW tensor.
struct ConvGeometry {
  int in_channels = 0;
  int in_height = 0;
  int in_width = 0;
  int out_channels = 0;
  int kernel = 1;
  int stride = 1;
  int padding = 0;

  int out_height() const { return (in_height + 2 * padding - kernel) / stride + 1; }
  int out_width() const { return (in_width + 2 * padding - kernel) / stride + 1; }
  int input_size() const { return in_channels * in_height * in_width; }
  int output_size() const { return out_channels * out_height() * out_width(); }
  int weight_size() const { return out_channels * in_channels * kernel * kernel; }
};

// Reference implementations. Every output element is reduced in a fixed
// order with a double accumulator, so the parallel versions below produce
// bit-identical results.
namespace serial {

void conv2d_forward(const ConvGeometry& g, std::span<const float> input,
                    std::span<const float> weights, std::span<const float> bias,
                    std::span<float> output);

// Gradient w.r.t. the convolution input (gather form).
void conv2d_backward_input(const ConvGeometry& g, std::span<const float> grad_output,
                           std::span<const float> weights, std::span<float> grad_input);

// y = W x + b with W stored row-major [rows, cols].
void affine_forward(int rows, int cols, std::span<const float> input,
                    std::span<const float> weights, std::span<const float> bias,
                    std::span<float> output);

void affine_backward_input(int rows, int cols, std::span<const float> grad_output,
                           std::span<const float> weights, std::span<float> grad_input);

}  // namespace serial

// OpenMP versions: parallel over independent output elements only.
namespace parallel {

void conv2d_forward(const ConvGeometry& g, std::span<const float> input,
                    std::span<const float> weights, std::span<const float> bias,
                    std::span<float> output);

void conv2d_backward_input(const ConvGeometry& g, std::span<const float> grad_output,
                           std::span<const float> weights, std::span<float> grad_input);

void affine_forward(int rows, int cols, std::span<const float> input,
                    std::span<const float> weights, std::span<const float> bias,
                    std::span<float> output);

void affine_backward_input(int rows, int cols, std::span<const float> grad_output,
                           std::span<const float> weights, std::span<float> grad_input);

}  // namespace parallel

}  // namespace dext::kernels
