#include "dext/kernels.hpp"

namespace dext::kernels {
namespace {

inline float conv_output_element(const ConvGeometry& g, std::span<const float> input,
                                 std::span<const float> weights, std::span<const float> bias,
                                 int co, int oy, int ox) {
  const int k = g.kernel;
  double acc = bias.empty() ? 0.0 : bias[co];
  for (int ci = 0; ci < g.in_channels; ++ci) {
    const float* w = weights.data() + (static_cast<std::size_t>(co) * g.in_channels + ci) * k * k;
    const float* in = input.data() + static_cast<std::size_t>(ci) * g.in_height * g.in_width;
    for (int ky = 0; ky < k; ++ky) {
      const int iy = oy * g.stride - g.padding + ky;
      if (iy < 0 || iy >= g.in_height) continue;
      for (int kx = 0; kx < k; ++kx) {
        const int ix = ox * g.stride - g.padding + kx;
        if (ix < 0 || ix >= g.in_width) continue;
        acc += static_cast<double>(w[ky * k + kx]) * in[iy * g.in_width + ix];
      }
    }
  }
  return static_cast<float>(acc);
}

inline float conv_grad_input_element(const ConvGeometry& g, std::span<const float> grad_output,
                                     std::span<const float> weights, int ci, int iy, int ix) {
  const int k = g.kernel;
  const int oh = g.out_height();
  const int ow = g.out_width();
  double acc = 0.0;
  for (int co = 0; co < g.out_channels; ++co) {
    const float* w = weights.data() + (static_cast<std::size_t>(co) * g.in_channels + ci) * k * k;
    const float* go = grad_output.data() + static_cast<std::size_t>(co) * oh * ow;
    for (int ky = 0; ky < k; ++ky) {
      const int ny = iy + g.padding - ky;
      if (ny < 0 || ny % g.stride != 0) continue;
      const int oy = ny / g.stride;
      if (oy >= oh) continue;
      for (int kx = 0; kx < k; ++kx) {
        const int nx = ix + g.padding - kx;
        if (nx < 0 || nx % g.stride != 0) continue;
        const int ox = nx / g.stride;
        if (ox >= ow) continue;
        acc += static_cast<double>(w[ky * k + kx]) * go[oy * ow + ox];
      }
    }
  }
  return static_cast<float>(acc);
}

inline float affine_output_element(int cols, std::span<const float> input,
                                   std::span<const float> weights, std::span<const float> bias,
                                   int r) {
  double acc = bias.empty() ? 0.0 : bias[r];
  const float* w = weights.data() + static_cast<std::size_t>(r) * cols;
  for (int c = 0; c < cols; ++c) acc += static_cast<double>(w[c]) * input[c];
  return static_cast<float>(acc);
}

inline float affine_grad_input_element(int rows, int cols, std::span<const float> grad_output,
                                       std::span<const float> weights, int c) {
  double acc = 0.0;
  for (int r = 0; r < rows; ++r) {
    acc += static_cast<double>(weights[static_cast<std::size_t>(r) * cols + c]) * grad_output[r];
  }
  return static_cast<float>(acc);
}

}  // namespace

namespace serial {

void conv2d_forward(const ConvGeometry& g, std::span<const float> input,
                    std::span<const float> weights, std::span<const float> bias,
                    std::span<float> output) {
  const int oh = g.out_height();
  const int ow = g.out_width();
  for (int co = 0; co < g.out_channels; ++co)
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox)
        output[(co * oh + oy) * ow + ox] = conv_output_element(g, input, weights, bias, co, oy, ox);
}

void conv2d_backward_input(const ConvGeometry& g, std::span<const float> grad_output,
                           std::span<const float> weights, std::span<float> grad_input) {
  for (int ci = 0; ci < g.in_channels; ++ci)
    for (int iy = 0; iy < g.in_height; ++iy)
      for (int ix = 0; ix < g.in_width; ++ix)
        grad_input[(ci * g.in_height + iy) * g.in_width + ix] =
            conv_grad_input_element(g, grad_output, weights, ci, iy, ix);
}

void affine_forward(int rows, int cols, std::span<const float> input,
                    std::span<const float> weights, std::span<const float> bias,
                    std::span<float> output) {
  for (int r = 0; r < rows; ++r) output[r] = affine_output_element(cols, input, weights, bias, r);
}

void affine_backward_input(int rows, int cols, std::span<const float> grad_output,
                           std::span<const float> weights, std::span<float> grad_input) {
  for (int c = 0; c < cols; ++c)
    grad_input[c] = affine_grad_input_element(rows, cols, grad_output, weights, c);
}

}  // namespace serial

namespace parallel {

void conv2d_forward(const ConvGeometry& g, std::span<const float> input,
                    std::span<const float> weights, std::span<const float> bias,
                    std::span<float> output) {
  const int oh = g.out_height();
  const int ow = g.out_width();
  const int total = g.out_channels * oh * ow;
#pragma omp parallel for schedule(static)
  for (int idx = 0; idx < total; ++idx) {
    const int co = idx / (oh * ow);
    const int oy = (idx / ow) % oh;
    const int ox = idx % ow;
    output[idx] = conv_output_element(g, input, weights, bias, co, oy, ox);
  }
}

void conv2d_backward_input(const ConvGeometry& g, std::span<const float> grad_output,
                           std::span<const float> weights, std::span<float> grad_input) {
  const int plane = g.in_height * g.in_width;
  const int total = g.in_channels * plane;
#pragma omp parallel for schedule(static)
  for (int idx = 0; idx < total; ++idx) {
    const int ci = idx / plane;
    const int iy = (idx / g.in_width) % g.in_height;
    const int ix = idx % g.in_width;
    grad_input[idx] = conv_grad_input_element(g, grad_output, weights, ci, iy, ix);
  }
}

void affine_forward(int rows, int cols, std::span<const float> input,
                    std::span<const float> weights, std::span<const float> bias,
                    std::span<float> output) {
#pragma omp parallel for schedule(static)
  for (int r = 0; r < rows; ++r) output[r] = affine_output_element(cols, input, weights, bias, r);
}

void affine_backward_input(int rows, int cols, std::span<const float> grad_output,
                           std::span<const float> weights, std::span<float> grad_input) {
#pragma omp parallel for schedule(static)
  for (int c = 0; c < cols; ++c)
    grad_input[c] = affine_grad_input_element(rows, cols, grad_output, weights, c);
}

}  // namespace parallel
}  // namespace dext::kernels
